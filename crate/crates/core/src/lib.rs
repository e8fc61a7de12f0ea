//! Adaptive polyphase sampling (APS-D / APS-U) and symmetric encoder-decoder
//! networks that are exactly equivariant to circular shifts.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense channel-first arrays with circular shifts, polyphase
//!   slicing and permutation-invariant norms.
//! * [`sampling`]: conventional and adaptive stride-2 down/upsampling, blur and
//!   dense max-pooling, and the pooling variants built from them.
//! * [`nn`]: circular convolution, ReLU, convolutional blocks and the weight
//!   container.
//! * [`unet`]: the encoder-decoder with polyphase index routing.
//! * [`metrics`]: NMSE, PSNR, SSIM and the equivariance measurements.
//! * [`io`], [`audit`], [`demo`]: file formats and the audit harness used by the
//!   command-line tool.

pub mod audit;
pub mod demo;
pub mod error;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod sampling;
pub mod tensor;
pub mod unet;

pub use error::{Error, Result};
pub use metrics::{EquivarianceReport, Psnr, ShiftRecord};
pub use nn::{Block, BlockSpec, ConvKernel, Layer};
pub use sampling::{BlurSize, NormOrder, PolyphaseIndex, SamplingVariant};
pub use tensor::{Shift, Tensor};
pub use unet::{IndexTrace, Network, NetworkConfig};
