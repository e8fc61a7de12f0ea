//! Circular convolution, ReLU and convolutional blocks.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sampling::{aps_upsample, upsample_u2, PolyphaseIndex, SamplingVariant};
use crate::tensor::Tensor;

/// Convolution weights `[out, in, kh, kw]` plus one bias per output channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel {
    out_channels: usize,
    in_channels: usize,
    kh: usize,
    kw: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl ConvKernel {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        (kh, kw): (usize, usize),
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if out_channels == 0 || in_channels == 0 {
            return Err(Error::InvalidConfig(
                "kernel channel counts must be positive".into(),
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "kernel extent {kh}x{kw} must be odd"
            )));
        }
        if weights.len() != out_channels * in_channels * kh * kw || bias.len() != out_channels {
            return Err(Error::InvalidConfig(format!(
                "kernel {out_channels}x{in_channels}x{kh}x{kw} got {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        Ok(ConvKernel {
            out_channels,
            in_channels,
            kh,
            kw,
            weights,
            bias,
        })
    }

    /// `1x1` kernel mapping every channel to itself, zero bias.
    pub fn identity(channels: usize) -> Self {
        let mut weights = vec![0.0; channels * channels];
        for c in 0..channels {
            weights[c * channels + c] = 1.0;
        }
        ConvKernel::new(channels, channels, (1, 1), weights, vec![0.0; channels])
            .expect("identity kernel is well-formed")
    }

    /// Weights and biases drawn uniformly from `[-a, a]`, `a = 1/sqrt(fan_in)`.
    pub fn random<R: Rng>(
        out_channels: usize,
        in_channels: usize,
        extent: (usize, usize),
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = in_channels * extent.0 * extent.1;
        let bound = (fan_in as f64).sqrt().recip();
        let n = out_channels * fan_in;
        let weights = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        let bias = (0..out_channels)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        ConvKernel::new(out_channels, in_channels, extent, weights, bias)
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.kh, self.kw)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Same-size circular convolution (cross-correlation with a centred kernel).
///
/// Every output pixel starts from the bias and accumulates the kernel taps in
/// `(in_channel, ky, kx)` order, so translating the input translates the output
/// bit for bit.
pub fn conv2d_circular(x: &Tensor, k: &ConvKernel) -> Result<Tensor> {
    if x.channels() != k.in_channels {
        return Err(Error::ChannelMismatch {
            expected: k.in_channels,
            got: x.channels(),
        });
    }
    let (cin, h, w) = x.dims3();
    let plane = h * w;
    let src = x.data();
    let (cy, cx) = ((k.kh / 2) as i64, (k.kw / 2) as i64);
    // source row for each (ky, output row) and column split for each kx
    let row_of: Vec<Vec<usize>> = (0..k.kh)
        .map(|ky| {
            let dy = ky as i64 - cy;
            (0..h)
                .map(|r| (r as i64 + dy).rem_euclid(h as i64) as usize)
                .collect()
        })
        .collect();
    let col_shift: Vec<usize> = (0..k.kw)
        .map(|kx| (kx as i64 - cx).rem_euclid(w as i64) as usize)
        .collect();

    let mut out = vec![0.0; k.out_channels * plane];
    for (co, dst_plane) in out.chunks_exact_mut(plane).enumerate() {
        dst_plane.fill(k.bias[co]);
        for ci in 0..cin {
            let src_plane = &src[ci * plane..(ci + 1) * plane];
            for (ky, rows) in row_of.iter().enumerate() {
                for (kx, &sx) in col_shift.iter().enumerate() {
                    let wv = k.weights[((co * cin + ci) * k.kh + ky) * k.kw + kx];
                    for (dst, &sr) in dst_plane.chunks_exact_mut(w).zip(rows) {
                        let row = &src_plane[sr * w..(sr + 1) * w];
                        let (head, tail) = dst.split_at_mut(w - sx);
                        for (d, s) in head.iter_mut().zip(&row[sx..]) {
                            *d += wv * s;
                        }
                        for (d, s) in tail.iter_mut().zip(&row[..sx]) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts_unchecked(
        x.shape_like(k.out_channels, h, w),
        out,
    ))
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Transposed convolution for a sampling variant: stride-2 upsampling onto the
/// conventional grid, or onto the recorded grid for adaptive variants,
/// followed by a circular convolution.
pub fn upsample_block(
    y: &Tensor,
    variant: SamplingVariant,
    index: Option<&PolyphaseIndex>,
    k: &ConvKernel,
) -> Result<Tensor> {
    let up = match (variant.is_adaptive(), index) {
        (true, Some(i)) => aps_upsample(y, i)?,
        (true, None) => return Err(Error::MissingIndex),
        (false, None) => upsample_u2(y),
        (false, Some(_)) => return Err(Error::UnexpectedIndex),
    };
    conv2d_circular(&up, k)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv(ConvKernel),
    Relu,
}

/// Shape of a block: a chain of convolutions, each followed by a ReLU.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    pub in_channels: usize,
    pub widths: Vec<usize>,
    pub kernel: (usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    layers: Vec<Layer>,
}

impl Block {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let mut channels: Option<usize> = None;
        for layer in &layers {
            if let Layer::Conv(k) = layer {
                if let Some(c) = channels {
                    if c != k.in_channels {
                        return Err(Error::ChannelMismatch {
                            expected: k.in_channels,
                            got: c,
                        });
                    }
                }
                channels = Some(k.out_channels);
            }
        }
        Ok(Block { layers })
    }

    pub fn random<R: Rng>(spec: &BlockSpec, rng: &mut R) -> Result<Self> {
        if spec.widths.is_empty() {
            return Err(Error::InvalidConfig(
                "block needs at least one convolution".into(),
            ));
        }
        let mut layers = Vec::with_capacity(2 * spec.widths.len());
        let mut cin = spec.in_channels;
        for &width in &spec.widths {
            layers.push(Layer::Conv(ConvKernel::random(
                width,
                cin,
                spec.kernel,
                rng,
            )?));
            layers.push(Layer::Relu);
            cin = width;
        }
        Block::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn kernels(&self) -> impl Iterator<Item = &ConvKernel> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Conv(k) => Some(k),
            Layer::Relu => None,
        })
    }

    pub(crate) fn kernels_mut(&mut self) -> impl Iterator<Item = &mut ConvKernel> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::Conv(k) => Some(k),
            Layer::Relu => None,
        })
    }

    pub fn out_channels(&self) -> Option<usize> {
        self.kernels().last().map(ConvKernel::out_channels)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = match layer {
                Layer::Conv(k) => conv2d_circular(&cur, k)?,
                Layer::Relu => relu(&cur),
            };
        }
        Ok(cur)
    }
}

/// Deterministic block from a seed.
pub fn init_block(spec: &BlockSpec, seed: u64) -> Result<Block> {
    Block::random(spec, &mut ChaCha8Rng::seed_from_u64(seed))
}

const WEIGHTS_MAGIC: &[u8; 4] = b"APSW";
const WEIGHTS_VERSION: u32 = 1;

/// Writes kernels as `APSW`, version, count, then for every kernel its
/// `out, in, kh, kw` header (u32) followed by weights and biases (f64), all
/// little-endian.
pub fn write_kernels<'a, W: Write>(
    mut w: W,
    kernels: impl IntoIterator<Item = &'a ConvKernel>,
) -> Result<()> {
    let kernels: Vec<&ConvKernel> = kernels.into_iter().collect();
    w.write_all(WEIGHTS_MAGIC)?;
    w.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
    w.write_all(&u32_of(kernels.len())?.to_le_bytes())?;
    for k in kernels {
        for d in [k.out_channels, k.in_channels, k.kh, k.kw] {
            w.write_all(&u32_of(d)?.to_le_bytes())?;
        }
        for v in k.weights.iter().chain(&k.bias) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn u32_of(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::format(format!("{v} does not fit in u32")))
}

pub fn read_kernels<R: Read>(mut r: R) -> Result<Vec<ConvKernel>> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != WEIGHTS_MAGIC {
        return Err(Error::format("not an APSW weight container"));
    }
    let version = read_u32(&mut r, "version")?;
    if version != WEIGHTS_VERSION {
        return Err(Error::format(format!("unsupported APSW version {version}")));
    }
    let count = read_u32(&mut r, "kernel count")? as usize;
    let mut kernels = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = read_u32(&mut r, "kernel header")? as usize;
        }
        let [out, cin, kh, kw] = dims;
        let n = out
            .checked_mul(cin)
            .and_then(|v| v.checked_mul(kh))
            .and_then(|v| v.checked_mul(kw))
            .ok_or_else(|| Error::format("kernel header overflows"))?;
        let weights = read_f64s(&mut r, n)?;
        let bias = read_f64s(&mut r, out)?;
        kernels.push(ConvKernel::new(out, cin, (kh, kw), weights, bias)?);
    }
    Ok(kernels)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format(format!("truncated {what}")),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n.min(1 << 20));
    let mut b = [0u8; 8];
    for _ in 0..n {
        read_exact(r, &mut b, "payload")?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}
