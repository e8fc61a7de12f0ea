//! Dense channel-first tensors.
//!
//! A tensor always carries a leading channel axis followed by one or two
//! spatial axes: `[C, N]` for signals and `[C, H, W]` for images. Every
//! spatial operation in the crate is circular.

use std::fmt;

use crate::error::{Error, Result};

/// Dense row-major array of `f64` with shape `[channels, spatial...]`.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Per-spatial-axis circular translation, in pixels.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Shift(Vec<i64>);

impl Shift {
    pub fn new(offsets: Vec<i64>) -> Self {
        Shift(offsets)
    }

    pub fn d1(k: i64) -> Self {
        Shift(vec![k])
    }

    pub fn d2(ky: i64, kx: i64) -> Self {
        Shift(vec![ky, kx])
    }

    pub fn zero(rank: usize) -> Self {
        Shift(vec![0; rank])
    }

    pub fn offsets(&self) -> &[i64] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn neg(&self) -> Self {
        Shift(self.0.iter().map(|k| -k).collect())
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&k| k == 0)
    }
}

impl fmt::Display for Shift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|k| k.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

impl Tensor {
    /// Builds a tensor from a `[C, N]` or `[C, H, W]` shape and matching data.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if !(2..=3).contains(&shape.len()) {
            return Err(Error::InvalidShape {
                shape,
                reason: "expected [C, N] or [C, H, W]".into(),
            });
        }
        if shape.contains(&0) {
            return Err(Error::InvalidShape {
                shape,
                reason: "all extents must be at least 1".into(),
            });
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("data length {} does not match", data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let len = shape.iter().product();
        Tensor::new(shape, vec![0.0; len])
    }

    /// Single-channel 1-D signal.
    ///
    /// # Panics
    /// If `data` is empty.
    pub fn signal(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor::new(vec![1, n], data).expect("signal must be non-empty")
    }

    /// Single-channel image from row-major pixels.
    pub fn image(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![1, height, width], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.shape[0]
    }

    pub fn spatial(&self) -> &[usize] {
        &self.shape[1..]
    }

    pub fn spatial_rank(&self) -> usize {
        self.shape.len() - 1
    }

    /// `(channels, height, width)` with 1-D signals viewed as height 1.
    pub(crate) fn dims3(&self) -> (usize, usize, usize) {
        match self.shape.as_slice() {
            [c, n] => (*c, 1, *n),
            [c, h, w] => (*c, *h, *w),
            _ => unreachable!("tensor rank is validated on construction"),
        }
    }

    /// Shape with the given channel count and `(h, w)` spatial extent, keeping
    /// this tensor's spatial rank.
    pub(crate) fn shape_like(&self, c: usize, h: usize, w: usize) -> Vec<usize> {
        if self.spatial_rank() == 1 {
            vec![c, w]
        } else {
            vec![c, h, w]
        }
    }

    /// Per-axis offsets as `(dy, dx)`.
    fn spatial_pair<T: Copy + Default>(&self, v: &[T]) -> Result<(T, T)> {
        if v.len() != self.spatial_rank() {
            return Err(Error::SpatialRankMismatch {
                expected: self.spatial_rank(),
                got: v.len(),
            });
        }
        Ok(match v {
            [x] => (T::default(), *x),
            [y, x] => (*y, *x),
            _ => unreachable!(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, alpha: f64) -> Tensor {
        self.map(|v| alpha * v)
    }

    /// `output(n) = x((n - k) mod extent)` on every spatial axis.
    pub fn circular_shift(&self, k: &Shift) -> Result<Tensor> {
        let (ky, kx) = self.spatial_pair(k.offsets())?;
        let (c, h, w) = self.dims3();
        let sy = ky.rem_euclid(h as i64) as usize;
        let sx = kx.rem_euclid(w as i64) as usize;
        let mut out = vec![0.0; self.data.len()];
        for ch in 0..c {
            let base = ch * h * w;
            for y in 0..h {
                let src = &self.data[base + y * w..base + (y + 1) * w];
                let dy = (y + sy) % h;
                let dst = &mut out[base + dy * w..base + (dy + 1) * w];
                dst[sx..].copy_from_slice(&src[..w - sx]);
                dst[..sx].copy_from_slice(&src[w - sx..]);
            }
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: out,
        })
    }

    /// `output(n) = x(stride * n + phase)` on every spatial axis.
    pub fn phase_slice(&self, stride: usize, phase: &[usize]) -> Result<Tensor> {
        let (py, px) = self.spatial_pair(phase)?;
        if stride == 0 || phase.iter().any(|&p| p >= stride) {
            return Err(Error::InvalidPhase {
                stride,
                phase: phase.to_vec(),
            });
        }
        let (c, h, w) = self.dims3();
        // 1-D signals have an implicit unit height that is never strided.
        let stride_y = if self.spatial_rank() == 1 { 1 } else { stride };
        for &extent in self.spatial() {
            if extent % stride != 0 {
                return Err(Error::NotDivisible {
                    extent,
                    divisor: stride,
                });
            }
        }
        let (oh, ow) = (h / stride_y, w / stride);
        let mut out = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for y in 0..oh {
                let row = ch * h * w + (stride_y * y + py) * w;
                out.extend((0..ow).map(|x| self.data[row + stride * x + px]));
            }
        }
        Tensor::new(self.shape_like(c, oh, ow), out)
    }

    /// `(sum |x_i|^p)^(1/p)`, summed in an order that does not depend on the
    /// position of the elements, so any permutation of `x` yields the same bits.
    pub fn lp_norm(&self, p: f64) -> f64 {
        lp_norm_of(self.data.iter().copied(), p)
    }

    /// Concatenates tensors along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidConfig("nothing to concatenate".into()))?;
        let mut channels = 0;
        let mut data = Vec::new();
        for t in parts {
            if t.spatial() != first.spatial() {
                return Err(Error::ShapeMismatch {
                    left: first.shape.clone(),
                    right: t.shape.clone(),
                });
            }
            channels += t.channels();
            data.extend_from_slice(&t.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = channels;
        Tensor::new(shape, data)
    }

    /// Crops the spatial axes symmetrically to the largest extents divisible
    /// by `multiple`.
    pub fn center_crop_to_multiple(&self, multiple: usize) -> Result<Tensor> {
        let (c, h, w) = self.dims3();
        let target_w = w - w % multiple;
        let target_h = if self.spatial_rank() == 1 {
            1
        } else {
            h - h % multiple
        };
        if target_w == 0 || target_h == 0 {
            return Err(Error::NotDivisible {
                extent: if target_w == 0 { w } else { h },
                divisor: multiple,
            });
        }
        if (target_h, target_w) == (h, w) {
            return Ok(self.clone());
        }
        let (oy, ox) = ((h - target_h) / 2, (w - target_w) / 2);
        let mut out = Vec::with_capacity(c * target_h * target_w);
        for ch in 0..c {
            for y in 0..target_h {
                let row = ch * h * w + (oy + y) * w + ox;
                out.extend_from_slice(&self.data[row..row + target_w]);
            }
        }
        Tensor::new(self.shape_like(c, target_h, target_w), out)
    }

    /// Elementwise `a - b`.
    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub(crate) fn check_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    /// Single channel view as a new tensor.
    pub fn channel(&self, index: usize) -> Tensor {
        let (_, h, w) = self.dims3();
        let plane = h * w;
        Tensor {
            shape: self.shape_like(1, h, w),
            data: self.data[index * plane..(index + 1) * plane].to_vec(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub(crate) fn from_parts_unchecked(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

/// Sums after sorting, so the result depends only on the multiset of values.
pub(crate) fn order_invariant_sum(mut values: Vec<f64>) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    values.iter().sum()
}

pub(crate) fn lp_norm_of(values: impl Iterator<Item = f64>, p: f64) -> f64 {
    if p == 2.0 {
        order_invariant_sum(values.map(|v| v * v).collect()).sqrt()
    } else if p == 1.0 {
        order_invariant_sum(values.map(f64::abs).collect())
    } else {
        order_invariant_sum(values.map(|v| v.abs().powf(p)).collect()).powf(p.recip())
    }
}
