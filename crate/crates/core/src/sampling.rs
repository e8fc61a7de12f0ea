//! Stride-2 sampling operators.
//!
//! Conventional downsampling keeps the even grid regardless of content, so an
//! odd input shift changes which samples survive. Adaptive polyphase
//! downsampling instead keeps the polyphase component with the largest norm and
//! reports its index; adaptive upsampling puts samples back on that same grid.
//! The composition of the two is exactly shift-equivariant.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{lp_norm_of, Shift, Tensor};

/// Order `p` of the norm used to rank polyphase components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormOrder(f64);

impl NormOrder {
    pub fn new(p: f64) -> Result<Self> {
        if p.is_finite() && p > 0.0 {
            Ok(NormOrder(p))
        } else {
            Err(Error::InvalidNormOrder(p))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for NormOrder {
    fn default() -> Self {
        NormOrder(2.0)
    }
}

/// Grid selected by adaptive downsampling: one phase in `{0, 1}` per spatial
/// axis.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PolyphaseIndex(Vec<usize>);

impl PolyphaseIndex {
    pub fn new(phase: Vec<usize>) -> Result<Self> {
        if phase.is_empty() || phase.iter().any(|&p| p > 1) {
            return Err(Error::InvalidPhase { stride: 2, phase });
        }
        Ok(PolyphaseIndex(phase))
    }

    pub fn phase(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    /// The index as a translation (`T_i` in the upsampling rule).
    pub fn as_shift(&self) -> Shift {
        Shift::new(self.0.iter().map(|&p| p as i64).collect())
    }

    /// All `2^rank` phases in lexicographic order.
    pub fn enumerate(rank: usize) -> impl Iterator<Item = PolyphaseIndex> {
        (0..1usize << rank).map(move |bits| {
            PolyphaseIndex(
                (0..rank)
                    .map(|axis| (bits >> (rank - 1 - axis)) & 1)
                    .collect(),
            )
        })
    }
}

impl fmt::Display for PolyphaseIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|p| p.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// Anti-aliasing filter length.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlurSize {
    Two,
    Three,
    Five,
}

impl BlurSize {
    pub fn from_taps(j: usize) -> Result<Self> {
        match j {
            2 => Ok(BlurSize::Two),
            3 => Ok(BlurSize::Three),
            5 => Ok(BlurSize::Five),
            _ => Err(Error::UnsupportedFilter(j)),
        }
    }

    pub fn taps(self) -> usize {
        match self {
            BlurSize::Two => 2,
            BlurSize::Three => 3,
            BlurSize::Five => 5,
        }
    }

    /// Normalized binomial row; the 2-D filter is its outer product.
    pub fn kernel(self) -> &'static [f64] {
        match self {
            BlurSize::Two => &[0.5, 0.5],
            BlurSize::Three => &[0.25, 0.5, 0.25],
            BlurSize::Five => &[0.0625, 0.25, 0.375, 0.25, 0.0625],
        }
    }
}

/// How a network reduces and restores resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SamplingVariant {
    Conventional,
    Lpf(BlurSize),
    Aps,
    ApsLpf(BlurSize),
}

impl SamplingVariant {
    pub const ALL: [SamplingVariant; 8] = [
        SamplingVariant::Conventional,
        SamplingVariant::Lpf(BlurSize::Two),
        SamplingVariant::Lpf(BlurSize::Three),
        SamplingVariant::Lpf(BlurSize::Five),
        SamplingVariant::Aps,
        SamplingVariant::ApsLpf(BlurSize::Two),
        SamplingVariant::ApsLpf(BlurSize::Three),
        SamplingVariant::ApsLpf(BlurSize::Five),
    ];

    pub fn is_adaptive(self) -> bool {
        matches!(self, SamplingVariant::Aps | SamplingVariant::ApsLpf(_))
    }

    pub fn blur(self) -> Option<BlurSize> {
        match self {
            SamplingVariant::Lpf(b) | SamplingVariant::ApsLpf(b) => Some(b),
            _ => None,
        }
    }

    /// Short label: `baseline`, `lpf2`, `aps3`, ...
    pub fn label(self) -> String {
        match self {
            SamplingVariant::Conventional => "baseline".into(),
            SamplingVariant::Lpf(b) => format!("lpf{}", b.taps()),
            SamplingVariant::Aps => "aps".into(),
            SamplingVariant::ApsLpf(b) => format!("aps{}", b.taps()),
        }
    }
}

impl fmt::Display for SamplingVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for SamplingVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::UnknownVariant(s.to_string());
        let taps = |rest: &str| -> Result<BlurSize> {
            let j: usize = rest.parse().map_err(|_| unknown())?;
            BlurSize::from_taps(j).map_err(|_| unknown())
        };
        match s {
            "baseline" | "conventional" => Ok(SamplingVariant::Conventional),
            "aps" => Ok(SamplingVariant::Aps),
            _ if s.starts_with("lpf") => Ok(SamplingVariant::Lpf(taps(&s[3..])?)),
            _ if s.starts_with("aps") => Ok(SamplingVariant::ApsLpf(taps(&s[3..])?)),
            _ => Err(unknown()),
        }
    }
}

impl Serialize for SamplingVariant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for SamplingVariant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn check_even(x: &Tensor) -> Result<()> {
    for &extent in x.spatial() {
        if extent % 2 != 0 {
            return Err(Error::NotDivisible { extent, divisor: 2 });
        }
    }
    Ok(())
}

/// `y(n) = x(2n)` on every spatial axis.
pub fn downsample_d2(x: &Tensor) -> Result<Tensor> {
    check_even(x)?;
    x.phase_slice(2, &vec![0; x.spatial_rank()])
}

/// Doubles every spatial extent, placing `y(n)` at `2n` and zeros elsewhere.
pub fn upsample_u2(y: &Tensor) -> Tensor {
    let (c, h, w) = y.dims3();
    let one_d = y.spatial_rank() == 1;
    let (oh, ow) = (if one_d { 1 } else { 2 * h }, 2 * w);
    let step_y = if one_d { 1 } else { 2 };
    let mut out = vec![0.0; c * oh * ow];
    let src = y.data();
    for ch in 0..c {
        for r in 0..h {
            let dst_row = ch * oh * ow + step_y * r * ow;
            let src_row = ch * h * w + r * w;
            for col in 0..w {
                out[dst_row + 2 * col] = src[src_row + col];
            }
        }
    }
    Tensor::from_parts_unchecked(y.shape_like(c, oh, ow), out)
}

/// Outcome of ranking the polyphase components of a tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ApsSelection {
    pub index: PolyphaseIndex,
    /// Norm of every component, in [`PolyphaseIndex::enumerate`] order.
    pub norms: Vec<f64>,
    /// More than one component attained the maximum norm.
    pub tied: bool,
}

impl ApsSelection {
    /// Gap between the winning norm and the best runner-up.
    pub fn margin(&self) -> f64 {
        let best = self.norms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut seen_best = false;
        let mut runner_up = f64::NEG_INFINITY;
        for &n in &self.norms {
            if n == best && !seen_best {
                seen_best = true;
            } else {
                runner_up = runner_up.max(n);
            }
        }
        best - runner_up
    }
}

/// Ranks every stride-2 polyphase component of `x` by its `l_p` norm taken
/// jointly over all channels. Exact ties go to the lexicographically smallest
/// phase.
pub fn polyphase_select(x: &Tensor, p: NormOrder) -> Result<ApsSelection> {
    check_even(x)?;
    let (c, h, w) = x.dims3();
    let one_d = x.spatial_rank() == 1;
    let data = x.data();
    let mut best: Option<(usize, f64)> = None;
    let mut norms = Vec::with_capacity(1 << x.spatial_rank());
    for (slot, index) in PolyphaseIndex::enumerate(x.spatial_rank()).enumerate() {
        let (py, px, sy) = match index.phase() {
            [px] => (0, *px, 1),
            [py, px] => (*py, *px, 2),
            _ => unreachable!(),
        };
        let rows = if one_d { h } else { h / 2 };
        let values = (0..c).flat_map(move |ch| {
            (0..rows).flat_map(move |r| {
                let row = ch * h * w + (sy * r + py) * w;
                (0..w / 2).map(move |col| data[row + 2 * col + px])
            })
        });
        let norm = lp_norm_of(values, p.value());
        if best.is_none_or(|(_, b)| norm > b) {
            best = Some((slot, norm));
        }
        norms.push(norm);
    }
    let (slot, max) = best.expect("at least one phase");
    let tied = norms.iter().filter(|&&n| n == max).count() > 1;
    let index = PolyphaseIndex::enumerate(x.spatial_rank())
        .nth(slot)
        .expect("slot in range");
    Ok(ApsSelection { index, norms, tied })
}

/// Adaptive polyphase downsampling: the highest-norm component and its index.
pub fn aps_downsample(x: &Tensor, p: NormOrder) -> Result<(Tensor, PolyphaseIndex)> {
    let selection = polyphase_select(x, p)?;
    let y = x.phase_slice(2, selection.index.phase())?;
    Ok((y, selection.index))
}

/// Adaptive polyphase upsampling: `T_i(U_2(y))`.
pub fn aps_upsample(y: &Tensor, index: &PolyphaseIndex) -> Result<Tensor> {
    if index.rank() != y.spatial_rank() {
        return Err(Error::SpatialRankMismatch {
            expected: y.spatial_rank(),
            got: index.rank(),
        });
    }
    upsample_u2(y).circular_shift(&index.as_shift())
}

/// Circular 1-D filter along rows (`axis_w == true`) or columns, with tap `t`
/// reading sample `n + start + t`.
fn filter_axis(
    x: &Tensor,
    along_w: bool,
    len: usize,
    start: i64,
    init: f64,
    combine: impl Fn(f64, usize, f64) -> f64,
) -> Tensor {
    let (c, h, w) = x.dims3();
    let src = x.data();
    let mut out = vec![init; src.len()];
    let extent = if along_w { w } else { h } as i64;
    for t in 0..len {
        let off = (start + t as i64).rem_euclid(extent) as usize;
        for ch in 0..c {
            let plane = ch * h * w;
            for r in 0..h {
                let dst = &mut out[plane + r * w..plane + (r + 1) * w];
                if along_w {
                    let row = &src[plane + r * w..plane + (r + 1) * w];
                    for (col, d) in dst.iter_mut().enumerate() {
                        let mut s = col + off;
                        if s >= w {
                            s -= w;
                        }
                        *d = combine(*d, t, row[s]);
                    }
                } else {
                    let sr = (r + off) % h;
                    let row = &src[plane + sr * w..plane + (sr + 1) * w];
                    for (d, &v) in dst.iter_mut().zip(row) {
                        *d = combine(*d, t, v);
                    }
                }
            }
        }
    }
    Tensor::from_parts_unchecked(x.shape().to_vec(), out)
}

/// Offset of the first tap: window `{n - (j-1)/2, ..., n + j/2}`.
fn anchor(j: usize) -> i64 {
    -((j as i64 - 1) / 2)
}

/// Per-channel circular convolution with the normalized binomial filter of
/// length `j` (2, 3 or 5) along every spatial axis.
pub fn blur(x: &Tensor, j: usize) -> Result<Tensor> {
    Ok(blur_with(x, BlurSize::from_taps(j)?))
}

pub fn blur_with(x: &Tensor, size: BlurSize) -> Tensor {
    let k = size.kernel();
    let start = anchor(size.taps());
    let pass = |t: &Tensor, along_w: bool| {
        filter_axis(t, along_w, k.len(), start, 0.0, |acc, tap, v| {
            acc + k[tap] * v
        })
    };
    let out = pass(x, true);
    if x.spatial_rank() == 2 {
        pass(&out, false)
    } else {
        out
    }
}

/// Stride-1 max pool over the circular `window`-wide neighbourhood of every
/// sample, on every spatial axis.
pub fn dense_maxpool(x: &Tensor, window: usize) -> Result<Tensor> {
    if window == 0 {
        return Err(Error::InvalidConfig(
            "max-pool window must be at least 1".into(),
        ));
    }
    let start = anchor(window);
    let pass = |t: &Tensor, along_w: bool| {
        filter_axis(t, along_w, window, start, f64::NEG_INFINITY, |acc, _, v| {
            acc.max(v)
        })
    };
    let out = pass(x, true);
    Ok(if x.spatial_rank() == 2 {
        pass(&out, false)
    } else {
        out
    })
}

/// Strided max-pool for a given variant: dense 2-wide max-pool, optional blur,
/// then conventional or adaptive stride-2 downsampling.
pub fn strided_pool(
    x: &Tensor,
    variant: SamplingVariant,
    p: NormOrder,
) -> Result<(Tensor, Option<PolyphaseIndex>)> {
    let (y, selection) = strided_pool_detailed(x, variant, p)?;
    Ok((y, selection.map(|s| s.index)))
}

/// Like [`strided_pool`], keeping the full polyphase ranking for adaptive
/// variants.
pub fn strided_pool_detailed(
    x: &Tensor,
    variant: SamplingVariant,
    p: NormOrder,
) -> Result<(Tensor, Option<ApsSelection>)> {
    check_even(x)?;
    let mut pooled = dense_maxpool(x, 2)?;
    if let Some(size) = variant.blur() {
        pooled = blur_with(&pooled, size);
    }
    if variant.is_adaptive() {
        let selection = polyphase_select(&pooled, p)?;
        let y = pooled.phase_slice(2, selection.index.phase())?;
        Ok((y, Some(selection)))
    } else {
        Ok((downsample_d2(&pooled)?, None))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(v: &[f64]) -> Tensor {
        Tensor::signal(v.to_vec())
    }

    fn p2() -> NormOrder {
        NormOrder::default()
    }

    #[test]
    fn d2_examples() {
        assert_eq!(
            downsample_d2(&sig(&[1.0, 2.0, 3.0, 4.0])).unwrap().data(),
            &[1.0, 3.0]
        );
        let img = Tensor::image(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(downsample_d2(&img).unwrap().data(), &[1.0]);
        assert!(matches!(
            downsample_d2(&sig(&[1.0, 2.0, 3.0])),
            Err(Error::NotDivisible { .. })
        ));
    }

    #[test]
    fn u2_examples() {
        assert_eq!(upsample_u2(&sig(&[1.0, 2.0])).data(), &[1.0, 0.0, 2.0, 0.0]);
        let img = Tensor::image(1, 1, vec![5.0]).unwrap();
        let up = upsample_u2(&img);
        assert_eq!(up.shape(), &[1, 2, 2]);
        assert_eq!(up.data(), &[5.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn aps_down_examples() {
        let (y, i) = aps_downsample(&sig(&[0.0, 5.0, 0.0, 7.0]), p2()).unwrap();
        assert_eq!(y.data(), &[5.0, 7.0]);
        assert_eq!(i.phase(), &[1]);
        let (y, i) = aps_downsample(&sig(&[9.0, 0.0, 8.0, 0.0]), p2()).unwrap();
        assert_eq!(y.data(), &[9.0, 8.0]);
        assert_eq!(i.phase(), &[0]);
    }

    #[test]
    fn aps_down_2d_matches_brute_force() {
        let x = Tensor::image(2, 2, vec![0.0, 1.0, 0.0, 2.0]).unwrap();
        // every phase slice of a 2x2 image is a single pixel
        let brute: Vec<f64> = PolyphaseIndex::enumerate(2)
            .map(|i| x.phase_slice(2, i.phase()).unwrap().lp_norm(2.0))
            .collect();
        assert_eq!(brute, vec![0.0, 1.0, 0.0, 2.0]);
        let sel = polyphase_select(&x, p2()).unwrap();
        assert_eq!(sel.norms, brute);
        let (y, i) = aps_downsample(&x, p2()).unwrap();
        assert_eq!(y.data(), &[2.0]);
        assert_eq!(i.phase(), &[1, 1]);
    }

    #[test]
    fn ties_pick_lexicographic_smallest() {
        let sel = polyphase_select(&sig(&[3.0, -3.0, 0.0, 0.0]), p2()).unwrap();
        assert!(sel.tied);
        assert_eq!(sel.index.phase(), &[0]);
        let sel = polyphase_select(
            &Tensor::image(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap(),
            p2(),
        )
        .unwrap();
        assert!(sel.tied);
        assert_eq!(sel.index.phase(), &[0, 1]);
        assert_eq!(sel.margin(), 0.0);
    }

    #[test]
    fn norm_is_joint_over_channels() {
        // channel 0 favours phase 0, channel 1 favours phase 1 more strongly
        let x = Tensor::new(vec![2, 2], vec![2.0, 1.0, 0.0, 3.0]).unwrap();
        let (y, i) = aps_downsample(&x, p2()).unwrap();
        assert_eq!(i.phase(), &[1]);
        assert_eq!(y.data(), &[1.0, 3.0]);
    }

    #[test]
    fn aps_up_examples() {
        let y = sig(&[5.0, 7.0]);
        let one = PolyphaseIndex::new(vec![1]).unwrap();
        let zero = PolyphaseIndex::new(vec![0]).unwrap();
        assert_eq!(
            aps_upsample(&y, &one).unwrap().data(),
            &[0.0, 5.0, 0.0, 7.0]
        );
        assert_eq!(
            aps_upsample(&y, &zero).unwrap().data(),
            &[5.0, 0.0, 7.0, 0.0]
        );
        assert!(aps_upsample(&y, &PolyphaseIndex::new(vec![0, 1]).unwrap()).is_err());
        assert!(PolyphaseIndex::new(vec![2]).is_err());
    }

    #[test]
    fn blur_examples() {
        assert_eq!(
            blur(&sig(&[4.0, 0.0, 0.0, 0.0]), 2).unwrap().data(),
            &[2.0, 0.0, 0.0, 2.0]
        );
        let c = Tensor::image(4, 6, vec![0.75; 24]).unwrap();
        for j in [2, 3, 5] {
            assert_eq!(blur(&c, j).unwrap(), c);
        }
        assert!(matches!(blur(&c, 4), Err(Error::UnsupportedFilter(4))));
    }

    #[test]
    fn blur3_centered() {
        let out = blur(&sig(&[0.0, 4.0, 0.0, 0.0, 0.0]), 3).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_examples() {
        assert_eq!(
            dense_maxpool(&sig(&[1.0, 3.0, 2.0, 0.0]), 2)
                .unwrap()
                .data(),
            &[3.0, 3.0, 2.0, 1.0]
        );
        let c = Tensor::image(2, 2, vec![-1.5; 4]).unwrap();
        assert_eq!(dense_maxpool(&c, 3).unwrap(), c);
        assert!(dense_maxpool(&c, 0).is_err());
        let img = Tensor::image(2, 2, vec![1.0, 2.0, 3.0, 0.0]).unwrap();
        assert_eq!(
            dense_maxpool(&img, 2).unwrap().data(),
            &[3.0, 3.0, 3.0, 3.0]
        );
    }

    #[test]
    fn strided_pool_variants() {
        let x = sig(&[1.0, 3.0, 2.0, 0.0]);
        let (y, i) = strided_pool(&x, SamplingVariant::Conventional, p2()).unwrap();
        assert_eq!(y.data(), &[3.0, 2.0]);
        assert!(i.is_none());

        // maxpooled map [0,5,1,7]: odd grid dominates
        let x = sig(&[0.0, 0.0, 5.0, 0.0, 1.0, 7.0]);
        let mp = dense_maxpool(&x, 2).unwrap();
        assert_eq!(mp.data(), &[0.0, 5.0, 5.0, 1.0, 7.0, 7.0]);
        let (y, i) = strided_pool(&x, SamplingVariant::Aps, p2()).unwrap();
        assert_eq!(i.unwrap().phase(), &[1]);
        assert_eq!(y.data(), &[5.0, 1.0, 7.0]);

        let c = Tensor::image(4, 4, vec![2.5; 16]).unwrap();
        for j in [BlurSize::Two, BlurSize::Three, BlurSize::Five] {
            let (y, _) = strided_pool(&c, SamplingVariant::Lpf(j), p2()).unwrap();
            assert_eq!(y.shape(), &[1, 2, 2]);
            assert!(y.data().iter().all(|&v| v == 2.5));
        }
    }

    #[test]
    fn variant_labels_round_trip() {
        for v in SamplingVariant::ALL {
            assert_eq!(v.label().parse::<SamplingVariant>().unwrap(), v);
        }
        assert!("lpf4".parse::<SamplingVariant>().is_err());
        assert!("aps7".parse::<SamplingVariant>().is_err());
        assert!("nope".parse::<SamplingVariant>().is_err());
    }

    #[test]
    fn norm_order_validation() {
        assert!(NormOrder::new(0.0).is_err());
        assert!(NormOrder::new(-1.0).is_err());
        assert!(NormOrder::new(f64::INFINITY).is_err());
        assert_eq!(NormOrder::new(1.5).unwrap().value(), 1.5);
    }
}
