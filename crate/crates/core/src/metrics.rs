//! Image-quality and shift-equivariance metrics.
//!
//! Sums of squares are taken in an order that depends only on the multiset of
//! values, so a circularly shifted pair of tensors scores exactly like the
//! unshifted pair.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::SamplingVariant;
use crate::tensor::{order_invariant_sum, Shift, Tensor};
use crate::unet::Network;

/// Side length of the SSIM window.
pub const SSIM_WINDOW: usize = 7;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn squared_error_sum(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.check_same_shape(b)?;
    Ok(order_invariant_sum(
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y) * (x - y))
            .collect(),
    ))
}

fn energy(t: &Tensor) -> f64 {
    order_invariant_sum(t.data().iter().map(|v| v * v).collect())
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    Ok(squared_error_sum(a, b)? / a.len() as f64)
}

/// `||a - b||^2 / ||b||^2`.
pub fn nmse(a: &Tensor, b: &Tensor) -> Result<f64> {
    let err = squared_error_sum(a, b)?;
    let norm = energy(b);
    if norm == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok(err / norm)
}

/// PSNR in dB, or `Exact` when the images are identical.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Psnr {
    Finite(f64),
    Exact,
}

impl Psnr {
    pub fn db(self) -> Option<f64> {
        match self {
            Psnr::Finite(v) => Some(v),
            Psnr::Exact => None,
        }
    }

    /// Absolute difference; infinite when exactly one side is exact.
    pub fn abs_diff(self, other: Psnr) -> f64 {
        match (self, other) {
            (Psnr::Exact, Psnr::Exact) => 0.0,
            (Psnr::Finite(a), Psnr::Finite(b)) => (a - b).abs(),
            _ => f64::INFINITY,
        }
    }
}

/// `10 log10(peak^2 / MSE)`.
pub fn psnr(a: &Tensor, reference: &Tensor, peak: f64) -> Result<Psnr> {
    if !(peak.is_finite() && peak > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "PSNR peak must be positive, got {peak}"
        )));
    }
    let m = mse(a, reference)?;
    Ok(if m == 0.0 {
        Psnr::Exact
    } else {
        Psnr::Finite(10.0 * (peak * peak / m).log10())
    })
}

/// Peak used for PSNR against a ground truth: its largest magnitude.
pub fn peak_of(gt: &Tensor) -> f64 {
    gt.max_abs()
}

/// Circular moving sum over a centred window along one axis of an `h x w`
/// plane. Taps are accumulated in window order.
fn window_sum(plane: &[f64], h: usize, w: usize, along_w: bool, len: usize) -> Vec<f64> {
    let half = (len / 2) as i64;
    let mut out = vec![0.0; plane.len()];
    for t in 0..len as i64 {
        let off = t - half;
        for r in 0..h {
            for c in 0..w {
                let (sr, sc) = if along_w {
                    (r, (c as i64 + off).rem_euclid(w as i64) as usize)
                } else {
                    ((r as i64 + off).rem_euclid(h as i64) as usize, c)
                };
                out[r * w + c] += plane[sr * w + sc];
            }
        }
    }
    out
}

fn window_mean(plane: &[f64], h: usize, w: usize, two_d: bool) -> Vec<f64> {
    let mut s = window_sum(plane, h, w, true, SSIM_WINDOW);
    let mut count = SSIM_WINDOW;
    if two_d {
        s = window_sum(&s, h, w, false, SSIM_WINDOW);
        count *= SSIM_WINDOW;
    }
    let n = count as f64;
    s.iter_mut().for_each(|v| *v /= n);
    s
}

/// Mean structural similarity with a 7-wide (7x7 for images) uniform circular
/// window, sample covariance, `K1 = 0.01`, `K2 = 0.03`. Channels are scored
/// separately and averaged.
pub fn ssim(a: &Tensor, reference: &Tensor, peak: f64) -> Result<f64> {
    a.check_same_shape(reference)?;
    let (c, h, w) = a.dims3();
    let two_d = a.spatial_rank() == 2;
    let n = if two_d {
        SSIM_WINDOW * SSIM_WINDOW
    } else {
        SSIM_WINDOW
    } as f64;
    let cov_norm = n / (n - 1.0);
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let plane = h * w;
    let mut total = 0.0;
    for ch in 0..c {
        let pa = &a.data()[ch * plane..(ch + 1) * plane];
        let pb = &reference.data()[ch * plane..(ch + 1) * plane];
        let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> {
            pa.iter().zip(pb).map(|(&x, &y)| f(x, y)).collect()
        };
        let mu_a = window_mean(pa, h, w, two_d);
        let mu_b = window_mean(pb, h, w, two_d);
        let e_aa = window_mean(&prod(|x, _| x * x), h, w, two_d);
        let e_bb = window_mean(&prod(|_, y| y * y), h, w, two_d);
        let e_ab = window_mean(&prod(|x, y| x * y), h, w, two_d);
        let mut sum = 0.0;
        for i in 0..plane {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = (e_aa[i] - ma * ma) * cov_norm;
            let vb = (e_bb[i] - mb * mb) * cov_norm;
            let cov = (e_ab[i] - ma * mb) * cov_norm;
            let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
            let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
            sum += num / den;
        }
        total += sum / plane as f64;
    }
    Ok(total / c as f64)
}

/// Which output normalizes the equivariance NMSE.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NmseReference {
    /// `T_k(G(x))`, the shifted output of the unshifted input.
    #[default]
    ShiftedOutput,
    /// `G(T_k(x))`, the output of the shifted input.
    OutputOfShifted,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EquivarianceSample {
    pub nmse: f64,
    pub ssim: f64,
}

/// NMSE and SSIM between `G(T_k(x))` and `T_k(G(x))`.
pub fn equivariance_metrics(net: &Network, x: &Tensor, k: &Shift) -> Result<EquivarianceSample> {
    let (base, _) = net.forward(x)?;
    let (shifted, _) = net.forward(&x.circular_shift(k)?)?;
    compare_outputs(
        &shifted,
        &base.circular_shift(k)?,
        NmseReference::ShiftedOutput,
    )
}

/// Metrics for `a = G(T_k x)` against `b = T_k G(x)`. The SSIM peak is the
/// largest magnitude of `b`.
pub fn compare_outputs(
    a: &Tensor,
    b: &Tensor,
    reference: NmseReference,
) -> Result<EquivarianceSample> {
    let nmse = match reference {
        NmseReference::ShiftedOutput => nmse(a, b)?,
        NmseReference::OutputOfShifted => nmse(b, a)?,
    };
    let peak = match b.max_abs() {
        p if p > 0.0 => p,
        _ => 1.0,
    };
    Ok(EquivarianceSample {
        nmse,
        ssim: ssim(a, b, peak)?,
    })
}

/// Largest `|PSNR(G(x), gt) - PSNR(G(T_k x), T_k gt)|` over `shifts`.
pub fn worst_delta_psnr(net: &Network, x: &Tensor, gt: &Tensor, shifts: &[Shift]) -> Result<f64> {
    let peak = peak_of(gt);
    let (base, _) = net.forward(x)?;
    let base_psnr = psnr(&base, gt, peak)?;
    shifts.iter().try_fold(0.0f64, |worst, k| {
        let (out, _) = net.forward(&x.circular_shift(k)?)?;
        let p = psnr(&out, &gt.circular_shift(k)?, peak)?;
        Ok(worst.max(base_psnr.abs_diff(p)))
    })
}

/// One audited shift.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftRecord {
    pub shift: Vec<i64>,
    pub nmse: f64,
    pub ssim: f64,
    /// Absolute PSNR change against the shifted ground truth, when supplied.
    pub delta_psnr: Option<f64>,
    /// Sampling layers with exactly tied polyphase norms in the shifted pass.
    pub ties: usize,
}

/// Per-shift equivariance measurements for one input and their aggregates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivarianceReport {
    pub image: String,
    pub variant: SamplingVariant,
    pub seed: u64,
    pub nmse_reference: NmseReference,
    pub records: Vec<ShiftRecord>,
    pub mean_nmse: f64,
    pub mean_ssim: f64,
    pub worst_delta_psnr: Option<f64>,
}

impl EquivarianceReport {
    pub fn from_records(
        image: impl Into<String>,
        variant: SamplingVariant,
        seed: u64,
        nmse_reference: NmseReference,
        records: Vec<ShiftRecord>,
    ) -> Self {
        let n = records.len().max(1) as f64;
        let mean_nmse = records.iter().map(|r| r.nmse).sum::<f64>() / n;
        let mean_ssim = records.iter().map(|r| r.ssim).sum::<f64>() / n;
        let worst_delta_psnr = records
            .iter()
            .map(|r| r.delta_psnr)
            .try_fold(0.0f64, |m, d| d.map(|d| m.max(d)))
            .filter(|_| !records.is_empty());
        EquivarianceReport {
            image: image.into(),
            variant,
            seed,
            nmse_reference,
            records,
            mean_nmse,
            mean_ssim,
            worst_delta_psnr,
        }
    }

    pub fn max_nmse(&self) -> f64 {
        self.records.iter().map(|r| r.nmse).fold(0.0, f64::max)
    }

    pub fn min_ssim(&self) -> f64 {
        self.records.iter().map(|r| r.ssim).fold(1.0, f64::min)
    }
}

/// Runs the equivariance measurements of `net` on `x` for every shift.
/// Shifts are evaluated in parallel; records keep the order of `shifts`.
pub fn evaluate_shifts(
    net: &Network,
    image: &str,
    x: &Tensor,
    gt: Option<&Tensor>,
    shifts: &[Shift],
    reference: NmseReference,
) -> Result<EquivarianceReport> {
    let (base, _) = net.forward(x)?;
    let gt_base = match gt {
        Some(g) => {
            let peak = peak_of(g);
            Some((peak, psnr(&base, g, peak)?))
        }
        None => None,
    };
    let records = shifts
        .par_iter()
        .map(|k| {
            let (out, trace) = net.forward(&x.circular_shift(k)?)?;
            let sample = compare_outputs(&out, &base.circular_shift(k)?, reference)?;
            let delta_psnr = match (gt, gt_base) {
                (Some(g), Some((peak, p0))) => {
                    Some(p0.abs_diff(psnr(&out, &g.circular_shift(k)?, peak)?))
                }
                _ => None,
            };
            Ok(ShiftRecord {
                shift: k.offsets().to_vec(),
                nmse: sample.nmse,
                ssim: sample.ssim,
                delta_psnr,
                ties: trace.ties(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EquivarianceReport::from_records(
        image,
        net.variant(),
        net.config().seed,
        reference,
        records,
    ))
}
