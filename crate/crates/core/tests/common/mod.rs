//! Shared fixtures and independent metric oracles for the integration tests.
//!
//! The oracles deliberately use plain sequential sums and the two-pass
//! variance formula, and evaluate every SSIM window by direct summation.

#![allow(dead_code)]

use polyeq::unet::{build, Network, NetworkConfig};
use polyeq::{SamplingVariant, Shift, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Standard normal samples via Box-Muller.
pub fn gaussian(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let u1: f64 = 1.0 - rng.gen::<f64>();
            let u2: f64 = rng.gen();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

pub fn impulse(shape: Vec<usize>, at: usize) -> Tensor {
    let n = shape.iter().product();
    let mut d = vec![0.0; n];
    d[at] = 1.0;
    Tensor::new(shape, d).unwrap()
}

pub fn net(variant: SamplingVariant, scales: usize, rank: usize, seed: u64) -> Network {
    build(&NetworkConfig {
        scales,
        channels: NetworkConfig::doubling_widths(scales, 4),
        spatial_rank: rank,
        variant,
        seed,
        ..NetworkConfig::default()
    })
    .unwrap()
}

pub fn shifts_2d(range: i64) -> Vec<Shift> {
    let mut out = Vec::new();
    for ky in -range..=range {
        for kx in -range..=range {
            out.push(Shift::d2(ky, kx));
        }
    }
    out
}

pub fn oracle_mse(a: &Tensor, b: &Tensor) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.data().iter().zip(b.data()) {
        s += (x - y) * (x - y);
    }
    s / a.len() as f64
}

pub fn oracle_nmse(a: &Tensor, b: &Tensor) -> f64 {
    let mut err = 0.0;
    let mut norm = 0.0;
    for (x, y) in a.data().iter().zip(b.data()) {
        err += (x - y) * (x - y);
        norm += y * y;
    }
    err / norm
}

pub fn oracle_psnr(a: &Tensor, b: &Tensor, peak: f64) -> f64 {
    10.0 * (peak * peak / oracle_mse(a, b)).log10()
}

/// Direct-summation SSIM: 7x7 (or 7-wide for signals) circular window,
/// sample covariance, K1 = 0.01, K2 = 0.03, channel average.
pub fn oracle_ssim(a: &Tensor, b: &Tensor, peak: f64) -> f64 {
    let shape = a.shape();
    let (c, h, w) = if shape.len() == 2 {
        (shape[0], 1, shape[1])
    } else {
        (shape[0], shape[1], shape[2])
    };
    let two_d = shape.len() == 3;
    let offsets: Vec<(i64, i64)> = if two_d {
        (-3..=3)
            .flat_map(|dy| (-3..=3).map(move |dx| (dy, dx)))
            .collect()
    } else {
        (-3..=3).map(|dx| (0, dx)).collect()
    };
    let n = offsets.len() as f64;
    let c1 = (0.01 * peak) * (0.01 * peak);
    let c2 = (0.03 * peak) * (0.03 * peak);
    let mut total = 0.0;
    for ch in 0..c {
        let at = |t: &Tensor, y: i64, x: i64| {
            let yy = y.rem_euclid(h as i64) as usize;
            let xx = x.rem_euclid(w as i64) as usize;
            t.data()[ch * h * w + yy * w + xx]
        };
        let mut acc = 0.0;
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let wa: Vec<f64> = offsets
                    .iter()
                    .map(|&(dy, dx)| at(a, y + dy, x + dx))
                    .collect();
                let wb: Vec<f64> = offsets
                    .iter()
                    .map(|&(dy, dx)| at(b, y + dy, x + dx))
                    .collect();
                let ma = wa.iter().sum::<f64>() / n;
                let mb = wb.iter().sum::<f64>() / n;
                let va = wa.iter().map(|v| (v - ma) * (v - ma)).sum::<f64>() / (n - 1.0);
                let vb = wb.iter().map(|v| (v - mb) * (v - mb)).sum::<f64>() / (n - 1.0);
                let cov = wa
                    .iter()
                    .zip(&wb)
                    .map(|(p, q)| (p - ma) * (q - mb))
                    .sum::<f64>()
                    / (n - 1.0);
                acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
        }
        total += acc / (h * w) as f64;
    }
    total / c as f64
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    if got == want {
        0.0
    } else {
        (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
    }
}
