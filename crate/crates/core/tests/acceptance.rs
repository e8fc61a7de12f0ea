//! Acceptance suite. Runs every primary criterion at its stated tolerance and
//! prints one PASS/FAIL line per criterion; exits non-zero if any fail.

mod common;

use std::time::{Duration, Instant};

use common::*;
use polyeq::audit::{
    run_audit, AuditConfig, GroundTruth, InputSource, NetworkSource, ReportFormat, ShiftPolicy,
};
use polyeq::metrics::{evaluate_shifts, nmse, psnr, ssim, worst_delta_psnr, NmseReference, Psnr};
use polyeq::sampling::{aps_downsample, aps_upsample, BlurSize};
use polyeq::unet::{index_trace_flip_check, Network, NetworkConfig};
use polyeq::{NormOrder, SamplingVariant, Shift, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const APS_VARIANTS: [SamplingVariant; 4] = [
    SamplingVariant::Aps,
    SamplingVariant::ApsLpf(BlurSize::Two),
    SamplingVariant::ApsLpf(BlurSize::Three),
    SamplingVariant::ApsLpf(BlurSize::Five),
];

const CONVENTIONAL_VARIANTS: [SamplingVariant; 4] = [
    SamplingVariant::Conventional,
    SamplingVariant::Lpf(BlurSize::Two),
    SamplingVariant::Lpf(BlurSize::Three),
    SamplingVariant::Lpf(BlurSize::Five),
];

const NETS_PER_VARIANT: u64 = 20;
const SWEEP_RANGE: i64 = 8;
const SIDE: usize = 32;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn scales_for(seed: u64) -> usize {
    1 + (seed % 3) as usize
}

/// Checks that `aps_upsample(aps_downsample(.))` commutes with every shift,
/// bit for bit.
fn prop1_holds(x: &Tensor, shifts: &[Shift], p: NormOrder) -> bool {
    let round_trip = |t: &Tensor| {
        let (y, i) = aps_downsample(t, p).unwrap();
        aps_upsample(&y, &i).unwrap()
    };
    let base = round_trip(x);
    shifts.iter().all(|k| {
        let lhs = round_trip(&x.circular_shift(k).unwrap());
        let rhs = base.circular_shift(k).unwrap();
        lhs.data()
            .iter()
            .zip(rhs.data())
            .all(|(a, b)| a.to_bits() == b.to_bits())
    })
}

fn criterion_1() -> Outcome {
    let mut rng = rng(0xC1);
    let p = NormOrder::default();
    let mut failures = 0;
    let mut signals = 0;
    for n in 0..120 {
        let len = 2 * (2 + n % 31); // 4..=64
        let x = if n % 2 == 0 {
            uniform(&mut rng, vec![1 + n % 3, len])
        } else {
            gaussian(&mut rng, vec![1, len])
        };
        let shifts: Vec<Shift> = (0..len as i64).map(Shift::d1).collect();
        signals += 1;
        if !prop1_holds(&x, &shifts, p) {
            failures += 1;
        }
    }
    let mut images = 0;
    for n in 0..60 {
        let h = 2 * rng.gen_range(1..=8);
        let w = 2 * rng.gen_range(1..=8);
        let x = uniform(&mut rng, vec![1 + n % 2, h, w]);
        let mut shifts = Vec::new();
        for ky in 0..h as i64 {
            for kx in 0..w as i64 {
                shifts.push(Shift::d2(ky, kx));
            }
        }
        images += 1;
        if !prop1_holds(&x, &shifts, p) {
            failures += 1;
        }
    }
    outcome(
        failures == 0,
        format!("{signals} signals + {images} images, every shift, {failures} mismatches"),
    )
}

/// Runs the exhaustive +-8 sweep on every APS variant with inputs from `draw`.
fn exact_equivariance_suite(
    label: &str,
    mut draw: impl FnMut(u64) -> Tensor,
) -> (Outcome, Duration) {
    let start = Instant::now();
    let shifts = shifts_2d(SWEEP_RANGE);
    let mut bad = Vec::new();
    let mut checked = 0;
    for variant in APS_VARIANTS {
        for seed in 0..NETS_PER_VARIANT {
            let net = net(variant, scales_for(seed), 2, seed);
            let x = draw(seed);
            let report =
                evaluate_shifts(&net, "x", &x, None, &shifts, NmseReference::ShiftedOutput)
                    .unwrap();
            checked += report.records.len();
            if report.max_nmse() != 0.0 || report.min_ssim() != 1.0 {
                bad.push(format!(
                    "{}/seed{seed}: max NMSE {:e}, min SSIM {}",
                    variant.label(),
                    report.max_nmse(),
                    report.min_ssim()
                ));
            }
        }
    }
    let elapsed = start.elapsed();
    let in_time = elapsed < Duration::from_secs(300);
    let mut detail = format!(
        "{label}: {} networks x {} shifts = {checked} checks in {:.1}s",
        APS_VARIANTS.len() as u64 * NETS_PER_VARIANT,
        shifts.len(),
        elapsed.as_secs_f64()
    );
    if !bad.is_empty() {
        detail.push_str(&format!("; failures: {}", bad.join("; ")));
    }
    if !in_time {
        detail.push_str("; exceeded the 5 minute budget");
    }
    (outcome(bad.is_empty() && in_time, detail), elapsed)
}

fn criterion_2() -> Outcome {
    exact_equivariance_suite("gaussian 32x32", |seed| {
        gaussian(&mut rng(0xC2_0000 + seed), vec![1, SIDE, SIDE])
    })
    .0
}

fn impulse_for(seed: u64) -> Tensor {
    let at = rng(0xC3_0000 + seed).gen_range(0..SIDE * SIDE);
    impulse(vec![1, SIDE, SIDE], at)
}

fn criterion_3() -> Outcome {
    let shifts = shifts_2d(SWEEP_RANGE);
    let mut ok = true;
    let mut parts = Vec::new();
    let mut means = Vec::new();
    for variant in CONVENTIONAL_VARIANTS {
        let mut witnesses = 0;
        let mut nets_with_witness = 0;
        let mut max = 0.0f64;
        let mut sum = 0.0;
        let mut count = 0usize;
        for seed in 0..NETS_PER_VARIANT {
            let net = net(variant, scales_for(seed), 2, seed);
            let x = impulse_for(seed);
            let report =
                evaluate_shifts(&net, "x", &x, None, &shifts, NmseReference::ShiftedOutput)
                    .unwrap();
            let w = report.records.iter().filter(|r| r.nmse > 1e-6).count();
            witnesses += w;
            nets_with_witness += usize::from(w > 0);
            max = max.max(report.max_nmse());
            sum += report.records.iter().map(|r| r.nmse).sum::<f64>();
            count += report.records.len();
        }
        ok &= witnesses > 0;
        means.push((variant.label(), sum / count as f64));
        parts.push(format!(
            "{}: {witnesses} shifts over 1e-6 ({nets_with_witness}/{NETS_PER_VARIANT} nets), max {max:.3e}",
            variant.label()
        ));
    }
    // Informational only: whether mean NMSE decreases as the blur widens.
    let ordered = means.windows(2).all(|w| w[0].1 > w[1].1);
    let trend: Vec<String> = means.iter().map(|(l, m)| format!("{l}={m:.3e}")).collect();
    parts.push(format!(
        "mean NMSE {} ({})",
        trend.join(" "),
        if ordered { "monotone" } else { "not monotone" }
    ));
    outcome(ok, parts.join("; "))
}

const NETS_PER_DEPTH: usize = 4;
const DRAWS_PER_NET: usize = 100;

/// An input whose every sampling layer, in every shifted pass, has a winning
/// polyphase norm clearly above the runner-up.
fn separated_input(net: &Network, r: &mut ChaCha8Rng) -> Option<Tensor> {
    (0..DRAWS_PER_NET).find_map(|_| {
        let x = uniform(r, vec![1, 64]);
        let separated = (-SWEEP_RANGE..=SWEEP_RANGE).all(|k| {
            let (_, trace) = net
                .forward(&x.circular_shift(&Shift::d1(k)).unwrap())
                .unwrap();
            trace.selections.iter().all(|s| {
                let best = s.norms.iter().copied().fold(0.0, f64::max);
                s.margin() > 1e-9 * best
            })
        });
        separated.then_some(x)
    })
}

fn criterion_4() -> Outcome {
    let mut checks = 0;
    let mut skipped = Vec::new();
    let mut short = Vec::new();
    let mut failures = Vec::new();
    let mut r = rng(0xC4);
    for variant in APS_VARIANTS {
        for scales in 1..=3usize {
            let mut tested = 0;
            for seed in 0..4 * NETS_PER_DEPTH as u64 {
                if tested == NETS_PER_DEPTH {
                    break;
                }
                let net = net(variant, scales, 1, seed);
                let Some(x) = separated_input(&net, &mut r) else {
                    skipped.push(format!("{}/L{scales}/seed{seed}", variant.label()));
                    continue;
                };
                tested += 1;
                for k in -SWEEP_RANGE..=SWEEP_RANGE {
                    let rep = index_trace_flip_check(&net, &x, &Shift::d1(k)).unwrap();
                    checks += rep.scales.len();
                    for s in rep.scales.iter().filter(|s| !s.pass) {
                        failures.push(format!(
                            "{} L={scales} seed={seed} k={} scale {}: expected {} got {}",
                            variant.label(),
                            rep.shift,
                            s.scale,
                            s.expected,
                            s.observed
                        ));
                    }
                }
            }
            if tested < NETS_PER_DEPTH {
                short.push(format!("{}/L{scales}", variant.label()));
            }
        }
    }
    let mut detail = format!("{checks} scale checks");
    if !skipped.is_empty() {
        detail.push_str(&format!(
            "; no separated input within {DRAWS_PER_NET} draws for {}",
            skipped.join(", ")
        ));
    }
    if !short.is_empty() {
        detail.push_str(&format!(
            "; too few testable networks for {}",
            short.join(", ")
        ));
    }
    if !failures.is_empty() {
        detail.push_str(&format!(
            "; {} mismatches: {}",
            failures.len(),
            failures.join("; ")
        ));
    }
    outcome(failures.is_empty() && short.is_empty(), detail)
}

fn criterion_5() -> Outcome {
    let shifts = shifts_2d(4);
    let mut parts = Vec::new();
    let mut ok = true;
    for variant in APS_VARIANTS {
        let mut worst = 0.0f64;
        for seed in 0..3u64 {
            let net = net(variant, 1 + seed as usize, 2, seed);
            let mut r = rng(0xC5_0000 + seed);
            let x = uniform(&mut r, vec![1, 16, 16]);
            let gt = uniform(&mut r, vec![1, 16, 16]);
            worst = worst.max(worst_delta_psnr(&net, &x, &gt, &shifts).unwrap());
            let imp = impulse_for(seed);
            worst = worst.max(worst_delta_psnr(&net, &imp, &imp, &shifts).unwrap());
        }
        ok &= worst == 0.0;
        parts.push(format!("{}={worst}", variant.label()));
    }
    let mut conventional_worst = f64::INFINITY;
    for seed in 0..3u64 {
        let net = net(SamplingVariant::Conventional, 1 + seed as usize, 2, seed);
        let imp = impulse_for(seed);
        let w = worst_delta_psnr(&net, &imp, &imp, &shifts).unwrap();
        conventional_worst = conventional_worst.min(w);
    }
    ok &= conventional_worst > 0.0;
    parts.push(format!(
        "baseline (smallest over nets)={conventional_worst:.3e}"
    ));
    outcome(ok, format!("worst dPSNR: {}", parts.join(", ")))
}

fn criterion_6() -> Outcome {
    let mut r = rng(0xC6);
    let mut worst = 0.0f64;
    let mut self_ok = true;
    for n in 0..50 {
        let shape = match n % 3 {
            0 => vec![1, r.gen_range(8..20), r.gen_range(8..20)],
            1 => vec![3, r.gen_range(8..16), r.gen_range(8..16)],
            _ => vec![2, r.gen_range(8..64)],
        };
        let n_elems: usize = shape.iter().product();
        let a = Tensor::new(
            shape.clone(),
            (0..n_elems).map(|_| r.gen::<f64>()).collect(),
        )
        .unwrap();
        let b = Tensor::new(
            shape,
            a.data()
                .iter()
                .map(|v| v + 0.2 * (r.gen::<f64>() - 0.5))
                .collect(),
        )
        .unwrap();
        let peak = b.max_abs();
        worst = worst.max(rel_err(nmse(&a, &b).unwrap(), oracle_nmse(&a, &b)));
        let p = match psnr(&a, &b, peak).unwrap() {
            Psnr::Finite(v) => v,
            Psnr::Exact => f64::INFINITY,
        };
        worst = worst.max(rel_err(p, oracle_psnr(&a, &b, peak)));
        worst = worst.max(rel_err(
            ssim(&a, &b, peak).unwrap(),
            oracle_ssim(&a, &b, peak),
        ));
        self_ok &= ssim(&a, &a, a.max_abs()).unwrap() == 1.0;
    }
    outcome(
        worst <= 1e-12 && self_ok,
        format!("50 pairs, worst relative error {worst:.2e}, ssim(a,a)==1: {self_ok}"),
    )
}

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = AuditConfig {
        network: NetworkSource::Inline(NetworkConfig {
            scales: 2,
            channels: vec![4, 8, 16],
            seed: 7,
            ..NetworkConfig::default()
        }),
        shifts: ShiftPolicy::Random { count: 24 },
        range: Some(6),
        input: "synthetic:blobs:16x16:3".parse::<InputSource>().unwrap(),
        gt: GroundTruth::Input,
        nmse_reference: NmseReference::ShiftedOutput,
        seed: 7,
    };
    let mut identical = true;
    let mut sizes = Vec::new();
    for format in [ReportFormat::Jsonl, ReportFormat::Csv] {
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        run_audit(&cfg).unwrap().write_to(&a, format).unwrap();
        run_audit(&cfg).unwrap().write_to(&b, format).unwrap();
        let (a, b) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
        identical &= a == b && !a.is_empty();
        sizes.push(a.len());
    }
    outcome(
        identical,
        format!(
            "two runs per format, byte-identical: {identical} (jsonl {} B, csv {} B)",
            sizes[0], sizes[1]
        ),
    )
}

fn criterion_8() -> Outcome {
    exact_equivariance_suite("binarized noise 32x32", |seed| {
        let mut r = rng(0xC8_0000 + seed);
        let n = SIDE * SIDE;
        let density = 0.2 + 0.6 * r.gen::<f64>();
        let data = (0..n)
            .map(|_| if r.gen::<f64>() < density { 1.0 } else { 0.0 })
            .collect();
        Tensor::new(vec![1, SIDE, SIDE], data).unwrap()
    })
    .0
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 polyphase round trip is shift-commuting", criterion_1),
        ("2 exact network equivariance", criterion_2),
        ("3 conventional non-equivariance witnesses", criterion_3),
        ("4 index flip rule", criterion_4),
        ("5 PSNR invariance", criterion_5),
        ("6 metric oracles", criterion_6),
        ("7 report determinism", criterion_7),
        ("8 held-out input distribution", criterion_8),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        println!(
            "criterion {name}: {} [{:.1}s] {}",
            if o.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
