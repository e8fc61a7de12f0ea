//! Shift audits over image sets: input discovery, synthetic generators, shift
//! policies and report serialization.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::load_image;
use crate::metrics::{evaluate_shifts, EquivarianceReport, NmseReference};
use crate::sampling::SamplingVariant;
use crate::tensor::{Shift, Tensor};
use crate::unet::{build, Network, NetworkConfig};

/// Largest shift magnitude used by default.
pub const DEFAULT_MAX_SHIFT: usize = 16;

const STREAM_SYNTHETIC: u64 = 1 << 32;
const STREAM_SHIFTS: u64 = 2 << 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyntheticKind {
    /// A single unit sample at a random position.
    Impulse,
    /// Independent uniform samples in `[0, 1)`.
    Uniform,
    /// A few smooth Gaussian bumps.
    Blobs,
    /// Uniform noise thresholded at 0.5.
    Binary,
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "impulse" => Ok(SyntheticKind::Impulse),
            "uniform" => Ok(SyntheticKind::Uniform),
            "blobs" => Ok(SyntheticKind::Blobs),
            "binary" => Ok(SyntheticKind::Binary),
            _ => Err(Error::InvalidConfig(format!(
                "unknown synthetic generator `{s}`"
            ))),
        }
    }
}

/// `synthetic:<kind>:<H>x<W>:<count>`, or `synthetic:<kind>:<N>:<count>` for
/// 1-D signals.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub extent: Vec<usize>,
    pub count: usize,
}

impl FromStr for SyntheticSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("bad synthetic spec `{s}`"));
        let parts: Vec<&str> = s.split(':').collect();
        let [tag, kind, size, count] = parts.as_slice() else {
            return Err(bad());
        };
        if *tag != "synthetic" {
            return Err(bad());
        }
        let extent = size
            .split('x')
            .map(|d| d.parse::<usize>().ok().filter(|&d| d > 0))
            .collect::<Option<Vec<_>>>()
            .filter(|e| (1..=2).contains(&e.len()))
            .ok_or_else(bad)?;
        let count = count.parse().ok().filter(|&c| c > 0).ok_or_else(bad)?;
        Ok(SyntheticSpec {
            kind: kind.parse()?,
            extent,
            count,
        })
    }
}

impl SyntheticSpec {
    /// The `index`-th synthetic input, derived from `seed` alone.
    pub fn generate(&self, seed: u64, index: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(STREAM_SYNTHETIC | index as u64);
        let (h, w) = match self.extent.as_slice() {
            [n] => (1, *n),
            [h, w] => (*h, *w),
            _ => unreachable!(),
        };
        let n = h * w;
        let data: Vec<f64> = match self.kind {
            SyntheticKind::Impulse => {
                let mut d = vec![0.0; n];
                d[rng.gen_range(0..n)] = 1.0;
                d
            }
            SyntheticKind::Uniform => (0..n).map(|_| rng.gen::<f64>()).collect(),
            SyntheticKind::Binary => (0..n)
                .map(|_| if rng.gen::<f64>() < 0.5 { 0.0 } else { 1.0 })
                .collect(),
            SyntheticKind::Blobs => {
                let blobs: Vec<(f64, f64, f64, f64)> = (0..3)
                    .map(|_| {
                        (
                            rng.gen_range(0.0..h as f64),
                            rng.gen_range(0.0..w as f64),
                            rng.gen_range(1.5..4.0),
                            rng.gen_range(0.3..1.0),
                        )
                    })
                    .collect();
                let wrap = |d: f64, extent: usize| {
                    let e = extent as f64;
                    let d = d.rem_euclid(e);
                    d.min(e - d)
                };
                (0..n)
                    .map(|i| {
                        let (y, x) = ((i / w) as f64, (i % w) as f64);
                        blobs
                            .iter()
                            .map(|&(cy, cx, sigma, amp)| {
                                let dy = if h == 1 { 0.0 } else { wrap(y - cy, h) };
                                let dx = wrap(x - cx, w);
                                amp * (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp()
                            })
                            .sum()
                    })
                    .collect()
            }
        };
        let shape = if self.extent.len() == 1 {
            vec![1, w]
        } else {
            vec![1, h, w]
        };
        Tensor::new(shape, data).expect("generator shape is consistent")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InputSource {
    Directory(PathBuf),
    Synthetic(SyntheticSpec),
}

impl FromStr for InputSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.starts_with("synthetic:") {
            Ok(InputSource::Synthetic(s.parse()?))
        } else {
            Ok(InputSource::Directory(PathBuf::from(s)))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShiftPolicy {
    /// Every shift within the range on every axis.
    Exhaustive,
    /// `count` shifts drawn uniformly from the range, per image.
    Random { count: usize },
}

impl FromStr for ShiftPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "exhaustive" {
            return Ok(ShiftPolicy::Exhaustive);
        }
        s.strip_prefix("random:")
            .and_then(|n| n.parse().ok())
            .filter(|&n| n >= 1)
            .map(|count| ShiftPolicy::Random { count })
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "shift policy `{s}`: expected exhaustive or random:N (N >= 1)"
                ))
            })
    }
}

impl ShiftPolicy {
    /// Shifts for one input. `range` bounds every axis symmetrically; when
    /// absent it is `min(16, extent / 2)` per axis.
    pub fn shifts(
        self,
        spatial: &[usize],
        range: Option<usize>,
        seed: u64,
        index: usize,
    ) -> Vec<Shift> {
        let bounds: Vec<i64> = spatial
            .iter()
            .map(|&e| range.unwrap_or_else(|| DEFAULT_MAX_SHIFT.min(e / 2)) as i64)
            .collect();
        match self {
            ShiftPolicy::Exhaustive => {
                let mut out = vec![Vec::new()];
                for &b in &bounds {
                    out = out
                        .into_iter()
                        .flat_map(|prefix: Vec<i64>| {
                            (-b..=b).map(move |k| {
                                let mut p = prefix.clone();
                                p.push(k);
                                p
                            })
                        })
                        .collect();
                }
                out.into_iter().map(Shift::new).collect()
            }
            ShiftPolicy::Random { count } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(STREAM_SHIFTS | index as u64);
                (0..count)
                    .map(|_| Shift::new(bounds.iter().map(|&b| rng.gen_range(-b..=b)).collect()))
                    .collect()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GroundTruth {
    None,
    /// Use each input as its own reference.
    Input,
    /// Files with the same name as the inputs.
    Directory(PathBuf),
}

impl FromStr for GroundTruth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => GroundTruth::None,
            "input" => GroundTruth::Input,
            dir => GroundTruth::Directory(PathBuf::from(dir)),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum NetworkSource {
    Inline(NetworkConfig),
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditConfig {
    pub network: NetworkSource,
    pub shifts: ShiftPolicy,
    pub range: Option<usize>,
    pub input: InputSource,
    pub gt: GroundTruth,
    pub nmse_reference: NmseReference,
    /// Drives synthetic inputs and random shifts, one sub-stream per image.
    pub seed: u64,
}

impl AuditConfig {
    pub fn resolve_network(&self) -> Result<Network> {
        match &self.network {
            NetworkSource::Inline(cfg) => build(cfg),
            NetworkSource::File(path) => {
                Network::load(std::io::BufReader::new(fs::File::open(path)?))
            }
        }
    }
}

/// A named input that failed to audit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditFailure {
    pub image: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub variant: SamplingVariant,
    pub seed: u64,
    pub images: usize,
    pub failures: usize,
    pub records: usize,
    pub mean_nmse: f64,
    pub max_nmse: f64,
    pub mean_ssim: f64,
    pub min_ssim: f64,
    pub worst_delta_psnr: Option<f64>,
    pub ties: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditOutcome {
    pub reports: Vec<EquivarianceReport>,
    pub failures: Vec<AuditFailure>,
    pub summary: AuditSummary,
}

struct Item {
    name: String,
    path: Option<PathBuf>,
}

fn list_items(source: &InputSource) -> Result<Vec<Item>> {
    let items = match source {
        InputSource::Directory(dir) => {
            let mut files: Vec<PathBuf> = fs::read_dir(dir)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            files.retain(|p| {
                p.is_file()
                    && !p
                        .file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with('.'))
            });
            files.sort();
            files
                .into_iter()
                .map(|p| Item {
                    name: p.file_name().unwrap().to_string_lossy().into_owned(),
                    path: Some(p),
                })
                .collect::<Vec<_>>()
        }
        InputSource::Synthetic(spec) => (0..spec.count)
            .map(|i| Item {
                name: format!("{}-{i:03}", synthetic_label(spec.kind)),
                path: None,
            })
            .collect(),
    };
    if items.is_empty() {
        return Err(Error::InvalidConfig("no input images".into()));
    }
    Ok(items)
}

fn synthetic_label(kind: SyntheticKind) -> &'static str {
    match kind {
        SyntheticKind::Impulse => "impulse",
        SyntheticKind::Uniform => "uniform",
        SyntheticKind::Blobs => "blobs",
        SyntheticKind::Binary => "binary",
    }
}

fn audit_item(
    net: &Network,
    cfg: &AuditConfig,
    index: usize,
    item: &Item,
) -> Result<EquivarianceReport> {
    let multiple = net.config().extent_multiple();
    let raw = match (&cfg.input, &item.path) {
        (InputSource::Synthetic(spec), _) => spec.generate(cfg.seed, index),
        (_, Some(path)) => load_image(path)?,
        _ => unreachable!(),
    };
    let x = raw.center_crop_to_multiple(multiple)?;
    let gt = match &cfg.gt {
        GroundTruth::None => None,
        GroundTruth::Input => Some(x.clone()),
        GroundTruth::Directory(dir) => {
            let g = load_image(&dir.join(&item.name))?;
            if g.shape() != raw.shape() {
                return Err(Error::ShapeMismatch {
                    left: raw.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            Some(g.center_crop_to_multiple(multiple)?)
        }
    };
    let shifts = cfg.shifts.shifts(x.spatial(), cfg.range, cfg.seed, index);
    evaluate_shifts(
        net,
        &item.name,
        &x,
        gt.as_ref(),
        &shifts,
        cfg.nmse_reference,
    )
}

/// Audits every input. Per-input failures are collected and the audit
/// continues; an empty input set is an error.
pub fn run_audit(cfg: &AuditConfig) -> Result<AuditOutcome> {
    let net = cfg.resolve_network()?;
    run_audit_with(&net, cfg)
}

pub fn run_audit_with(net: &Network, cfg: &AuditConfig) -> Result<AuditOutcome> {
    let items = list_items(&cfg.input)?;
    let results: Vec<Result<EquivarianceReport>> = items
        .par_iter()
        .enumerate()
        .map(|(i, item)| audit_item(net, cfg, i, item))
        .collect();
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (item, r) in items.iter().zip(results) {
        match r {
            Ok(rep) => reports.push(rep),
            Err(e) => failures.push(AuditFailure {
                image: item.name.clone(),
                message: e.to_string(),
            }),
        }
    }
    let summary = summarize(net, &reports, failures.len());
    Ok(AuditOutcome {
        reports,
        failures,
        summary,
    })
}

fn summarize(net: &Network, reports: &[EquivarianceReport], failures: usize) -> AuditSummary {
    let records: Vec<_> = reports.iter().flat_map(|r| &r.records).collect();
    let n = records.len().max(1) as f64;
    let worst_delta_psnr = if records.is_empty() {
        None
    } else {
        records
            .iter()
            .try_fold(0.0f64, |m, r| r.delta_psnr.map(|d| m.max(d)))
    };
    AuditSummary {
        variant: net.variant(),
        seed: net.config().seed,
        images: reports.len(),
        failures,
        records: records.len(),
        mean_nmse: records.iter().map(|r| r.nmse).sum::<f64>() / n,
        max_nmse: records.iter().map(|r| r.nmse).fold(0.0, f64::max),
        mean_ssim: records.iter().map(|r| r.ssim).sum::<f64>() / n,
        min_ssim: records.iter().map(|r| r.ssim).fold(1.0, f64::min),
        worst_delta_psnr,
        ties: records.iter().map(|r| r.ties).sum(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Jsonl,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(ReportFormat::Jsonl),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(Error::InvalidConfig(format!("unknown report format `{s}`"))),
        }
    }
}

/// One line of a JSONL report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ReportLine {
    Shift {
        image: String,
        variant: SamplingVariant,
        seed: u64,
        nmse_reference: NmseReference,
        shift: Vec<i64>,
        nmse: f64,
        ssim: f64,
        delta_psnr: Option<f64>,
        ties: usize,
    },
    Image {
        image: String,
        variant: SamplingVariant,
        seed: u64,
        shifts: usize,
        mean_nmse: f64,
        mean_ssim: f64,
        worst_delta_psnr: Option<f64>,
    },
    Error(AuditFailure),
    Summary(AuditSummary),
}

impl AuditOutcome {
    pub fn lines(&self) -> Vec<ReportLine> {
        let mut out = Vec::new();
        for rep in &self.reports {
            for r in &rep.records {
                out.push(ReportLine::Shift {
                    image: rep.image.clone(),
                    variant: rep.variant,
                    seed: rep.seed,
                    nmse_reference: rep.nmse_reference,
                    shift: r.shift.clone(),
                    nmse: r.nmse,
                    ssim: r.ssim,
                    delta_psnr: r.delta_psnr,
                    ties: r.ties,
                });
            }
            out.push(ReportLine::Image {
                image: rep.image.clone(),
                variant: rep.variant,
                seed: rep.seed,
                shifts: rep.records.len(),
                mean_nmse: rep.mean_nmse,
                mean_ssim: rep.mean_ssim,
                worst_delta_psnr: rep.worst_delta_psnr,
            });
        }
        out.extend(self.failures.iter().cloned().map(ReportLine::Error));
        out.push(ReportLine::Summary(self.summary.clone()));
        out
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Jsonl => {
                let mut s = String::new();
                for line in self.lines() {
                    s.push_str(&serde_json::to_string(&line).expect("report lines serialize"));
                    s.push('\n');
                }
                s
            }
            ReportFormat::Csv => {
                let mut s = String::from("image,variant,seed,shift,nmse,ssim,delta_psnr,ties\n");
                for rep in &self.reports {
                    for r in &rep.records {
                        let shift: Vec<String> = r.shift.iter().map(|k| k.to_string()).collect();
                        let _ = writeln!(
                            s,
                            "{},{},{},{},{},{},{},{}",
                            csv_field(&rep.image),
                            rep.variant,
                            rep.seed,
                            shift.join(" "),
                            r.nmse,
                            r.ssim,
                            r.delta_psnr.map(|d| d.to_string()).unwrap_or_default(),
                            r.ties
                        );
                    }
                }
                s
            }
        }
    }

    pub fn write_to(&self, path: &Path, format: ReportFormat) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.render(format).as_bytes())?;
        Ok(())
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn parse_jsonl_report(text: &str) -> Result<Vec<ReportLine>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::format(e.to_string())))
        .collect()
}

/// One row of a variant comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub variant: SamplingVariant,
    pub images: usize,
    pub mean_nmse: f64,
    pub max_nmse: f64,
    pub mean_ssim: f64,
    pub worst_delta_psnr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareTable {
    pub seed: u64,
    pub rows: Vec<CompareRow>,
    pub failures: Vec<AuditFailure>,
}

/// Audits the same inputs under several sampling variants. Weights depend
/// only on the seed and widths, so every variant shares them.
pub fn compare(variants: &[SamplingVariant], cfg: &AuditConfig) -> Result<CompareTable> {
    if variants.is_empty() {
        return Err(Error::InvalidConfig(
            "compare needs at least one variant".into(),
        ));
    }
    let base = cfg.resolve_network()?;
    let mut rows = Vec::with_capacity(variants.len());
    let mut failures = Vec::new();
    for &v in variants {
        let net = base.clone().with_variant(v);
        let outcome = run_audit_with(&net, cfg)?;
        let s = &outcome.summary;
        rows.push(CompareRow {
            variant: v,
            images: s.images,
            mean_nmse: s.mean_nmse,
            max_nmse: s.max_nmse,
            mean_ssim: s.mean_ssim,
            worst_delta_psnr: s.worst_delta_psnr,
        });
        failures.extend(outcome.failures.into_iter().map(|f| AuditFailure {
            image: format!("{}@{v}", f.image),
            message: f.message,
        }));
    }
    Ok(CompareTable {
        seed: base.config().seed,
        rows,
        failures,
    })
}

impl CompareTable {
    pub fn render_csv(&self) -> String {
        let mut s = String::from("variant,images,mean_nmse,max_nmse,mean_ssim,worst_delta_psnr\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.variant,
                r.images,
                r.mean_nmse,
                r.max_nmse,
                r.mean_ssim,
                r.worst_delta_psnr
                    .map(|d| d.to_string())
                    .unwrap_or_default()
            );
        }
        s
    }

    pub fn render_text(&self) -> String {
        let mut s = format!(
            "{:<10} {:>6} {:>12} {:>12} {:>10} {:>12}\n",
            "variant", "images", "mean NMSE", "max NMSE", "mean SSIM", "worst dPSNR"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<10} {:>6} {:>12.4e} {:>12.4e} {:>10.6} {:>12}",
                r.variant.label(),
                r.images,
                r.mean_nmse,
                r.max_nmse,
                r.mean_ssim,
                r.worst_delta_psnr
                    .map(|d| format!("{d:.4e}"))
                    .unwrap_or_else(|| "-".into())
            );
        }
        s
    }
}
