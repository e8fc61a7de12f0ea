use std::fs;
use std::io::BufReader;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use polyeq::audit::{
    compare, run_audit, AuditConfig, GroundTruth, InputSource, NetworkSource, ReportFormat,
    ShiftPolicy,
};
use polyeq::demo::demo1d;
use polyeq::metrics::NmseReference;
use polyeq::unet::{build, Network, NetworkConfig};
use polyeq::{NormOrder, SamplingVariant};

#[derive(Parser)]
#[command(
    name = "polyeq",
    version,
    about = "Shift-equivariance audits for polyphase-sampled encoder-decoders"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Measure equivariance NMSE/SSIM (and PSNR drift) over shifted inputs.
    Audit(AuditArgs),
    /// Print the 1-D adaptive down/upsampling walk-through.
    Demo1d(DemoArgs),
    /// Audit the same inputs under several sampling variants.
    Compare(CompareArgs),
    /// Build a network from a seed and save it.
    NetInit(NetInitArgs),
    /// Describe a saved network.
    NetInfo(NetInfoArgs),
}

#[derive(Args, Clone)]
struct NetArgs {
    /// baseline, lpf2, lpf3, lpf5, aps, aps2, aps3, aps5
    #[arg(long, default_value = "aps")]
    variant: SamplingVariant,
    #[arg(long, default_value_t = 3)]
    scales: usize,
    /// Comma-separated widths, one per scale plus the bottleneck.
    #[arg(long, value_delimiter = ',')]
    channels: Option<Vec<usize>>,
    /// Norm order used to rank polyphase components.
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    #[arg(long, env = "POLYEQ_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    kernel: usize,
    /// 1 for signals, 2 for images.
    #[arg(long, default_value_t = 2)]
    dims: usize,
    #[arg(long, default_value_t = 1)]
    in_channels: usize,
    /// Load a saved network instead of building one from the flags above.
    #[arg(long)]
    net: Option<PathBuf>,
}

impl NetArgs {
    fn config(&self) -> Result<NetworkConfig> {
        let cfg = NetworkConfig {
            scales: self.scales,
            channels: self
                .channels
                .clone()
                .unwrap_or_else(|| NetworkConfig::doubling_widths(self.scales, 8)),
            in_channels: self.in_channels,
            out_channels: self.in_channels,
            kernel_size: self.kernel,
            spatial_rank: self.dims,
            variant: self.variant,
            p: NormOrder::new(self.p)?,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn source(&self) -> Result<NetworkSource> {
        Ok(match &self.net {
            Some(path) => NetworkSource::File(path.clone()),
            None => NetworkSource::Inline(self.config()?),
        })
    }
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Image directory, or synthetic:<impulse|uniform|blobs|binary>:<H>x<W>:<count>
    #[arg(long)]
    input: String,
    /// Ground-truth directory, `input`, or `none`.
    #[arg(long)]
    gt: Option<String>,
    /// exhaustive or random:N
    #[arg(long, default_value = "exhaustive")]
    shifts: ShiftPolicy,
    /// Largest absolute shift per axis (default min(16, extent/2)).
    #[arg(long)]
    range: Option<usize>,
    #[arg(long, value_enum, default_value_t = NmseRef::ShiftedOutput)]
    nmse_ref: NmseRef,
}

#[derive(Clone, Copy, ValueEnum)]
enum NmseRef {
    ShiftedOutput,
    OutputOfShifted,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFmt {
    Jsonl,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum TableFmt {
    Text,
    Csv,
}

#[derive(Args)]
struct AuditArgs {
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = ReportFmt::Jsonl)]
    format: ReportFmt,
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long, default_value_t = 4)]
    length: usize,
    #[arg(long, default_value_t = 1, allow_negative_numbers = true)]
    shift: i64,
    #[arg(long, value_enum, default_value_t = TableFmt::Text)]
    format: TableFmt,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated variants to compare.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "baseline,lpf2,lpf3,lpf5,aps,aps2,aps3,aps5"
    )]
    variants: Vec<SamplingVariant>,
    /// Also write the table as CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = TableFmt::Text)]
    format: TableFmt,
}

#[derive(Args)]
struct NetInitArgs {
    #[command(flatten)]
    net: NetArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct NetInfoArgs {
    #[arg(long)]
    net: PathBuf,
}

fn audit_config(net: &NetArgs, run: &RunArgs, default_gt: GroundTruth) -> Result<AuditConfig> {
    let input: InputSource = run.input.parse()?;
    if let InputSource::Directory(dir) = &input {
        if !dir.is_dir() {
            bail!("input directory {} does not exist", dir.display());
        }
    }
    Ok(AuditConfig {
        network: net.source()?,
        shifts: run.shifts,
        range: run.range,
        input,
        gt: match &run.gt {
            Some(g) => g.parse()?,
            None => default_gt,
        },
        nmse_reference: match run.nmse_ref {
            NmseRef::ShiftedOutput => NmseReference::ShiftedOutput,
            NmseRef::OutputOfShifted => NmseReference::OutputOfShifted,
        },
        seed: net.seed,
    })
}

fn cmd_audit(args: AuditArgs) -> Result<ExitCode> {
    let cfg = audit_config(&args.net, &args.run, GroundTruth::None)?;
    let outcome = run_audit(&cfg)?;
    let format = match args.format {
        ReportFmt::Csv => ReportFormat::Csv,
        ReportFmt::Jsonl => ReportFormat::Jsonl,
    };
    outcome
        .write_to(&args.out, format)
        .with_context(|| format!("writing {}", args.out.display()))?;
    let s = &outcome.summary;
    eprintln!(
        "{}: {} images, {} shifts, mean NMSE {:e}, mean SSIM {}, worst dPSNR {}",
        s.variant,
        s.images,
        s.records,
        s.mean_nmse,
        s.mean_ssim,
        s.worst_delta_psnr
            .map(|d| format!("{d:e}"))
            .unwrap_or_else(|| "-".into())
    );
    for f in &outcome.failures {
        eprintln!("error: {}: {}", f.image, f.message);
    }
    Ok(if outcome.failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn cmd_demo(args: DemoArgs) -> Result<ExitCode> {
    let d = demo1d(args.length, args.shift)?;
    match args.format {
        TableFmt::Csv => print!("{}", d.render_csv()),
        TableFmt::Text => print!("{}", d.render_text()),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_compare(args: CompareArgs) -> Result<ExitCode> {
    let cfg = audit_config(&args.net, &args.run, GroundTruth::Input)?;
    let table = compare(&args.variants, &cfg)?;
    match args.format {
        TableFmt::Csv => print!("{}", table.render_csv()),
        TableFmt::Text => print!("{}", table.render_text()),
    }
    if let Some(out) = &args.out {
        fs::write(out, table.render_csv()).with_context(|| format!("writing {}", out.display()))?;
    }
    for f in &table.failures {
        eprintln!("error: {}: {}", f.image, f.message);
    }
    Ok(if table.failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn cmd_net_init(args: NetInitArgs) -> Result<ExitCode> {
    let net = build(&args.net.config()?)?;
    let mut buf = Vec::new();
    net.save(&mut buf)?;
    fs::write(&args.out, buf).with_context(|| format!("writing {}", args.out.display()))?;
    eprintln!(
        "{} parameters written to {}",
        net.parameter_count(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_net_info(args: NetInfoArgs) -> Result<ExitCode> {
    let file =
        fs::File::open(&args.net).with_context(|| format!("opening {}", args.net.display()))?;
    let net = Network::load(BufReader::new(file))?;
    print!("{}", net.config());
    println!("parameters={}", net.parameter_count());
    for (i, k) in net.kernels().enumerate() {
        let (kh, kw) = k.extent();
        println!(
            "kernel[{i}]={}x{}x{}x{}",
            k.out_channels(),
            k.in_channels(),
            kh,
            kw
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Audit(a) => cmd_audit(a),
        Command::Demo1d(a) => cmd_demo(a),
        Command::Compare(a) => cmd_compare(a),
        Command::NetInit(a) => cmd_net_init(a),
        Command::NetInfo(a) => cmd_net_info(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
