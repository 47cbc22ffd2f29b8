mod commands;
mod run_config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Dynamic-static decoupled 4D reconstruction on synthetic multi-view video.
#[derive(Parser, Debug)]
#[command(name = "ds4d", version, about)]
struct Cli {
    /// Worker threads (0 = one per core). Use 1 for bit-reproducible runs.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic deforming scene into a dataset directory.
    Synth(SynthArgs),
    /// Extract patch features of every training image into an .ftr file.
    Extract(ExtractArgs),
    /// Decouple an .ftr file into static-appended dynamic features.
    Decouple(DecoupleArgs),
    /// Time reference-based against all-pairs decoupling on random features.
    BenchDecouple(BenchArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Render a trained model at every frame.
    Render(RenderArgs),
    /// Held-out PSNR / SSIM / D-SSIM of a trained model.
    Eval(EvalArgs),
    /// Export dynamic-feature heatmaps (and score maps given a checkpoint).
    Heatmap(HeatmapArgs),
    /// Train several variants on one dataset and tabulate held-out metrics.
    Ablate(AblateArgs),
    /// Run every gradient check; fails if any exceeds its tolerance.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// oscillate, swing or occlusion
    #[arg(long, default_value = "oscillate")]
    preset: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    #[arg(long, default_value_t = 4)]
    views: usize,
    /// Image width and height in pixels.
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 200)]
    points: usize,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Token grid side p.
    #[arg(long, default_value_t = 8)]
    grid: usize,
    /// Feature width D.
    #[arg(long, default_value_t = 64)]
    dim: usize,
}

#[derive(Args, Debug)]
struct DecoupleArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// mid, avg or concat-both
    #[arg(long, default_value = "concat-both")]
    mode: String,
    /// concat or sum (concat-both only)
    #[arg(long, default_value = "concat")]
    combine: String,
    /// token or flattened
    #[arg(long, default_value = "token")]
    granularity: String,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value_t = 30)]
    t: usize,
    #[arg(long, default_value_t = 6)]
    v: usize,
    /// Tokens per frame; must be a perfect square.
    #[arg(long, default_value_t = 256)]
    p: usize,
    #[arg(long, default_value_t = 768)]
    d: usize,
    /// Timed runs per method; the fastest counts.
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Config sources shared by `train` and `ablate`.
#[derive(Args, Debug)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key; repeatable. Takes precedence over --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Render from the held-out cameras instead of the training ones.
    #[arg(long)]
    holdout: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Also write per-image metrics as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct HeatmapArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    grid: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value = "concat-both")]
    mode: String,
    /// Output image side in pixels.
    #[arg(long, default_value_t = 128)]
    size: usize,
    /// With a fused-feature checkpoint, also export per-view score maps.
    #[arg(long)]
    ckpt: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated variant names; defaults to all of them.
    #[arg(long)]
    variants: Option<String>,
    #[command(flatten)]
    config: ConfigArgs,
    /// Also write the table as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Failure classes mapped onto exit codes 1 and 2.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<ds4d::Error> for CliError {
    fn from(e: ds4d::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.threads > 0 {
        ds4d::par::init_global_threads(cli.threads);
    }
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Extract(a) => commands::extract(a),
        Command::Decouple(a) => commands::decouple(a),
        Command::BenchDecouple(a) => commands::bench_decouple(a),
        Command::Train(a) => commands::train(a),
        Command::Render(a) => commands::render(a),
        Command::Eval(a) => commands::eval(a),
        Command::Heatmap(a) => commands::heatmap(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run `ds4d --help` for usage");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
