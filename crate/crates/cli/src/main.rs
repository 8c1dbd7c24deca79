//! `derev`: frame-online binaural dereverberation from the command line.

mod commands;
mod failure;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use derev_core::lstm::Dtype;
use derev_core::pipeline::PipelineMode;
use derev_core::signal::ListenerProfile;

#[derive(Parser, Debug)]
#[command(name = "derev", version, about = "Frame-online RLS-WPE dereverberation with neural PSD and post-filter")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Process a WAV file and write the result plus a run manifest.
    Run(RunArgs),
    /// Re-run a run manifest and check the output is bit-identical.
    Replay(ReplayArgs),
    /// Compute ELR/EMR/EFR/SNR/SDR of processed audio against a synthesized scene.
    Eval(EvalArgs),
    /// Synthesize a reverberant scene from a spec (or regenerate one from its manifest).
    Synth(SynthArgs),
    /// Print the dimensions and parameter count of a weight file.
    ModelInfo(ModelInfoArgs),
    /// Write a weight file with random or zero weights (test fixtures).
    ModelInit(ModelInitArgs),
}

#[derive(Args, Debug, Clone)]
pub struct PipelineArgs {
    #[arg(long, default_value = "rls_wpe")]
    pub mode: PipelineMode,
    /// Pipeline configuration, TOML or JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model_wpe: Option<PathBuf>,
    #[arg(long)]
    pub model_pf: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub profile: Option<ProfileArg>,
    /// Disable rayon even when the build supports it.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long, short)]
    pub output: PathBuf,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Target signal for the oracle-PSD mode.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Scene manifest from `synth`; supplies the oracle target and enables per-segment metrics.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Feed the stream in pieces of this many seconds.
    #[arg(long)]
    pub chunk_seconds: Option<f64>,
    /// Where to write the run manifest (default: output path with `.json`).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Float32)]
    pub format: FormatArg,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    pub report: ReportFormat,
}

#[derive(Args, Debug)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Write here instead of the recorded output path.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, short)]
    pub processed: PathBuf,
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long, value_enum, default_value_t = ProfileArg::Ha)]
    pub profile: ProfileArg,
    /// Label recorded in the report.
    #[arg(long, default_value = "unlabelled")]
    pub label: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Estimate δ* by cross-correlation instead of using the oracle delay.
    #[arg(long)]
    pub estimate_delay: bool,
    /// One report per evaluated segment instead of one overall.
    #[arg(long)]
    pub segments: bool,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    pub report: ReportFormat,
    /// Report destination (default: stdout).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Scene spec JSON or a scene manifest; defaults apply when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Overrides every seed of the scene.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub t60: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ModelInfoArgs {
    pub model: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct ModelInitArgs {
    #[arg(long, short)]
    pub out: PathBuf,
    /// 1 for the WPE network, 2 for the post-filter network.
    #[arg(long, default_value_t = 1)]
    pub heads: usize,
    #[arg(long, default_value_t = 512)]
    pub hidden: usize,
    #[arg(long, default_value_t = 257)]
    pub input_dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// All-zero weights (every mask is 0.5).
    #[arg(long)]
    pub zeros: bool,
    #[arg(long, value_enum, default_value_t = DtypeArg::F32)]
    pub dtype: DtypeArg,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileArg {
    Ha,
    Ci,
}

impl From<ProfileArg> for ListenerProfile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Ha => ListenerProfile::Ha,
            ProfileArg::Ci => ListenerProfile::Ci,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatArg {
    Pcm16,
    Float32,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum DtypeArg {
    F32,
    F64,
}

impl From<DtypeArg> for Dtype {
    fn from(d: DtypeArg) -> Self {
        match d {
            DtypeArg::F32 => Dtype::F32,
            DtypeArg::F64 => Dtype::F64,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => commands::run(&a),
        Command::Replay(a) => commands::replay(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::ModelInfo(a) => commands::model_info(&a),
        Command::ModelInit(a) => commands::model_init(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
