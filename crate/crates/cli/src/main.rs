//! `boulder`: dataset generation, reset caches, training, evaluation,
//! trajectory replay and plotting for the boulder-excavation environment.

mod commands;
mod fault;
mod plot;
mod snapshot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fault::Fault;

/// Environment variable naming the output root.
pub const OUT_ENV: &str = "BOULDER_OUT";
const DEFAULT_OUT: &str = "boulder_out";

#[derive(Parser, Debug)]
#[command(name = "boulder", version, about = "Boulder-excavation environment toolkit")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Environment config (TOML). A resolved-config snapshot is accepted too.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output root; defaults to $BOULDER_OUT, then ./boulder_out.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

impl Global {
    pub fn root(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SoilArg {
    Curriculum,
    Soft,
    Hard,
    Randomized,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeArg {
    Small,
    Large,
    Any,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitArg {
    Train,
    Holdout,
    All,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DtypeArg {
    F32,
    F64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the rock dataset (meshes, metadata, manifest).
    Rocks(RocksArgs),
    /// Populate reset caches for curriculum levels.
    Cache(CacheArgs),
    /// Train a policy with PPO.
    Train(TrainArgs),
    /// Evaluate a checkpoint or the scripted oracle on the size × soil grid.
    Eval(EvalArgs),
    /// Re-simulate a trajectory log and check rewards bit for bit.
    Replay(ReplayArgs),
    /// Plot hard- and soft-soil bucket-edge paths as SVG.
    Plot(PlotArgs),
}

#[derive(Args, Debug, serde::Serialize)]
pub struct RocksArgs {
    /// Number of training rocks.
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    /// Number of held-out rocks.
    #[arg(long, default_value_t = 25)]
    pub holdout: u64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Fraction of training rocks in the small class.
    #[arg(long, default_value_t = 0.5)]
    pub small_fraction: f64,
    /// Dataset directory; defaults to <root>/rocks.
    #[arg(long)]
    pub dir: Option<PathBuf>,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct CacheArgs {
    /// Level 0-4, or omit for all five.
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..5))]
    pub level: Option<u8>,
    /// Accepted states per level.
    #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
    pub count: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Dataset directory; defaults to <root>/rocks.
    #[arg(long)]
    pub rocks: Option<PathBuf>,
    /// Cache directory; defaults to <root>/cache.
    #[arg(long)]
    pub dir: Option<PathBuf>,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct DataArgs {
    /// Dataset directory; defaults to <root>/rocks.
    #[arg(long)]
    pub rocks: Option<PathBuf>,
    /// Cache directory; defaults to <root>/cache.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Seed the caches were built with.
    #[arg(long, default_value_t = 1)]
    pub cache_seed: u64,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct TrainArgs {
    /// Pin the curriculum at this level; omit to let it advance.
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..5))]
    pub level: Option<u8>,
    #[arg(long, default_value_t = 500)]
    pub iters: usize,
    #[arg(long, default_value_t = 256, value_parser = clap::value_parser!(u64).range(1..))]
    pub envs: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum)]
    pub soil: Option<SoilArg>,
    #[arg(long, value_enum, default_value_t = SizeArg::Any)]
    pub size: SizeArg,
    #[arg(long, value_enum, default_value_t = DtypeArg::F32)]
    pub dtype: DtypeArg,
    /// Stop early once the rolling success rate exceeds this.
    #[arg(long)]
    pub stop_at: Option<f64>,
    #[arg(long, default_value_t = 50)]
    pub checkpoint_every: usize,
    /// Run directory name under <root>/train.
    #[arg(long, default_value = "run")]
    pub name: String,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct EvalArgs {
    /// Policy checkpoint to evaluate.
    #[arg(long, conflicts_with = "oracle", required_unless_present = "oracle")]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate the scripted oracle instead of a checkpoint.
    #[arg(long)]
    pub oracle: bool,
    /// Episodes per grid cell.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub episodes: u64,
    #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..5))]
    pub level: u8,
    #[arg(long, value_enum, default_value_t = SplitArg::Train)]
    pub split: SplitArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write one trajectory log per cell.
    #[arg(long)]
    pub record: bool,
    /// Run directory name under <root>/eval.
    #[arg(long, default_value = "eval")]
    pub name: String,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct ReplayArgs {
    /// Trajectory log (CSV).
    pub log: PathBuf,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct PlotArgs {
    /// Hard-soil trajectory log.
    #[arg(long)]
    pub hard: PathBuf,
    /// Soft-soil trajectory log.
    #[arg(long)]
    pub soft: PathBuf,
    /// SVG output; defaults to <root>/plots/edge_paths.svg.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), Fault> {
    let g = &cli.global;
    match &cli.command {
        Command::Rocks(a) => commands::rocks(g, a),
        Command::Cache(a) => commands::cache(g, a),
        Command::Train(a) => commands::train(g, a),
        Command::Eval(a) => commands::eval(g, a),
        Command::Replay(a) => commands::replay(g, a),
        Command::Plot(a) => commands::plot(g, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { fault::USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
