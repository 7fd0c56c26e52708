//! Command-line driver: dataset generation, training, optimization with
//! either engine, evaluation, ablations, rendering and benchmarks.
//!
//! Exit codes: 0 on success, 2 for configuration or usage errors, 3 for
//! numerical or runtime failures.

pub mod commands;
pub mod config;
pub mod render;

pub use fragto::io::{load_grid, read_grid, save_grid, write_grid};

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand};

use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "fragto",
    version,
    about = "Topology optimization with coarse-to-fine field lifting"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Harvest a training dataset from a fine-scale FEM optimization run.
    GenData(GenDataArgs),
    /// Train a mapping network on a dataset.
    Train(TrainArgs),
    /// Run an optimization with the FEM or the mapnet engine.
    Optimize(OptimizeArgs),
    /// Evaluate a model against held-out iterations of a dataset.
    Eval(EvalArgs),
    /// Train and evaluate over a grid of sizes, crops and dataset lengths.
    Ablate(AblateArgs),
    /// List fragment pairs with identical inputs but different targets.
    DetectNonunique(DetectArgs),
    /// Render a grid file as a binary graymap.
    Render(RenderArgs),
    /// Time one optimization iteration under each engine.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// key=value configuration file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProblemArgs {
    #[arg(long)]
    pub problem: Option<String>,
    /// Fine mesh as WIDTHxHEIGHT.
    #[arg(long)]
    pub size: Option<String>,
    /// simp or beso.
    #[arg(long)]
    pub method: Option<String>,
    /// Fine elements per coarse element along each axis.
    #[arg(long)]
    pub ratio: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub penal: Option<f64>,
    #[arg(long)]
    pub filter_radius: Option<f64>,
    #[arg(long)]
    pub move_limit: Option<f64>,
    #[arg(long)]
    pub evolution_rate: Option<f64>,
    #[arg(long)]
    pub convergence_tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FragmentArgs {
    /// Fragments per axis on the coarse grid.
    #[arg(long)]
    pub crop_scale: Option<usize>,
    /// Stride-one overlapping fragments.
    #[arg(long)]
    pub overlap: bool,
}

#[derive(Debug, Args)]
pub struct TrainingArgs {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub channels: Option<usize>,
}

#[derive(Debug, Args)]
pub struct NormArgs {
    #[arg(long)]
    pub norm_coarse: Option<f64>,
    #[arg(long)]
    pub norm_fine: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Optimization iterations to harvest.
    #[arg(long)]
    pub iters: Option<usize>,
    #[command(flatten)]
    pub norm: NormArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub fragments: FragmentArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[command(flatten)]
    pub norm: NormArgs,
    /// Model file to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub common: Common,
    /// fem or mapnet.
    #[arg(long)]
    pub engine: Option<String>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long)]
    pub crop_scale: Option<usize>,
    #[arg(long)]
    pub overlap: bool,
    /// Estimate normalization from five fine FEM iterations.
    #[arg(long)]
    pub auto_norm: bool,
    #[command(flatten)]
    pub norm: NormArgs,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// First held-out iteration.
    #[arg(long)]
    pub test_first: Option<usize>,
    /// Last held-out iteration.
    #[arg(long)]
    pub test_last: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Comma-separated fine sizes.
    #[arg(long)]
    pub sizes: Option<String>,
    /// Comma-separated crop scales.
    #[arg(long)]
    pub crops: Option<String>,
    /// Comma-separated training iteration counts.
    #[arg(long)]
    pub ns: Option<String>,
    #[arg(long)]
    pub overlap: bool,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[arg(long)]
    pub test_first: Option<usize>,
    #[arg(long)]
    pub test_last: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// CSV file to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub fragments: FragmentArgs,
    #[arg(long)]
    pub tol: Option<f64>,
    #[command(flatten)]
    pub norm: NormArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[command(flatten)]
    pub common: Common,
    /// Grid file to render.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// density or energy.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub fragments: FragmentArgs,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn base(command: &str, common: &Common) -> fragto::Result<RunConfig> {
    match &common.config {
        Some(p) => RunConfig::from_file(command, p),
        None => Ok(RunConfig::new(command)),
    }
}

fn path_str(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

impl ProblemArgs {
    fn apply(&self, c: &mut RunConfig) -> fragto::Result<()> {
        c.set_opt("problem", self.problem.as_ref())?;
        c.set_opt("size", self.size.as_ref())?;
        c.set_opt("method", self.method.as_ref())?;
        c.set_opt("ratio", self.ratio)?;
        c.set_opt("max_iters", self.max_iters)?;
        c.set_opt("penal", self.penal)?;
        c.set_opt("filter_radius", self.filter_radius)?;
        c.set_opt("move_limit", self.move_limit)?;
        c.set_opt("evolution_rate", self.evolution_rate)?;
        c.set_opt("convergence_tol", self.convergence_tol)
    }
}

impl FragmentArgs {
    fn apply(&self, c: &mut RunConfig) -> fragto::Result<()> {
        c.set_opt("crop_scale", self.crop_scale)?;
        if self.overlap {
            c.set("overlap", true)?;
        }
        Ok(())
    }
}

impl TrainingArgs {
    fn apply(&self, c: &mut RunConfig) -> fragto::Result<()> {
        c.set_opt("lr", self.lr)?;
        c.set_opt("steps", self.steps)?;
        c.set_opt("batch_size", self.batch_size)?;
        c.set_opt("seed", self.seed)?;
        c.set_opt("channels", self.channels)
    }
}

impl NormArgs {
    fn apply(&self, c: &mut RunConfig) -> fragto::Result<()> {
        c.set_opt("norm_coarse", self.norm_coarse)?;
        c.set_opt("norm_fine", self.norm_fine)
    }
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Train(_) => "train",
            Command::Optimize(_) => "optimize",
            Command::Eval(_) => "eval",
            Command::Ablate(_) => "ablate",
            Command::DetectNonunique(_) => "detect-nonunique",
            Command::Render(_) => "render",
            Command::Bench(_) => "bench",
        }
    }

    /// Effective configuration: config file first, then flags.
    pub fn config(&self) -> fragto::Result<RunConfig> {
        let name = self.name();
        let c = match self {
            Command::GenData(a) => {
                let mut c = base(name, &a.common)?;
                a.problem.apply(&mut c)?;
                c.set_opt("iters", a.iters)?;
                a.norm.apply(&mut c)?;
                c.set_opt("out", path_str(&a.out))?;
                c
            }
            Command::Train(a) => {
                let mut c = base(name, &a.common)?;
                c.set_opt("data", path_str(&a.data))?;
                a.fragments.apply(&mut c)?;
                a.training.apply(&mut c)?;
                a.norm.apply(&mut c)?;
                c.set_opt("out", path_str(&a.out))?;
                c
            }
            Command::Optimize(a) => {
                let mut c = base(name, &a.common)?;
                c.set_opt("engine", a.engine.as_ref())?;
                c.set_opt("model", path_str(&a.model))?;
                a.problem.apply(&mut c)?;
                c.set_opt("crop_scale", a.crop_scale)?;
                if a.overlap {
                    c.set("overlap", true)?;
                }
                if a.auto_norm {
                    c.set("auto_norm", true)?;
                }
                a.norm.apply(&mut c)?;
                c.set_opt("out", path_str(&a.out))?;
                c
            }
            Command::Eval(a) => {
                let mut c = base(name, &a.common)?;
                c.set_opt("model", path_str(&a.model))?;
                c.set_opt("data", path_str(&a.data))?;
                c.set_opt("test_first", a.test_first)?;
                c.set_opt("test_last", a.test_last)?;
                c.set_opt("out", path_str(&a.out))?;
                c
            }
            Command::Ablate(a) => {
                let mut c = base(name, &a.common)?;
                a.problem.apply(&mut c)?;
                c.set_opt("sizes", a.sizes.as_ref())?;
                c.set_opt("crops", a.crops.as_ref())?;
                c.set_opt("ns", a.ns.as_ref())?;
                if a.overlap {
                    c.set("overlap", true)?;
                }
                a.training.apply(&mut c)?;
                c.set_opt("test_first", a.test_first)?;
                c.set_opt("test_last", a.test_last)?;
                c.set_opt("tol", a.tol)?;
                c.set_opt("out", path_str(&a.out))?;
                c
            }
            Command::DetectNonunique(a) => {
                let mut c = base(name, &a.common)?;
                c.set_opt("data", path_str(&a.data))?;
                a.fragments.apply(&mut c)?;
                c.set_opt("tol", a.tol)?;
                a.norm.apply(&mut c)?;
                c.set_opt("out", path_str(&a.out))?;
                c
            }
            Command::Render(a) => {
                let mut c = base(name, &a.common)?;
                c.set_opt("input", path_str(&a.input))?;
                c.set_opt("kind", a.kind.as_ref())?;
                c.set_opt("out", path_str(&a.out))?;
                c
            }
            Command::Bench(a) => {
                let mut c = base(name, &a.common)?;
                a.problem.apply(&mut c)?;
                c.set_opt("model", path_str(&a.model))?;
                a.fragments.apply(&mut c)?;
                c.set_opt("channels", a.channels)?;
                c.set_opt("repeats", a.repeats)?;
                c.set_opt("out", path_str(&a.out))?;
                c
            }
        };
        Ok(c)
    }

    fn execute(&self, cfg: RunConfig) -> fragto::Result<()> {
        match self {
            Command::GenData(_) => commands::gen_data(cfg),
            Command::Train(_) => commands::train(cfg),
            Command::Optimize(_) => commands::optimize(cfg),
            Command::Eval(_) => commands::eval(cfg),
            Command::Ablate(_) => commands::ablate(cfg),
            Command::DetectNonunique(_) => commands::detect_nonunique(cfg),
            Command::Render(_) => commands::render(cfg),
            Command::Bench(_) => commands::bench(cfg),
        }
    }
}

pub fn exit_code(e: &fragto::Error) -> i32 {
    if e.is_config() {
        EXIT_CONFIG
    } else {
        EXIT_RUNTIME
    }
}

/// Caps rayon's pool at `FRAGTO_THREADS` workers when set.
fn init_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("FRAGTO_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("FRAGTO_THREADS must be a positive integer, got `{raw}`"))?;
    // A pool built earlier in this process wins; that is fine for repeated
    // in-process calls.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    if let Err(msg) = init_threads() {
        eprintln!("error: {msg}");
        return EXIT_CONFIG;
    }
    let name = cli.command.name();
    let result = cli.command.config().and_then(|cfg| cli.command.execute(cfg));
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            let code = exit_code(&e);
            if code == EXIT_CONFIG {
                let mut cmd = Cli::command();
                if let Some(sub) = cmd.find_subcommand_mut(name) {
                    let mut sub = sub.clone().bin_name(format!("fragto {name}"));
                    eprintln!("\n{}", sub.render_usage());
                    eprintln!("Run `fragto {name} --help` for the full list of options.");
                }
            }
            code
        }
    }
}
