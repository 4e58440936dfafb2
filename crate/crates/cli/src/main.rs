//! `pcecal` command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 numerical
//! failure, 3 incomplete model ensemble.

mod commands;
mod config;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Method, ProjectConfig};

#[derive(Parser, Debug)]
#[command(name = "pcecal", version, about = "Polynomial chaos surrogates and Bayesian calibration")]
struct Cli {
    /// Project configuration (TOML). Defaults apply when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Print the effective configuration to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a sparse-grid or random design in canonical coordinates.
    Design(DesignArgs),
    /// Evaluate the configured model on a design.
    Run(RunArgs),
    /// Fit a chaos expansion to an ensemble.
    Fit(FitArgs),
    /// Normalized relative error of a surrogate on an ensemble.
    Validate(ValidateArgs),
    /// Mean, variance and standard deviation of a surrogate.
    Moments(MomentsArgs),
    /// Total-effect sensitivity indices.
    Sobol(CoeffArgs),
    /// One- or two-dimensional response slices.
    Response(ResponseArgs),
    /// Sample the calibration posterior.
    Mcmc(McmcArgs),
    /// Kernel density of a chain column or of the surrogate output.
    Kde(KdeArgs),
}

#[derive(Args, Debug)]
pub struct DesignArgs {
    /// Smolyak level (overrides the config).
    #[arg(long, conflicts_with = "random")]
    pub level: Option<usize>,
    /// Uniform random design with this many points.
    #[arg(long)]
    pub random: Option<usize>,
    /// Dimension when the config lists no parameters.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long)]
    pub design: Option<PathBuf>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub ensemble: Option<PathBuf>,
    #[arg(long, value_parser = parse_method)]
    pub method: Option<Method>,
    #[arg(long)]
    pub order: Option<usize>,
    /// Fixed residual budget instead of cross-validation.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Fit report path (default: next to the coefficients).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CoeffArgs {
    #[arg(long)]
    pub coefficients: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub coeff: CoeffArgs,
    #[arg(long)]
    pub ensemble: PathBuf,
}

#[derive(Args, Debug)]
pub struct MomentsArgs {
    #[command(flatten)]
    pub coeff: CoeffArgs,
    /// Also report sample moments from this many surrogate draws.
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ResponseArgs {
    #[command(flatten)]
    pub coeff: CoeffArgs,
    #[arg(long)]
    pub axis: usize,
    /// Second axis for a surface.
    #[arg(long)]
    pub axis2: Option<usize>,
    #[arg(long, default_value_t = pcecal::surrogate::DEFAULT_SLICE_POINTS)]
    pub points: usize,
    /// Canonical coordinates of the held axes, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub fixed: Option<Vec<f64>>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct McmcArgs {
    #[command(flatten)]
    pub coeff: CoeffArgs,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct KdeArgs {
    /// Chain file; densities of every column unless `--column` is given.
    #[arg(long, conflicts_with = "coefficients")]
    pub chain: Option<PathBuf>,
    #[arg(long, requires = "chain")]
    pub column: Option<String>,
    /// Coefficient file; density of the surrogate output.
    #[arg(long)]
    pub coefficients: Option<PathBuf>,
    #[arg(long, default_value_t = pcecal::surrogate::DEFAULT_PDF_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value_t = pcecal::kde::DEFAULT_GRID)]
    pub grid: usize,
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    match s {
        "nisp" => Ok(Method::Nisp),
        "bpdn" => Ok(Method::Bpdn),
        _ => Err(format!("unknown method `{s}` (nisp or bpdn)")),
    }
}

/// Raised when the model run left nodes without values.
#[derive(Debug)]
pub struct Partial(pub usize);

impl std::fmt::Display for Partial {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} design nodes still pending", self.0)
    }
}

impl std::error::Error for Partial {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Partial>().is_some() {
        return 3;
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<pcecal::Error>() {
            use pcecal::Error::*;
            return match e {
                Solver(_) | Degenerate(_) | Normalization(_) | Evaluation { .. } => 2,
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut cfg = match &cli.config {
        Some(p) => ProjectConfig::load(p)?,
        None => ProjectConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.design.seed = s;
        cfg.model.noise_seed = s;
        cfg.fit.bpdn.seed = s;
        cfg.calibration.seed = s;
    }
    if cli.verbose {
        eprintln!("# effective configuration\n{}", cfg.to_toml());
    }
    match cli.command {
        Command::Design(a) => commands::design(&cfg, a),
        Command::Run(a) => commands::run(&cfg, a),
        Command::Fit(a) => commands::fit(&cfg, a),
        Command::Validate(a) => commands::validate(&cfg, a),
        Command::Moments(a) => commands::moments(&cfg, a),
        Command::Sobol(a) => commands::sobol(&cfg, a),
        Command::Response(a) => commands::response(&cfg, a),
        Command::Mcmc(a) => commands::mcmc(&cfg, a),
        Command::Kde(a) => commands::kde(&cfg, a),
    }
}
