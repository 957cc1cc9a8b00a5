mod commands;
mod config;
mod data;
mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use selseg_sim::dgp::EmpiricalParams;

#[derive(Parser)]
#[command(name = "selseg", version, about = "Selective segmentation of linear regressions with structural breaks")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "SELSEG_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Locate break dates.
    Detect(DetectCmd),
    /// Detect breaks, select the changing parameters and report posteriors.
    Fit(FitCmd),
    /// Expanding-window one-step-ahead forecast evaluation.
    Forecast(ForecastCmd),
    /// Draw one series from a simulation design.
    Simulate(SimulateCmd),
    /// Monte Carlo detection rates for a simulation design.
    Mc(McCmd),
}

#[derive(Args, Serialize, Deserialize, Clone, Debug)]
pub struct DataArgs {
    /// Delimited text file with a header row (comma, tab or semicolon).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Response column; defaults to the first column.
    #[arg(long)]
    pub response: Option<String>,
    /// Covariate columns; defaults to every other column.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    #[arg(long)]
    pub no_intercept: bool,
    /// Lagged responses appended as covariates; drops the first `lags` rows.
    #[arg(long, default_value_t = 0)]
    pub lags: usize,
}

#[derive(ValueEnum, Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Scan,
    Dp,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug)]
pub struct DetectArgs {
    #[arg(long, value_enum, default_value_t = DetectorKind::Scan)]
    pub detector: DetectorKind,
    /// Number of scan window widths.
    #[arg(long, default_value_t = 30)]
    pub windows: usize,
    /// Centre of the window-width grid.
    #[arg(long)]
    pub h_center: Option<usize>,
    /// Largest number of breaks for the DP detector.
    #[arg(long, default_value_t = 10)]
    pub max_breaks: usize,
}

#[derive(ValueEnum, Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum SelectorKind {
    Selo,
    Lasso,
    Exhaustive,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug)]
pub struct GridArgs {
    #[arg(long, value_enum, default_value_t = SelectorKind::Selo)]
    pub selector: SelectorKind,
    #[arg(long, default_value_t = 50)]
    pub n_lambda: usize,
    /// Largest penalty is `lambda_scale * ln T`.
    #[arg(long, default_value_t = 2.0)]
    pub lambda_scale: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 1.0])]
    pub kappas: Vec<f64>,
    /// Score every active set instead (same as `--selector exhaustive`).
    #[arg(long)]
    pub exhaustive: bool,
    /// Random initial active sets per segmentation.
    #[arg(long)]
    pub n_init: Option<usize>,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug)]
pub struct OutArgs {
    /// Write the machine-readable result document here.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Directory receiving `<command>.json` and `<command>.txt`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Suppress the human-readable tables.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug)]
pub struct DetectCmd {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub detect: DetectArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArgs,
    /// TOML file overriding flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug)]
pub struct FitCmd {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub detect: DetectArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridArgs,
    /// Sample the break dates of the selected model.
    #[arg(long)]
    pub mcmc: bool,
    #[arg(long, default_value_t = 4000)]
    pub mcmc_iter: usize,
    /// Defaults to twice the number of regimes.
    #[arg(long)]
    pub mcmc_chains: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArgs,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug)]
pub struct ForecastCmd {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub detect: DetectArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridArgs,
    /// Any of linear, cp-mdl, selo-mdl, cp-scan, selo-scan.
    #[arg(long, value_delimiter = ',', default_value = "linear,cp-mdl,selo-mdl,cp-scan,selo-scan")]
    pub methods: Vec<String>,
    /// First training sample size; defaults to 20% of the sample.
    #[arg(long)]
    pub t_start: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the summary table as CSV here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArgs,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug)]
pub struct DesignArgs {
    /// A..I, EMP1..EMP14 or J.
    #[arg(long)]
    pub dgp: String,
    #[arg(long)]
    pub garch: bool,
    /// Overrides the design's sample size (A-I and J).
    #[arg(long)]
    pub n_obs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Settings of the empirical design (configuration file only).
    #[arg(skip)]
    pub empirical: Option<EmpiricalParams>,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug)]
pub struct SimulateCmd {
    #[command(flatten)]
    #[serde(flatten)]
    pub design: DesignArgs,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Destination of the true structure (JSON).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug)]
pub struct McCmd {
    #[command(flatten)]
    #[serde(flatten)]
    pub design: DesignArgs,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub detect: DetectArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridArgs,
    /// Use the true break dates instead of detecting them.
    #[arg(long)]
    pub known_breaks: bool,
    #[arg(long, default_value_t = 0.10)]
    pub exact_threshold: f64,
    #[arg(long, default_value_t = 50)]
    pub break_tolerance: usize,
    /// Write the frequency table (tab-separated) here.
    #[arg(long)]
    pub tsv: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArgs,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool: {e}");
        }
    }
    let res = match cli.command {
        Command::Detect(c) => config::overlay(c.clone(), c.config.as_deref(), "detect").and_then(commands::detect),
        Command::Fit(c) => config::overlay(c.clone(), c.config.as_deref(), "fit").and_then(commands::fit),
        Command::Forecast(c) => config::overlay(c.clone(), c.config.as_deref(), "forecast").and_then(commands::forecast),
        Command::Simulate(c) => config::overlay(c.clone(), c.config.as_deref(), "simulate").and_then(commands::simulate),
        Command::Mc(c) => config::overlay(c.clone(), c.config.as_deref(), "mc").and_then(commands::mc),
    };
    if let Err(e) = res {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
