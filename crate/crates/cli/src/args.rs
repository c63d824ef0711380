use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "finn", version, about = "Hedging-loss option pricing networks")]
pub struct Cli {
    /// key=value file; explicit flags override its values
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base seed [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub cmd: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate spot paths and write them as CSV
    Simulate(SimulateArgs),
    /// Train a pricing network on the hedging loss
    Train(TrainArgs),
    /// Compare trained networks with the analytic oracle over a grid
    Evaluate(EvaluateArgs),
    /// Aggregate per-seed evaluations into a results table
    Table(TableArgs),
    /// Price one option
    Price(PriceArgs),
}

#[derive(Args, Debug, Default, Clone)]
pub struct ProcessArgs {
    /// gbm or heston [default: gbm]
    #[arg(long)]
    pub model: Option<String>,
    /// Drift [default: 0.06 for gbm, 0 for heston]
    #[arg(long, allow_hyphen_values = true)]
    pub mu: Option<f64>,
    /// GBM volatility [default: 0.125]
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Initial spot [default: 100]
    #[arg(long)]
    pub s0: Option<f64>,
    /// Heston mean reversion [default: 1.25]
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Heston long-run variance [default: 0.0225]
    #[arg(long)]
    pub theta: Option<f64>,
    /// Heston vol of variance [default: 0.15]
    #[arg(long)]
    pub xi: Option<f64>,
    /// Heston spot/variance correlation [default: -0.7]
    #[arg(long, allow_hyphen_values = true)]
    pub rho: Option<f64>,
    /// Heston initial variance [default: 0.0225]
    #[arg(long)]
    pub v0: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub process: ProcessArgs,
    /// Number of paths [default: 1000]
    #[arg(long)]
    pub paths: Option<usize>,
    /// Steps per path [default: 120]
    #[arg(long)]
    pub steps: Option<usize>,
    /// Step size in years [default: 1/250]
    #[arg(long)]
    pub dt: Option<f64>,
    /// Pair each path with its mirrored shocks
    #[arg(long)]
    pub antithetic: bool,
    /// Output CSV; a manifest is written beside it [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub process: ProcessArgs,
    /// delta or delta-gamma [default: delta]
    #[arg(long)]
    pub hedge: Option<String>,
    /// Maturity of the ATM hedging option [default: 0.12]
    #[arg(long)]
    pub atm_ttm: Option<f64>,
    /// call or put [default: call]
    #[arg(long)]
    pub kind: Option<String>,
    /// Risk-free rate [default: 0]
    #[arg(long, allow_hyphen_values = true)]
    pub rate: Option<f64>,
    /// Maximum epochs [default: 250]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [default: 256]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate [default: 0.001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// [default: 75]
    #[arg(long)]
    pub strike_low: Option<f64>,
    /// [default: 125]
    #[arg(long)]
    pub strike_high: Option<f64>,
    /// Shortest sampled maturity [default: 0.004]
    #[arg(long)]
    pub ttm_low: Option<f64>,
    /// Longest sampled maturity [default: 0.48]
    #[arg(long)]
    pub ttm_high: Option<f64>,
    /// [default: 1800]
    #[arg(long)]
    pub train_paths: Option<usize>,
    /// [default: 200]
    #[arg(long)]
    pub val_paths: Option<usize>,
    /// [default: 1/250]
    #[arg(long)]
    pub dt: Option<f64>,
    /// Early-stopping patience in epochs [default: 20]
    #[arg(long)]
    pub patience: Option<usize>,
    /// Gradient-norm clip [default: 10]
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Abort when the gradient norm exceeds this [default: 1e6]
    #[arg(long)]
    pub abort_norm: Option<f64>,
    /// Independent runs with seeds seed, seed+1, ... [default: 1]
    #[arg(long)]
    pub runs: Option<usize>,
    /// Run directory name [default: <model>-<hedge>]
    #[arg(long)]
    pub tag: Option<String>,
    /// [default: runs]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct GridArgs {
    /// Number of evenly spaced spots in [75, 125] [default: 10000]
    #[arg(long)]
    pub spots: Option<usize>,
    /// List `a,b,...` or range `lo:hi:step` [default: 90:110:1]
    #[arg(long)]
    pub strikes: Option<String>,
    /// [default: 0.24:0.48:0.04]
    #[arg(long)]
    pub ttms: Option<String>,
    /// sigma (bs) or xi (heston) values [default: the training value, else 0.125,0.15,0.175]
    #[arg(long)]
    pub vols: Option<String>,
    /// [default: the checkpoint's kind]
    #[arg(long)]
    pub kind: Option<String>,
    /// [default: 0]
    #[arg(long, allow_hyphen_values = true)]
    pub rate: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Checkpoint to evaluate
    #[arg(long, conflicts_with = "run_dir")]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate every seed directory under a run tag, writing seed*/eval.csv
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// Compare the oracle with itself instead of a checkpoint
    #[arg(long, conflicts_with_all = ["checkpoint", "run_dir"])]
    pub oracle_as_model: bool,
    /// bs or heston [default: matches the checkpoint's process]
    #[arg(long)]
    pub engine: Option<String>,
    #[command(flatten)]
    pub process: ProcessArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Print the grid size for a full sweep of `--runs` runs without evaluating
    #[arg(long)]
    pub dry_run: bool,
    /// Runs counted by --dry-run [default: 10]
    #[arg(long)]
    pub runs: Option<usize>,
    /// Write error curves at this maturity instead of a report
    #[arg(long, requires = "curve_strike")]
    pub curve_ttm: Option<f64>,
    #[arg(long, requires = "curve_ttm")]
    pub curve_strike: Option<f64>,
    /// Output file [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TableArgs {
    /// Run tag directories holding seed*/eval.csv; repeat for more rows
    #[arg(long, required = true)]
    pub run_dir: Vec<PathBuf>,
    /// Output CSV [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PriceArgs {
    /// bs or heston [default: bs]
    #[arg(long)]
    pub engine: Option<String>,
    /// Price with a trained checkpoint instead of an engine
    #[arg(long, conflicts_with = "engine")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub spot: Option<f64>,
    #[arg(long)]
    pub strike: Option<f64>,
    #[arg(long)]
    pub ttm: Option<f64>,
    /// [default: 0]
    #[arg(long, allow_hyphen_values = true)]
    pub rate: Option<f64>,
    /// call or put [default: call]
    #[arg(long)]
    pub kind: Option<String>,
    /// [default: 0.125]
    #[arg(long)]
    pub sigma: Option<f64>,
    /// [default: 1.25]
    #[arg(long)]
    pub kappa: Option<f64>,
    /// [default: 0.0225]
    #[arg(long)]
    pub theta: Option<f64>,
    /// [default: 0.15]
    #[arg(long)]
    pub xi: Option<f64>,
    /// [default: -0.7]
    #[arg(long, allow_hyphen_values = true)]
    pub rho: Option<f64>,
    /// [default: 0.0225]
    #[arg(long)]
    pub v0: Option<f64>,
    /// Also print delta and gamma
    #[arg(long)]
    pub greeks: bool,
}
