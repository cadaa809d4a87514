use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "nvlink",
    version,
    about = "Simulate and analyse time-tagged photon streams from waveguide-coupled emitters"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a TTAG file and a JSON run manifest from a config.
    Simulate(SimulateArgs),
    /// Cross-correlation histogram (CSV `lag_ps,counts,g2`).
    Correlate(CorrelateArgs),
    /// Sync-referenced delay histogram (CSV `delay_ps,counts`).
    Lifetime(LifetimeArgs),
    /// Binned intensity trace (CSV `start_s,counts`) and count-rate histogram.
    Trace(TraceArgs),
    /// Fit a histogram or point CSV and write a JSON report.
    Fit(FitArgs),
    /// Link budget, background terms and spectral efficiencies.
    Budget(BudgetArgs),
    /// Re-run a manifest and check the output is bit-identical.
    Repro(ReproArgs),
}

#[derive(Debug, clap::Args)]
pub struct SimulateArgs {
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Manifest path (default: the output path with extension `manifest.json`).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct CorrelateArgs {
    pub input: PathBuf,
    /// CSV destination (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub channel_a: u8,
    #[arg(long, default_value_t = 1)]
    pub channel_b: u8,
    #[arg(long, default_value_t = 1000)]
    pub bin_width_ps: u64,
    /// Half-width of a symmetric lag window.
    #[arg(long, default_value_t = 500_000)]
    pub window_ps: i64,
    /// Explicit lower lag edge; needs `--lag-max-ps` and overrides `--window-ps`.
    #[arg(long, requires = "lag_max_ps", allow_hyphen_values = true)]
    pub lag_min_ps: Option<i64>,
    #[arg(long, requires = "lag_min_ps", allow_hyphen_values = true)]
    pub lag_max_ps: Option<i64>,
    /// Also run the brute-force and sharded paths and fail on any difference.
    #[arg(long)]
    pub verify_oracle: bool,
    /// Load the file and correlate in this many parallel shards.
    #[arg(long)]
    pub shards: Option<usize>,
}

#[derive(Debug, clap::Args)]
pub struct LifetimeArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub sync_channel: u8,
    #[arg(long, default_value_t = 0)]
    pub channel: u8,
    #[arg(long, default_value_t = 100)]
    pub bin_width_ps: u64,
    #[arg(long, default_value_t = 200_000)]
    pub range_ps: u64,
}

#[derive(Debug, clap::Args)]
pub struct TraceArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Channels to sum (repeatable).
    #[arg(long = "channel", default_values_t = vec![0u8, 1u8])]
    pub channels: Vec<u8>,
    #[arg(long, default_value_t = 1.0)]
    pub bin_s: f64,
    /// Also write the count-rate histogram here.
    #[arg(long)]
    pub histogram_out: Option<PathBuf>,
    /// Rate bin of the histogram (counts/s); default is the Poisson σ of the mean rate.
    #[arg(long)]
    pub rate_bin: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Model {
    Lifetime,
    Saturation,
    G2,
}

#[derive(Debug, clap::Args)]
pub struct FitArgs {
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub model: Model,
    /// Signal fraction S/(S+N); the correlation is background-corrected before fitting.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Saturation only: hold the linear and constant terms at zero.
    #[arg(long)]
    pub reduced: bool,
    /// Lifetime only: trigger offset guess (ns).
    #[arg(long)]
    pub t0_ns: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct BudgetArgs {
    /// Run config (default: built-in defaults).
    pub config: Option<PathBuf>,
    /// Overrides the pump power of the config.
    #[arg(long)]
    pub pump_mw: Option<f64>,
    /// Print JSON instead of the table.
    #[arg(long)]
    pub json: bool,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct ReproArgs {
    pub manifest: PathBuf,
    /// Write the regenerated TTAG here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
