//! Command-line surface, defined with clap's derive API.
//!
//! Population CSVs follow one convention everywhere: a mandatory header
//! row, columns whose names start with `x` are auxiliary variables, columns
//! starting with `y` are study outcomes, anything else is ignored. The
//! `simulate` configuration can override the convention with explicit
//! column lists.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "surveycalib",
    version,
    about = "Design-based survey estimation with principal-component calibration",
    propagate_version = true
)]
pub struct Cli {
    /// Cap on worker threads for parallel sections; the SURVEYCALIB_THREADS
    /// environment variable is the fallback, and the default uses all cores
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Eigenvalues and explained-variance shares of a population's
    /// auxiliary covariance
    Pca(PcaArgs),
    /// Draw one sample and compute calibration weights, estimates, and
    /// diagnostics
    Calibrate(CalibrateArgs),
    /// Scan component counts or ridge penalties by the positive-weights
    /// rule
    Select(SelectArgs),
    /// Run a Monte Carlo estimator comparison from a JSON configuration
    Simulate(SimulateArgs),
    /// Write a synthetic electricity-load population as CSV
    Generate(GenerateArgs),
}

#[derive(Debug, Parser)]
pub struct PcaArgs {
    /// Population CSV (x-prefixed columns are auxiliaries)
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,

    /// Write the spectrum CSV here instead of stdout
    #[arg(long, value_name = "FILE")]
    pub output: Option<PathBuf>,

    /// Also write the matrix of principal-component scores (one row per
    /// unit, columns pc0..)
    #[arg(long, value_name = "FILE")]
    pub scores: Option<PathBuf>,
}

#[derive(Debug, Parser)]
pub struct CalibrateArgs {
    /// Population CSV (x-prefixed auxiliaries, y-prefixed outcomes)
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,

    /// Estimator kind: ht, full, pc, epc, pc2, ppc, ridge, pc_auto,
    /// epc_auto
    #[arg(long, value_name = "KIND")]
    pub estimator: String,

    /// Retained component count (pc, epc, pc2, ppc)
    #[arg(long)]
    pub r: Option<usize>,

    /// Ridge penalty; omit it to select one by the positive-weights rule
    #[arg(long)]
    pub lambda: Option<f64>,

    /// Auxiliary columns calibrated exactly under ppc, 0-based,
    /// comma-separated
    #[arg(long = "p1-columns", value_name = "IDX,IDX,..", value_delimiter = ',')]
    pub p1_columns: Option<Vec<usize>>,

    /// Cap for the automatic component scan (pc_auto, epc_auto)
    #[arg(long)]
    pub r_max: Option<usize>,

    /// Add the fixed-population-size (intercept) constraint
    #[arg(long)]
    pub intercept: bool,

    /// Units to draw without replacement
    #[arg(long, value_name = "N")]
    pub sample_size: usize,

    /// Seed of the sampling stream; the drawn sample is replicate 0
    #[arg(long, default_value_t = 1)]
    pub seed: u64,

    /// Directory receiving weights.csv, estimates.csv, diagnostics.csv
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScanKind {
    /// Scan retained component counts
    R,
    /// Scan ridge penalties on a log grid
    Lambda,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SourceKind {
    /// Population principal components
    Pc,
    /// Components estimated from the sample
    Epc,
}

#[derive(Debug, Parser)]
pub struct SelectArgs {
    /// Population CSV (x-prefixed auxiliaries, y-prefixed outcomes)
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,

    /// What to scan
    #[arg(long, value_enum, default_value_t = ScanKind::R)]
    pub scan: ScanKind,

    /// Component source for the r scan
    #[arg(long, value_enum, default_value_t = SourceKind::Pc)]
    pub source: SourceKind,

    /// Cap for the component scan (r scan only)
    #[arg(long)]
    pub r_max: Option<usize>,

    /// Add the fixed-population-size (intercept) constraint
    #[arg(long)]
    pub intercept: bool,

    /// Units to draw without replacement
    #[arg(long, value_name = "N")]
    pub sample_size: usize,

    /// Seed of the sampling stream; the drawn sample is replicate 0
    #[arg(long, default_value_t = 1)]
    pub seed: u64,

    /// Write the scan trace CSV here instead of stdout
    #[arg(long, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Parser)]
pub struct SimulateArgs {
    /// Experiment configuration, JSON
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,

    /// Override the configured replicate count
    #[arg(long)]
    pub replicates: Option<usize>,

    /// Override the configured design seed
    #[arg(long)]
    pub seed: Option<u64>,

    /// Override the configured sample size
    #[arg(long, value_name = "N")]
    pub sample_size: Option<usize>,

    /// Override the configured output directory
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,

    /// Keep per-replicate records and write replicates.csv
    #[arg(long)]
    pub per_replicate: bool,

    /// Override the configured reference estimator label
    #[arg(long, value_name = "LABEL")]
    pub reference: Option<String>,
}

/// Flag defaults mirror `SyntheticPopSpec::default()`; a unit test in
/// `commands` keeps the two in lockstep.
#[derive(Debug, Parser)]
pub struct GenerateArgs {
    /// Destination CSV
    #[arg(long, value_name = "FILE")]
    pub output: PathBuf,

    /// Number of population units
    #[arg(long, default_value_t = 2000)]
    pub units: usize,

    /// Metering slots per day
    #[arg(long, default_value_t = 48)]
    pub slots_per_day: usize,

    /// Observed past days (auxiliary columns = slots_per_day * past_days)
    #[arg(long, default_value_t = 7)]
    pub past_days: usize,

    /// Future days whose daily sums are the outcomes
    #[arg(long, default_value_t = 7)]
    pub future_days: usize,

    /// Unit-specific daily sinusoid components
    #[arg(long, default_value_t = 3)]
    pub harmonics: usize,

    /// Mean of the unit level
    #[arg(long, default_value_t = 5.0)]
    pub level_mean: f64,

    /// Standard deviation of the unit level
    #[arg(long, default_value_t = 1.0)]
    pub unit_level_sd: f64,

    /// Amplitude standard deviation of the first harmonic
    #[arg(long, default_value_t = 0.6)]
    pub harmonic_sd: f64,

    /// Standard deviation of slot-level noise
    #[arg(long, default_value_t = 0.25)]
    pub noise_sd: f64,

    /// Correlation between matching past and future slots, in [0, 1]
    #[arg(long, default_value_t = 0.7)]
    pub cross_week_correlation: f64,

    /// Generator seed
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn p1_columns_split_on_commas() {
        let cli = Cli::try_parse_from([
            "surveycalib",
            "calibrate",
            "--input",
            "pop.csv",
            "--estimator",
            "ppc",
            "--p1-columns",
            "0,3,7",
            "--r",
            "2",
            "--sample-size",
            "10",
        ])
        .unwrap();
        match cli.command {
            Command::Calibrate(args) => assert_eq!(args.p1_columns, Some(vec![0, 3, 7])),
            other => panic!("parsed into {other:?}"),
        }
    }
}
