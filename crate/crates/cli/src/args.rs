use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pcit_core::learners::Method;
use pcit_core::losses::LossFunction;
use pcit_core::skeleton::Pooling;

#[derive(Debug, Parser)]
#[command(name = "pcit", version, about = "Predictive conditional independence testing and skeleton learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test X ⟂ Y | Z on columns of a CSV file
    Test(TestArgs),
    /// Learn the undirected skeleton over the columns of a CSV file
    Skeleton(SkeletonArgs),
    /// Run a synthetic power or FDR benchmark
    Bench(BenchArgs),
}

/// `u64` or `random`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedArg {
    Fixed(u64),
    Random,
}

impl FromStr for SeedArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("random") {
            Ok(SeedArg::Random)
        } else {
            s.parse().map(SeedArg::Fixed).map_err(|_| format!("seed must be an unsigned integer or 'random', got '{s}'"))
        }
    }
}

impl<'de> serde::Deserialize<'de> for SeedArg {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(serde::Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) => Ok(SeedArg::Fixed(n)),
            Raw::S(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Stacking,
    Multiplexing,
    None,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Stacking => Method::Stacking,
            MethodArg::Multiplexing => Method::Multiplexing,
            MethodArg::None => Method::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PoolingArg {
    Nested,
    Flat,
}

impl From<PoolingArg> for Pooling {
    fn from(p: PoolingArg) -> Self {
        match p {
            PoolingArg::Nested => Pooling::Nested,
            PoolingArg::Flat => Pooling::Flat,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    Power,
    Fdr,
}

/// Flags shared by every command. Unset flags fall back to `--config`,
/// then to built-in defaults.
#[derive(Debug, Args)]
pub struct Common {
    /// Significance level / nominal FDR
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Master seed: an unsigned integer or `random` (default 0)
    #[arg(long)]
    pub seed: Option<SeedArg>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Paired t-test instead of Wilcoxon signed-rank
    #[arg(long)]
    pub parametric: bool,
    /// Only predict Y from X (skip the reverse direction)
    #[arg(long)]
    pub no_symmetric: bool,
    /// Comma-separated losses, e.g. `squared,log,quantile:0.25`
    #[arg(long, value_delimiter = ',', value_parser = parse_loss)]
    pub losses: Option<Vec<LossFunction>>,
    /// Output path for the JSON result (stdout when absent)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on it
    #[arg(long)]
    pub threads: Option<usize>,
    /// JSON configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn parse_loss(s: &str) -> Result<LossFunction, String> {
    s.trim().parse().map_err(|e: pcit_core::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct Input {
    #[arg(long)]
    pub data: PathBuf,
    /// JSON map from column name to `continuous` or `categorical`
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Numeric columns with at most this many distinct values are categorical
    #[arg(long)]
    pub cutoff: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub input: Input,
    #[arg(long, value_delimiter = ',', required = true)]
    pub x: Vec<String>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub y: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub z: Vec<String>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SkeletonArgs {
    #[command(flatten)]
    pub input: Input,
    /// Restrict to these columns
    #[arg(long, value_delimiter = ',')]
    pub columns: Vec<String>,
    /// Write the graph as Graphviz DOT
    #[arg(long)]
    pub dot: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "nested")]
    pub pooling: PoolingArg,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum, default_value = "power")]
    pub experiment: Experiment,
    /// Sample sizes
    #[arg(long = "n", value_delimiter = ',', default_values_t = vec![500usize, 1000, 2000])]
    pub n_grid: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    /// Variables in the synthetic graph (fdr)
    #[arg(long, default_value_t = 10)]
    pub p: usize,
    /// Edge density of the synthetic graph (fdr)
    #[arg(long, default_value_t = 0.275)]
    pub density: f64,
    /// Smallest absolute off-diagonal precision entry (fdr)
    #[arg(long, default_value_t = 0.2)]
    pub min_abs: f64,
    /// Per-run CSV report (defaults to the JSON path with a .csv extension)
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Record all times as 0 so reports are byte-comparable
    #[arg(long)]
    pub no_timing: bool,
    #[command(flatten)]
    pub common: Common,
}
