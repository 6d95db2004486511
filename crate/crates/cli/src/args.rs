use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use bbf::{KernelFamily, Partitioner};

#[derive(Debug, Parser)]
#[command(name = "bbf", version, about = "Block basis factorization of kernel matrices")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

/// Cluster count: a fixed value or `auto` for the memory-minimizing search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterCount {
    Auto,
    Fixed(usize),
}

impl FromStr for ClusterCount {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(ClusterCount::Auto);
        }
        match s.parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("expected a positive integer or 'auto', got {s:?}")),
            Ok(k) => Ok(ClusterCount::Fixed(k)),
        }
    }
}

/// Approximation methods for `compare`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Bbf,
    /// Nystrom with uniformly sampled landmarks.
    Nys,
    /// Nystrom with k-means centroids as landmarks.
    KNys,
    /// Nystrom with landmarks sampled by exact leverage scores.
    LsNys,
    /// Random Fourier features.
    Rks,
    /// Truncated eigendecomposition of the dense kernel.
    Svd,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Bbf => "bbf",
            Method::Nys => "nys",
            Method::KNys => "knys",
            Method::LsNys => "lsnys",
            Method::Rks => "rks",
            Method::Svd => "svd",
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "bbf" => Method::Bbf,
            "nys" | "nystrom" | "nystrom-uniform" => Method::Nys,
            "knys" | "nystrom-kmeans" => Method::KNys,
            "lsnys" | "nystrom-leverage" => Method::LsNys,
            "rks" => Method::Rks,
            "svd" | "tsvd" => Method::Svd,
            other => {
                return Err(format!(
                    "unknown method {other:?} (expected bbf, nys, knys, lsnys, rks, svd)"
                ))
            }
        })
    }
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Kernel family: gaussian or laplacian.
    #[arg(long, global = true, default_value = "gaussian")]
    pub kernel: KernelFamily,

    /// Kernel bandwidth.
    #[arg(long, global = true, default_value_t = 1.0)]
    pub h: f64,

    /// Target relative error.
    #[arg(long, global = true, default_value_t = 1e-2)]
    pub eps: f64,

    /// Number of clusters, or `auto`.
    #[arg(long, global = true, default_value = "auto")]
    pub k: ClusterCount,

    /// Largest rank allowed per cluster.
    #[arg(long, global = true, default_value_t = bbf::DEFAULT_R_MAX)]
    pub rmax: usize,

    /// Oversampling for the randomized steps.
    #[arg(long, global = true, default_value_t = 10)]
    pub oversample: usize,

    /// kmeans or kcenter.
    #[arg(long, global = true, default_value = "kmeans")]
    pub partitioner: Partitioner,

    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Independent repetitions; trial t uses seed + t.
    #[arg(long, global = true, default_value_t = 1)]
    pub trials: usize,

    /// CSV output file (stdout when absent).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Largest n for which errors are computed against the dense kernel;
    /// larger problems use a sampled estimate.
    #[arg(long, global = true, default_value_t = 8192)]
    pub dense_cap: usize,

    /// Run trials concurrently (results do not depend on scheduling).
    #[arg(long, global = true)]
    pub parallel_trials: bool,

    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Numeric CSV dataset.
    #[arg(long, global = true, conflicts_with = "synth")]
    pub data: Option<PathBuf>,

    /// Synthetic blobs, e.g. `n=2000,d=5,c=10,s=0.1[,seed=7]`.
    #[arg(long, global = true)]
    pub synth: Option<String>,

    /// The dataset's first line is a header.
    #[arg(long, global = true)]
    pub header: bool,

    /// Zero-based column indices to drop, e.g. a label column.
    #[arg(long, global = true, value_delimiter = ',')]
    pub drop_columns: Vec<usize>,

    /// Use CSV features as given instead of standardizing them.
    #[arg(long, global = true)]
    pub no_standardize: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the factorization and report its error, memory and timings.
    Approx {
        /// Also write the last trial's factorization to this container.
        #[arg(long)]
        save: Option<PathBuf>,
    },
    /// Compare against baselines at matched memory.
    Compare {
        /// Comma-separated: bbf, nys, knys, lsnys, rks, svd.
        #[arg(
            long,
            visible_alias = "methods",
            value_delimiter = ',',
            default_value = "bbf,nys,knys,svd"
        )]
        method: Vec<Method>,
    },
    /// Spectral statistics of the exact kernel over a bandwidth grid.
    Stats {
        /// Values of 1/h^2.
        #[arg(long, value_delimiter = ',', default_value = "0.25,1,4,25,100")]
        inv_h2: Vec<f64>,
        /// Reference rank.
        #[arg(long, default_value_t = 100)]
        rank: usize,
    },
    /// Build and apply timings over a schedule of synthetic sizes.
    Scaling {
        #[arg(long, value_delimiter = ',', default_value = "4000,8000,16000,32000")]
        sizes: Vec<usize>,
        /// Fixed rank for every cluster.
        #[arg(long, default_value_t = 20)]
        rank: usize,
    },
    /// Write a synthetic dataset as CSV.
    Synth,
    /// Build one factorization and write it to a container file.
    Save { path: PathBuf },
    /// Summarize a container file.
    Load { path: PathBuf },
    /// Multiply a stored factorization by a vector.
    Matvec {
        path: PathBuf,
        /// One value per line; a seeded Gaussian vector when absent.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}
