//! Block basis factorization of kernel matrices.
//!
//! A kernel matrix `K` on points clustered into `k` groups is approximated as
//! `P^T U C U^T P`, where `P` groups points by cluster, `U` is block diagonal
//! with an orthonormal basis per cluster and `C` is a `k x k` grid of small
//! coupling blocks. Construction and application are linear in `n` for fixed
//! ranks and cluster count.

pub mod analysis;
pub mod baselines;
pub mod bbf;
pub mod cluster;
pub mod colsample;
pub mod data;
pub mod error;
pub mod kernel;
pub mod rla;
pub mod rng;

pub use analysis::{
    leverage_scores_dense, relative_error, relative_error_against, spectral_stats, spectral_stats_of, ErrorEstimate,
    ErrorMode, KernelApproximation, SpectralStats,
};
pub use baselines::{
    leverage_scores_exact, nystrom_kmeans, nystrom_leverage, nystrom_leverage_from, nystrom_uniform, rks_features,
    truncated_svd_baseline, LowRankFactor, LowRankKind,
};
pub use bbf::{
    build_bbf, build_bbf_from_source, estimate_frobenius, estimate_ranks, estimate_ranks_with_frobenius, memory_cost,
    recover_inner, select_k, BBFactorization, InnerBlock, RankProfile, SelectKOptions, SelectKResult, DEFAULT_R_MAX,
};
pub use cluster::{kcenter_farthest, kmeans, partition, permute_vector, Clustering, Direction, Partitioner};
pub use colsample::{sample_columns, SampleResult};
pub use data::{load_csv, synth_blobs, DataMatrix};
pub use error::{BbfError, Result};
pub use kernel::{dense_kernel, eval_kernel, BlockAccessor, CountingSource, KernelFamily, KernelSource, KernelSpec};
pub use rla::{exact_svd, pinv_truncated, pivot_columns_qr, pivot_rows_lq, randomized_svd, SvdResult};
