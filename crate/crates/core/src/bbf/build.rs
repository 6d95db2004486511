//! Construction: per-cluster bases from sampled columns, then inner blocks
//! from sampled rows and columns, skipping far-apart cluster pairs.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{BBFactorization, InnerBlock};
use crate::bbf::rank::RankProfile;
use crate::cluster::Clustering;
use crate::colsample::sample_columns;
use crate::data::DataMatrix;
use crate::error::{invalid, BbfError, Result};
use crate::kernel::{BlockAccessor, KernelFamily, KernelSource, KernelSpec};
use crate::rla::{pinv_truncated, pivot_rows_lq, randomized_svd, DEFAULT_PINV_RTOL, DEFAULT_POWER_ITERATIONS};
use crate::rng::{dedup_and_pad, derive_seed, rng_from_seed, sample_excluding};

/// Relative slack taken off the cluster-distance lower bound so that the
/// skip certificate survives floating-point rounding in distance sums.
const DISTANCE_SAFETY: f64 = 1e-9;

/// `C = pinv(U_I) M_IJ pinv(V_J)^T`: the inner matrix of `M = U C V^T`
/// recovered from the sampled rows `U_I = U(I, :)`, columns `V_J = V(J, :)`
/// and the sampled block `M_IJ = M(I, J)`. Exact whenever `U_I` and `V_J`
/// have full column rank.
pub fn recover_inner(u_rows: &DMatrix<f64>, m_ij: &DMatrix<f64>, v_rows: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if u_rows.nrows() != m_ij.nrows() || v_rows.nrows() != m_ij.ncols() {
        return Err(BbfError::DimensionMismatch {
            expected: u_rows.nrows() * v_rows.nrows(),
            found: m_ij.nrows() * m_ij.ncols(),
        });
    }
    let left = pinv_truncated(u_rows, DEFAULT_PINV_RTOL)?;
    let right = pinv_truncated(v_rows, DEFAULT_PINV_RTOL)?;
    Ok(left * m_ij * right.transpose())
}

/// Per-cluster radii in the kernel's native metric.
pub(crate) fn metric_radii(x: &DataMatrix, c: &Clustering, spec: &KernelSpec) -> Vec<f64> {
    match spec.family() {
        KernelFamily::Gaussian => c.radii().to_vec(),
        KernelFamily::Laplacian => (0..c.k())
            .map(|i| {
                c.members(i)
                    .iter()
                    .map(|&p| spec.distance(x.point(p), c.center(i)))
                    .fold(0.0, f64::max)
            })
            .collect(),
    }
}

/// Largest kernel value any pair from clusters `i` and `j` can attain,
/// from the triangle inequality on centers and radii.
pub(crate) fn block_envelope(c: &Clustering, spec: &KernelSpec, radii: &[f64], i: usize, j: usize) -> f64 {
    let center_gap = spec.distance(c.center(i), c.center(j));
    let reach = radii[i] + radii[j];
    let bound = center_gap - reach - DISTANCE_SAFETY * (center_gap + reach);
    spec.envelope(bound.max(0.0)).expect("nonnegative bound")
}

struct Basis {
    u: DMatrix<f64>,
    important_rows: Vec<usize>,
}

fn cluster_basis<S: KernelSource + ?Sized>(
    src: &S,
    members: &[usize],
    all_cols: &[usize],
    r: usize,
    l: usize,
    seed: u64,
) -> Result<Basis> {
    let n = all_cols.len();
    let n_i = members.len();
    let mut rng = rng_from_seed(derive_seed(seed, &[0]));
    let (columns, important_rows) = if n < r + l {
        let take = (r + l).min(n_i);
        (all_cols.to_vec(), (0..take).collect())
    } else {
        let sample = sample_columns(src, members, all_cols, r, l, derive_seed(seed, &[1]))?;
        let cols = dedup_and_pad(&mut rng, sample.important_cols, n, r + l);
        (cols, sample.important_rows)
    };
    let panel = src.block(members, &columns)?;
    let svd = randomized_svd(&panel, r, l, DEFAULT_POWER_ITERATIONS, derive_seed(seed, &[2]))?;
    // Rows that keep U(I, :) well conditioned go first; without them a
    // coherent basis makes the inner recovery amplify the truncation error.
    let mut rows = pivot_rows_lq(&svd.u, svd.u.ncols())?;
    rows.extend(important_rows);
    let mut seen = vec![false; n_i];
    rows.retain(|&a| !std::mem::replace(&mut seen[a], true));
    rows.truncate((r + l).min(n_i));
    let important_rows = rows;
    Ok(Basis {
        u: svd.u,
        important_rows,
    })
}

/// Important rows of a cluster topped up with `r` fresh uniform rows, then
/// padded to `2 r + l` distinct rows (or every row of a small cluster).
fn inner_index_set(rng: &mut crate::rng::Rng, important: &[usize], n_i: usize, r: usize, l: usize) -> Vec<usize> {
    let fresh = sample_excluding(rng, n_i, r, important);
    let mut base = important.to_vec();
    base.extend(fresh);
    dedup_and_pad(rng, base, n_i, 2 * r + l)
}

fn select_rows(u: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), u.ncols(), |a, b| u[(rows[a], b)])
}

/// Builds the factorization for given clusters and ranks.
pub fn build_bbf(
    x: &DataMatrix,
    spec: KernelSpec,
    c: &Clustering,
    profile: &RankProfile,
    l: usize,
    seed: u64,
) -> Result<BBFactorization> {
    build_bbf_from_source(&BlockAccessor::new(x, spec), c, profile, l, seed)
}

/// [`build_bbf`] over any kernel source, e.g. an entry-counting one.
pub fn build_bbf_from_source<S: KernelSource + ?Sized>(
    src: &S,
    c: &Clustering,
    profile: &RankProfile,
    l: usize,
    seed: u64,
) -> Result<BBFactorization> {
    let n = src.n();
    let k = c.k();
    if c.n() != n {
        return Err(BbfError::DimensionMismatch {
            expected: n,
            found: c.n(),
        });
    }
    if profile.ranks.len() != k || profile.sizes != c.sizes() {
        return Err(invalid("rank profile does not match the clustering"));
    }
    for (i, (&r, &n_i)) in profile.ranks.iter().zip(c.sizes()).enumerate() {
        if r < 1 || r > n_i {
            return Err(invalid(format!("rank {r} for cluster {i} must lie in 1..={n_i}")));
        }
    }
    let spec = *src.spec();
    let x = src.data();
    let all_cols: Vec<usize> = (0..n).collect();

    let bases: Vec<Basis> = (0..k)
        .into_par_iter()
        .map(|i| {
            cluster_basis(
                src,
                c.members(i),
                &all_cols,
                profile.ranks[i],
                l,
                derive_seed(seed, &[1, i as u64]),
            )
        })
        .collect::<Result<_>>()?;

    let threshold = profile.frob_estimate.max(0.0).sqrt() * profile.epsilon / n as f64;
    let radii = metric_radii(x, c, &spec);
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (i..k).map(move |j| (i, j))).collect();
    let blocks: Vec<InnerBlock> = pairs
        .par_iter()
        .map(|&(i, j)| {
            if i != j {
                let envelope = block_envelope(c, &spec, &radii, i, j);
                if envelope <= threshold {
                    return Ok(InnerBlock::Skipped { envelope });
                }
            }
            let mut rng = rng_from_seed(derive_seed(seed, &[2, i as u64, j as u64]));
            let (ri, rj) = (profile.ranks[i], profile.ranks[j]);
            let rows = inner_index_set(&mut rng, &bases[i].important_rows, c.sizes()[i], ri, l);
            let cols = inner_index_set(&mut rng, &bases[j].important_rows, c.sizes()[j], rj, l);
            let (mi, mj) = (c.members(i), c.members(j));
            let rows_global: Vec<usize> = rows.iter().map(|&a| mi[a]).collect();
            let cols_global: Vec<usize> = cols.iter().map(|&b| mj[b]).collect();
            let sampled = src.block(&rows_global, &cols_global)?;
            let mut inner = recover_inner(
                &select_rows(&bases[i].u, &rows),
                &sampled,
                &select_rows(&bases[j].u, &cols),
            )?;
            if i == j {
                inner = (&inner + inner.transpose()) * 0.5;
            }
            Ok(InnerBlock::Dense(inner))
        })
        .collect::<Result<_>>()?;

    let mut grid: Vec<InnerBlock> = vec![InnerBlock::Skipped { envelope: 0.0 }; k * k];
    for (&(i, j), block) in pairs.iter().zip(blocks) {
        if i != j {
            grid[j * k + i] = match &block {
                InnerBlock::Dense(m) => InnerBlock::Dense(m.transpose()),
                skipped => skipped.clone(),
            };
        }
        grid[i * k + j] = block;
    }
    let skipped = grid.iter().filter(|b| b.is_skipped()).count();
    log::debug!(
        "built BBF: k={k}, ranks={:?}, {skipped} of {} blocks skipped",
        profile.ranks,
        k * k
    );

    BBFactorization::from_parts(
        c.clone(),
        bases.into_iter().map(|b| b.u).collect(),
        grid,
        spec,
        profile.epsilon,
        profile.frob_estimate,
        threshold,
    )
}
