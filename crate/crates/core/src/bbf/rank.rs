//! Per-cluster rank selection, Frobenius-norm estimation and the search over
//! the number of clusters.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::cluster::{partition, Clustering, Partitioner};
use crate::data::DataMatrix;
use crate::error::{invalid, BbfError, Result};
use crate::kernel::{BlockAccessor, KernelSource, KernelSpec};
use crate::rla::{randomized_svd, symmetric_eigenvalues, DEFAULT_OVERSAMPLING, DEFAULT_POWER_ITERATIONS};
use crate::rng::{derive_seed, rng_from_seed, sample_without_replacement};

pub const DEFAULT_R_MAX: usize = 300;
/// Point sets up to this size get an exact Frobenius norm.
pub const EXACT_FROBENIUS_LIMIT: usize = 1000;
/// Pair samples per point for the sampled Frobenius estimate.
pub const FROBENIUS_SAMPLES_PER_POINT: usize = 100;
/// Diagonal blocks up to this size are materialized for rank estimation;
/// larger clusters are represented by a uniform subsample of this size.
pub const RANK_BLOCK_LIMIT: usize = 2048;
const INITIAL_SKETCH_WIDTH: usize = 16;

/// Chosen ranks and the evidence behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct RankProfile {
    pub epsilon: f64,
    pub ranks: Vec<usize>,
    /// Cluster sizes `n_i`, in cluster order.
    pub sizes: Vec<usize>,
    pub r_max: usize,
    /// Estimated leading singular values of each diagonal block.
    pub sigma_profiles: Vec<Vec<f64>>,
    pub frob_estimate: f64,
    /// Set where the cap was hit before the tail criterion was met.
    pub at_risk: Vec<bool>,
}

impl RankProfile {
    /// A profile with prescribed ranks, bypassing estimation.
    pub fn fixed(c: &Clustering, ranks: Vec<usize>, epsilon: f64, frob_estimate: f64) -> Result<Self> {
        if ranks.len() != c.k() {
            return Err(BbfError::DimensionMismatch {
                expected: c.k(),
                found: ranks.len(),
            });
        }
        for (i, (&r, &n_i)) in ranks.iter().zip(c.sizes()).enumerate() {
            if r < 1 || r > n_i {
                return Err(invalid(format!("rank {r} for cluster {i} must lie in 1..={n_i}")));
            }
        }
        let r_max = ranks.iter().copied().max().unwrap_or(1);
        Ok(Self {
            epsilon,
            sizes: c.sizes().to_vec(),
            sigma_profiles: vec![Vec::new(); ranks.len()],
            at_risk: vec![false; ranks.len()],
            ranks,
            r_max,
            frob_estimate,
        })
    }

    pub fn k(&self) -> usize {
        self.ranks.len()
    }

    pub fn n(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// Memory with every inner block stored.
    pub fn full_memory(&self) -> usize {
        memory_cost(self, &[])
    }
}

/// Stored scalars: `sum n_i r_i` for the bases plus `r_i r_j` for every
/// ordered block `(i, j)` not listed in `skipped`.
pub fn memory_cost(profile: &RankProfile, skipped: &[(usize, usize)]) -> usize {
    let k = profile.k();
    let mut skip = vec![false; k * k];
    for &(i, j) in skipped {
        if i < k && j < k {
            skip[i * k + j] = true;
        }
    }
    let bases: usize = profile.sizes.iter().zip(&profile.ranks).map(|(n, r)| n * r).sum();
    let mut inner = 0;
    for i in 0..k {
        for j in 0..k {
            if !skip[i * k + j] {
                inner += profile.ranks[i] * profile.ranks[j];
            }
        }
    }
    bases + inner
}

/// Estimate of `|K|_F^2` over all points. See [`estimate_block_frobenius`].
pub fn estimate_frobenius<S: KernelSource + ?Sized>(src: &S, sample_size: usize, seed: u64) -> Result<f64> {
    let all: Vec<usize> = (0..src.n()).collect();
    estimate_block_frobenius(src, &all, sample_size, seed)
}

/// Estimate of `|K(S, S)|_F^2` for the point subset `S`.
///
/// The unit diagonal is counted exactly; off-diagonal mass is the mean of
/// `K_ab^2` over `sample_size` uniform pairs `a != b`, scaled by the pair
/// count. Small sets, and budgets covering every pair, are summed exactly.
pub fn estimate_block_frobenius<S: KernelSource + ?Sized>(
    src: &S,
    indices: &[usize],
    sample_size: usize,
    seed: u64,
) -> Result<f64> {
    if sample_size < 1 {
        return Err(invalid("sample size must be at least 1"));
    }
    let m = indices.len();
    let pairs_total = m * m.saturating_sub(1) / 2;
    if m <= EXACT_FROBENIUS_LIMIT || sample_size >= pairs_total {
        return exact_block_frobenius(src, indices);
    }
    sampled_block_frobenius(src, indices, sample_size, seed)
}

pub(crate) fn exact_block_frobenius<S: KernelSource + ?Sized>(src: &S, indices: &[usize]) -> Result<f64> {
    const CHUNK: usize = 256;
    let mut total = 0.0;
    for start in (0..indices.len()).step_by(CHUNK) {
        let rows = &indices[start..(start + CHUNK).min(indices.len())];
        total += src.block(rows, indices)?.norm_squared();
    }
    Ok(total)
}

pub(crate) fn sampled_block_frobenius<S: KernelSource + ?Sized>(
    src: &S,
    indices: &[usize],
    sample_size: usize,
    seed: u64,
) -> Result<f64> {
    use rand::Rng as _;
    let m = indices.len();
    if m < 2 {
        return Ok(m as f64);
    }
    let mut rng = rng_from_seed(seed);
    let pairs: Vec<(usize, usize)> = (0..sample_size)
        .map(|_| loop {
            let a = rng.gen_range(0..m);
            let b = rng.gen_range(0..m);
            if a != b {
                break (indices[a], indices[b]);
            }
        })
        .collect();
    let values = src.pairs(&pairs)?;
    let mean_sq = values.iter().map(|v| v * v).sum::<f64>() / sample_size as f64;
    Ok(m as f64 + (m * (m - 1)) as f64 * mean_sq)
}

/// Outcome of the rank rule on one diagonal block.
#[derive(Debug, Clone)]
struct ClusterRank {
    rank: usize,
    sigmas: Vec<f64>,
    at_risk: bool,
}

/// Smallest `k` in `1..=limit` with `tail(k) < threshold`.
fn first_below(limit: usize, threshold: f64, tail: impl Fn(usize) -> f64) -> Option<usize> {
    (1..=limit).find(|&k| tail(k) < threshold)
}

fn cluster_rank<S: KernelSource + ?Sized>(
    src: &S,
    members: &[usize],
    n_total: usize,
    frob: f64,
    epsilon: f64,
    r_max: usize,
    seed: u64,
) -> Result<ClusterRank> {
    let n_i = members.len();
    let mut rng = rng_from_seed(seed);
    let sample: Vec<usize> = if n_i > RANK_BLOCK_LIMIT {
        let mut picks = sample_without_replacement(&mut rng, n_i, RANK_BLOCK_LIMIT);
        picks.sort_unstable();
        picks.into_iter().map(|p| members[p]).collect()
    } else {
        members.to_vec()
    };
    let s = sample.len();
    // Singular values of M_ii scale like n_i / s under uniform subsampling,
    // so the criterion is applied to the sub-block with s in place of n_i.
    let scale = n_i as f64 / s as f64;
    let ratio = s as f64 / n_total as f64;
    let threshold = ratio * ratio * frob * epsilon * epsilon;
    let cap = r_max.min(n_i).min(s);
    let block = src.block(&sample, &sample)?;
    let block_frob = block.norm_squared();
    let l = DEFAULT_OVERSAMPLING;

    let mut width = INITIAL_SKETCH_WIDTH.min(cap);
    loop {
        if width + l >= s {
            // The whole spectrum is cheap: sum the tail directly.
            let mut sigmas: Vec<f64> = symmetric_eigenvalues(&block).into_iter().map(f64::abs).collect();
            sigmas.sort_by(|a, b| b.total_cmp(a));
            let mut suffix = vec![0.0; s + 1];
            for j in (0..s).rev() {
                suffix[j] = suffix[j + 1] + sigmas[j] * sigmas[j];
            }
            let found = first_below(cap, threshold, |k| suffix[k]);
            sigmas.truncate(cap);
            return Ok(finish(found, cap, sigmas, scale));
        }
        let f = randomized_svd(
            &block,
            width,
            l,
            DEFAULT_POWER_ITERATIONS,
            derive_seed(seed, &[width as u64]),
        )?;
        let captured: f64 = f.s.iter().map(|v| v * v).sum();
        let residual = (block_frob - captured).max(0.0);
        let mut suffix = vec![residual; width + 1];
        for j in (0..width).rev() {
            suffix[j] = suffix[j + 1] + f.s[j] * f.s[j];
        }
        let found = first_below(width, threshold, |k| suffix[k]);
        match found {
            Some(k) if k < width || width == cap => return Ok(finish(Some(k), cap, f.s, scale)),
            _ if width == cap => return Ok(finish(None, cap, f.s, scale)),
            _ => width = (2 * width).min(cap),
        }
    }
}

fn finish(found: Option<usize>, cap: usize, sigmas: Vec<f64>, scale: f64) -> ClusterRank {
    let sigmas = sigmas.into_iter().map(|v| v * scale).collect();
    match found {
        Some(k) => ClusterRank {
            rank: k.max(1),
            sigmas,
            at_risk: false,
        },
        None => ClusterRank {
            rank: cap.max(1),
            sigmas,
            at_risk: true,
        },
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(invalid(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    Ok(())
}

/// Picks `r_i` per cluster: the smallest rank whose estimated spectral tail
/// of the diagonal block `M_ii` falls below `(n_i / n)^2 |M|_F^2 eps^2`,
/// between 1 and `min(r_max, n_i)`.
pub fn estimate_ranks(
    x: &DataMatrix,
    c: &Clustering,
    spec: KernelSpec,
    epsilon: f64,
    r_max: usize,
    seed: u64,
) -> Result<RankProfile> {
    let acc = BlockAccessor::new(x, spec);
    let frob = estimate_frobenius(&acc, FROBENIUS_SAMPLES_PER_POINT * x.n(), derive_seed(seed, &[0]))?;
    estimate_ranks_with_frobenius(&acc, c, epsilon, r_max, frob, seed)
}

/// [`estimate_ranks`] with a precomputed `|M|_F^2`.
pub fn estimate_ranks_with_frobenius<S: KernelSource + ?Sized>(
    src: &S,
    c: &Clustering,
    epsilon: f64,
    r_max: usize,
    frob: f64,
    seed: u64,
) -> Result<RankProfile> {
    check_epsilon(epsilon)?;
    if r_max < 1 {
        return Err(invalid("r_max must be at least 1"));
    }
    if c.n() != src.n() {
        return Err(BbfError::DimensionMismatch {
            expected: src.n(),
            found: c.n(),
        });
    }
    let n = src.n();
    let per_cluster: Vec<ClusterRank> = (0..c.k())
        .into_par_iter()
        .map(|i| {
            cluster_rank(
                src,
                c.members(i),
                n,
                frob,
                epsilon,
                r_max,
                derive_seed(seed, &[1, i as u64]),
            )
        })
        .collect::<Result<_>>()?;
    for (i, cr) in per_cluster.iter().enumerate() {
        if cr.at_risk {
            log::warn!(
                "cluster {i}: rank cap {} reached before the tail criterion was met",
                cr.rank
            );
        }
    }
    Ok(RankProfile {
        epsilon,
        ranks: per_cluster.iter().map(|c| c.rank).collect(),
        sizes: c.sizes().to_vec(),
        r_max,
        at_risk: per_cluster.iter().map(|c| c.at_risk).collect(),
        sigma_profiles: per_cluster.into_iter().map(|c| c.sigmas).collect(),
        frob_estimate: frob,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct SelectKOptions {
    pub r_max: usize,
    pub partitioner: Partitioner,
}

impl Default for SelectKOptions {
    fn default() -> Self {
        Self {
            r_max: DEFAULT_R_MAX,
            partitioner: Partitioner::KMeans,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SelectKResult {
    pub k: usize,
    pub profile: RankProfile,
    pub clustering: Clustering,
    /// `(k, f(k))` for every evaluated `k`, sorted by `k`.
    pub evaluated: Vec<(usize, usize)>,
    /// Whether the search fell back to scanning the whole range.
    pub exhaustive: bool,
}

fn is_unimodal(values: &[(usize, usize)]) -> bool {
    // No interior probe may exceed both an earlier and a later probe.
    let n = values.len();
    let mut prefix_min = vec![usize::MAX; n];
    let mut suffix_min = vec![usize::MAX; n];
    for i in 1..n {
        prefix_min[i] = prefix_min[i - 1].min(values[i - 1].1);
    }
    for i in (0..n.saturating_sub(1)).rev() {
        suffix_min[i] = suffix_min[i + 1].min(values[i + 1].1);
    }
    (0..n).all(|i| !(values[i].1 > prefix_min[i] && values[i].1 > suffix_min[i]))
}

/// Minimizes the full-storage memory `f(k)` over `k_min..=k_max` with an
/// integer golden-section search, memoizing each evaluation. If the probes
/// ever contradict unimodality the whole range is scanned instead.
pub fn select_k(
    x: &DataMatrix,
    spec: KernelSpec,
    epsilon: f64,
    k_min: usize,
    k_max: usize,
    seed: u64,
    options: SelectKOptions,
) -> Result<SelectKResult> {
    check_epsilon(epsilon)?;
    if k_min < 1 || k_max < k_min {
        return Err(invalid(format!("invalid cluster-count range {k_min}..={k_max}")));
    }
    let limit = (x.n() as f64).sqrt().ceil() as usize;
    if k_max > limit {
        return Err(invalid(format!("k_max {k_max} exceeds ceil(sqrt(n)) = {limit}")));
    }
    let acc = BlockAccessor::new(x, spec);
    let frob = estimate_frobenius(&acc, FROBENIUS_SAMPLES_PER_POINT * x.n(), derive_seed(seed, &[0]))?;

    let mut memo: BTreeMap<usize, (usize, Clustering, RankProfile)> = BTreeMap::new();
    let eval = |k: usize, memo: &mut BTreeMap<usize, (usize, Clustering, RankProfile)>| -> Result<usize> {
        if let Some((f, _, _)) = memo.get(&k) {
            return Ok(*f);
        }
        let c = partition(x, k, options.partitioner, derive_seed(seed, &[2, k as u64]))?;
        let p = estimate_ranks_with_frobenius(
            &acc,
            &c,
            epsilon,
            options.r_max,
            frob,
            derive_seed(seed, &[3, k as u64]),
        )?;
        let f = p.full_memory();
        log::debug!("select_k: f({k}) = {f}");
        memo.insert(k, (f, c, p));
        Ok(f)
    };
    let snapshot = |memo: &BTreeMap<usize, (usize, Clustering, RankProfile)>| -> Vec<(usize, usize)> {
        memo.iter().map(|(&k, (f, _, _))| (k, *f)).collect()
    };

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (k_min, k_max);
    let mut exhaustive = false;
    while b - a > 2 {
        let span = (b - a) as f64;
        let mut c = b - (span * inv_phi).round() as usize;
        let mut d = a + (span * inv_phi).round() as usize;
        if c >= d {
            c = a + (b - a) / 3;
            d = b - (b - a) / 3;
        }
        c = c.clamp(a + 1, b - 1);
        d = d.clamp(c + 1, b - 1).max(c + 1);
        let fc = eval(c, &mut memo)?;
        let fd = eval(d, &mut memo)?;
        if !is_unimodal(&snapshot(&memo)) {
            exhaustive = true;
            break;
        }
        if fc <= fd {
            b = d;
        } else {
            a = c;
        }
    }
    let range = if exhaustive { k_min..=k_max } else { a..=b };
    for k in range {
        eval(k, &mut memo)?;
    }
    let evaluated = snapshot(&memo);
    let best = evaluated
        .iter()
        .min_by(|x, y| x.1.cmp(&y.1).then(x.0.cmp(&y.0)))
        .map(|&(k, _)| k)
        .expect("at least one evaluation");
    let (_, clustering, profile) = memo.remove(&best).expect("memoized");
    Ok(SelectKResult {
        k: best,
        profile,
        clustering,
        evaluated,
        exhaustive,
    })
}
