//! Low-rank reference approximations: Nyström variants, random Fourier
//! features and the truncated eigendecomposition.
//!
//! Every factor is stored as `L` with `K_hat = L L^T`, and charged `n r`
//! scalars (`n D` for features) so methods compare at equal memory.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, WeightedIndex};

use crate::analysis::{leverage_scores_dense, KernelApproximation};
use crate::cluster::kmeans;
use crate::data::DataMatrix;
use crate::error::{invalid, BbfError, Result};
use crate::kernel::{dense_kernel, BlockAccessor, KernelFamily, KernelSource, KernelSpec};
use crate::rla::{symmetric_eigen, top_eigenpairs};
use crate::rng::{rng_from_seed, sample_without_replacement, standard_normal};

/// Eigenvalues below this fraction of the largest are treated as zero when
/// pseudo-inverting a landmark matrix.
const NYSTROM_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum LowRankKind {
    /// Landmarks are dataset indices (possibly repeated).
    Nystrom {
        landmarks: Vec<usize>,
    },
    /// Landmarks are synthetic points, stored row-major.
    NystromCentroids {
        centroids: Vec<f64>,
    },
    Features {
        omega: DMatrix<f64>,
        phases: Vec<f64>,
    },
    TruncatedSvd {
        eigenvalues: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowRankFactor {
    pub kind: LowRankKind,
    /// `n x r'` with `K_hat = L L^T`.
    pub factor: DMatrix<f64>,
    pub effective_rank: usize,
    pub memory_count: usize,
}

impl LowRankFactor {
    pub fn reconstruct_dense(&self) -> DMatrix<f64> {
        &self.factor * self.factor.transpose()
    }
}

impl KernelApproximation for LowRankFactor {
    fn n(&self) -> usize {
        self.factor.nrows()
    }

    fn apply_block(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.factor.nrows();
        if x.nrows() != n {
            return Err(BbfError::DimensionMismatch {
                expected: n,
                found: x.nrows(),
            });
        }
        Ok(&self.factor * self.factor.tr_mul(x))
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        self.factor.row(i).dot(&self.factor.row(j))
    }

    fn memory_count(&self) -> usize {
        self.memory_count
    }
}

/// `C W_r^+ C^T` as `L = C V_r diag(lambda_r)^{-1/2}`, keeping at most `r`
/// leading eigenpairs of `W` above the relative tolerance.
fn nystrom_factor(c: &DMatrix<f64>, w: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let (values, vectors) = symmetric_eigen(w);
    let top = values.first().copied().unwrap_or(0.0);
    let keep = values
        .iter()
        .take(r)
        .take_while(|&&v| top > 0.0 && v > NYSTROM_RTOL * top)
        .count();
    let mut basis = vectors.columns(0, keep).into_owned();
    for (j, v) in values.iter().take(keep).enumerate() {
        basis.column_mut(j).scale_mut(1.0 / v.sqrt());
    }
    c * basis
}

fn check_rank(r: usize, n: usize) -> Result<()> {
    if r < 1 || r > n {
        return Err(invalid(format!("rank {r} must lie in 1..={n}")));
    }
    Ok(())
}

/// Nyström with `2r` landmarks drawn uniformly without replacement.
pub fn nystrom_uniform(x: &DataMatrix, spec: &KernelSpec, r: usize, seed: u64) -> Result<LowRankFactor> {
    let n = x.n();
    check_rank(r, n)?;
    if 2 * r > n {
        return Err(invalid(format!("uniform Nystrom needs 2r = {} <= n = {n}", 2 * r)));
    }
    let mut rng = rng_from_seed(seed);
    let mut landmarks = sample_without_replacement(&mut rng, n, 2 * r);
    landmarks.sort_unstable();
    let acc = BlockAccessor::new(x, *spec);
    let all: Vec<usize> = (0..n).collect();
    let c = acc.block(&all, &landmarks)?;
    let w = acc.block(&landmarks, &landmarks)?;
    let factor = nystrom_factor(&c, &w, r);
    Ok(LowRankFactor {
        effective_rank: factor.ncols(),
        memory_count: n * r,
        factor,
        kind: LowRankKind::Nystrom { landmarks },
    })
}

/// Nyström with the `r` k-means centroids as landmarks.
pub fn nystrom_kmeans(x: &DataMatrix, spec: &KernelSpec, r: usize, seed: u64) -> Result<LowRankFactor> {
    let n = x.n();
    check_rank(r, n)?;
    let clustering = kmeans(x, r, seed, 100)?;
    let d = x.d();
    let centroids = clustering.centers().to_vec();
    let c = DMatrix::from_fn(n, r, |i, j| spec.value(x.point(i), &centroids[j * d..(j + 1) * d]));
    let w = DMatrix::from_fn(r, r, |i, j| {
        spec.value(&centroids[i * d..(i + 1) * d], &centroids[j * d..(j + 1) * d])
    });
    let factor = nystrom_factor(&c, &w, r);
    Ok(LowRankFactor {
        effective_rank: factor.ncols(),
        memory_count: n * r,
        factor,
        kind: LowRankKind::NystromCentroids { centroids },
    })
}

/// Exact rank-`r` leverage scores of the dense kernel matrix; they sum to `r`.
pub fn leverage_scores_exact(x: &DataMatrix, spec: &KernelSpec, r: usize, cap: usize) -> Result<Vec<f64>> {
    check_rank(r, x.n())?;
    let k = dense_kernel(x, spec, cap)?;
    leverage_scores_dense(&k, r, 0x1e7)
}

/// Nyström with `2r` columns drawn with replacement proportionally to the
/// exact leverage scores, each rescaled by `1 / sqrt(s p_i)`.
pub fn nystrom_leverage(x: &DataMatrix, spec: &KernelSpec, r: usize, seed: u64, cap: usize) -> Result<LowRankFactor> {
    let n = x.n();
    check_rank(r, n)?;
    let k = dense_kernel(x, spec, cap)?;
    let scores = leverage_scores_dense(&k, r, 0x1e7)?;
    nystrom_leverage_from(&k, &scores, r, seed)
}

/// [`nystrom_leverage`] with the kernel matrix and scores already in hand.
pub fn nystrom_leverage_from(k: &DMatrix<f64>, scores: &[f64], r: usize, seed: u64) -> Result<LowRankFactor> {
    let n = k.nrows();
    check_rank(r, n)?;
    let weights: Vec<f64> = scores.iter().map(|s| s.max(0.0)).collect();
    let total: f64 = weights.iter().sum();
    let dist = WeightedIndex::new(&weights).map_err(|e| invalid(format!("bad leverage scores: {e}")))?;
    let s = 2 * r;
    let mut rng = rng_from_seed(seed);
    let landmarks: Vec<usize> = (0..s).map(|_| dist.sample(&mut rng)).collect();
    let rescale: Vec<f64> = landmarks
        .iter()
        .map(|&i| 1.0 / (s as f64 * weights[i] / total).sqrt())
        .collect();
    let c = DMatrix::from_fn(n, s, |i, b| k[(i, landmarks[b])] * rescale[b]);
    let w = DMatrix::from_fn(s, s, |a, b| k[(landmarks[a], landmarks[b])] * rescale[a] * rescale[b]);
    let factor = nystrom_factor(&c, &w, r);
    Ok(LowRankFactor {
        effective_rank: factor.ncols(),
        memory_count: n * r,
        factor,
        kind: LowRankKind::Nystrom { landmarks },
    })
}

/// Random Fourier features for the Gaussian kernel `exp(-|x - y|^2 / h^2)`:
/// `omega ~ N(0, (2 / h^2) I)`, `b ~ U[0, 2 pi)`,
/// `z(x) = sqrt(2 / D) cos(omega^T x + b)`.
pub fn rks_features(x: &DataMatrix, spec: &KernelSpec, features: usize, seed: u64) -> Result<LowRankFactor> {
    if spec.family() != KernelFamily::Gaussian {
        return Err(invalid(
            "random Fourier features are implemented for the Gaussian kernel only",
        ));
    }
    if features < 1 {
        return Err(invalid("feature count must be at least 1"));
    }
    let (n, d) = (x.n(), x.d());
    let mut rng = rng_from_seed(seed);
    let sd = 2f64.sqrt() / spec.h();
    let omega = DMatrix::from_fn(d, features, |_, _| sd * standard_normal(&mut rng));
    let phases: Vec<f64> = (0..features).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let scale = (2.0 / features as f64).sqrt();
    let mut z = x.to_matrix() * &omega;
    for (j, mut col) in z.column_iter_mut().enumerate() {
        for v in col.iter_mut() {
            *v = scale * (*v + phases[j]).cos();
        }
    }
    Ok(LowRankFactor {
        effective_rank: features,
        memory_count: n * features,
        factor: z,
        kind: LowRankKind::Features { omega, phases },
    })
}

/// Best rank-`r` approximation of a dense symmetric PSD matrix.
pub fn truncated_svd_baseline(k: &DMatrix<f64>, r: usize) -> Result<LowRankFactor> {
    let n = k.nrows();
    check_rank(r, n)?;
    let (values, vectors) = top_eigenpairs(k, r, 0x5bd)?;
    let mut factor = vectors;
    for (j, v) in values.iter().enumerate() {
        factor.column_mut(j).scale_mut(v.max(0.0).sqrt());
    }
    Ok(LowRankFactor {
        effective_rank: r,
        memory_count: n * r,
        factor,
        kind: LowRankKind::TruncatedSvd { eigenvalues: values },
    })
}

impl LowRankFactor {
    /// For a truncated eigendecomposition, `sqrt(1 - |K_r|_F^2 / |K|_F^2)`
    /// given `|K|_F^2`.
    pub fn svd_error(&self, frob_sq: f64) -> Option<f64> {
        match &self.kind {
            LowRankKind::TruncatedSvd { eigenvalues } => {
                let captured: f64 = eigenvalues.iter().map(|v| v * v).sum();
                Some((1.0 - captured / frob_sq).max(0.0).sqrt())
            }
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::relative_error_against;
    use crate::data::{synth_blobs, synth_centers};

    /// `rho` distinct points, each repeated; its kernel matrix has rank `rho`.
    fn duplicated(rho: usize, copies: usize, seed: u64) -> DataMatrix {
        let base: Vec<f64> = synth_centers(3, rho, seed).concat();
        let mut pts = Vec::new();
        for _ in 0..copies {
            pts.extend_from_slice(&base);
        }
        DataMatrix::from_rows(rho * copies, 3, pts).unwrap()
    }

    fn blobs() -> DataMatrix {
        synth_blobs(400, 3, 10, 0.03, 21).unwrap()
    }

    #[test]
    fn uniform_nystrom_recovers_low_rank_kernel() {
        let x = duplicated(4, 25, 1);
        let spec = KernelSpec::gaussian(0.5).unwrap();
        let k = dense_kernel(&x, &spec, 1000).unwrap();
        // 2r = 40 landmarks out of 4 x 25 copies always cover every point.
        let f = nystrom_uniform(&x, &spec, 20, 3).unwrap();
        assert!(relative_error_against(&f, &k).unwrap() <= 1e-8);
        assert_eq!(f.memory_count, 100 * 20);
    }

    #[test]
    fn uniform_nystrom_saturated() {
        // Every point is a landmark; a smooth kernel in 2-d has a negligible
        // spectrum past index n/2, so truncating W to rank r loses nothing.
        let x = synth_blobs(60, 2, 3, 0.3, 2).unwrap();
        let spec = KernelSpec::gaussian(2.0).unwrap();
        let k = dense_kernel(&x, &spec, 1000).unwrap();
        let f = nystrom_uniform(&x, &spec, 30, 0).unwrap();
        assert!(relative_error_against(&f, &k).unwrap() <= 1e-8);
        assert!(nystrom_uniform(&x, &spec, 31, 0).is_err());
    }

    #[test]
    fn kmeans_nystrom_exact_cases() {
        let x = synth_blobs(40, 2, 4, 0.5, 3).unwrap();
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let k = dense_kernel(&x, &spec, 1000).unwrap();
        let f = nystrom_kmeans(&x, &spec, 40, 0).unwrap();
        assert!(relative_error_against(&f, &k).unwrap() <= 1e-8);

        let x = duplicated(5, 20, 4);
        let k = dense_kernel(&x, &spec, 1000).unwrap();
        let f = nystrom_kmeans(&x, &spec, 5, 0).unwrap();
        assert!(relative_error_against(&f, &k).unwrap() <= 1e-6);
    }

    #[test]
    fn kmeans_landmarks_beat_uniform_on_blobs() {
        let x = blobs();
        let spec = KernelSpec::gaussian(0.3).unwrap();
        let k = dense_kernel(&x, &spec, 1000).unwrap();
        let mut wins = 0;
        for seed in 0..20 {
            let km = relative_error_against(&nystrom_kmeans(&x, &spec, 10, seed).unwrap(), &k).unwrap();
            let un = relative_error_against(&nystrom_uniform(&x, &spec, 10, seed).unwrap(), &k).unwrap();
            if km <= un {
                wins += 1;
            }
        }
        assert!(wins >= 18, "{wins}/20");
    }

    #[test]
    fn leverage_nystrom_on_low_rank_kernel() {
        // Rank-4 kernel: each distinct point holds leverage 1, so 8 draws with
        // replacement cover all four with probability about 0.62. Whenever
        // they do, the reconstruction is exact.
        let rho = 4;
        let x = duplicated(rho, 30, 5);
        let spec = KernelSpec::gaussian(0.6).unwrap();
        let k = dense_kernel(&x, &spec, 1000).unwrap();
        let scores = leverage_scores_dense(&k, rho, 0).unwrap();
        assert!((scores.iter().sum::<f64>() - rho as f64).abs() < 1e-10);
        let mut covered = 0;
        for seed in 0..20 {
            let f = nystrom_leverage_from(&k, &scores, rho, seed).unwrap();
            let LowRankKind::Nystrom { landmarks } = &f.kind else {
                unreachable!()
            };
            let mut groups: Vec<usize> = landmarks.iter().map(|&i| i % rho).collect();
            groups.sort_unstable();
            groups.dedup();
            if groups.len() == rho {
                covered += 1;
                assert!(relative_error_against(&f, &k).unwrap() <= 1e-6, "seed {seed}");
            }
        }
        assert!(covered >= 8, "{covered}/20");
    }

    #[test]
    fn leverage_with_uniform_scores_tracks_uniform_nystrom() {
        let x = synth_blobs(300, 3, 6, 0.1, 6).unwrap();
        let spec = KernelSpec::gaussian(0.5).unwrap();
        let k = dense_kernel(&x, &spec, 1000).unwrap();
        let r = 20;
        let flat = vec![r as f64 / 300.0; 300];
        let (mut lev, mut uni) = (0.0, 0.0);
        for seed in 0..20 {
            lev += relative_error_against(&nystrom_leverage_from(&k, &flat, r, seed).unwrap(), &k).unwrap();
            uni += relative_error_against(&nystrom_uniform(&x, &spec, r, seed).unwrap(), &k).unwrap();
        }
        assert!(lev <= 2.0 * uni && uni <= 2.0 * lev, "{lev} vs {uni}");
    }

    #[test]
    fn leverage_sampling_finds_the_isolated_point() {
        // One tight blob plus a far point: at r = 2 the far point carries
        // leverage 1, so each of the 4 draws hits it with probability 1/2.
        let n = 400;
        let mut pts = synth_blobs(n - 1, 2, 1, 0.01, 7).unwrap().as_slice().to_vec();
        pts.extend_from_slice(&[25.0, 25.0]);
        let x = DataMatrix::from_rows(n, 2, pts).unwrap();
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let k = dense_kernel(&x, &spec, 1000).unwrap();
        let r = 2;
        let scores = leverage_scores_dense(&k, r, 0).unwrap();
        assert!((scores[n - 1] - 1.0).abs() < 1e-8, "{}", scores[n - 1]);
        let (mut lev_hits, mut uni_misses) = (0, 0);
        for seed in 0..20 {
            if let LowRankKind::Nystrom { landmarks } = nystrom_leverage_from(&k, &scores, r, seed).unwrap().kind {
                lev_hits += landmarks.contains(&(n - 1)) as usize;
            }
            if let LowRankKind::Nystrom { landmarks } = nystrom_uniform(&x, &spec, r, seed).unwrap().kind {
                uni_misses += (!landmarks.contains(&(n - 1))) as usize;
            }
        }
        // Expected hits are 20 * (1 - 1/16) = 18.75.
        assert!(lev_hits >= 17, "{lev_hits}");
        assert!(uni_misses >= 10, "{uni_misses}");
    }

    #[test]
    fn rks_is_unbiased() {
        let x = synth_blobs(40, 3, 2, 0.4, 8).unwrap();
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let pairs: Vec<(usize, usize)> = (0..20).map(|t| (t, 39 - t)).collect();
        let mut mean = vec![0.0; pairs.len()];
        for seed in 0..50 {
            let f = rks_features(&x, &spec, 2000, seed).unwrap();
            for (m, &(a, b)) in mean.iter_mut().zip(&pairs) {
                *m += f.entry(a, b) / 50.0;
            }
        }
        for (m, &(a, b)) in mean.iter().zip(&pairs) {
            let exact = spec.value(x.point(a), x.point(b));
            assert!((m - exact).abs() <= 0.02, "pair ({a}, {b}): {m} vs {exact}");
        }
    }

    #[test]
    fn rks_diagonal_concentrates() {
        let x = synth_blobs(30, 3, 2, 0.4, 9).unwrap();
        let f = rks_features(&x, &KernelSpec::gaussian(0.8).unwrap(), 4000, 1).unwrap();
        for i in 0..30 {
            assert!((f.entry(i, i) - 1.0).abs() <= 0.05);
        }
        assert!(rks_features(&x, &KernelSpec::laplacian(0.8).unwrap(), 10, 1).is_err());
    }

    #[test]
    fn rks_error_scales_inversely_with_features() {
        let x = synth_blobs(60, 3, 3, 0.3, 10).unwrap();
        let spec = KernelSpec::gaussian(0.7).unwrap();
        let k = dense_kernel(&x, &spec, 1000).unwrap();
        let mse = |features: usize| -> f64 {
            (0..40)
                .map(|seed| (rks_features(&x, &spec, features, seed).unwrap().reconstruct_dense() - &k).norm_squared())
                .sum::<f64>()
        };
        let ratio = mse(500) / mse(1000);
        assert!((1.5..=2.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn truncated_svd_cases() {
        let x = synth_blobs(80, 2, 3, 0.3, 11).unwrap();
        let spec = KernelSpec::gaussian(0.4).unwrap();
        let k = dense_kernel(&x, &spec, 1000).unwrap();
        let f = truncated_svd_baseline(&k, 80).unwrap();
        assert!(relative_error_against(&f, &k).unwrap() < 1e-10);
        let r10 = truncated_svd_baseline(&k, 10).unwrap();
        let direct = relative_error_against(&r10, &k).unwrap();
        assert!((r10.svd_error(k.norm_squared()).unwrap() - direct).abs() < 1e-8);
        let ones = DMatrix::from_element(30, 30, 1.0);
        assert!(relative_error_against(&truncated_svd_baseline(&ones, 1).unwrap(), &ones).unwrap() < 1e-12);
        assert!(truncated_svd_baseline(&ones, 0).is_err());
    }

    #[test]
    fn apply_matches_dense() {
        let x = synth_blobs(90, 2, 3, 0.3, 12).unwrap();
        let spec = KernelSpec::gaussian(0.5).unwrap();
        let f = nystrom_uniform(&x, &spec, 12, 1).unwrap();
        let v: Vec<f64> = (0..90).map(|i| (i as f64).sin()).collect();
        let dense = f.reconstruct_dense() * DMatrix::from_column_slice(90, 1, &v);
        let fast = f.apply(&v).unwrap();
        let diff: f64 = fast
            .iter()
            .zip(dense.iter())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(diff <= 1e-10 * dense.norm());
    }
}
