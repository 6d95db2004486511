use nalgebra::DMatrix;
use proptest::prelude::*;

use super::*;
use crate::analysis::relative_error_against;
use crate::cluster::{kmeans, Clustering};
use crate::data::{synth_blobs, DataMatrix};
use crate::kernel::{dense_kernel, BlockAccessor, CountingSource, KernelSource};
use crate::rng::{rng_from_seed, standard_normal};

fn random_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..n).map(|_| standard_normal(&mut rng)).collect()
}

fn build_with_eps(x: &DataMatrix, spec: KernelSpec, k: usize, eps: f64, seed: u64) -> BBFactorization {
    let c = kmeans(x, k, seed, 100).unwrap();
    let p = estimate_ranks(x, &c, spec, eps, DEFAULT_R_MAX, seed).unwrap();
    build_bbf(x, spec, &c, &p, 10, seed).unwrap()
}

fn full_rank(x: &DataMatrix, spec: KernelSpec, k: usize, seed: u64) -> BBFactorization {
    let c = kmeans(x, k, seed, 100).unwrap();
    let frob = dense_kernel(x, &spec, 10_000).unwrap().norm_squared();
    let p = RankProfile::fixed(&c, c.sizes().to_vec(), 1e-8, frob).unwrap();
    build_bbf(x, spec, &c, &p, 10, seed).unwrap()
}

#[test]
fn full_ranks_reproduce_the_kernel() {
    let x = synth_blobs(256, 3, 4, 0.2, 1).unwrap();
    let spec = KernelSpec::gaussian(0.5).unwrap();
    let f = full_rank(&x, spec, 4, 2);
    let k = dense_kernel(&x, &spec, 1000).unwrap();
    let err = (f.reconstruct_dense().unwrap() - &k).norm() / k.norm();
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn bases_are_orthonormal() {
    let x = synth_blobs(500, 3, 5, 0.1, 3).unwrap();
    let f = build_with_eps(&x, KernelSpec::laplacian(1.0).unwrap(), 5, 1e-2, 4);
    for i in 0..f.k() {
        let u = f.basis(i);
        let g = u.tr_mul(u) - DMatrix::identity(u.ncols(), u.ncols());
        assert!(g.amax() <= 1e-8);
    }
}

#[test]
fn distant_clusters_are_skipped() {
    let mut pts = Vec::new();
    let mut rng = rng_from_seed(5);
    for c in [0.0, 5.0] {
        for _ in 0..60 {
            pts.push(c + 0.1 * standard_normal(&mut rng).clamp(-2.5, 2.5));
            pts.push(0.1 * standard_normal(&mut rng).clamp(-2.5, 2.5));
        }
    }
    let x = DataMatrix::from_rows(120, 2, pts).unwrap();
    let spec = KernelSpec::gaussian(0.1).unwrap();
    let f = build_with_eps(&x, spec, 2, 1e-3, 6);
    assert!(f.clustering().max_radius() <= 0.36);
    assert_eq!(f.skipped_blocks(), vec![(0, 1), (1, 0)]);
    let r = f.ranks();
    let diagonal_only = f.clustering().sizes().iter().zip(&r).map(|(n, r)| n * r).sum::<usize>()
        + r.iter().map(|r| r * r).sum::<usize>();
    assert_eq!(f.memory_count(), diagonal_only);
    // The skip certificate holds entrywise.
    let k = dense_kernel(&x, &spec, 1000).unwrap();
    for &(i, j) in &f.skipped_blocks() {
        let InnerBlock::Skipped { envelope } = f.inner(i, j) else {
            unreachable!()
        };
        assert!(*envelope <= f.cutoff_threshold());
        for &a in f.clustering().members(i) {
            for &b in f.clustering().members(j) {
                assert!(k[(a, b)] <= *envelope);
            }
        }
    }
}

#[test]
fn apply_matches_dense_reconstruction() {
    let x = synth_blobs(300, 4, 6, 0.15, 7).unwrap();
    let f = build_with_eps(&x, KernelSpec::gaussian(0.6).unwrap(), 6, 1e-2, 8);
    let dense = f.reconstruct_dense().unwrap();
    for t in 0..10 {
        let v = random_vector(300, 100 + t);
        let fast = DMatrix::from_column_slice(300, 1, &f.apply(&v).unwrap());
        let slow = &dense * DMatrix::from_column_slice(300, 1, &v);
        assert!((&fast - &slow).norm() <= 1e-10 * slow.norm());
    }
    assert!(f.apply(&vec![0.0; 300]).unwrap().iter().all(|&v| v == 0.0));
    assert!(f.apply(&vec![0.0; 299]).is_err());
    // Column by column against unit vectors.
    let eye = f.apply_block(&DMatrix::identity(300, 300)).unwrap();
    assert!((&eye - &dense).amax() <= 1e-12);
    for (a, b) in [(0, 0), (3, 250), (299, 17)] {
        assert!((f.entry(a, b) - dense[(a, b)]).abs() <= 1e-12);
    }
}

#[test]
fn reconstruction_is_symmetric() {
    let x = synth_blobs(200, 3, 4, 0.2, 9).unwrap();
    let f = build_with_eps(&x, KernelSpec::gaussian(0.4).unwrap(), 4, 1e-3, 10);
    let d = f.reconstruct_dense().unwrap();
    assert!((&d - d.transpose()).amax() <= 1e-12);
}

#[test]
fn single_cluster_full_rank_matvec() {
    let x = synth_blobs(150, 2, 3, 0.3, 11).unwrap();
    let spec = KernelSpec::laplacian(0.7).unwrap();
    let f = full_rank(&x, spec, 1, 12);
    let k = dense_kernel(&x, &spec, 1000).unwrap();
    let v = random_vector(150, 13);
    let exact = &k * DMatrix::from_column_slice(150, 1, &v);
    let got = DMatrix::from_column_slice(150, 1, &f.apply(&v).unwrap());
    assert!((&got - &exact).norm() <= 1e-6 * exact.norm());
    let single = f.basis(0) * f.inner(0, 0).dense().unwrap() * f.basis(0).transpose();
    let p = f.clustering().permutation();
    let d = f.reconstruct_dense().unwrap();
    for a in 0..150 {
        for b in 0..150 {
            assert!((d[(p[a], p[b])] - single[(a, b)]).abs() <= 1e-14);
        }
    }
}

#[test]
fn reconstruct_refuses_above_cap() {
    let x = synth_blobs(100, 2, 2, 0.3, 14).unwrap();
    let f = build_with_eps(&x, KernelSpec::gaussian(1.0).unwrap(), 2, 1e-2, 15);
    assert!(matches!(
        f.reconstruct_dense_with_cap(50),
        Err(crate::error::BbfError::TooLarge { .. })
    ));
}

#[test]
fn inner_recovery_is_exact_for_low_rank_blocks() {
    let mut rng = rng_from_seed(16);
    let mut gauss = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| standard_normal(&mut rng));
    let (u, c, v) = (gauss(50, 4), gauss(4, 6), gauss(40, 6));
    let m = &u * &c * v.transpose();
    let rows: Vec<usize> = (0..50).step_by(5).collect();
    let cols: Vec<usize> = (1..40).step_by(4).collect();
    let pick = |a: &DMatrix<f64>, idx: &[usize]| DMatrix::from_fn(idx.len(), a.ncols(), |i, j| a[(idx[i], j)]);
    let mij = DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])]);
    let got = recover_inner(&pick(&u, &rows), &mij, &pick(&v, &cols)).unwrap();
    assert!((&got - &c).norm() <= 1e-10 * c.norm());
}

#[test]
fn epsilon_targets_the_error() {
    let x = synth_blobs(800, 5, 8, 0.1, 17).unwrap();
    let spec = KernelSpec::gaussian(0.5).unwrap();
    let k = dense_kernel(&x, &spec, 1000).unwrap();
    let mut previous = f64::INFINITY;
    for eps in [1e-1, 1e-2, 1e-3] {
        let f = build_with_eps(&x, spec, 8, eps, 18);
        let err = relative_error_against(&f, &k).unwrap();
        // At tight tolerances the r + l column panel costs roughly a factor
        // of two over the optimal per-cluster basis.
        let slack = if eps < 5e-3 { 6.0 } else { 3.0 };
        assert!(err <= slack * eps, "eps={eps}: {err}");
        assert!(err < previous);
        previous = err;
    }
}

#[test]
fn entry_count_scales_linearly() {
    let spec = KernelSpec::gaussian(0.5).unwrap();
    let count = |n: usize| -> u64 {
        let x = synth_blobs(n, 3, 6, 0.1, 19).unwrap();
        let c = kmeans(&x, 6, 20, 100).unwrap();
        let p = RankProfile::fixed(&c, vec![12; 6], 1e-3, (n * n) as f64 * 0.1).unwrap();
        let src = CountingSource::new(BlockAccessor::new(&x, spec));
        build_bbf_from_source(&src, &c, &p, 10, 21).unwrap();
        src.entries()
    };
    let ratio = count(4000) as f64 / count(2000) as f64;
    assert!((1.8..=2.3).contains(&ratio), "{ratio}");
}

#[test]
fn error_budget_composition() {
    // Injected block errors with |D_ij|_F^2 = (n_i n_j / n^2) |M|_F^2 eps^2
    // add up to a total relative error of exactly eps.
    let x = synth_blobs(240, 3, 3, 0.2, 22).unwrap();
    let spec = KernelSpec::gaussian(0.5).unwrap();
    let k = dense_kernel(&x, &spec, 1000).unwrap();
    let c = kmeans(&x, 3, 23, 100).unwrap();
    let eps = 0.05;
    let n = 240.0;
    let frob_sq = k.norm_squared();
    let mut rng = rng_from_seed(24);
    let mut perturbed = k.clone();
    for i in 0..3 {
        for j in 0..3 {
            let (mi, mj) = (c.members(i), c.members(j));
            let noise = DMatrix::from_fn(mi.len(), mj.len(), |_, _| standard_normal(&mut rng));
            let target = (mi.len() * mj.len()) as f64 / (n * n) * frob_sq * eps * eps;
            let noise = &noise * (target / noise.norm_squared()).sqrt();
            for (a, &p) in mi.iter().enumerate() {
                for (b, &q) in mj.iter().enumerate() {
                    perturbed[(p, q)] += noise[(a, b)];
                }
            }
        }
    }
    let total = (&perturbed - &k).norm() / k.norm();
    assert!((total - eps).abs() <= 1e-12);
}

#[test]
fn container_round_trip() {
    let x = synth_blobs(180, 3, 3, 0.2, 25).unwrap();
    let f = build_with_eps(&x, KernelSpec::laplacian(0.4).unwrap(), 3, 1e-2, 26);
    let mut bytes = Vec::new();
    f.write_to(&mut bytes).unwrap();
    let g = BBFactorization::read_from(bytes.as_slice()).unwrap();
    assert_eq!(f, g);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(BBFactorization::read_from(bad.as_slice()).is_err());
    assert!(BBFactorization::read_from(&bytes[..bytes.len() - 3]).is_err());
    let mut long = bytes.clone();
    long.push(0);
    assert!(BBFactorization::read_from(long.as_slice()).is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.bbf");
    f.save(&path).unwrap();
    assert_eq!(BBFactorization::load(&path).unwrap(), f);
    assert!(BBFactorization::load(dir.path().join("missing.bbf")).is_err());
}

#[test]
fn rejects_inconsistent_profiles() {
    let x = synth_blobs(100, 2, 2, 0.3, 27).unwrap();
    let spec = KernelSpec::gaussian(1.0).unwrap();
    let c = kmeans(&x, 2, 0, 50).unwrap();
    let single = Clustering::single(&x).unwrap();
    let p = RankProfile::fixed(&single, vec![3], 1e-2, 1.0).unwrap();
    assert!(build_bbf(&x, spec, &c, &p, 5, 0).is_err());
    assert!(RankProfile::fixed(&c, vec![0, 3], 1e-2, 1.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn apply_is_linear(seed in 0u64..500, alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let x = synth_blobs(120, 2, 3, 0.2, seed).unwrap();
        let f = build_with_eps(&x, KernelSpec::gaussian(0.5).unwrap(), 3, 1e-2, seed);
        let u = random_vector(120, seed + 1);
        let v = random_vector(120, seed + 2);
        let combo: Vec<f64> = u.iter().zip(&v).map(|(a, b)| alpha * a + beta * b).collect();
        let lhs = f.apply(&combo).unwrap();
        let (fu, fv) = (f.apply(&u).unwrap(), f.apply(&v).unwrap());
        let scale = fu.iter().chain(&fv).fold(1.0f64, |m, v| m.max(v.abs()));
        for t in 0..120 {
            prop_assert!((lhs[t] - (alpha * fu[t] + beta * fv[t])).abs() <= 1e-12 * scale * 10.0);
        }
    }

    #[test]
    fn build_is_deterministic(seed in 0u64..500) {
        let x = synth_blobs(90, 2, 3, 0.2, seed).unwrap();
        let spec = KernelSpec::laplacian(0.8).unwrap();
        let a = build_with_eps(&x, spec, 3, 1e-2, seed);
        let b = build_with_eps(&x, spec, 3, 1e-2, seed);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn skipped_blocks_respect_their_envelope(seed in 0u64..500, h in 0.05f64..0.3) {
        let x = synth_blobs(150, 2, 5, 0.05, seed).unwrap();
        let spec = KernelSpec::gaussian(h).unwrap();
        let f = build_with_eps(&x, spec, 5, 1e-2, seed);
        let acc = BlockAccessor::new(&x, spec);
        for (i, j) in f.skipped_blocks() {
            let block = acc.block(f.clustering().members(i), f.clustering().members(j)).unwrap();
            prop_assert!(block.max() <= f.cutoff_threshold());
        }
    }
}
