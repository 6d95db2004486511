//! Shared fixtures for the benchmarks in `benches/`.

use bbf::{estimate_frobenius, kmeans, synth_blobs, BlockAccessor, Clustering, DataMatrix, KernelSpec, RankProfile};

pub struct Fixture {
    pub x: DataMatrix,
    pub spec: KernelSpec,
    pub clustering: Clustering,
    pub profile: RankProfile,
}

/// Blobs in five dimensions with `k` clusters and a uniform rank.
pub fn blobs(n: usize, k: usize, rank: usize) -> Fixture {
    let x = synth_blobs(n, 5, k, 0.1, 6).expect("valid blob parameters");
    let spec = KernelSpec::gaussian(0.5).expect("positive bandwidth");
    let clustering = kmeans(&x, k, 0, 100).expect("k <= n");
    let frob = estimate_frobenius(&BlockAccessor::new(&x, spec), 100 * n, 0).expect("nonempty data");
    let ranks = clustering.sizes().iter().map(|&s| rank.min(s)).collect();
    let profile = RankProfile::fixed(&clustering, ranks, 1e-2, frob).expect("ranks fit the clusters");
    Fixture {
        x,
        spec,
        clustering,
        profile,
    }
}
