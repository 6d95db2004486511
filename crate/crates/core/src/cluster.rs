//! Space partitioning (k-means, farthest-point k-center) and the cluster
//! ordering permutation.

use std::str::FromStr;

use rayon::prelude::*;

use crate::data::DataMatrix;
use crate::error::{invalid, BbfError, Result};
use crate::rng::rng_from_seed;
use rand::Rng as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partitioner {
    KMeans,
    KCenter,
}

impl FromStr for Partitioner {
    type Err = BbfError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kmeans" | "k-means" => Ok(Partitioner::KMeans),
            "kcenter" | "k-center" => Ok(Partitioner::KCenter),
            other => Err(invalid(format!("unknown partitioner {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Original order to cluster order.
    Forward,
    /// Cluster order back to original order.
    Inverse,
}

/// Assignment of points to `k` nonempty clusters.
///
/// `permutation[p]` is the original index of the point stored at cluster-order
/// position `p`; cluster `i` occupies positions `offsets[i]..offsets[i + 1]`
/// and members keep their original relative order.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    k: usize,
    d: usize,
    assignment: Vec<usize>,
    centers: Vec<f64>,
    sizes: Vec<usize>,
    radii: Vec<f64>,
    permutation: Vec<usize>,
    offsets: Vec<usize>,
}

impl Clustering {
    /// Derives sizes, l2 radii and the permutation. Fails on empty clusters.
    pub fn from_assignment(data: &DataMatrix, k: usize, assignment: Vec<usize>, centers: Vec<f64>) -> Result<Self> {
        let (n, d) = (data.n(), data.d());
        if assignment.len() != n {
            return Err(BbfError::DimensionMismatch {
                expected: n,
                found: assignment.len(),
            });
        }
        if centers.len() != k * d {
            return Err(BbfError::DimensionMismatch {
                expected: k * d,
                found: centers.len(),
            });
        }
        let mut sizes = vec![0usize; k];
        for &a in &assignment {
            if a >= k {
                return Err(BbfError::IndexOutOfRange { index: a, len: k });
            }
            sizes[a] += 1;
        }
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            return Err(invalid(format!("cluster {empty} is empty")));
        }
        let mut offsets = vec![0usize; k + 1];
        for i in 0..k {
            offsets[i + 1] = offsets[i] + sizes[i];
        }
        let mut cursor = offsets.clone();
        let mut permutation = vec![0usize; n];
        for (p, &a) in assignment.iter().enumerate() {
            permutation[cursor[a]] = p;
            cursor[a] += 1;
        }
        let mut radii = vec![0.0f64; k];
        for (p, &a) in assignment.iter().enumerate() {
            let dist = l2(data.point(p), &centers[a * d..(a + 1) * d]);
            radii[a] = radii[a].max(dist);
        }
        Ok(Self {
            k,
            d,
            assignment,
            centers,
            sizes,
            radii,
            permutation,
            offsets,
        })
    }

    /// Single cluster holding every point, centered at the centroid.
    pub fn single(data: &DataMatrix) -> Result<Self> {
        let centers = centroids(data, &vec![0; data.n()], 1);
        Self::from_assignment(data, 1, vec![0; data.n()], centers)
    }

    pub(crate) fn from_parts(
        k: usize,
        d: usize,
        assignment: Vec<usize>,
        centers: Vec<f64>,
        radii: Vec<f64>,
    ) -> Result<Self> {
        let n = assignment.len();
        let mut sizes = vec![0usize; k];
        for &a in &assignment {
            if a >= k {
                return Err(BbfError::Format(format!("cluster id {a} out of range")));
            }
            sizes[a] += 1;
        }
        if sizes.contains(&0) || centers.len() != k * d || radii.len() != k {
            return Err(BbfError::Format("inconsistent clustering".into()));
        }
        let mut offsets = vec![0usize; k + 1];
        for i in 0..k {
            offsets[i + 1] = offsets[i] + sizes[i];
        }
        let mut cursor = offsets.clone();
        let mut permutation = vec![0usize; n];
        for (p, &a) in assignment.iter().enumerate() {
            permutation[cursor[a]] = p;
            cursor[a] += 1;
        }
        Ok(Self {
            k,
            d,
            assignment,
            centers,
            sizes,
            radii,
            permutation,
            offsets,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn center(&self, i: usize) -> &[f64] {
        &self.centers[i * self.d..(i + 1) * self.d]
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn max_radius(&self) -> f64 {
        self.radii.iter().copied().fold(0.0, f64::max)
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    /// Original indices of the members of cluster `i`, in original order.
    pub fn members(&self, i: usize) -> &[usize] {
        &self.permutation[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn permute_vector(&self, v: &[f64], direction: Direction) -> Result<Vec<f64>> {
        let n = self.n();
        if v.len() != n {
            return Err(BbfError::DimensionMismatch {
                expected: n,
                found: v.len(),
            });
        }
        let mut out = vec![0.0; n];
        match direction {
            Direction::Forward => {
                for (o, &p) in out.iter_mut().zip(&self.permutation) {
                    *o = v[p];
                }
            }
            Direction::Inverse => {
                for (&x, &p) in v.iter().zip(&self.permutation) {
                    out[p] = x;
                }
            }
        }
        Ok(out)
    }
}

pub fn permute_vector(c: &Clustering, v: &[f64], direction: Direction) -> Result<Vec<f64>> {
    c.permute_vector(v, direction)
}

#[inline]
pub(crate) fn sq_l2(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[inline]
pub(crate) fn l2(x: &[f64], y: &[f64]) -> f64 {
    sq_l2(x, y).sqrt()
}

fn check_k(data: &DataMatrix, k: usize) -> Result<()> {
    if k < 1 {
        return Err(invalid("cluster count must be at least 1"));
    }
    if k > data.n() {
        return Err(invalid(format!("cluster count {k} exceeds point count {}", data.n())));
    }
    Ok(())
}

/// Nearest center for every point with lowest-index tie-break, plus the
/// squared distance to it.
fn assign(data: &DataMatrix, centers: &[f64], k: usize) -> Vec<(usize, f64)> {
    let d = data.d();
    (0..data.n())
        .into_par_iter()
        .map(|p| {
            let x = data.point(p);
            let mut best = (0usize, f64::INFINITY);
            for c in 0..k {
                let dist = sq_l2(x, &centers[c * d..(c + 1) * d]);
                if dist < best.1 {
                    best = (c, dist);
                }
            }
            best
        })
        .collect()
}

fn centroids(data: &DataMatrix, assignment: &[usize], k: usize) -> Vec<f64> {
    let d = data.d();
    let mut sums = vec![0.0; k * d];
    let mut counts = vec![0usize; k];
    for (p, &a) in assignment.iter().enumerate() {
        counts[a] += 1;
        for (s, x) in sums[a * d..(a + 1) * d].iter_mut().zip(data.point(p)) {
            *s += x;
        }
    }
    for (c, &cnt) in counts.iter().enumerate() {
        if cnt > 0 {
            sums[c * d..(c + 1) * d].iter_mut().for_each(|s| *s /= cnt as f64);
        }
    }
    sums
}

/// Gonzalez traversal: a seeded first point, then repeatedly the point
/// farthest from the chosen set. Returns the chosen point indices.
pub fn farthest_point_centers(data: &DataMatrix, k: usize, seed: u64) -> Result<Vec<usize>> {
    check_k(data, k)?;
    let n = data.n();
    let mut rng = rng_from_seed(seed);
    let first = rng.gen_range(0..n);
    let mut chosen = vec![first];
    let mut is_chosen = vec![false; n];
    is_chosen[first] = true;
    let mut nearest: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|p| sq_l2(data.point(p), data.point(first)))
        .collect();
    while chosen.len() < k {
        // Farthest unchosen point, lowest index on ties; duplicates of chosen
        // points (distance zero) are still eligible so k distinct indices result.
        let mut best: Option<(usize, f64)> = None;
        for (p, &dist) in nearest.iter().enumerate() {
            if is_chosen[p] {
                continue;
            }
            if best.is_none_or(|(_, bd)| dist > bd) {
                best = Some((p, dist));
            }
        }
        let (next, _) = best.expect("k <= n leaves an unchosen point");
        chosen.push(next);
        is_chosen[next] = true;
        let y = data.point(next);
        nearest
            .par_iter_mut()
            .enumerate()
            .for_each(|(p, v)| *v = v.min(sq_l2(data.point(p), y)));
    }
    Ok(chosen)
}

/// Trace of a k-means run: squared-distance objective after every
/// assignment step (the first entry is for the seeded centers).
#[derive(Debug, Clone)]
pub struct KMeansTrace {
    pub objective: Vec<f64>,
    pub iterations: usize,
}

/// Lloyd iteration from farthest-point seeded centers.
pub fn kmeans(data: &DataMatrix, k: usize, seed: u64, max_iter: usize) -> Result<Clustering> {
    kmeans_traced(data, k, seed, max_iter).map(|(c, _)| c)
}

pub fn kmeans_traced(data: &DataMatrix, k: usize, seed: u64, max_iter: usize) -> Result<(Clustering, KMeansTrace)> {
    check_k(data, k)?;
    let d = data.d();
    let seeds = farthest_point_centers(data, k, seed)?;
    let mut centers: Vec<f64> = seeds.iter().flat_map(|&p| data.point(p).to_vec()).collect();
    let diameter = bounding_diagonal(data);
    let tol = 1e-6 * diameter.max(f64::MIN_POSITIVE);

    let mut labels = assign(data, &centers, k);
    let mut trace = KMeansTrace {
        objective: vec![labels.iter().map(|l| l.1).sum()],
        iterations: 0,
    };
    for _ in 0..max_iter {
        let assignment: Vec<usize> = labels.iter().map(|l| l.0).collect();
        let mut next = centroids(data, &assignment, k);
        // Clusters that lost all members keep their previous center; repair
        // below turns them into singletons.
        let mut counts = vec![0usize; k];
        assignment.iter().for_each(|&a| counts[a] += 1);
        for c in 0..k {
            if counts[c] == 0 {
                next[c * d..(c + 1) * d].copy_from_slice(&centers[c * d..(c + 1) * d]);
            }
        }
        let movement: f64 = (0..k)
            .map(|c| l2(&next[c * d..(c + 1) * d], &centers[c * d..(c + 1) * d]))
            .sum();
        centers = next;
        labels = assign(data, &centers, k);
        repair_empty(data, &mut centers, &mut labels, k);
        trace.objective.push(labels.iter().map(|l| l.1).sum());
        trace.iterations += 1;
        if movement < tol {
            break;
        }
    }
    repair_empty(data, &mut centers, &mut labels, k);
    let assignment = labels.iter().map(|l| l.0).collect();
    Ok((Clustering::from_assignment(data, k, assignment, centers)?, trace))
}

/// Moves the center of each empty cluster onto the point farthest from its
/// current center, then reassigns.
fn repair_empty(data: &DataMatrix, centers: &mut [f64], labels: &mut Vec<(usize, f64)>, k: usize) {
    let d = data.d();
    for _ in 0..k {
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|l| counts[l.0] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        // Farthest point among those whose cluster can spare a member.
        let victim =
            labels
                .iter()
                .enumerate()
                .filter(|(_, l)| counts[l.0] > 1)
                .fold(None::<(usize, f64)>, |best, (p, l)| match best {
                    Some((_, bd)) if bd >= l.1 => best,
                    _ => Some((p, l.1)),
                });
        let Some((p, _)) = victim else {
            return;
        };
        centers[empty * d..(empty + 1) * d].copy_from_slice(data.point(p));
        *labels = assign(data, centers, k);
        if labels.iter().all(|l| l.0 != empty) {
            // Duplicate points tie toward a lower-index center; force it.
            labels[p] = (empty, 0.0);
        }
    }
}

fn bounding_diagonal(data: &DataMatrix) -> f64 {
    let d = data.d();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for p in 0..data.n() {
        for (j, &x) in data.point(p).iter().enumerate() {
            lo[j] = lo[j].min(x);
            hi[j] = hi[j].max(x);
        }
    }
    lo.iter().zip(&hi).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt()
}

/// Farthest-point k-center (2-approximation of the minimax radius).
pub fn kcenter_farthest(data: &DataMatrix, k: usize, seed: u64) -> Result<Clustering> {
    let chosen = farthest_point_centers(data, k, seed)?;
    let centers: Vec<f64> = chosen.iter().flat_map(|&p| data.point(p).to_vec()).collect();
    let mut labels = assign(data, &centers, k);
    // A chosen point always belongs to its own center (matters for duplicates).
    for (c, &p) in chosen.iter().enumerate() {
        if labels[p].1 == 0.0 {
            labels[p] = (c, 0.0);
        }
    }
    let assignment = labels.iter().map(|l| l.0).collect();
    Clustering::from_assignment(data, k, assignment, centers)
}

pub fn partition(data: &DataMatrix, k: usize, partitioner: Partitioner, seed: u64) -> Result<Clustering> {
    match partitioner {
        Partitioner::KMeans => kmeans(data, k, seed, 100),
        Partitioner::KCenter => kcenter_farthest(data, k, seed),
    }
}
