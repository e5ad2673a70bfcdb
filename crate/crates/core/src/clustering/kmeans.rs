use nalgebra::DMatrix;
use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{rng_for, stream, Rng};

/// Result of a k-means run.
#[derive(Clone, Debug)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    /// k×d cluster centers.
    pub centers: DMatrix<f64>,
    pub inertia: f64,
    /// Number of empty clusters reseeded during the winning run.
    pub repaired: usize,
    /// Inertia after every Lloyd iteration of the winning run.
    pub inertia_trace: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct KMeansOptions {
    pub restarts: usize,
    pub max_iters: usize,
    /// Stop once the relative inertia change falls to this value.
    pub tol: f64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            restarts: 1,
            max_iters: 300,
            tol: 1e-9,
        }
    }
}

impl KMeansOptions {
    pub fn with_restarts(restarts: usize) -> Self {
        Self {
            restarts,
            ..Self::default()
        }
    }
}

/// Row-major copy of the data; Lloyd iterations touch rows only.
struct Points {
    values: Vec<f64>,
    n: usize,
    d: usize,
}

impl Points {
    fn new(x: &DMatrix<f64>) -> Self {
        let (n, d) = x.shape();
        let mut values = Vec::with_capacity(n * d);
        for i in 0..n {
            values.extend(x.row(i).iter());
        }
        Self { values, n, d }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Best-inertia k-means over `opts.restarts` k-means++ initializations.
///
/// Restarts run in parallel, each with a generator derived from `seed` and its
/// restart index; ties on inertia go to the lowest restart index.
pub fn kmeans(x: &DMatrix<f64>, k: usize, opts: KMeansOptions, seed: u64) -> Result<ClusterAssignment> {
    let n = x.nrows();
    if k == 0 {
        return Err(Error::InvalidInput("k-means needs k >= 1".into()));
    }
    if k > n {
        return Err(Error::InvalidInput(format!("k-means with k={k} > n={n}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("k-means input contains non-finite values".into()));
    }
    let points = Points::new(x);
    let restarts = opts.restarts.max(1);
    let runs: Vec<Run> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_for(seed, stream::KMEANS, r as u64);
            lloyd(&points, k, &opts, &mut rng)
        })
        .collect();
    let best = runs
        .into_iter()
        .reduce(|best, run| if run.inertia < best.inertia { run } else { best })
        .expect("at least one restart");
    Ok(best.into_assignment(k, points.d))
}

struct Run {
    labels: Vec<usize>,
    centers: Vec<f64>,
    inertia: f64,
    repaired: usize,
    trace: Vec<f64>,
}

impl Run {
    fn into_assignment(self, k: usize, d: usize) -> ClusterAssignment {
        ClusterAssignment {
            labels: self.labels,
            centers: DMatrix::from_row_slice(k, d, &self.centers),
            inertia: self.inertia,
            repaired: self.repaired,
            inertia_trace: self.trace,
        }
    }
}

fn plus_plus(points: &Points, k: usize, rng: &mut Rng) -> Vec<f64> {
    let (n, d) = (points.n, points.d);
    let mut centers = Vec::with_capacity(k * d);
    let first = rng.random_range(0..n);
    centers.extend_from_slice(points.row(first));
    let mut closest: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), points.row(first))).collect();
    for _ in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in closest.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            // Every point coincides with a center already chosen.
            rng.random_range(0..n)
        };
        let c = points.row(pick).to_vec();
        for (i, best) in closest.iter_mut().enumerate() {
            *best = best.min(sq_dist(points.row(i), &c));
        }
        centers.extend(c);
    }
    centers
}

fn assign(points: &Points, centers: &[f64], k: usize, labels: &mut [usize], dists: &mut [f64]) -> f64 {
    let d = points.d;
    let mut inertia = 0.0;
    for i in 0..points.n {
        let row = points.row(i);
        let mut best = (0, f64::INFINITY);
        for c in 0..k {
            let dist = sq_dist(row, &centers[c * d..(c + 1) * d]);
            if dist < best.1 {
                best = (c, dist);
            }
        }
        labels[i] = best.0;
        dists[i] = best.1;
        inertia += best.1;
    }
    inertia
}

/// Reseeds each empty cluster with the point currently farthest from its own
/// center. Returns the number of clusters repaired.
fn repair_empty(points: &Points, centers: &mut [f64], k: usize, labels: &mut [usize], dists: &mut [f64]) -> usize {
    let d = points.d;
    let mut repaired = 0;
    loop {
        let mut counts = vec![0usize; k];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return repaired;
        };
        // Only points whose cluster has another member may move.
        let donor = (0..points.n)
            .filter(|&i| counts[labels[i]] > 1)
            .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
        let Some(donor) = donor else {
            return repaired;
        };
        centers[empty * d..(empty + 1) * d].copy_from_slice(points.row(donor));
        labels[donor] = empty;
        dists[donor] = 0.0;
        repaired += 1;
    }
}

fn update_centers(points: &Points, labels: &[usize], k: usize, centers: &mut [f64]) {
    let d = points.d;
    let mut sums = vec![0.0; k * d];
    let mut counts = vec![0usize; k];
    for i in 0..points.n {
        let l = labels[i];
        counts[l] += 1;
        for (s, v) in sums[l * d..(l + 1) * d].iter_mut().zip(points.row(i)) {
            *s += v;
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            for j in 0..d {
                centers[c * d + j] = sums[c * d + j] / counts[c] as f64;
            }
        }
    }
}

fn lloyd(points: &Points, k: usize, opts: &KMeansOptions, rng: &mut Rng) -> Run {
    let mut centers = plus_plus(points, k, rng);
    let mut labels = vec![0usize; points.n];
    let mut dists = vec![0.0; points.n];
    assign(points, &centers, k, &mut labels, &mut dists);
    let mut repaired = repair_empty(points, &mut centers, k, &mut labels, &mut dists);
    let mut inertia: f64 = dists.iter().sum();
    let mut trace = vec![inertia];
    for _ in 0..opts.max_iters {
        update_centers(points, &labels, k, &mut centers);
        let previous_labels = labels.clone();
        assign(points, &centers, k, &mut labels, &mut dists);
        repaired += repair_empty(points, &mut centers, k, &mut labels, &mut dists);
        let next: f64 = dists.iter().sum();
        trace.push(next);
        let change = (inertia - next).abs() / inertia.max(f64::MIN_POSITIVE);
        inertia = next;
        if labels == previous_labels || change <= opts.tol {
            break;
        }
    }
    Run {
        labels,
        centers,
        inertia,
        repaired,
        trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(centers: &[[f64; 2]], per: usize, sigma: f64, seed: u64) -> (DMatrix<f64>, Vec<usize>) {
        let mut rng = rng_for(seed, 99, 0);
        let normal = Normal::new(0.0, sigma).unwrap();
        let n = centers.len() * per;
        let mut x = DMatrix::zeros(n, 2);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % centers.len();
            labels.push(c);
            for j in 0..2 {
                x[(i, j)] = centers[c][j] + normal.sample(&mut rng);
            }
        }
        (x, labels)
    }

    #[test]
    fn repeated_distinct_points_give_zero_inertia() {
        let base = [[0.0, 0.0], [5.0, 1.0], [-3.0, 4.0]];
        let x = DMatrix::from_fn(12, 2, |i, j| base[i % 3][j]);
        let fit = kmeans(&x, 3, KMeansOptions::with_restarts(5), 1).unwrap();
        assert_eq!(fit.inertia, 0.0);
        for i in 0..12 {
            assert_eq!(fit.labels[i], fit.labels[i % 3]);
        }
        let distinct: std::collections::BTreeSet<_> = fit.labels.iter().collect();
        assert_eq!(distinct.len(), 3);
    }

    #[test]
    fn more_restarts_never_hurt() {
        let (x, _) = blobs(&[[0.0, 0.0], [3.0, 0.0], [0.0, 3.0], [3.0, 3.0]], 30, 1.2, 4);
        for seed in 0..5 {
            let one = kmeans(&x, 4, KMeansOptions::with_restarts(1), seed).unwrap();
            let fifty = kmeans(&x, 4, KMeansOptions::with_restarts(50), seed).unwrap();
            assert!(fifty.inertia <= one.inertia);
        }
    }

    #[test]
    fn well_separated_gaussians_are_recovered() {
        let (x, truth) = blobs(&[[0.0, 0.0], [20.0, 0.0], [10.0, 17.32]], 100, 1.0, 11);
        let fit = kmeans(&x, 3, KMeansOptions::with_restarts(5), 3).unwrap();
        assert!(crate::clustering::clustering_accuracy(&fit.labels, &truth).unwrap() >= 0.99);
    }

    #[test]
    fn inertia_trace_is_non_increasing() {
        let (x, _) = blobs(&[[0.0, 0.0], [2.0, 0.0], [1.0, 2.0]], 60, 1.5, 8);
        for seed in 0..20 {
            let fit = kmeans(&x, 5, KMeansOptions::with_restarts(1), seed).unwrap();
            for w in fit.inertia_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let (x, _) = blobs(&[[0.0, 0.0], [4.0, 0.0]], 40, 1.0, 2);
        let a = kmeans(&x, 2, KMeansOptions::with_restarts(8), 17).unwrap();
        let b = kmeans(&x, 2, KMeansOptions::with_restarts(8), 17).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.inertia.to_bits(), b.inertia.to_bits());
    }

    #[test]
    fn empty_clusters_are_repaired() {
        // Two distinct locations but k=3: one cluster must be reseeded or
        // produced from a duplicate; every label must still be used.
        let x = DMatrix::from_fn(6, 1, |i, _| if i < 3 { 0.0 } else { 10.0 });
        let fit = kmeans(&x, 3, KMeansOptions::default(), 5).unwrap();
        let used: std::collections::BTreeSet<_> = fit.labels.iter().copied().collect();
        assert_eq!(used.len(), 3);
    }

    #[test]
    fn rejects_k_above_n() {
        let x = DMatrix::zeros(2, 2);
        assert!(matches!(kmeans(&x, 3, KMeansOptions::default(), 0), Err(Error::InvalidInput(_))));
    }
}
