//! Seeded k-means (k-means++ init, Lloyd iterations).
//!
//! All randomness flows from the config seed through a counter-based RNG, and
//! every reduction runs in a fixed order, so the result is bit-identical for
//! a given input regardless of how many threads rayon happens to use.
//! Distance ties always resolve to the lowest index.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::embed::EmbeddingSet;
use crate::error::{Error, Result};
use crate::vecmath::l2_distance_sq;

pub const DEFAULT_MAX_ITERS: usize = 25;
pub const DEFAULT_REL_TOLERANCE: f32 = 1e-4;

#[derive(Debug, Clone)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    pub seed: u64,
    /// Stop once the relative decrease of the objective falls below this.
    pub rel_tolerance: f32,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            max_iters: DEFAULT_MAX_ITERS,
            seed,
            rel_tolerance: DEFAULT_REL_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansOutcome {
    pub centroids: EmbeddingSet,
    /// Sum of squared distances to the assigned centroid, one entry per
    /// assignment pass. Non-increasing.
    pub objectives: Vec<f64>,
}

/// Index of the centroid nearest to `v` under squared L2, lowest index on
/// ties.
pub fn assign_nearest(v: &[f32], centroids: &EmbeddingSet) -> Result<usize> {
    if centroids.is_empty() {
        return Err(Error::Config("assign_nearest on an empty centroid set".into()));
    }
    Ok(nearest(v, centroids).0)
}

pub(crate) fn nearest(v: &[f32], centroids: &EmbeddingSet) -> (usize, f32) {
    let mut best = 0usize;
    let mut best_d = f32::INFINITY;
    for (i, c) in centroids.rows().enumerate() {
        let d = l2_distance_sq(v, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    (best, best_d)
}

pub fn kmeans(data: &EmbeddingSet, cfg: &KMeansConfig) -> Result<KMeansOutcome> {
    if data.is_empty() {
        return Err(Error::Config("k-means needs at least one point".into()));
    }
    if cfg.k == 0 {
        return Err(Error::Config("k-means needs k >= 1".into()));
    }
    if cfg.max_iters == 0 {
        return Err(Error::Config("k-means needs max_iters >= 1".into()));
    }
    if !(cfg.rel_tolerance >= 0.0) {
        return Err(Error::Config("k-means tolerance must be non-negative".into()));
    }

    let n = data.count();
    let dim = data.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centroids = plus_plus_init(data, cfg.k, &mut rng);

    let mut assignments = vec![0u32; n];
    let mut dists = vec![0f32; n];
    let mut objectives = Vec::new();
    let mut prev_obj = f64::INFINITY;

    for _ in 0..cfg.max_iters {
        // Assignment: each point independently, so parallelism cannot change
        // the result.
        let cset = EmbeddingSet::from_raw_unchecked(dim, centroids.clone());
        assignments
            .par_iter_mut()
            .zip(dists.par_iter_mut())
            .enumerate()
            .for_each(|(i, (a, d))| {
                let (idx, dist) = nearest(data.row(i), &cset);
                *a = idx as u32;
                *d = dist;
            });

        // Objective, summed serially in point order.
        let obj: f64 = dists.iter().map(|d| *d as f64).sum();
        objectives.push(obj);

        // Mean update, accumulated serially in point order.
        let mut sums = vec![0f64; cfg.k * dim];
        let mut counts = vec![0u64; cfg.k];
        for (i, row) in data.rows().enumerate() {
            let c = assignments[i] as usize;
            counts[c] += 1;
            let acc = &mut sums[c * dim..(c + 1) * dim];
            for (s, v) in acc.iter_mut().zip(row) {
                *s += *v as f64;
            }
        }
        for c in 0..cfg.k {
            if counts[c] == 0 {
                continue;
            }
            let inv = 1.0 / counts[c] as f64;
            for d in 0..dim {
                centroids[c * dim + d] = (sums[c * dim + d] * inv) as f32;
            }
        }

        // Empty clusters move onto the point currently worst served: the one
        // farthest from its assigned centroid. Each empty cluster takes the
        // next-farthest distinct point, lowest point index on ties.
        let empties: Vec<usize> = (0..cfg.k).filter(|c| counts[*c] == 0).collect();
        if !empties.is_empty() {
            let mut order: Vec<u32> = (0..n as u32).collect();
            order.sort_unstable_by(|a, b| {
                dists[*b as usize]
                    .total_cmp(&dists[*a as usize])
                    .then(a.cmp(b))
            });
            for (rank, c) in empties.iter().enumerate() {
                if rank >= n {
                    break;
                }
                let p = order[rank] as usize;
                centroids[c * dim..(c + 1) * dim].copy_from_slice(data.row(p));
            }
        }

        if prev_obj.is_finite() {
            let drop = prev_obj - obj;
            if drop <= cfg.rel_tolerance as f64 * prev_obj.max(f64::MIN_POSITIVE) {
                break;
            }
        }
        prev_obj = obj;
    }

    Ok(KMeansOutcome {
        centroids: EmbeddingSet::from_raw_unchecked(dim, centroids),
        objectives,
    })
}

/// k-means++ seeding: first center uniform, the rest sampled proportional to
/// the squared distance to the nearest center chosen so far.
fn plus_plus_init(data: &EmbeddingSet, k: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = data.count();
    let dim = data.dim();
    let mut centroids = vec![0f32; k * dim];

    let first = rng.gen_range(0..n);
    centroids[..dim].copy_from_slice(data.row(first));

    let mut min_d2: Vec<f32> = (0..n)
        .into_par_iter()
        .map(|i| l2_distance_sq(data.row(i), data.row(first)))
        .collect();

    for c in 1..k {
        let total: f64 = min_d2.iter().map(|d| *d as f64).sum();
        let pick = if total > 0.0 {
            let r = rng.gen::<f64>() * total;
            let mut cum = 0.0f64;
            let mut chosen = None;
            let mut last_positive = 0usize;
            for (i, d) in min_d2.iter().enumerate() {
                if *d > 0.0 {
                    last_positive = i;
                }
                cum += *d as f64;
                if cum > r {
                    chosen = Some(i);
                    break;
                }
            }
            chosen.unwrap_or(last_positive)
        } else {
            // Every point already coincides with a center (k exceeds the
            // number of distinct points); duplicate an arbitrary one.
            rng.gen_range(0..n)
        };
        let row = data.row(pick);
        centroids[c * dim..(c + 1) * dim].copy_from_slice(row);
        min_d2
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, d)| *d = d.min(l2_distance_sq(data.row(i), row)));
    }
    centroids
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_set(n: usize, dim: usize, seed: u64) -> EmbeddingSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f32> = (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        EmbeddingSet::new(dim, values).unwrap()
    }

    #[test]
    fn duplicated_points_recover_exact_centroids() {
        // Two duplicated points, k=2: each centroid is one of the points.
        let a = vec![1.0f32, 0.0];
        let b = vec![-1.0f32, 2.0];
        let set = EmbeddingSet::from_rows(2, &[a.clone(), a.clone(), b.clone(), b.clone()]).unwrap();
        let out = kmeans(&set, &KMeansConfig::new(2, 7)).unwrap();
        let mut got: Vec<Vec<f32>> = out.centroids.rows().map(|r| r.to_vec()).collect();
        got.sort_by(|x, y| x[0].total_cmp(&y[0]));
        assert_eq!(got, vec![b, a]);
        assert_eq!(*out.objectives.last().unwrap(), 0.0);
    }

    #[test]
    fn k_equals_one_yields_the_mean() {
        let set = EmbeddingSet::from_rows(2, &[vec![0.0, 0.0], vec![2.0, 4.0]]).unwrap();
        let out = kmeans(&set, &KMeansConfig::new(1, 0)).unwrap();
        assert_eq!(out.centroids.row(0), &[1.0, 2.0]);
    }

    #[test]
    fn well_separated_gaussians_are_found() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let means = [[0.0f32, 0.0], [10.0, 0.0], [0.0, 10.0], [10.0, 10.0]];
        let mut rows = Vec::new();
        for m in &means {
            for _ in 0..50 {
                rows.push(vec![
                    m[0] + rng.gen_range(-0.05..0.05),
                    m[1] + rng.gen_range(-0.05..0.05),
                ]);
            }
        }
        let set = EmbeddingSet::from_rows(2, &rows).unwrap();
        let out = kmeans(&set, &KMeansConfig::new(4, 3)).unwrap();
        // Every true mean has a centroid within the cluster radius.
        for m in &means {
            let (_, d) = nearest(m, &out.centroids);
            assert!(d < 0.05, "no centroid near {m:?} (d^2 = {d})");
        }
    }

    #[test]
    fn objective_is_non_increasing() {
        let set = random_set(300, 8, 5);
        let mut cfg = KMeansConfig::new(10, 5);
        cfg.rel_tolerance = 0.0; // run all iterations
        let out = kmeans(&set, &cfg).unwrap();
        assert!(out.objectives.len() > 1);
        for w in out.objectives.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-9 * w[0].abs(),
                "objective rose: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn empty_clusters_are_reseeded() {
        // k larger than the number of distinct points forces empties.
        let set = EmbeddingSet::from_rows(1, &[vec![0.0], vec![1.0], vec![5.0]]).unwrap();
        let out = kmeans(&set, &KMeansConfig::new(5, 2)).unwrap();
        assert_eq!(out.centroids.count(), 5);
        // The three distinct points should be perfectly covered.
        for p in [[0.0f32], [1.0], [5.0]] {
            let (_, d) = nearest(&p, &out.centroids);
            assert_eq!(d, 0.0);
        }
    }

    #[test]
    fn assign_nearest_matches_exhaustive_scan_and_breaks_ties_low() {
        let centroids = EmbeddingSet::from_rows(2, &[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        // Exact membership.
        assert_eq!(assign_nearest(&[1.0, 0.0], &centroids).unwrap(), 0);
        // Equidistant point: the lower index wins.
        assert_eq!(assign_nearest(&[0.0, 3.0], &centroids).unwrap(), 0);

        let cents = random_set(17, 6, 21);
        let points = random_set(1000, 6, 22);
        for row in points.rows() {
            let got = assign_nearest(row, &cents).unwrap();
            let mut best = 0;
            let mut best_d = f32::INFINITY;
            for (i, c) in cents.rows().enumerate() {
                let d = l2_distance_sq(row, c);
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            assert_eq!(got, best);
        }
    }

    #[test]
    fn assign_nearest_rejects_empty_centroids() {
        assert!(assign_nearest(&[1.0], &EmbeddingSet::empty(1)).is_err());
    }

    #[test]
    fn same_seed_same_centroids_across_thread_counts() {
        let set = random_set(400, 12, 9);
        let cfg = KMeansConfig::new(13, 42);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| kmeans(&set, &cfg).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.centroids.values().len(), b.centroids.values().len());
        for (x, y) in a.centroids.values().iter().zip(b.centroids.values()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(a.objectives, b.objectives);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let set = random_set(10, 2, 0);
        assert!(kmeans(&EmbeddingSet::empty(2), &KMeansConfig::new(2, 0)).is_err());
        assert!(kmeans(&set, &KMeansConfig::new(0, 0)).is_err());
    }
}
