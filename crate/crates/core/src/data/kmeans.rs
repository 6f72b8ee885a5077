//! Lloyd's k-means with k-means++ seeding.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{bail, Result};
use crate::math;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Inertia after each assignment step, starting with the seeded centroids.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn inertia(&self) -> f64 {
        *self.inertia_history.last().unwrap_or(&0.0)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Sum of squared distances of each point to its assigned centroid.
pub fn inertia(points: &[Vec<f64>], centroids: &[Vec<f64>], assignments: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, a)| sq_dist(p, &centroids[*a]))
        .sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.iter().enumerate() {
        let d = sq_dist(p, cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.gen_range(0..n)].clone()];
    let mut dist: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            math::weighted_index(rng, &dist)
        } else {
            // Every point coincides with a centroid: take the first unused one.
            (0..n)
                .find(|i| !centroids.iter().any(|c| c == &points[*i]))
                .unwrap_or(centroids.len() % n)
        };
        centroids.push(points[next].clone());
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &points[next]));
        }
    }
    centroids
}

/// Clusters `points` into `k` groups. Empty clusters are reseeded at the
/// point farthest from its centroid. Stops when assignments stop changing or
/// after `max_iter` update rounds.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> Result<KMeansResult> {
    let n = points.len();
    if k == 0 || k > n {
        bail!(Config, "k = {} needs 1 <= k <= {} points", k, n);
    }
    if max_iter == 0 {
        bail!(Config, "max_iter must be at least 1");
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        bail!(Shape, "points of unequal dimension");
    }
    let mut rng = math::rng(seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    let mut history = vec![inertia(points, &centroids, &assignments)];
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        // Update step.
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, a) in points.iter().zip(&assignments) {
            counts[*a] += 1;
            for (s, x) in sums[*a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .max_by(|i, j| {
                        let di = sq_dist(&points[*i], &centroids[assignments[*i]]);
                        let dj = sq_dist(&points[*j], &centroids[assignments[*j]]);
                        di.total_cmp(&dj).then(j.cmp(i))
                    })
                    .unwrap();
                centroids[c] = points[far].clone();
                counts[assignments[far]] -= 1;
                assignments[far] = c;
                counts[c] = 1;
            }
        }
        // Assignment step; keep the current centroid on ties.
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (best, d) = nearest(p, &centroids);
            if best != assignments[i] && d < sq_dist(p, &centroids[assignments[i]]) {
                assignments[i] = best;
                changed = true;
            }
        }
        history.push(inertia(points, &centroids, &assignments));
        if !changed {
            break;
        }
    }
    Ok(KMeansResult {
        assignments,
        centroids,
        inertia_history: history,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn well_separated_clouds() {
        let mut rng = math::rng(2);
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for c in 0..2 {
            let center = if c == 0 { 0.0 } else { 100.0 };
            for _ in 0..20 {
                pts.push(vec![center + rng.gen::<f64>() - 0.5, center + rng.gen::<f64>() - 0.5]);
                truth.push(c);
            }
        }
        let r = kmeans(&pts, 2, 9, 50).unwrap();
        let flip = r.assignments[0] != 0;
        for (a, t) in r.assignments.iter().zip(&truth) {
            assert_eq!(if flip { 1 - a } else { *a }, *t);
        }
    }

    #[test]
    fn k_equals_n_gives_zero_inertia() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let r = kmeans(&pts, 6, 1, 10).unwrap();
        assert_eq!(r.inertia(), 0.0);
    }

    #[test]
    fn k_larger_than_n_is_config_error() {
        let pts = vec![vec![0.0], vec![1.0]];
        assert!(matches!(kmeans(&pts, 3, 0, 5), Err(crate::Error::Config(_))));
    }

    #[test]
    fn inertia_never_increases() {
        let mut rng = math::rng(4);
        let pts: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.gen(), rng.gen(), rng.gen()]).collect();
        let r = kmeans(&pts, 7, 3, 100).unwrap();
        for w in r.inertia_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", r.inertia_history);
        }
    }
}
