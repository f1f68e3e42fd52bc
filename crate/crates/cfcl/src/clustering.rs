//! K-means++ seeding and Lloyd iterations over raw vectors, plus
//! centroid-nearest point selection.
//!
//! Distances are squared Euclidean throughout. All routines are
//! deterministic for a fixed RNG; assignment ties break toward the lowest
//! centroid index.

use rand::Rng;

use crate::error::{Error, Result};

/// Outcome of a clustering run.
#[derive(Debug, Clone)]
pub struct ClusterResult {
    pub centroids: Vec<Vec<f64>>,
    /// Per-point index of the nearest centroid.
    pub assignments: Vec<usize>,
    /// Sum of squared distances from each point to its assigned centroid.
    pub inertia: f64,
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest_centroid(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = squared_distance(point, &centroids[0]);
    for (k, c) in centroids.iter().enumerate().skip(1) {
        let d = squared_distance(point, c);
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    (best, best_d)
}

/// Extends a partially chosen centroid set to `k` centroids using the
/// squared-distance weighting. Exposed so seeding behaviour can be tested
/// with a forced first pick.
pub fn kmeanspp_extend(
    points: &[Vec<f64>],
    mut centroids: Vec<Vec<f64>>,
    k: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<f64>>> {
    if points.is_empty() {
        return Err(Error::EmptyInput("points"));
    }
    if k > points.len() {
        return Err(Error::InvalidClusterCount {
            k,
            n: points.len(),
        });
    }
    while centroids.len() < k {
        let weights: Vec<f64> = points
            .iter()
            .map(|p| nearest_centroid(p, &centroids).1)
            .collect();
        let total: f64 = weights.iter().sum();
        let next = if total > 0.0 {
            // Inverse-CDF draw over the D^2 weights.
            let mut u = rng.random::<f64>() * total;
            let mut chosen = weights.len() - 1;
            for (i, &w) in weights.iter().enumerate() {
                u -= w;
                if u <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // All remaining points coincide with chosen centroids; fall back
            // to a uniform draw among points not yet selected.
            let remaining: Vec<usize> = (0..points.len())
                .filter(|&i| !centroids.iter().any(|c| c == &points[i]))
                .collect();
            if remaining.is_empty() {
                rng.random_range(0..points.len())
            } else {
                remaining[rng.random_range(0..remaining.len())]
            }
        };
        centroids.push(points[next].clone());
    }
    Ok(centroids)
}

/// Standard seeding: first centroid uniform over the points, each subsequent
/// one drawn with probability proportional to the squared distance to the
/// nearest already-chosen centroid.
pub fn kmeanspp_seed(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Result<Vec<Vec<f64>>> {
    if points.is_empty() {
        return Err(Error::EmptyInput("points"));
    }
    if k == 0 || k > points.len() {
        return Err(Error::InvalidClusterCount {
            k,
            n: points.len(),
        });
    }
    let first = points[rng.random_range(0..points.len())].clone();
    kmeanspp_extend(points, vec![first], k, rng)
}

/// Lloyd iterations from a k-means++ seed until the maximum centroid
/// movement falls below `tol` or `max_iters` is reached.
pub fn kmeans(
    points: &[Vec<f64>],
    k: usize,
    rng: &mut impl Rng,
    max_iters: usize,
    tol: f64,
) -> Result<ClusterResult> {
    let mut centroids = kmeanspp_seed(points, k, rng)?;
    let mut assignments = vec![0usize; points.len()];
    let mut inertia = f64::INFINITY;

    for _ in 0..max_iters {
        let mut new_inertia = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (a, d) = nearest_centroid(p, &centroids);
            assignments[i] = a;
            new_inertia += d;
        }

        // Repair empty clusters by promoting the point currently farthest
        // from its centroid, which keeps k fixed and cannot raise inertia.
        let mut sizes = vec![0usize; k];
        for &a in &assignments {
            sizes[a] += 1;
        }
        let mut repaired = false;
        for empty in 0..k {
            if sizes[empty] > 0 {
                continue;
            }
            let mut far_idx = None;
            let mut far_d = -1.0;
            for (i, p) in points.iter().enumerate() {
                if sizes[assignments[i]] <= 1 {
                    continue;
                }
                let d = squared_distance(p, &centroids[assignments[i]]);
                if d > far_d {
                    far_d = d;
                    far_idx = Some(i);
                }
            }
            if let Some(i) = far_idx {
                centroids[empty] = points[i].clone();
                sizes[assignments[i]] -= 1;
                assignments[i] = empty;
                sizes[empty] = 1;
                repaired = true;
            }
        }
        if repaired {
            new_inertia = points
                .iter()
                .zip(&assignments)
                .map(|(p, &a)| squared_distance(p, &centroids[a]))
                .sum();
        }
        debug_assert!(
            new_inertia <= inertia + 1e-9,
            "inertia rose: {inertia} -> {new_inertia}"
        );
        inertia = new_inertia;

        // Mean update.
        let mut sums = vec![vec![0.0; points[0].len()]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut movement = 0.0f64;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            for s in &mut sums[c] {
                *s /= counts[c] as f64;
            }
            movement = movement.max(squared_distance(&sums[c], &centroids[c]).sqrt());
            centroids[c] = sums[c].clone();
        }
        if movement < tol {
            break;
        }
    }

    // Final assignment against the converged centroids.
    let mut final_inertia = 0.0;
    for (i, p) in points.iter().enumerate() {
        let (a, d) = nearest_centroid(p, &centroids);
        assignments[i] = a;
        final_inertia += d;
    }
    Ok(ClusterResult {
        centroids,
        assignments,
        inertia: final_inertia,
    })
}

/// For each centroid, the index of the nearest point. Ties break toward the
/// lowest index; a point already claimed by an earlier centroid is skipped
/// in favour of the next-nearest unused point.
pub fn nearest_points_to_centroids(
    points: &[Vec<f64>],
    centroids: &[Vec<f64>],
) -> Result<Vec<usize>> {
    if points.is_empty() || centroids.is_empty() {
        return Err(Error::EmptyInput("points or centroids"));
    }
    if centroids.len() > points.len() {
        return Err(Error::InvalidClusterCount {
            k: centroids.len(),
            n: points.len(),
        });
    }
    let mut used = vec![false; points.len()];
    let mut result = Vec::with_capacity(centroids.len());
    for c in centroids {
        let mut best = None;
        let mut best_d = f64::INFINITY;
        for (i, p) in points.iter().enumerate() {
            if used[i] {
                continue;
            }
            let d = squared_distance(p, c);
            if d < best_d {
                best_d = d;
                best = Some(i);
            }
        }
        let i = best.expect("fewer centroids than points, so one must be free");
        used[i] = true;
        result.push(i);
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use std::collections::HashSet;

    #[test]
    fn seeding_with_k_equal_n_returns_all_points() {
        let points: Vec<Vec<f64>> = vec![vec![0.0], vec![1.0], vec![5.0], vec![9.0]];
        let mut rng = stream(1, Purpose::ReservePush, 0, 0, 0);
        let seeds = kmeanspp_seed(&points, 4, &mut rng).unwrap();
        let got: HashSet<u64> = seeds.iter().map(|c| c[0].to_bits()).collect();
        assert_eq!(got.len(), 4);
    }

    #[test]
    fn seeding_law_on_three_point_line() {
        // Points {0, 1, 10}, first centroid forced to 0: the second pick is
        // 10 with probability 100/101.
        let points = vec![vec![0.0], vec![1.0], vec![10.0]];
        let mut hits = 0usize;
        let trials = 20_000;
        for s in 0..trials {
            let mut rng = stream(s as u64, Purpose::ReservePush, 1, 0, 0);
            let c = kmeanspp_extend(&points, vec![vec![0.0]], 2, &mut rng).unwrap();
            if c[1][0] == 10.0 {
                hits += 1;
            }
        }
        let freq = hits as f64 / trials as f64;
        assert!((freq - 100.0 / 101.0).abs() < 0.02, "freq {freq}");
    }

    #[test]
    fn seeding_distribution_matches_enumeration_oracle() {
        // First pick uniform; enumerate all (first, second) combinations to
        // get the exact marginal of the chosen pair set.
        let points = vec![vec![0.0], vec![1.0], vec![10.0]];
        // Exact P(second = j | first = i) ∝ d(i,j)^2.
        let d2 = |a: usize, b: usize| {
            let v = points[a][0] - points[b][0];
            v * v
        };
        let mut exact = vec![vec![0.0; 3]; 3];
        for i in 0..3 {
            let total: f64 = (0..3).map(|j| d2(i, j)).sum();
            for j in 0..3 {
                exact[i][j] = d2(i, j) / total / 3.0; // joint with uniform first pick
            }
        }
        let trials = 100_000;
        let mut counts = vec![vec![0usize; 3]; 3];
        for s in 0..trials {
            let mut rng = stream(s as u64, Purpose::ReservePush, 2, 0, 0);
            let c = kmeanspp_seed(&points, 2, &mut rng).unwrap();
            let idx = |v: &Vec<f64>| points.iter().position(|p| p == v).unwrap();
            counts[idx(&c[0])][idx(&c[1])] += 1;
        }
        for i in 0..3 {
            for j in 0..3 {
                let freq = counts[i][j] as f64 / trials as f64;
                assert!(
                    (freq - exact[i][j]).abs() < 0.02,
                    "pair ({i},{j}): freq {freq} vs exact {}",
                    exact[i][j]
                );
            }
        }
    }

    #[test]
    fn kmeans_single_cluster_is_mean() {
        let points = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 0.0]];
        let mut rng = stream(2, Purpose::ReservePush, 0, 0, 0);
        let res = kmeans(&points, 1, &mut rng, 100, 1e-9).unwrap();
        assert!((res.centroids[0][0] - 3.0).abs() < 1e-12);
        assert!((res.centroids[0][1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn kmeans_separated_pairs_partition_exactly() {
        let points = vec![
            vec![0.0, 0.0],
            vec![0.1, 0.0],
            vec![10.0, 10.0],
            vec![10.1, 10.0],
        ];
        let mut rng = stream(3, Purpose::ReservePush, 0, 0, 0);
        let res = kmeans(&points, 2, &mut rng, 100, 1e-9).unwrap();
        assert_eq!(res.assignments[0], res.assignments[1]);
        assert_eq!(res.assignments[2], res.assignments[3]);
        assert_ne!(res.assignments[0], res.assignments[2]);
    }

    /// Exhaustively enumerates all 2-partitions of the points and returns the
    /// optimal inertia.
    fn brute_force_best_inertia(points: &[Vec<f64>]) -> f64 {
        let n = points.len();
        let mut best = f64::INFINITY;
        for mask in 1..(1u32 << n) - 1 {
            let mut groups: [Vec<&Vec<f64>>; 2] = [Vec::new(), Vec::new()];
            for (i, p) in points.iter().enumerate() {
                groups[((mask >> i) & 1) as usize].push(p);
            }
            let mut inertia = 0.0;
            for g in &groups {
                if g.is_empty() {
                    continue;
                }
                let dim = g[0].len();
                let mut mean = vec![0.0; dim];
                for p in g {
                    for (m, v) in mean.iter_mut().zip(p.iter()) {
                        *m += v;
                    }
                }
                for m in &mut mean {
                    *m /= g.len() as f64;
                }
                for p in g {
                    inertia += squared_distance(p, &mean);
                }
            }
            best = best.min(inertia);
        }
        best
    }

    #[test]
    fn kmeans_inertia_near_brute_force_optimum() {
        let mut grng = stream(4, Purpose::Synth, 0, 0, 0);
        let points: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..2).map(|_| grng.random_range(-1.0..1.0)).collect())
            .collect();
        let optimum = brute_force_best_inertia(&points);
        let mut best = f64::INFINITY;
        for restart in 0..20u64 {
            let mut rng = stream(4, Purpose::ReservePush, restart, 0, 0);
            let res = kmeans(&points, 2, &mut rng, 100, 1e-9).unwrap();
            best = best.min(res.inertia);
        }
        assert!(
            best <= optimum * 1.05 + 1e-12,
            "best {best}, optimum {optimum}"
        );
    }

    #[test]
    fn kmeans_deterministic_for_fixed_seed() {
        let mut grng = stream(5, Purpose::Synth, 0, 0, 0);
        let points: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..3).map(|_| grng.random_range(-1.0..1.0)).collect())
            .collect();
        let mut r1 = stream(5, Purpose::ReservePush, 0, 0, 0);
        let mut r2 = stream(5, Purpose::ReservePush, 0, 0, 0);
        let a = kmeans(&points, 4, &mut r1, 100, 1e-9).unwrap();
        let b = kmeans(&points, 4, &mut r2, 100, 1e-9).unwrap();
        assert_eq!(a.assignments, b.assignments);
        assert_eq!(a.centroids, b.centroids);
    }

    #[test]
    fn kmeans_assignments_are_nearest_at_convergence() {
        let mut grng = stream(6, Purpose::Synth, 0, 0, 0);
        let points: Vec<Vec<f64>> = (0..25)
            .map(|_| (0..2).map(|_| grng.random_range(-2.0..2.0)).collect())
            .collect();
        let mut rng = stream(6, Purpose::ReservePush, 0, 0, 0);
        let res = kmeans(&points, 3, &mut rng, 100, 1e-9).unwrap();
        for (p, &a) in points.iter().zip(&res.assignments) {
            let (nearest, _) = nearest_centroid(p, &res.centroids);
            assert_eq!(a, nearest);
        }
    }

    #[test]
    fn nearest_points_identity_when_centroids_are_points() {
        let points = vec![vec![0.0], vec![2.0], vec![4.0], vec![6.0]];
        let centroids = vec![vec![4.0], vec![0.0]];
        let idx = nearest_points_to_centroids(&points, &centroids).unwrap();
        assert_eq!(idx, vec![2, 0]);
    }

    #[test]
    fn nearest_points_tie_breaks_to_lowest_index() {
        // Centroid at 3.5 is equidistant to points at index 2 (3.0) and 5 (4.0).
        let points = vec![
            vec![-10.0],
            vec![-9.0],
            vec![3.0],
            vec![20.0],
            vec![30.0],
            vec![4.0],
        ];
        let idx = nearest_points_to_centroids(&points, &[vec![3.5]]).unwrap();
        assert_eq!(idx, vec![2]);
    }

    #[test]
    fn nearest_points_deduplicates_with_fallback() {
        let points = vec![vec![0.0], vec![1.0], vec![10.0]];
        // Both centroids nearest to point 0; the second falls back to point 1.
        let idx = nearest_points_to_centroids(&points, &[vec![0.0], vec![0.1]]).unwrap();
        assert_eq!(idx, vec![0, 1]);
    }

    #[test]
    fn nearest_points_matches_linear_scan_oracle() {
        let mut grng = stream(7, Purpose::Synth, 0, 0, 0);
        let points: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..3).map(|_| grng.random_range(-1.0..1.0)).collect())
            .collect();
        let centroids: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| grng.random_range(-1.0..1.0)).collect())
            .collect();
        let got = nearest_points_to_centroids(&points, &centroids).unwrap();

        // Oracle: same greedy scheme written as a plain double loop.
        let mut used = vec![false; points.len()];
        for (c, &g) in centroids.iter().zip(&got) {
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for (i, p) in points.iter().enumerate() {
                if used[i] {
                    continue;
                }
                let d = squared_distance(p, c);
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            used[best] = true;
            assert_eq!(g, best);
        }
    }

    #[test]
    fn more_centroids_than_points_is_error() {
        let points = vec![vec![0.0]];
        let centroids = vec![vec![0.0], vec![1.0]];
        assert!(nearest_points_to_centroids(&points, &centroids).is_err());
        let mut rng = stream(8, Purpose::ReservePush, 0, 0, 0);
        assert!(kmeanspp_seed(&points, 2, &mut rng).is_err());
    }

    #[test]
    fn inertia_history_is_monotone() {
        // Track inertia across iterations by running with increasing caps.
        let mut grng = stream(9, Purpose::Synth, 0, 0, 0);
        let points: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..2).map(|_| grng.random_range(-3.0..3.0)).collect())
            .collect();
        let mut prev = f64::INFINITY;
        for iters in 1..12 {
            let mut rng = stream(9, Purpose::ReservePush, 0, 0, 0);
            let res = kmeans(&points, 3, &mut rng, iters, 0.0).unwrap();
            assert!(res.inertia <= prev + 1e-9, "iters {iters}: {} > {prev}", res.inertia);
            prev = res.inertia;
        }
    }
}
