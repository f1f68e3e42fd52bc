//! The push-pull data exchange protocol: reserve selection, dataset
//! approximation, macro/micro importance probabilities, and the composed
//! pull sampler.
//!
//! A pull between a receiver and a transmitter works on the union of the
//! receiver's pushed reserve and the transmitter's approximation set. The
//! union is embedded with the reference model and clustered; clusters rich
//! in candidates relative to reserve points get high macro probability, and
//! within a cluster candidates that are hard negatives for the reserve
//! anchors get high micro probability.

use rand::Rng;

use crate::clustering::{kmeans, nearest_points_to_centroids, ClusterResult};
use crate::data::Datapoint;
use crate::error::{Error, Result};
use crate::model::{augment, triplet_loss, AugmentationSpec, EncoderModel};

/// Datapoints pushed once from `owner` to `holder`, used by the holder only
/// to score pull candidates for the owner.
#[derive(Debug, Clone)]
pub struct ReserveStore {
    pub owner: usize,
    pub holder: usize,
    pub points: Vec<Datapoint>,
}

/// Full audit record of one pull: the cluster structure over the embedded
/// union and every probability that went into the draw.
#[derive(Debug, Clone)]
pub struct SamplingPlan {
    /// Clusters over the union embedding; reserve points occupy indices
    /// `0..reserve_count`, candidates follow.
    pub clusters: ClusterResult,
    pub reserve_count: usize,
    /// Per-cluster macro probability.
    pub macro_probs: Vec<f64>,
    /// Per-candidate within-cluster probability.
    pub micro_probs: Vec<f64>,
    /// Per-candidate composed probability (micro x macro); sums to one.
    pub composed: Vec<f64>,
    /// Indices of the candidates into the approximation set.
    pub candidate_ids: Vec<usize>,
    /// Per-candidate expected negative loss used by the micro step.
    pub expected_losses: Vec<f64>,
    /// Candidate indices drawn, in draw order.
    pub chosen: Vec<usize>,
}

impl SamplingPlan {
    /// Shannon entropy (nats) of the composed distribution.
    pub fn composed_entropy(&self) -> f64 {
        -self
            .composed
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    }

    /// Cluster index of candidate `k`.
    pub fn candidate_cluster(&self, k: usize) -> usize {
        self.clusters.assignments[self.reserve_count + k]
    }
}

const KMEANS_MAX_ITERS: usize = 100;
const KMEANS_TOL: f64 = 1e-6;

/// Selects reserve points by clustering the raw dataset and taking the
/// nearest actual datapoint to each centroid. Returned points are distinct
/// dataset members.
pub fn select_reserve(
    dataset: &[Datapoint],
    k_reserve: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Datapoint>> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("dataset"));
    }
    if k_reserve == 0 || k_reserve > dataset.len() {
        return Err(Error::InvalidClusterCount {
            k: k_reserve,
            n: dataset.len(),
        });
    }
    let raw: Vec<Vec<f64>> = dataset.iter().map(|d| d.values.clone()).collect();
    let result = kmeans(&raw, k_reserve, rng, KMEANS_MAX_ITERS, KMEANS_TOL)?;
    let indices = nearest_points_to_centroids(&raw, &result.centroids)?;
    Ok(indices.into_iter().map(|i| dataset[i].clone()).collect())
}

/// Uniform sample without replacement; the ablation baseline for
/// reserve selection.
pub fn select_reserve_random(
    dataset: &[Datapoint],
    k_reserve: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Datapoint>> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("dataset"));
    }
    if k_reserve == 0 || k_reserve > dataset.len() {
        return Err(Error::InvalidClusterCount {
            k: k_reserve,
            n: dataset.len(),
        });
    }
    Ok(sample_without_replacement(dataset, k_reserve, rng))
}

/// Uniform subsample of the current local dataset; the pull candidate pool,
/// recomputed at every aggregation. If the request exceeds the dataset, the
/// whole dataset is returned.
pub fn approximate_dataset(
    dataset: &[Datapoint],
    k_approx: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Datapoint>> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("dataset"));
    }
    if k_approx == 0 {
        return Err(Error::config("approx_size", "must be >= 1"));
    }
    Ok(sample_without_replacement(
        dataset,
        k_approx.min(dataset.len()),
        rng,
    ))
}

fn sample_without_replacement(
    dataset: &[Datapoint],
    take: usize,
    rng: &mut impl Rng,
) -> Vec<Datapoint> {
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    for k in 0..take {
        let j = rng.random_range(k..indices.len());
        indices.swap(k, j);
    }
    indices[..take].iter().map(|&i| dataset[i].clone()).collect()
}

/// Cluster-level sampling probabilities from per-cluster
/// `(candidate_count, reserve_count)` pairs.
///
/// Weight of a cluster is `candidates / (candidates + reserve)`; clusters
/// without candidates get weight zero and are never sampled. Weights are
/// normalized to sum to one.
pub fn macro_probabilities(counts: &[(usize, usize)]) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(Error::EmptyInput("cluster counts"));
    }
    let weights: Vec<f64> = counts
        .iter()
        .map(|&(approx, push)| {
            if approx == 0 {
                0.0
            } else {
                approx as f64 / (approx + push) as f64
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::EmptyInput("no cluster contains candidates"));
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

/// Mean triplet loss of `candidate` used as the negative against every
/// reserve anchor, one augmentation drawn per anchor.
pub fn expected_negative_loss(
    model: &EncoderModel,
    reserve: &[Datapoint],
    candidate: &[f64],
    margin: f64,
    specs: &[AugmentationSpec],
    rng: &mut impl Rng,
) -> Result<f64> {
    if reserve.is_empty() {
        return Err(Error::EmptyInput("reserve"));
    }
    let e_n = model.embed(candidate)?;
    let mut sum = 0.0;
    for anchor in reserve {
        let e_a = model.embed(&anchor.values)?;
        let positive = augment(&anchor.values, specs, rng)?;
        let e_p = model.embed(&positive)?;
        sum += triplet_loss(&e_a, &e_p, &e_n, margin)?;
    }
    Ok(sum / reserve.len() as f64)
}

/// Softmax over expected losses with selection temperature `lambda`,
/// computed with max-subtraction.
pub fn micro_probabilities(losses: &[f64], lambda: f64) -> Vec<f64> {
    if losses.is_empty() {
        return Vec::new();
    }
    let scaled: Vec<f64> = losses.iter().map(|&l| lambda * l).collect();
    let shift = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|&s| (s - shift).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / total).collect()
}

/// Builds the composed per-candidate distribution from a forced cluster
/// structure and per-candidate losses. `clusters` covers the union with
/// reserve points first; candidates are the remaining points in order.
pub fn build_sampling_plan(
    clusters: ClusterResult,
    reserve_count: usize,
    expected_losses: Vec<f64>,
    lambda: f64,
) -> Result<SamplingPlan> {
    let cluster_count = clusters.centroids.len();
    let candidate_count = clusters.assignments.len() - reserve_count;
    if expected_losses.len() != candidate_count {
        return Err(Error::DimensionMismatch {
            expected: candidate_count,
            got: expected_losses.len(),
        });
    }

    let mut counts = vec![(0usize, 0usize); cluster_count];
    for (idx, &c) in clusters.assignments.iter().enumerate() {
        if idx < reserve_count {
            counts[c].1 += 1;
        } else {
            counts[c].0 += 1;
        }
    }
    let macro_probs = macro_probabilities(&counts)?;

    let mut micro_probs = vec![0.0; candidate_count];
    for cluster in 0..cluster_count {
        let members: Vec<usize> = (0..candidate_count)
            .filter(|&k| clusters.assignments[reserve_count + k] == cluster)
            .collect();
        if members.is_empty() {
            continue;
        }
        let losses: Vec<f64> = members.iter().map(|&k| expected_losses[k]).collect();
        let probs = micro_probabilities(&losses, lambda);
        for (&k, &p) in members.iter().zip(&probs) {
            micro_probs[k] = p;
        }
    }

    let composed: Vec<f64> = (0..candidate_count)
        .map(|k| micro_probs[k] * macro_probs[clusters.assignments[reserve_count + k]])
        .collect();

    Ok(SamplingPlan {
        clusters,
        reserve_count,
        macro_probs,
        micro_probs,
        composed,
        candidate_ids: (0..candidate_count).collect(),
        expected_losses,
        chosen: Vec::new(),
    })
}

/// Draws `n` distinct candidate indices: sequential draws from the composed
/// distribution, renormalized over the remaining candidates after each pick.
pub fn sample_from_plan(plan: &mut SamplingPlan, n: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    let count = plan.composed.len();
    if n > count {
        return Err(Error::SampleTooLarge {
            requested: n,
            available: count,
        });
    }
    let mut weights = plan.composed.clone();
    let mut taken = vec![false; count];
    let mut chosen = Vec::with_capacity(n);
    for _ in 0..n {
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in weights.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                u -= w;
                if u <= 0.0 {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| {
                weights
                    .iter()
                    .rposition(|&w| w > 0.0)
                    .expect("total > 0 implies a positive weight")
            })
        } else {
            // Remaining mass is all zero; this cannot happen for plans built
            // here (softmax weights are positive) but hand-built plans may
            // contain zeros. Fall back to the lowest untaken index.
            taken
                .iter()
                .position(|&t| !t)
                .expect("n <= candidate count leaves an untaken index")
        };
        weights[pick] = 0.0;
        taken[pick] = true;
        chosen.push(pick);
    }
    plan.chosen = chosen.clone();
    Ok(chosen)
}

/// The pull function: embeds reserve and candidates, clusters the union,
/// composes macro and micro probabilities, and draws `budget` candidates
/// without replacement. Returns the pulled points plus the full plan.
#[allow(clippy::too_many_arguments)]
pub fn pull_sample(
    approx: &[Datapoint],
    reserve: &[Datapoint],
    model: &EncoderModel,
    budget: usize,
    lambda: f64,
    cluster_count: usize,
    margin: f64,
    specs: &[AugmentationSpec],
    rng: &mut impl Rng,
) -> Result<(Vec<Datapoint>, SamplingPlan)> {
    if reserve.is_empty() {
        return Err(Error::EmptyInput("reserve"));
    }
    if approx.is_empty() {
        return Err(Error::EmptyInput("approximation set"));
    }
    if budget > approx.len() {
        return Err(Error::SampleTooLarge {
            requested: budget,
            available: approx.len(),
        });
    }

    // Embed the union once: reserve first, then candidates.
    let mut embeddings = Vec::with_capacity(reserve.len() + approx.len());
    for p in reserve.iter().chain(approx.iter()) {
        embeddings.push(model.embed(&p.values)?);
    }
    let k = cluster_count.max(1).min(embeddings.len());
    let clusters = kmeans(&embeddings, k, rng, KMEANS_MAX_ITERS, KMEANS_TOL)?;

    // One augmentation per reserve anchor, shared by every candidate.
    let mut anchor_pairs = Vec::with_capacity(reserve.len());
    for (i, anchor) in reserve.iter().enumerate() {
        let e_a = embeddings[i].clone();
        let positive = augment(&anchor.values, specs, rng)?;
        let e_p = model.embed(&positive)?;
        anchor_pairs.push((e_a, e_p));
    }
    let expected_losses: Vec<f64> = (0..approx.len())
        .map(|kidx| {
            let e_n = &embeddings[reserve.len() + kidx];
            let sum: f64 = anchor_pairs
                .iter()
                .map(|(e_a, e_p)| triplet_loss(e_a, e_p, e_n, margin).unwrap())
                .sum();
            sum / reserve.len() as f64
        })
        .collect();

    let mut plan = build_sampling_plan(clusters, reserve.len(), expected_losses, lambda)?;
    let chosen = sample_from_plan(&mut plan, budget, rng)?;
    let points = chosen.iter().map(|&k| approx[k].clone()).collect();
    Ok((points, plan))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Activation;
    use crate::rng::{stream, Purpose};
    use std::collections::HashSet;

    fn datapoints(values: &[Vec<f64>]) -> Vec<Datapoint> {
        values
            .iter()
            .enumerate()
            .map(|(id, v)| Datapoint {
                id,
                values: v.clone(),
            })
            .collect()
    }

    fn grid_points(n: usize, dim: usize, seed: u64) -> Vec<Datapoint> {
        let mut rng = stream(seed, Purpose::Synth, 3, 0, 0);
        datapoints(
            &(0..n)
                .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect::<Vec<Vec<f64>>>(),
        )
    }

    #[test]
    fn reserve_full_dataset_returns_everything() {
        let data = grid_points(6, 2, 1);
        let mut rng = stream(1, Purpose::ReservePush, 0, 0, 0);
        let reserve = select_reserve(&data, 6, &mut rng).unwrap();
        let got: HashSet<usize> = reserve.iter().map(|d| d.id).collect();
        assert_eq!(got, (0..6).collect());
    }

    #[test]
    fn reserve_picks_one_point_per_tight_group() {
        let mut values = Vec::new();
        for g in 0..3 {
            for j in 0..4 {
                values.push(vec![10.0 * g as f64 + 0.01 * j as f64, 0.0]);
            }
        }
        let data = datapoints(&values);
        let mut rng = stream(2, Purpose::ReservePush, 0, 0, 0);
        let reserve = select_reserve(&data, 3, &mut rng).unwrap();
        let groups: HashSet<usize> = reserve.iter().map(|d| d.id / 4).collect();
        assert_eq!(groups.len(), 3);
    }

    #[test]
    fn reserve_covers_no_worse_than_random_on_average() {
        let coverage = |reserve: &[Datapoint], data: &[Datapoint]| -> f64 {
            data.iter()
                .map(|p| {
                    reserve
                        .iter()
                        .map(|r| crate::clustering::squared_distance(&p.values, &r.values))
                        .fold(f64::INFINITY, f64::min)
                        .sqrt()
                })
                .sum::<f64>()
                / data.len() as f64
        };
        let data = grid_points(60, 2, 4);
        let mut km_total = 0.0;
        let mut rand_total = 0.0;
        for s in 0..20u64 {
            let mut r1 = stream(s, Purpose::ReservePush, 0, 0, 0);
            let mut r2 = stream(s, Purpose::ReservePush, 1, 0, 0);
            km_total += coverage(&select_reserve(&data, 6, &mut r1).unwrap(), &data);
            rand_total += coverage(&select_reserve_random(&data, 6, &mut r2).unwrap(), &data);
        }
        assert!(
            km_total <= rand_total,
            "kmeans {km_total} vs random {rand_total}"
        );
    }

    #[test]
    fn random_reserve_is_uniform_and_deterministic() {
        let data = grid_points(10, 2, 5);
        let mut counts = vec![0usize; 10];
        let trials = 10_000;
        for s in 0..trials {
            let mut rng = stream(s as u64, Purpose::ReservePush, 2, 0, 0);
            for p in select_reserve_random(&data, 3, &mut rng).unwrap() {
                counts[p.id] += 1;
            }
        }
        for &c in &counts {
            let freq = c as f64 / trials as f64;
            assert!((freq - 0.3).abs() < 0.02, "inclusion frequency {freq}");
        }
        let mut a = stream(9, Purpose::ReservePush, 2, 0, 0);
        let mut b = stream(9, Purpose::ReservePush, 2, 0, 0);
        let x = select_reserve_random(&data, 4, &mut a).unwrap();
        let y = select_reserve_random(&data, 4, &mut b).unwrap();
        assert_eq!(
            x.iter().map(|p| p.id).collect::<Vec<_>>(),
            y.iter().map(|p| p.id).collect::<Vec<_>>()
        );
    }

    #[test]
    fn approximation_returns_whole_dataset_when_large() {
        let data = grid_points(5, 2, 6);
        let mut rng = stream(3, Purpose::Approx, 0, 0, 0);
        let approx = approximate_dataset(&data, 100, &mut rng).unwrap();
        assert_eq!(approx.len(), 5);
        let ids: HashSet<usize> = approx.iter().map(|p| p.id).collect();
        assert_eq!(ids, (0..5).collect());
    }

    #[test]
    fn approximation_inclusion_is_uniform() {
        let data = grid_points(8, 2, 7);
        let trials = 10_000;
        let mut counts = vec![0usize; 8];
        for s in 0..trials {
            let mut rng = stream(s as u64, Purpose::Approx, 1, 0, 0);
            for p in approximate_dataset(&data, 2, &mut rng).unwrap() {
                counts[p.id] += 1;
            }
        }
        for &c in &counts {
            let freq = c as f64 / trials as f64;
            assert!((freq - 0.25).abs() < 0.02, "inclusion frequency {freq}");
        }
    }

    #[test]
    fn macro_probability_unit_cases() {
        assert_eq!(macro_probabilities(&[(4, 2)]).unwrap(), vec![1.0]);
        let p = macro_probabilities(&[(3, 1), (1, 3)]).unwrap();
        assert!((p[0] - 0.75).abs() < 1e-15);
        assert!((p[1] - 0.25).abs() < 1e-15);
        let p = macro_probabilities(&[(0, 5), (2, 0)]).unwrap();
        assert_eq!(p, vec![0.0, 1.0]);
        assert!(macro_probabilities(&[(0, 5), (0, 1)]).is_err());
    }

    #[test]
    fn micro_probability_unit_cases() {
        let p = micro_probabilities(&[0.3, 0.9, 2.0], 0.0);
        for &v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = micro_probabilities(&[0.7, 0.7, 0.7, 0.7], 3.0);
        for &v in &p {
            assert!((v - 0.25).abs() < 1e-15);
        }
        let p = micro_probabilities(&[1.0, 0.0], 4.0f64.ln());
        assert!((p[0] - 0.8).abs() < 1e-12);
        assert!((p[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn micro_softmax_is_stable_for_large_inputs() {
        let p = micro_probabilities(&[800.0, 801.0], 1.0);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[1] > p[0]);
    }

    fn tiny_model(seed: u64) -> EncoderModel {
        let mut rng = stream(seed, Purpose::ModelInit, 0, 0, 0);
        EncoderModel::random(&[2, 4, 2], Activation::Relu, &mut rng)
    }

    #[test]
    fn expected_loss_single_anchor_equals_triplet_loss() {
        let model = tiny_model(1);
        let reserve = datapoints(&[vec![0.5, -0.5]]);
        let candidate = vec![1.0, 1.0];
        let specs = [AugmentationSpec::AdditiveGaussianNoise { sigma: 0.1 }];
        let margin = 1.0;

        let mut r1 = stream(4, Purpose::Pull, 0, 0, 0);
        let got = expected_negative_loss(&model, &reserve, &candidate, margin, &specs, &mut r1)
            .unwrap();

        let mut r2 = stream(4, Purpose::Pull, 0, 0, 0);
        let e_a = model.embed(&reserve[0].values).unwrap();
        let positive = augment(&reserve[0].values, &specs, &mut r2).unwrap();
        let e_p = model.embed(&positive).unwrap();
        let e_n = model.embed(&candidate).unwrap();
        let want = triplet_loss(&e_a, &e_p, &e_n, margin).unwrap();
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn expected_loss_zero_map_model_is_zero() {
        let model = EncoderModel::zeros(&[2, 3, 2], Activation::Relu);
        let reserve = grid_points(4, 2, 8);
        let specs = [AugmentationSpec::AdditiveGaussianNoise { sigma: 0.1 }];
        let mut rng = stream(5, Purpose::Pull, 0, 0, 0);
        let loss =
            expected_negative_loss(&model, &reserve, &[0.3, 0.3], 0.0, &specs, &mut rng).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn expected_loss_matches_naive_mean_oracle() {
        let model = tiny_model(2);
        let reserve = grid_points(7, 2, 9);
        let candidate = vec![0.2, -0.6];
        let specs = [
            AugmentationSpec::AdditiveGaussianNoise { sigma: 0.15 },
            AugmentationSpec::RandomUniformScaling { lo: 0.8, hi: 1.2 },
        ];
        let margin = 1.0;

        let mut r1 = stream(6, Purpose::Pull, 1, 0, 0);
        let got = expected_negative_loss(&model, &reserve, &candidate, margin, &specs, &mut r1)
            .unwrap();

        // Naive loop with the same rng stream.
        let mut r2 = stream(6, Purpose::Pull, 1, 0, 0);
        let e_n = model.embed(&candidate).unwrap();
        let mut total = 0.0;
        for anchor in &reserve {
            let e_a = model.embed(&anchor.values).unwrap();
            let positive = augment(&anchor.values, &specs, &mut r2).unwrap();
            let e_p = model.embed(&positive).unwrap();
            total += triplet_loss(&e_a, &e_p, &e_n, margin).unwrap();
        }
        let want = total / reserve.len() as f64;
        assert!((got - want).abs() < 1e-12);
    }

    fn forced_two_cluster_plan(lambda: f64) -> SamplingPlan {
        // Union of 2 reserve + 6 candidates in two hand-assigned clusters.
        // Cluster 0: reserve {0}, candidates {0,1,2}; cluster 1: reserve {1},
        // candidates {3,4,5}.
        let clusters = ClusterResult {
            centroids: vec![vec![0.0], vec![10.0]],
            assignments: vec![0, 1, 0, 0, 0, 1, 1, 1],
            inertia: 0.0,
        };
        let losses = vec![0.5, 1.0, 0.1, 2.0, 0.3, 0.3];
        build_sampling_plan(clusters, 2, losses, lambda).unwrap()
    }

    #[test]
    fn composed_probabilities_sum_to_one() {
        for lambda in [0.0, 0.7, 4.0] {
            let plan = forced_two_cluster_plan(lambda);
            let total: f64 = plan.composed.iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "lambda {lambda}: {total}");
        }
    }

    #[test]
    fn micro_is_monotone_in_loss_within_cluster() {
        let plan = forced_two_cluster_plan(2.5);
        // Cluster 0 candidates: losses 0.5, 1.0, 0.1.
        assert!(plan.micro_probs[1] > plan.micro_probs[0]);
        assert!(plan.micro_probs[0] > plan.micro_probs[2]);
    }

    #[test]
    fn macro_decreases_when_push_count_grows() {
        let base = macro_probabilities(&[(4, 1), (4, 1)]).unwrap();
        let bumped = macro_probabilities(&[(4, 3), (4, 1)]).unwrap();
        assert!(bumped[0] < base[0]);
        assert!(bumped[1] > base[1]);
    }

    #[test]
    fn pull_budget_equal_to_pool_returns_all_candidates() {
        let model = tiny_model(3);
        let approx = grid_points(5, 2, 10);
        let reserve = grid_points(3, 2, 11);
        let specs = [AugmentationSpec::AdditiveGaussianNoise { sigma: 0.1 }];
        let mut rng = stream(7, Purpose::Pull, 0, 0, 0);
        let (points, plan) =
            pull_sample(&approx, &reserve, &model, 5, 2.0, 2, 1.0, &specs, &mut rng).unwrap();
        let ids: HashSet<usize> = points.iter().map(|p| p.id).collect();
        assert_eq!(ids, approx.iter().map(|p| p.id).collect());
        assert_eq!(plan.chosen.len(), 5);
    }

    #[test]
    fn pull_never_returns_reserve_points() {
        // Reserve ids deliberately overlap candidate vector values but carry
        // distinct ids; pulled points must come from the approximation set.
        let model = tiny_model(4);
        let approx = grid_points(6, 2, 12);
        let mut reserve = grid_points(4, 2, 13);
        for (k, r) in reserve.iter_mut().enumerate() {
            r.id = 100 + k;
        }
        let specs = [AugmentationSpec::AdditiveGaussianNoise { sigma: 0.1 }];
        for s in 0..10u64 {
            let mut rng = stream(s, Purpose::Pull, 1, 0, 0);
            let (points, _) =
                pull_sample(&approx, &reserve, &model, 3, 1.0, 3, 1.0, &specs, &mut rng).unwrap();
            for p in &points {
                assert!(p.id < 100, "reserve point {} leaked into pull", p.id);
            }
        }
    }

    #[test]
    fn pull_is_deterministic_per_seed() {
        let model = tiny_model(5);
        let approx = grid_points(8, 2, 14);
        let reserve = grid_points(3, 2, 15);
        let specs = [AugmentationSpec::AdditiveGaussianNoise { sigma: 0.1 }];
        let run = || {
            let mut rng = stream(11, Purpose::Pull, 2, 0, 0);
            pull_sample(&approx, &reserve, &model, 4, 3.0, 2, 1.0, &specs, &mut rng).unwrap()
        };
        let (p1, plan1) = run();
        let (p2, plan2) = run();
        assert_eq!(
            p1.iter().map(|p| p.id).collect::<Vec<_>>(),
            p2.iter().map(|p| p.id).collect::<Vec<_>>()
        );
        assert_eq!(plan1.composed, plan2.composed);
        assert_eq!(plan1.chosen, plan2.chosen);
    }

    #[test]
    fn pull_single_cluster_zero_lambda_is_uniform() {
        let model = tiny_model(6);
        let approx = grid_points(5, 2, 16);
        let reserve = grid_points(2, 2, 17);
        let specs = [AugmentationSpec::AdditiveGaussianNoise { sigma: 0.1 }];
        let trials = 20_000;
        let mut counts = vec![0usize; 5];
        for s in 0..trials {
            let mut rng = stream(s as u64, Purpose::Pull, 3, 0, 0);
            let (points, _) =
                pull_sample(&approx, &reserve, &model, 1, 0.0, 1, 1.0, &specs, &mut rng).unwrap();
            counts[points[0].id] += 1;
        }
        for &c in &counts {
            let freq = c as f64 / trials as f64;
            assert!((freq - 0.2).abs() < 0.015, "frequency {freq}");
        }
    }

    #[test]
    fn pull_rejects_oversized_budget_and_empty_reserve() {
        let model = tiny_model(7);
        let approx = grid_points(4, 2, 18);
        let reserve = grid_points(2, 2, 19);
        let specs = [AugmentationSpec::AdditiveGaussianNoise { sigma: 0.1 }];
        let mut rng = stream(12, Purpose::Pull, 0, 0, 0);
        assert!(matches!(
            pull_sample(&approx, &reserve, &model, 5, 1.0, 2, 1.0, &specs, &mut rng),
            Err(Error::SampleTooLarge { .. })
        ));
        assert!(matches!(
            pull_sample(&approx, &[], &model, 2, 1.0, 2, 1.0, &specs, &mut rng),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn single_draw_marginals_match_composed_exactly() {
        let plan_template = forced_two_cluster_plan(1.5);
        let trials = 100_000;
        let mut counts = vec![0usize; 6];
        for s in 0..trials {
            let mut plan = plan_template.clone();
            let mut rng = stream(s as u64, Purpose::Pull, 4, 0, 0);
            let chosen = sample_from_plan(&mut plan, 1, &mut rng).unwrap();
            counts[chosen[0]] += 1;
        }
        for (k, &c) in counts.iter().enumerate() {
            let freq = c as f64 / trials as f64;
            assert!(
                (freq - plan_template.composed[k]).abs() < 0.01,
                "candidate {k}: freq {freq} vs composed {}",
                plan_template.composed[k]
            );
        }
    }

    #[test]
    fn entropy_of_uniform_plan() {
        let clusters = ClusterResult {
            centroids: vec![vec![0.0]],
            assignments: vec![0, 0, 0, 0, 0],
            inertia: 0.0,
        };
        let plan = build_sampling_plan(clusters, 1, vec![1.0; 4], 0.0).unwrap();
        assert!((plan.composed_entropy() - 4.0f64.ln()).abs() < 1e-12);
    }
}
