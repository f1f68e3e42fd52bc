//! Property tests for the arithmetic invariants of the loss, the sampler,
//! the aggregation algebra, and the dataset container round trip.

use proptest::prelude::*;

use cfcl::clustering::ClusterResult;
use cfcl::data::{parse_idx, write_idx, IdxTensor, IDX_MAGIC_IMAGES, IDX_MAGIC_LABELS};
use cfcl::exchange::{build_sampling_plan, macro_probabilities, micro_probabilities};
use cfcl::federation::aggregate;
use cfcl::model::{triplet_loss, Activation, EncoderModel};

fn vec3() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, 3)
}

proptest! {
    #[test]
    fn triplet_loss_is_nonnegative_and_clamps(
        a in vec3(), p in vec3(), n in vec3(), m in 0.0f64..5.0
    ) {
        let d2 = |x: &[f64], y: &[f64]| -> f64 {
            x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum()
        };
        let loss = triplet_loss(&a, &p, &n, m).unwrap();
        prop_assert!(loss >= 0.0);
        if d2(&a, &n) >= d2(&a, &p) + m {
            prop_assert_eq!(loss, 0.0);
        } else {
            prop_assert!((loss - (d2(&a, &p) - d2(&a, &n) + m)).abs() < 1e-9);
        }
    }

    #[test]
    fn micro_probabilities_are_a_distribution_and_monotone(
        losses in prop::collection::vec(0.0f64..10.0, 2..12),
        lambda in 0.01f64..8.0
    ) {
        let probs = micro_probabilities(&losses, lambda);
        let total: f64 = probs.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for i in 0..losses.len() {
            for j in 0..losses.len() {
                if losses[i] > losses[j] {
                    prop_assert!(probs[i] > probs[j],
                        "loss {} > {} but prob {} <= {}", losses[i], losses[j], probs[i], probs[j]);
                }
            }
        }
    }

    #[test]
    fn macro_probability_decreases_in_push_count(
        approx in 1usize..50,
        push in 0usize..50,
        other_approx in 1usize..50,
        other_push in 0usize..50,
    ) {
        let base = macro_probabilities(&[(approx, push), (other_approx, other_push)]).unwrap();
        let bumped = macro_probabilities(&[(approx, push + 1), (other_approx, other_push)]).unwrap();
        prop_assert!(bumped[0] < base[0]);
        let total: f64 = base.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn composed_distribution_sums_to_one(
        assignments in prop::collection::vec(0usize..4, 8..24),
        losses_seed in 0u64..1000,
        lambda in 0.0f64..8.0,
        reserve_count in 1usize..6,
    ) {
        // Every cluster needs at least one candidate for a usable plan;
        // remap the first few assignments to guarantee it.
        let mut assignments = assignments;
        let candidate_count = assignments.len() - reserve_count.min(assignments.len() - 1);
        let reserve_count = assignments.len() - candidate_count;
        for c in 0..4 {
            if candidate_count > c {
                assignments[reserve_count + c] = c;
            }
        }
        let clusters = ClusterResult {
            centroids: vec![vec![0.0]; 4],
            assignments,
            inertia: 0.0,
        };
        let losses: Vec<f64> = (0..candidate_count)
            .map(|k| ((losses_seed + k as u64) % 97) as f64 / 10.0)
            .collect();
        let plan = build_sampling_plan(clusters, reserve_count, losses, lambda).unwrap();
        let total: f64 = plan.composed.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12, "total {}", total);
    }

    #[test]
    fn aggregation_of_identical_models_is_identity(
        w in -5.0f64..5.0, b in -5.0f64..5.0,
        weights in prop::collection::vec(0.1f64..10.0, 1..6)
    ) {
        let mut model = EncoderModel::zeros(&[1, 1], Activation::Relu);
        model.weights[0][0][0] = w;
        model.biases[0][0] = b;
        let models = vec![model.clone(); weights.len()];
        let merged = aggregate(&models, &weights).unwrap();
        prop_assert!((merged.weights[0][0][0] - w).abs() < 1e-12);
        prop_assert!((merged.biases[0][0] - b).abs() < 1e-12);
    }

    #[test]
    fn idx_round_trip_is_byte_exact(
        label_form in any::<bool>(),
        dims in prop::collection::vec(1u32..5, 3),
        seed in any::<u64>(),
    ) {
        let (magic, dims) = if label_form {
            (IDX_MAGIC_LABELS, vec![dims[0] * dims[1] * dims[2]])
        } else {
            (IDX_MAGIC_IMAGES, dims)
        };
        let count: u32 = dims.iter().product();
        let mut state = seed;
        let data: Vec<u8> = (0..count).map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 56) as u8
        }).collect();
        let tensor = IdxTensor { magic, dims, data };
        let bytes = write_idx(&tensor);
        let parsed = parse_idx(&bytes).unwrap();
        prop_assert_eq!(&parsed, &tensor);
        prop_assert_eq!(write_idx(&parsed), bytes);
    }
}
