//! Evaluation machinery: the linear probe over frozen embeddings, the
//! label-count variance diagnostic, and the transmission-delay model.

use rand::Rng;

use crate::error::{Error, Result};
use crate::federation::RunHistory;

/// Linear probe hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct ProbeParams {
    pub iters: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for ProbeParams {
    fn default() -> Self {
        Self {
            iters: 1000,
            learning_rate: 0.1,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeResult {
    pub accuracy: f64,
    pub iters: usize,
}

/// Trains a linear softmax classifier on frozen embeddings with mini-batch
/// SGD and cross-entropy, and reports test accuracy. The encoder that
/// produced the embeddings is never touched.
pub fn linear_probe(
    train_embeddings: &[Vec<f64>],
    train_labels: &[usize],
    test_embeddings: &[Vec<f64>],
    test_labels: &[usize],
    class_count: usize,
    params: ProbeParams,
    rng: &mut impl Rng,
) -> Result<ProbeResult> {
    if train_embeddings.len() != train_labels.len() {
        return Err(Error::DimensionMismatch {
            expected: train_embeddings.len(),
            got: train_labels.len(),
        });
    }
    if test_embeddings.len() != test_labels.len() {
        return Err(Error::DimensionMismatch {
            expected: test_embeddings.len(),
            got: test_labels.len(),
        });
    }
    if train_embeddings.is_empty() || test_embeddings.is_empty() {
        return Err(Error::EmptyInput("probe embeddings"));
    }
    let dim = train_embeddings[0].len();

    let mut weights = vec![vec![0.0f64; dim]; class_count];
    let mut biases = vec![0.0f64; class_count];
    let mut logits = vec![0.0f64; class_count];

    for _ in 0..params.iters {
        let mut grad_w = vec![vec![0.0f64; dim]; class_count];
        let mut grad_b = vec![0.0f64; class_count];
        let batch = params.batch_size.min(train_embeddings.len());
        for _ in 0..batch {
            let i = rng.random_range(0..train_embeddings.len());
            let x = &train_embeddings[i];
            let y = train_labels[i];
            for (c, row) in weights.iter().enumerate() {
                logits[c] = biases[c] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            }
            let shift = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for l in logits.iter_mut() {
                *l = (*l - shift).exp();
                total += *l;
            }
            for (c, &p) in logits.iter().enumerate() {
                let err = p / total - f64::from(u8::from(c == y));
                grad_b[c] += err;
                for (g, v) in grad_w[c].iter_mut().zip(x) {
                    *g += err * v;
                }
            }
        }
        let step = params.learning_rate / batch as f64;
        for (row, grow) in weights.iter_mut().zip(&grad_w) {
            for (w, g) in row.iter_mut().zip(grow) {
                *w -= step * g;
            }
        }
        for (b, g) in biases.iter_mut().zip(&grad_b) {
            *b -= step * g;
        }
    }

    let mut correct = 0usize;
    for (x, &y) in test_embeddings.iter().zip(test_labels) {
        let mut best = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for (c, row) in weights.iter().enumerate() {
            let score = biases[c] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            if score > best_score {
                best_score = score;
                best = c;
            }
        }
        if best == y {
            correct += 1;
        }
    }
    Ok(ProbeResult {
        accuracy: correct as f64 / test_labels.len() as f64,
        iters: params.iters,
    })
}

/// Per-label occurrence counts over the full label universe.
pub fn label_counts(labels: &[usize], class_count: usize) -> Vec<usize> {
    let mut counts = vec![0usize; class_count];
    for &l in labels {
        counts[l] += 1;
    }
    counts
}

/// Population variance of a count vector.
pub fn population_variance(counts: &[usize]) -> f64 {
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<usize>() as f64 / n;
    counts
        .iter()
        .map(|&c| {
            let d = c as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n
}

/// Per-device population variance of label counts plus the network mean.
/// Labels here are harness-side shadows of the devices' training sets; the
/// protocol itself never sees them.
pub fn label_count_variance(
    per_device_labels: &[Vec<usize>],
    class_count: usize,
) -> Result<(Vec<f64>, f64)> {
    if per_device_labels.is_empty() {
        return Err(Error::EmptyInput("device list"));
    }
    let mut per_device = Vec::with_capacity(per_device_labels.len());
    for labels in per_device_labels {
        if labels.is_empty() {
            return Err(Error::EmptyInput("device training set"));
        }
        per_device.push(population_variance(&label_counts(labels, class_count)));
    }
    let mean = per_device.iter().sum::<f64>() / per_device.len() as f64;
    Ok((per_device, mean))
}

/// Constants of the transmission-delay model.
#[derive(Debug, Clone, Copy)]
pub struct DelayParams {
    pub rate_bits_per_sec: f64,
    pub model_bits_per_param: f64,
    pub data_bits_per_element: f64,
    pub param_count: usize,
    pub elements_per_datapoint: usize,
}

impl DelayParams {
    pub fn validate(&self) -> Result<()> {
        if self.rate_bits_per_sec <= 0.0
            || self.model_bits_per_param <= 0.0
            || self.data_bits_per_element <= 0.0
            || self.param_count == 0
            || self.elements_per_datapoint == 0
        {
            return Err(Error::config("delay", "all delay parameters must be positive"));
        }
        Ok(())
    }
}

/// Pure transmission delay in seconds for the given transfer counts.
pub fn transmission_delay(model_uplinks: usize, datapoints: usize, params: &DelayParams) -> f64 {
    let model_bits = model_uplinks as f64 * params.param_count as f64 * params.model_bits_per_param;
    let data_bits =
        datapoints as f64 * params.elements_per_datapoint as f64 * params.data_bits_per_element;
    (model_bits + data_bits) / params.rate_bits_per_sec
}

/// How per-event computation overhead enters the total delay.
#[derive(Debug, Clone, Copy)]
pub enum OverheadModel {
    /// Transmission only; matches the closed-form arithmetic.
    None,
    /// Adds the wall-clock seconds measured during the run's pull events.
    Measured,
    /// Adds a fixed number of seconds per pull event.
    FixedPerEvent(f64),
}

/// Total delay of a run: uplink model transfers plus D2D datapoint
/// transfers, plus the configured computation overhead.
pub fn delay_of_run(history: &RunHistory, params: &DelayParams, overhead: OverheadModel) -> f64 {
    let base = transmission_delay(history.model_uplinks, history.datapoints_exchanged, params);
    let extra = match overhead {
        OverheadModel::None => 0.0,
        OverheadModel::Measured => history.exchange_compute_seconds.iter().sum(),
        OverheadModel::FixedPerEvent(s) => s * history.exchange_compute_seconds.len() as f64,
    };
    base + extra
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    #[test]
    fn constant_embeddings_probe_at_chance() {
        let train: Vec<Vec<f64>> = vec![vec![1.0, 1.0]; 40];
        let train_labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let test: Vec<Vec<f64>> = vec![vec![1.0, 1.0]; 40];
        let test_labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let mut rng = stream(1, Purpose::Probe, 0, 0, 0);
        let res = linear_probe(
            &train,
            &train_labels,
            &test,
            &test_labels,
            2,
            ProbeParams::default(),
            &mut rng,
        )
        .unwrap();
        assert!((res.accuracy - 0.5).abs() <= 0.05, "accuracy {}", res.accuracy);
    }

    #[test]
    fn one_hot_embeddings_probe_near_perfectly() {
        let class_count = 4;
        let one_hot = |c: usize| {
            let mut v = vec![0.0; class_count];
            v[c] = 1.0;
            v
        };
        let labels: Vec<usize> = (0..80).map(|i| i % class_count).collect();
        let embeddings: Vec<Vec<f64>> = labels.iter().map(|&c| one_hot(c)).collect();
        let mut rng = stream(2, Purpose::Probe, 0, 0, 0);
        let res = linear_probe(
            &embeddings,
            &labels,
            &embeddings,
            &labels,
            class_count,
            ProbeParams::default(),
            &mut rng,
        )
        .unwrap();
        assert!(res.accuracy >= 0.99, "accuracy {}", res.accuracy);
    }

    /// Full-batch gradient-descent logistic regression, written without any
    /// of the probe machinery.
    fn logistic_oracle_accuracy(
        train: &[Vec<f64>],
        train_labels: &[usize],
        test: &[Vec<f64>],
        test_labels: &[usize],
    ) -> f64 {
        let dim = train[0].len();
        let mut w = vec![0.0f64; dim];
        let mut b = 0.0f64;
        for _ in 0..2000 {
            let mut gw = vec![0.0f64; dim];
            let mut gb = 0.0f64;
            for (x, &y) in train.iter().zip(train_labels) {
                let z: f64 = b + w.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>();
                let p = 1.0 / (1.0 + (-z).exp());
                let err = p - y as f64;
                gb += err;
                for (g, xi) in gw.iter_mut().zip(x) {
                    *g += err * xi;
                }
            }
            let step = 0.5 / train.len() as f64;
            b -= step * gb;
            for (wi, g) in w.iter_mut().zip(&gw) {
                *wi -= step * g;
            }
        }
        let mut correct = 0;
        for (x, &y) in test.iter().zip(test_labels) {
            let z: f64 = b + w.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>();
            if usize::from(z > 0.0) == y {
                correct += 1;
            }
        }
        correct as f64 / test.len() as f64
    }

    #[test]
    fn probe_matches_logistic_oracle_on_separable_blobs() {
        let mut rng = stream(3, Purpose::Probe, 0, 0, 0);
        let make = |n: usize, cx: f64, cy: f64, rng: &mut rand_chacha::ChaCha8Rng| {
            (0..n)
                .map(|_| {
                    vec![
                        cx + rng.random_range(-0.5..0.5),
                        cy + rng.random_range(-0.5..0.5),
                    ]
                })
                .collect::<Vec<Vec<f64>>>()
        };
        let mut train = make(60, -2.0, 0.0, &mut rng);
        train.extend(make(60, 2.0, 0.5, &mut rng));
        let train_labels: Vec<usize> = (0..120).map(|i| usize::from(i >= 60)).collect();
        let mut test = make(40, -2.0, 0.0, &mut rng);
        test.extend(make(40, 2.0, 0.5, &mut rng));
        let test_labels: Vec<usize> = (0..80).map(|i| usize::from(i >= 40)).collect();

        let oracle = logistic_oracle_accuracy(&train, &train_labels, &test, &test_labels);
        let mut prng = stream(3, Purpose::Probe, 1, 0, 0);
        let res = linear_probe(
            &train,
            &train_labels,
            &test,
            &test_labels,
            2,
            ProbeParams::default(),
            &mut prng,
        )
        .unwrap();
        assert!(
            (res.accuracy - oracle).abs() <= 0.02,
            "probe {} vs oracle {oracle}",
            res.accuracy
        );
    }

    #[test]
    fn probe_is_deterministic_and_leaves_models_alone() {
        use crate::model::{Activation, EncoderModel};
        let mut mrng = stream(4, Purpose::ModelInit, 0, 0, 0);
        let model = EncoderModel::random(&[3, 4, 2], Activation::Relu, &mut mrng);
        let checksum = model.param_checksum();

        let points: Vec<Vec<f64>> = (0..30)
            .map(|i| vec![i as f64 / 30.0, (i % 3) as f64, 1.0])
            .collect();
        let embeddings: Vec<Vec<f64>> = points.iter().map(|p| model.embed(p).unwrap()).collect();
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();

        let run = || {
            let mut rng = stream(4, Purpose::Probe, 7, 0, 0);
            linear_probe(
                &embeddings,
                &labels,
                &embeddings,
                &labels,
                3,
                ProbeParams {
                    iters: 200,
                    ..ProbeParams::default()
                },
                &mut rng,
            )
            .unwrap()
        };
        assert_eq!(run(), run());
        assert_eq!(model.param_checksum(), checksum);
    }

    #[test]
    fn label_variance_hand_values() {
        assert_eq!(population_variance(&[3, 3, 3, 3]), 0.0);
        assert_eq!(population_variance(&[2, 0]), 1.0);
        let (per_device, mean) =
            label_count_variance(&[vec![0, 0, 1, 1], vec![0, 0, 0, 0]], 2).unwrap();
        assert_eq!(per_device[0], 0.0);
        assert_eq!(per_device[1], 4.0);
        assert_eq!(mean, 2.0);
    }

    #[test]
    fn label_variance_matches_direct_formula() {
        let mut rng = stream(5, Purpose::Monitor, 0, 0, 0);
        for _ in 0..20 {
            let class_count = rng.random_range(2..6usize);
            let labels: Vec<usize> = (0..rng.random_range(1..40usize))
                .map(|_| rng.random_range(0..class_count))
                .collect();
            let counts = label_counts(&labels, class_count);
            let got = population_variance(&counts);
            let mean = counts.iter().sum::<usize>() as f64 / class_count as f64;
            let want = counts
                .iter()
                .map(|&c| (c as f64 - mean).powi(2))
                .sum::<f64>()
                / class_count as f64;
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn label_variance_zero_iff_uniform() {
        assert_eq!(population_variance(&[5, 5, 5]), 0.0);
        assert!(population_variance(&[5, 5, 6]) > 0.0);
    }

    #[test]
    fn empty_training_set_is_error() {
        assert!(label_count_variance(&[vec![]], 3).is_err());
    }

    #[test]
    fn delay_arithmetic_matches_reference_values() {
        let params = DelayParams {
            rate_bits_per_sec: 1e6,
            model_bits_per_param: 32.0,
            data_bits_per_element: 8.0,
            param_count: 45433,
            elements_per_datapoint: 28 * 28,
        };
        let uplink = transmission_delay(1, 0, &params);
        assert!((uplink - 45433.0 * 32.0 / 1e6).abs() < 1e-9);
        assert!(((uplink * 1e4).round() / 1e4 - 1.4539).abs() < 1e-12);
        let d2d = transmission_delay(0, 1, &params);
        assert!((d2d - 0.006272).abs() < 1e-9);
        assert_eq!(transmission_delay(0, 0, &params), 0.0);
    }

    #[test]
    fn delay_is_additive_and_linear() {
        let params = DelayParams {
            rate_bits_per_sec: 1e6,
            model_bits_per_param: 32.0,
            data_bits_per_element: 8.0,
            param_count: 1000,
            elements_per_datapoint: 16,
        };
        let a = transmission_delay(2, 5, &params);
        let b = transmission_delay(3, 7, &params);
        let both = transmission_delay(5, 12, &params);
        assert!((a + b - both).abs() < 1e-12);
        let double_p = DelayParams {
            param_count: 2000,
            ..params
        };
        assert!(
            (transmission_delay(1, 0, &double_p) - 2.0 * transmission_delay(1, 0, &params)).abs()
                < 1e-12
        );
    }
}
