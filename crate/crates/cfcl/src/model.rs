//! Feed-forward encoder, triplet loss, analytic gradients, SGD update, and
//! the vector augmentation family used to form positives.
//!
//! The encoder is a fully connected MLP: every layer is affine, hidden
//! layers pass through the configured activation, the last layer is linear.
//! Gradients are computed by hand (reverse pass over stored traces) so that
//! they can be checked against finite differences exactly.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Datapoint;
use crate::error::{Error, Result};

/// Nonlinearity applied to all layers except the last.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative as a function of the pre-activation. The kink of relu at
    /// zero takes subgradient 0, matching the hinge convention below.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

/// The parametrized embedding function.
///
/// `weights[l]` has shape `(layer_dims[l+1], layer_dims[l])` stored row-major
/// as `Vec<Vec<f64>>`; `biases[l]` has length `layer_dims[l+1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderModel {
    pub layer_dims: Vec<usize>,
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
    pub activation: Activation,
}

impl EncoderModel {
    /// Zero-initialized model with the given layer sizes.
    pub fn zeros(layer_dims: &[usize], activation: Activation) -> Self {
        assert!(layer_dims.len() >= 2, "need at least input and output dims");
        let weights = layer_dims
            .windows(2)
            .map(|w| vec![vec![0.0; w[0]]; w[1]])
            .collect();
        let biases = layer_dims[1..].iter().map(|&d| vec![0.0; d]).collect();
        Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            activation,
        }
    }

    /// Random initialization: weights scaled by sqrt(2 / fan_in), biases
    /// uniform in +-1/sqrt(fan_in). Nonzero biases keep pre-activations off
    /// the relu kink even when a whole layer goes dead for some input.
    pub fn random(layer_dims: &[usize], activation: Activation, rng: &mut impl Rng) -> Self {
        let mut model = Self::zeros(layer_dims, activation);
        for (layer, biases) in model.weights.iter_mut().zip(&mut model.biases) {
            let fan_in = layer[0].len() as f64;
            let scale = (2.0 / fan_in).sqrt();
            for row in layer.iter_mut() {
                for w in row {
                    let z: f64 = StandardNormal.sample(rng);
                    *w = scale * z;
                }
            }
            let bound = 1.0 / fan_in.sqrt();
            for b in biases {
                *b = rng.random_range(-bound..bound);
            }
        }
        model
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn embed_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        let w: usize = self.weights.iter().map(|l| l.len() * l[0].len()).sum();
        let b: usize = self.biases.iter().map(|b| b.len()).sum();
        w + b
    }

    /// `self += c * other`, elementwise over all parameters.
    pub fn scaled_add(&mut self, c: f64, other: &EncoderModel) -> Result<()> {
        if self.layer_dims != other.layer_dims {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                got: other.param_count(),
            });
        }
        for (lw, ow) in self.weights.iter_mut().zip(&other.weights) {
            for (row, orow) in lw.iter_mut().zip(ow) {
                for (w, o) in row.iter_mut().zip(orow) {
                    *w += c * o;
                }
            }
        }
        for (lb, ob) in self.biases.iter_mut().zip(&other.biases) {
            for (b, o) in lb.iter_mut().zip(ob) {
                *b += c * o;
            }
        }
        Ok(())
    }

    /// Scales all parameters by `c`.
    pub fn scale(&mut self, c: f64) {
        for layer in &mut self.weights {
            for row in layer {
                for w in row {
                    *w *= c;
                }
            }
        }
        for layer in &mut self.biases {
            for b in layer {
                *b *= c;
            }
        }
    }

    /// Order-stable checksum over all parameters; used by tests to assert a
    /// model was left untouched.
    pub fn param_checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |v: f64| {
            h ^= v.to_bits();
            h = h.wrapping_mul(0x1000_0000_01b3);
        };
        for layer in &self.weights {
            for row in layer {
                for &w in row {
                    mix(w);
                }
            }
        }
        for layer in &self.biases {
            for &b in layer {
                mix(b);
            }
        }
        h
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Forward pass returning the embedding.
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let last = self.weights.len() - 1;
        let mut a = x.to_vec();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = b.clone();
            for (zi, row) in z.iter_mut().zip(w) {
                for (wij, aj) in row.iter().zip(&a) {
                    *zi += wij * aj;
                }
            }
            if l < last {
                for zi in &mut z {
                    *zi = self.activation.apply(*zi);
                }
            }
            a = z;
        }
        Ok(a)
    }

    /// Forward pass that keeps pre- and post-activations for the reverse pass.
    fn forward_trace(&self, x: &[f64]) -> Result<Trace> {
        self.check_input(x)?;
        let last = self.weights.len() - 1;
        let mut pre = Vec::with_capacity(self.weights.len());
        let mut post = Vec::with_capacity(self.weights.len());
        let mut a = x.to_vec();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = b.clone();
            for (zi, row) in z.iter_mut().zip(w) {
                for (wij, aj) in row.iter().zip(&a) {
                    *zi += wij * aj;
                }
            }
            pre.push(z.clone());
            if l < last {
                for zi in &mut z {
                    *zi = self.activation.apply(*zi);
                }
            }
            post.push(z.clone());
            a = z;
        }
        Ok(Trace {
            input: x.to_vec(),
            pre,
            post,
        })
    }

    /// Backpropagates `out_grad` (gradient w.r.t. the embedding) through one
    /// stored trace, accumulating parameter gradients into `delta`.
    fn accumulate_backprop(&self, trace: &Trace, out_grad: &[f64], delta: &mut ParamDelta) {
        let layers = self.weights.len();
        let mut upstream = out_grad.to_vec();
        for l in (0..layers).rev() {
            // Last layer is linear; hidden layers apply the activation.
            let dz: Vec<f64> = if l == layers - 1 {
                upstream.clone()
            } else {
                trace.pre[l]
                    .iter()
                    .zip(&upstream)
                    .map(|(&z, &g)| g * self.activation.derivative(z))
                    .collect()
            };
            let a_prev: &[f64] = if l == 0 { &trace.input } else { &trace.post[l - 1] };
            for (i, &dzi) in dz.iter().enumerate() {
                delta.biases[l][i] += dzi;
                for (j, &aj) in a_prev.iter().enumerate() {
                    delta.weights[l][i][j] += dzi * aj;
                }
            }
            if l > 0 {
                let mut down = vec![0.0; self.layer_dims[l]];
                for (i, &dzi) in dz.iter().enumerate() {
                    for (j, d) in down.iter_mut().enumerate() {
                        *d += self.weights[l][i][j] * dzi;
                    }
                }
                upstream = down;
            }
        }
    }
}

struct Trace {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

/// Parameter-space gradient (or update direction) with the same shape as a
/// model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamDelta {
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
}

impl ParamDelta {
    pub fn zeros_like(model: &EncoderModel) -> Self {
        Self {
            weights: model
                .weights
                .iter()
                .map(|l| vec![vec![0.0; l[0].len()]; l.len()])
                .collect(),
            biases: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn scale(&mut self, c: f64) {
        for layer in &mut self.weights {
            for row in layer {
                for w in row {
                    *w *= c;
                }
            }
        }
        for layer in &mut self.biases {
            for b in layer {
                *b *= c;
            }
        }
    }

    pub fn add_assign(&mut self, other: &ParamDelta) {
        for (lw, ow) in self.weights.iter_mut().zip(&other.weights) {
            for (row, orow) in lw.iter_mut().zip(ow) {
                for (w, o) in row.iter_mut().zip(orow) {
                    *w += o;
                }
            }
        }
        for (lb, ob) in self.biases.iter_mut().zip(&other.biases) {
            for (b, o) in lb.iter_mut().zip(ob) {
                *b += o;
            }
        }
    }

    /// Flattens into a single vector (weights first, layer by layer row-major,
    /// then biases); handy for norm checks in tests.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.weights {
            for row in layer {
                out.extend_from_slice(row);
            }
        }
        for layer in &self.biases {
            out.extend_from_slice(layer);
        }
        out
    }
}

impl EncoderModel {
    /// `self += c * delta` over all parameters.
    pub fn apply_delta(&mut self, c: f64, delta: &ParamDelta) {
        for (lw, dw) in self.weights.iter_mut().zip(&delta.weights) {
            for (row, drow) in lw.iter_mut().zip(dw) {
                for (w, d) in row.iter_mut().zip(drow) {
                    *w += c * d;
                }
            }
        }
        for (lb, db) in self.biases.iter_mut().zip(&delta.biases) {
            for (b, d) in lb.iter_mut().zip(db) {
                *b += c * d;
            }
        }
    }
}

/// Anchor, augmented positive, and negative, as raw vectors.
#[derive(Debug, Clone)]
pub struct Triplet {
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Hinge loss over embeddings: `max(0, ||a-p||^2 - ||a-n||^2 + m)`.
pub fn triplet_loss(e_a: &[f64], e_p: &[f64], e_n: &[f64], margin: f64) -> Result<f64> {
    if e_a.len() != e_p.len() || e_a.len() != e_n.len() {
        return Err(Error::DimensionMismatch {
            expected: e_a.len(),
            got: e_p.len().max(e_n.len()),
        });
    }
    let raw = squared_distance(e_a, e_p) - squared_distance(e_a, e_n) + margin;
    Ok(raw.max(0.0))
}

/// Exact gradient of the triplet loss w.r.t. all model parameters.
///
/// When the hinge is inactive (loss zero, including exactly at the boundary)
/// the gradient is zero.
pub fn triplet_gradient(model: &EncoderModel, t: &Triplet, margin: f64) -> Result<ParamDelta> {
    let trace_a = model.forward_trace(&t.anchor)?;
    let trace_p = model.forward_trace(&t.positive)?;
    let trace_n = model.forward_trace(&t.negative)?;
    let e_a = trace_a.post.last().unwrap();
    let e_p = trace_p.post.last().unwrap();
    let e_n = trace_n.post.last().unwrap();

    let mut delta = ParamDelta::zeros_like(model);
    let raw = squared_distance(e_a, e_p) - squared_distance(e_a, e_n) + margin;
    if raw <= 0.0 {
        return Ok(delta);
    }

    let d_a: Vec<f64> = e_n.iter().zip(e_p).map(|(n, p)| 2.0 * (n - p)).collect();
    let d_p: Vec<f64> = e_a.iter().zip(e_p).map(|(a, p)| -2.0 * (a - p)).collect();
    let d_n: Vec<f64> = e_a.iter().zip(e_n).map(|(a, n)| 2.0 * (a - n)).collect();

    model.accumulate_backprop(&trace_a, &d_a, &mut delta);
    model.accumulate_backprop(&trace_p, &d_p, &mut delta);
    model.accumulate_backprop(&trace_n, &d_n, &mut delta);
    Ok(delta)
}

/// Mean of per-triplet gradients over a batch.
pub fn batch_gradient(model: &EncoderModel, batch: &[Triplet], margin: f64) -> Result<ParamDelta> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("triplet batch"));
    }
    let mut total = ParamDelta::zeros_like(model);
    for t in batch {
        total.add_assign(&triplet_gradient(model, t, margin)?);
    }
    total.scale(1.0 / batch.len() as f64);
    Ok(total)
}

/// One SGD step: returns `model - lr * mean(per-triplet gradients)`.
pub fn sgd_step(
    model: &EncoderModel,
    batch: &[Triplet],
    learning_rate: f64,
    margin: f64,
) -> Result<EncoderModel> {
    let grad = batch_gradient(model, batch, margin)?;
    let mut next = model.clone();
    next.apply_delta(-learning_rate, &grad);
    Ok(next)
}

/// Mean triplet loss of a batch under a model.
pub fn batch_loss(model: &EncoderModel, batch: &[Triplet], margin: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("triplet batch"));
    }
    let mut sum = 0.0;
    for t in batch {
        let e_a = model.embed(&t.anchor)?;
        let e_p = model.embed(&t.positive)?;
        let e_n = model.embed(&t.negative)?;
        sum += triplet_loss(&e_a, &e_p, &e_n, margin)?;
    }
    Ok(sum / batch.len() as f64)
}

/// One member of the augmentation family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AugmentationSpec {
    /// Adds i.i.d. Gaussian noise with the given standard deviation.
    AdditiveGaussianNoise { sigma: f64 },
    /// Multiplies the whole vector by a factor drawn uniformly from [lo, hi].
    RandomUniformScaling { lo: f64, hi: f64 },
    /// Zeroes each coordinate independently with the given probability.
    RandomCoordinateMasking { fraction: f64 },
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            AugmentationSpec::AdditiveGaussianNoise { sigma } => {
                if !(*sigma >= 0.0) {
                    return Err(Error::config("augmentation.sigma", "must be >= 0"));
                }
            }
            AugmentationSpec::RandomUniformScaling { lo, hi } => {
                if !(*lo > 0.0 && hi >= lo) {
                    return Err(Error::config(
                        "augmentation.scale_range",
                        "must satisfy 0 < lo <= hi",
                    ));
                }
            }
            AugmentationSpec::RandomCoordinateMasking { fraction } => {
                if !(0.0..=1.0).contains(fraction) {
                    return Err(Error::config("augmentation.mask_fraction", "must be in [0,1]"));
                }
            }
        }
        Ok(())
    }

    fn apply(&self, x: &[f64], rng: &mut impl Rng) -> Vec<f64> {
        match *self {
            AugmentationSpec::AdditiveGaussianNoise { sigma } => x
                .iter()
                .map(|&v| {
                    let z: f64 = StandardNormal.sample(rng);
                    v + sigma * z
                })
                .collect(),
            AugmentationSpec::RandomUniformScaling { lo, hi } => {
                let factor = rng.random_range(lo..=hi);
                x.iter().map(|&v| v * factor).collect()
            }
            AugmentationSpec::RandomCoordinateMasking { fraction } => x
                .iter()
                .map(|&v| {
                    if rng.random::<f64>() < fraction {
                        0.0
                    } else {
                        v
                    }
                })
                .collect(),
        }
    }
}

/// Samples one augmentation uniformly from the family and applies it.
pub fn augment(x: &[f64], specs: &[AugmentationSpec], rng: &mut impl Rng) -> Result<Vec<f64>> {
    if specs.is_empty() {
        return Err(Error::EmptyInput("augmentation specs"));
    }
    let idx = rng.random_range(0..specs.len());
    Ok(specs[idx].apply(x, rng))
}

/// Builds a mini-batch of triplets from a training set: anchors sampled
/// uniformly without replacement, one augmented positive per anchor, one
/// negative per anchor drawn uniformly among points with a different id.
pub fn sample_triplet_batch(
    points: &[Datapoint],
    batch_size: usize,
    specs: &[AugmentationSpec],
    rng: &mut impl Rng,
) -> Result<Vec<Triplet>> {
    if points.len() < 2 {
        return Err(Error::EmptyInput("training set needs at least two points"));
    }
    let take = batch_size.min(points.len());
    let mut indices: Vec<usize> = (0..points.len()).collect();
    // Partial Fisher-Yates: the first `take` entries are a uniform sample
    // without replacement.
    for k in 0..take {
        let j = rng.random_range(k..indices.len());
        indices.swap(k, j);
    }
    let mut batch = Vec::with_capacity(take);
    for &ai in &indices[..take] {
        let anchor = &points[ai];
        let positive = augment(&anchor.values, specs, rng)?;
        let negative = loop {
            let ni = rng.random_range(0..points.len());
            if points[ni].id != anchor.id {
                break points[ni].values.clone();
            }
        };
        batch.push(Triplet {
            anchor: anchor.values.clone(),
            positive,
            negative,
        });
    }
    Ok(batch)
}
