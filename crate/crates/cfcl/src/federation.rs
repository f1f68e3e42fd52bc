//! The training orchestrator: local SGD steps, periodic data pulls,
//! cardinality-weighted aggregation, broadcast, and metric recording.
//!
//! Within a step the event order is: pull (if due), one SGD step per device,
//! aggregation (if due) — except that when a step is both a pull and an
//! aggregation step the aggregation and broadcast run first so the pull can
//! score candidates with the fresh global model.
//!
//! Every randomized event draws from a stream derived from the run seed and
//! the event coordinates, so results do not depend on processing order and
//! identical schedules produce identical trajectories across strategies.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;

use crate::config::{
    BufferMode, DatasetSource, ReserveSelection, RunConfig, Strategy, TopologyConfig,
};
use crate::data::{partition_noniid, Datapoint, LabeledDataset};
use crate::error::{Error, Result};
use crate::exchange::{approximate_dataset, pull_sample, select_reserve, select_reserve_random};
use crate::metrics::{
    label_counts, linear_probe, population_variance, transmission_delay, DelayParams, ProbeParams,
};
use crate::model::{
    augment, batch_gradient, batch_loss, sample_triplet_batch, AugmentationSpec, EncoderModel,
    Triplet,
};
use crate::rng::{stream, Purpose};
use crate::topology::{generate_rgg, Topology, DEFAULT_RGG_RETRIES};

// ---------------------------------------------------------------------------
// Aggregation and its helpers
// ---------------------------------------------------------------------------

/// Weighted elementwise mean of equally shaped models; weights are
/// normalized to sum to one.
pub fn aggregate(models: &[EncoderModel], weights: &[f64]) -> Result<EncoderModel> {
    if models.is_empty() {
        return Err(Error::EmptyInput("models"));
    }
    if models.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: models.len(),
            got: weights.len(),
        });
    }
    if weights.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::EmptyInput("weights must be positive"));
    }
    let total: f64 = weights.iter().sum();
    let mut out = EncoderModel::zeros(&models[0].layer_dims, models[0].activation);
    for (model, &w) in models.iter().zip(weights) {
        out.scaled_add(w / total, model)?;
    }
    Ok(out)
}

/// Mean training-set cardinality over the aggregation window
/// `((gamma-1)*t_a, gamma*t_a]`. `history[k]` holds the cardinality at step
/// `k + 1`.
pub fn average_cardinality(history: &[usize], gamma: usize, t_a: usize) -> Result<f64> {
    let from = (gamma - 1) * t_a;
    let to = gamma * t_a;
    if history.len() < to {
        return Err(Error::IncompleteHistory {
            need_from: from + 1,
            need_to: to,
            have: history.len(),
        });
    }
    let window = &history[from..to];
    Ok(window.iter().sum::<usize>() as f64 / t_a as f64)
}

/// Monitoring estimator for the global objective: mean triplet loss of a
/// sampled batch under the given model.
pub fn global_loss_estimate(
    model: &EncoderModel,
    triplets: &[Triplet],
    margin: f64,
) -> Result<f64> {
    batch_loss(model, triplets, margin)
}

/// Samples monitoring triplets from a pool: anchors uniform with
/// replacement, one augmented positive each, negatives uniform among points
/// with a different id.
pub fn sample_monitor_triplets(
    pool: &[Datapoint],
    count: usize,
    specs: &[AugmentationSpec],
    rng: &mut impl Rng,
) -> Result<Vec<Triplet>> {
    if pool.len() < 2 {
        return Err(Error::EmptyInput("monitor pool"));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let anchor = &pool[rng.random_range(0..pool.len())];
        let positive = augment(&anchor.values, specs, rng)?;
        let negative = loop {
            let cand = &pool[rng.random_range(0..pool.len())];
            if cand.id != anchor.id {
                break cand.values.clone();
            }
        };
        out.push(Triplet {
            anchor: anchor.values.clone(),
            positive,
            negative,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Run records
// ---------------------------------------------------------------------------

/// One client's state across the run.
#[derive(Debug, Clone)]
pub struct DeviceState {
    pub id: usize,
    pub initial_data: Vec<Datapoint>,
    pub pulled_buffer: Vec<Datapoint>,
    /// Reserve points pushed by each neighbor, keyed by the pushing device;
    /// consumed when that neighbor pulls from this device.
    pub reserve_from: BTreeMap<usize, Vec<Datapoint>>,
    pub model: EncoderModel,
    /// Candidate pool snapshot from the most recent aggregation.
    pub approx_snapshot: Vec<Datapoint>,
    /// `cardinality_history[k]` is the training-set size at step `k + 1`.
    pub cardinality_history: Vec<usize>,
    training_set: Vec<Datapoint>,
}

impl DeviceState {
    fn new(id: usize, initial_data: Vec<Datapoint>, model: EncoderModel) -> Self {
        let training_set = initial_data.clone();
        Self {
            id,
            initial_data,
            pulled_buffer: Vec::new(),
            reserve_from: BTreeMap::new(),
            model,
            approx_snapshot: Vec::new(),
            cardinality_history: Vec::new(),
            training_set,
        }
    }

    /// Current training set: initial data plus the pulled buffer.
    pub fn training_set(&self) -> &[Datapoint] {
        &self.training_set
    }

    fn refresh_training_set(&mut self) {
        self.training_set = self
            .initial_data
            .iter()
            .chain(self.pulled_buffer.iter())
            .cloned()
            .collect();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepLossRecord {
    pub t: usize,
    pub device: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeCandidateRecord {
    pub t: usize,
    pub receiver: usize,
    pub transmitter: usize,
    pub point_id: usize,
    pub probability: f64,
    pub chosen: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PullSummaryRecord {
    pub t: usize,
    pub receiver: usize,
    pub transmitter: usize,
    pub budget: usize,
    pub macro_probs: Vec<f64>,
    pub composed_entropy: f64,
}

#[derive(Debug, Clone)]
pub struct AggregationRecord {
    pub gamma: usize,
    pub t: usize,
    pub label_variance_mean: f64,
    pub global_loss: f64,
    pub cumulative_delay_s: f64,
    pub model: EncoderModel,
}

/// One linear-probe evaluation row. Rows come from stride aggregations and,
/// when `eval_every_steps` is set, from probes of a monitoring-only virtual
/// aggregate between aggregations.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    /// Index of the last completed aggregation.
    pub gamma: usize,
    pub t: usize,
    pub accuracy: f64,
    pub label_variance_mean: f64,
    pub cumulative_delay_s: f64,
}

/// Everything a run leaves behind.
#[derive(Debug, Clone)]
pub struct RunHistory {
    pub step_losses: Vec<StepLossRecord>,
    pub exchange_candidates: Vec<ExchangeCandidateRecord>,
    pub pull_summaries: Vec<PullSummaryRecord>,
    pub aggregations: Vec<AggregationRecord>,
    pub evaluations: Vec<EvalRecord>,
    /// Network-mean label-count variance at every step, index `t - 1`.
    pub per_step_label_variance: Vec<f64>,
    /// Per-device training-set cardinality, index `t - 1`.
    pub cardinality_histories: Vec<Vec<usize>>,
    pub model_uplinks: usize,
    pub datapoints_exchanged: usize,
    /// Wall-clock seconds spent inside each pull event (importance
    /// computation and clustering). Kept out of all serialized logs because
    /// it is not deterministic.
    pub exchange_compute_seconds: Vec<f64>,
    pub final_model: EncoderModel,
    pub final_device_models: Vec<EncoderModel>,
    pub param_count: usize,
    pub elements_per_datapoint: usize,
}

impl RunHistory {
    /// An empty history around a placeholder model; useful for delay
    /// arithmetic on hand-built transfer counts.
    pub fn empty() -> Self {
        let model = EncoderModel::zeros(&[1, 1], crate::model::Activation::Relu);
        Self {
            step_losses: Vec::new(),
            exchange_candidates: Vec::new(),
            pull_summaries: Vec::new(),
            aggregations: Vec::new(),
            evaluations: Vec::new(),
            per_step_label_variance: Vec::new(),
            cardinality_histories: Vec::new(),
            model_uplinks: 0,
            datapoints_exchanged: 0,
            exchange_compute_seconds: Vec::new(),
            final_model: model.clone(),
            final_device_models: vec![model],
            param_count: 2,
            elements_per_datapoint: 1,
        }
    }
}

// ---------------------------------------------------------------------------
// Data preparation
// ---------------------------------------------------------------------------

/// Training pool plus the held-out labeled evaluation set.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: LabeledDataset,
    pub eval: LabeledDataset,
}

/// Builds the dataset named by the config and splits off `eval_per_class`
/// held-out points per class (never used in federated training).
pub fn prepare_data(config: &RunConfig) -> Result<PreparedData> {
    let full = match &config.dataset.source {
        DatasetSource::Synthetic {
            class_count,
            per_class,
            dim,
            sigma,
            separation,
        } => {
            let mut rng = stream(config.seed, Purpose::Synth, 0, 0, 0);
            crate::data::synth_generate(
                *class_count,
                *per_class,
                *dim,
                *sigma,
                *separation,
                &mut rng,
            )?
        }
        DatasetSource::Idx {
            images_path,
            labels_path,
        } => {
            let images = crate::data::parse_idx(&std::fs::read(images_path)?)?;
            let labels = crate::data::parse_idx(&std::fs::read(labels_path)?)?;
            let ds = crate::data::dataset_from_idx(&images, &labels)?;
            if ds.dim != config.training.encoder_dims[0] {
                return Err(Error::config(
                    "training.encoder_dims",
                    format!(
                        "input dimension {} does not match dataset dim {}",
                        config.training.encoder_dims[0],
                        ds.dim
                    ),
                ));
            }
            ds
        }
    };

    // Per-class shuffled split keeps the held-out set stratified.
    let mut rng = stream(config.seed, Purpose::EvalSplit, 0, 0, 0);
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); full.class_count];
    for (idx, &label) in full.labels.iter().enumerate() {
        per_class[label].push(idx);
    }
    let mut eval_indices = Vec::new();
    let mut train_indices = Vec::new();
    for pool in &mut per_class {
        for k in (1..pool.len()).rev() {
            let j = rng.random_range(0..=k);
            pool.swap(k, j);
        }
        let take = config.dataset.eval_per_class.min(pool.len());
        eval_indices.extend_from_slice(&pool[..take]);
        train_indices.extend_from_slice(&pool[take..]);
    }
    train_indices.sort_unstable();
    eval_indices.sort_unstable();

    let subset = |indices: &[usize]| LabeledDataset {
        points: indices.iter().map(|&i| full.points[i].clone()).collect(),
        labels: indices.iter().map(|&i| full.labels[i]).collect(),
        dim: full.dim,
        class_count: full.class_count,
    };
    Ok(PreparedData {
        train: subset(&train_indices),
        eval: subset(&eval_indices),
    })
}

fn build_topology(config: &RunConfig) -> Result<Topology> {
    match &config.topology {
        TopologyConfig::Rgg {
            target_avg_degree,
            tolerance,
        } => {
            let mut rng = stream(config.seed, Purpose::Topology, 0, 0, 0);
            generate_rgg(
                config.device_count,
                *target_avg_degree,
                &mut rng,
                *tolerance,
                DEFAULT_RGG_RETRIES,
            )
        }
        TopologyConfig::Explicit { adjacency } => Topology::from_adjacency(adjacency),
    }
}

// ---------------------------------------------------------------------------
// The simulation proper
// ---------------------------------------------------------------------------

struct Simulation {
    config: RunConfig,
    topology: Topology,
    devices: Vec<DeviceState>,
    global: EncoderModel,
    specs: Vec<AugmentationSpec>,
    /// Harness-side shadow: label of every training-pool row id.
    labels_by_id: Vec<usize>,
    class_count: usize,
    union_initial: Vec<Datapoint>,
    eval_data: LabeledDataset,
    probe_split: (Vec<usize>, Vec<usize>),
    delay_params: DelayParams,
    device_label_counts: Vec<Vec<usize>>,
    history: RunHistory,
    pulls_possible: bool,
}

/// Executes the full schedule described by `config` and returns the run log.
pub fn run_simulation(config: &RunConfig) -> Result<RunHistory> {
    let mut sim = Simulation::prepare(config.clone())?;
    sim.run()?;
    Ok(sim.history)
}

impl Simulation {
    fn prepare(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let prepared = prepare_data(&config)?;
        let train = prepared.train;
        let eval_data = prepared.eval;

        // Mean per-dimension standard deviation of the pool, for the noise
        // augmentation scale.
        let mean_std = mean_per_dim_std(&train.points);
        let specs = config.augmentation.build_specs(mean_std);
        for spec in &specs {
            spec.validate()?;
        }

        let topology = build_topology(&config)?;
        let mut prng = stream(config.seed, Purpose::Partition, 0, 0, 0);
        let parts = partition_noniid(
            &train,
            config.device_count,
            config.dataset.labels_per_device,
            config.dataset.per_device_size,
            &mut prng,
        )?;

        let mut mrng = stream(config.seed, Purpose::ModelInit, 0, 0, 0);
        let init_model = EncoderModel::random(
            &config.training.encoder_dims,
            config.training.activation,
            &mut mrng,
        );
        let param_count = init_model.param_count();

        let devices: Vec<DeviceState> = parts
            .iter()
            .enumerate()
            .map(|(id, rows)| {
                let points = rows
                    .iter()
                    .map(|&row| Datapoint {
                        id: row,
                        values: train.points[row].clone(),
                    })
                    .collect();
                DeviceState::new(id, points, init_model.clone())
            })
            .collect();

        let union_initial: Vec<Datapoint> = devices
            .iter()
            .flat_map(|d| d.initial_data.iter().cloned())
            .collect();

        // Probe train/test split over the held-out set.
        let mut srng = stream(config.seed, Purpose::EvalSplit, 1, 0, 0);
        let mut indices: Vec<usize> = (0..eval_data.len()).collect();
        for k in (1..indices.len()).rev() {
            let j = srng.random_range(0..=k);
            indices.swap(k, j);
        }
        let cut = ((indices.len() as f64) * config.evaluation.probe_train_fraction).round()
            as usize;
        let cut = cut.clamp(1, indices.len().saturating_sub(1).max(1));
        let probe_split = (indices[..cut].to_vec(), indices[cut..].to_vec());

        let delay_params = DelayParams {
            rate_bits_per_sec: config.delay.rate_bits_per_sec,
            model_bits_per_param: config.delay.model_bits_per_param,
            data_bits_per_element: config.delay.data_bits_per_element,
            param_count,
            elements_per_datapoint: train.dim,
        };
        delay_params.validate()?;

        let device_label_counts = devices
            .iter()
            .map(|d| {
                let labels: Vec<usize> = d
                    .training_set()
                    .iter()
                    .map(|p| train.labels[p.id])
                    .collect();
                label_counts(&labels, train.class_count)
            })
            .collect();

        let pulls_possible = config.strategy.pulls_data()
            && config.schedule.pull_interval <= config.schedule.total_steps
            && topology.edge_count() > 0;

        let history = RunHistory {
            final_model: init_model.clone(),
            final_device_models: Vec::new(),
            param_count,
            elements_per_datapoint: train.dim,
            ..RunHistory::empty()
        };

        Ok(Self {
            global: init_model,
            labels_by_id: train.labels.clone(),
            class_count: train.class_count,
            config,
            topology,
            devices,
            specs,
            union_initial,
            eval_data,
            probe_split,
            delay_params,
            device_label_counts,
            history,
            pulls_possible,
        })
    }

    fn run(&mut self) -> Result<()> {
        let schedule = self.config.schedule.clone();
        let t_total = schedule.total_steps;
        let t_a = schedule.aggregation_interval;
        let t_p = schedule.pull_interval;

        // One-time reserve push, skipped when no pull can ever consume it.
        if self.config.strategy.uses_reserve() && self.pulls_possible {
            self.push_reserves()?;
        }

        // Initial broadcast, candidate pools, and baseline evaluation.
        self.refresh_approx_snapshots(0)?;
        self.record_aggregation(0, 0)?;

        for t in 1..=t_total {
            for d in &mut self.devices {
                d.cardinality_history.push(d.training_set().len());
            }
            let is_agg = t % t_a == 0;
            let is_pull = self.pulls_possible && t % t_p == 0;

            // Aggregation runs before a coinciding pull so the pull scores
            // candidates with the fresh global model.
            if is_agg && is_pull {
                self.aggregate_and_broadcast(t / t_a, t)?;
            }
            if is_pull {
                self.pull_event(t)?;
            }
            self.sgd_step_all(t)?;
            if is_agg && !is_pull {
                self.aggregate_and_broadcast(t / t_a, t)?;
            }

            let variance_mean = self.network_label_variance();
            self.history.per_step_label_variance.push(variance_mean);

            // Fine-grained monitoring between aggregations: probe a virtual
            // aggregate of the current local models. Never drives training.
            let k = self.config.evaluation.eval_every_steps;
            if k > 0 && t % k == 0 && !is_agg {
                self.record_virtual_eval(t)?;
            }
        }

        self.history.final_model = self.global.clone();
        self.history.final_device_models =
            self.devices.iter().map(|d| d.model.clone()).collect();
        self.history.cardinality_histories = self
            .devices
            .iter()
            .map(|d| d.cardinality_history.clone())
            .collect();
        Ok(())
    }

    fn push_reserves(&mut self) -> Result<()> {
        let k_reserve = self.config.exchange.reserve_size;
        for i in 0..self.devices.len() {
            let neighbors = self.topology.neighbors(i)?.to_vec();
            for j in neighbors {
                let mut rng = stream(
                    self.config.seed,
                    Purpose::ReservePush,
                    0,
                    i as u64,
                    j as u64,
                );
                let reserve = match self.config.exchange.reserve_selection {
                    ReserveSelection::Kmeans => {
                        select_reserve(&self.devices[i].initial_data, k_reserve, &mut rng)?
                    }
                    ReserveSelection::Random => {
                        select_reserve_random(&self.devices[i].initial_data, k_reserve, &mut rng)?
                    }
                };
                self.history.datapoints_exchanged += reserve.len();
                self.devices[j].reserve_from.insert(i, reserve);
            }
        }
        Ok(())
    }

    fn refresh_approx_snapshots(&mut self, gamma: usize) -> Result<()> {
        if !self.pulls_possible {
            return Ok(());
        }
        let k_approx = self.config.exchange.approx_size;
        for j in 0..self.devices.len() {
            let mut rng = stream(
                self.config.seed,
                Purpose::Approx,
                gamma as u64,
                j as u64,
                0,
            );
            let snapshot =
                approximate_dataset(self.devices[j].training_set(), k_approx, &mut rng)?;
            self.devices[j].approx_snapshot = snapshot;
        }
        Ok(())
    }

    fn aggregate_and_broadcast(&mut self, gamma: usize, t: usize) -> Result<()> {
        let weights: Vec<f64> = self
            .devices
            .iter()
            .map(|d| {
                average_cardinality(
                    &d.cardinality_history,
                    gamma,
                    self.config.schedule.aggregation_interval,
                )
            })
            .collect::<Result<_>>()?;
        let models: Vec<EncoderModel> =
            self.devices.iter().map(|d| d.model.clone()).collect();
        self.global = aggregate(&models, &weights)?;
        self.history.model_uplinks += self.devices.len();
        for d in &mut self.devices {
            d.model = self.global.clone();
        }
        self.refresh_approx_snapshots(gamma)?;
        self.record_aggregation(gamma, t)
    }

    fn pull_event(&mut self, t: usize) -> Result<()> {
        let started = Instant::now();
        if self.config.exchange.buffer_mode == BufferMode::Limited {
            for d in &mut self.devices {
                d.pulled_buffer.clear();
            }
        }
        let budget = self.config.exchange.pull_budget;
        let lambda = self.config.schedule.lambda_at(t);
        let margin = self.config.training.margin;
        let clusters = self.config.exchange.cluster_count;

        for receiver in 0..self.devices.len() {
            let neighbors = self.topology.neighbors(receiver)?.to_vec();
            for transmitter in neighbors {
                if budget == 0 {
                    continue;
                }
                let mut rng = stream(
                    self.config.seed,
                    Purpose::Pull,
                    t as u64,
                    receiver as u64,
                    transmitter as u64,
                );
                let pulled = match self.config.strategy {
                    Strategy::CfCl | Strategy::CfClLocalModel => {
                        let scoring_model = if self.config.strategy == Strategy::CfCl {
                            self.global.clone()
                        } else {
                            self.devices[receiver].model.clone()
                        };
                        let reserve = self.devices[transmitter]
                            .reserve_from
                            .get(&receiver)
                            .ok_or(Error::EmptyInput("missing reserve store"))?
                            .clone();
                        let approx = &self.devices[transmitter].approx_snapshot;
                        let (points, plan) = pull_sample(
                            approx,
                            &reserve,
                            &scoring_model,
                            budget,
                            lambda,
                            clusters,
                            margin,
                            &self.specs,
                            &mut rng,
                        )?;
                        let mut chosen_flags = vec![false; approx.len()];
                        for &k in &plan.chosen {
                            chosen_flags[k] = true;
                        }
                        for (k, cand) in approx.iter().enumerate() {
                            self.history.exchange_candidates.push(ExchangeCandidateRecord {
                                t,
                                receiver,
                                transmitter,
                                point_id: cand.id,
                                probability: plan.composed[k],
                                chosen: chosen_flags[k],
                            });
                        }
                        self.history.pull_summaries.push(PullSummaryRecord {
                            t,
                            receiver,
                            transmitter,
                            budget,
                            macro_probs: plan.macro_probs.clone(),
                            composed_entropy: plan.composed_entropy(),
                        });
                        points
                    }
                    Strategy::Uniform => {
                        let approx = &self.devices[transmitter].approx_snapshot;
                        if budget > approx.len() {
                            return Err(Error::SampleTooLarge {
                                requested: budget,
                                available: approx.len(),
                            });
                        }
                        let mut indices: Vec<usize> = (0..approx.len()).collect();
                        for k in 0..budget {
                            let j = rng.random_range(k..indices.len());
                            indices.swap(k, j);
                        }
                        let chosen: Vec<usize> = indices[..budget].to_vec();
                        let uniform_p = 1.0 / approx.len() as f64;
                        for (k, cand) in approx.iter().enumerate() {
                            self.history.exchange_candidates.push(ExchangeCandidateRecord {
                                t,
                                receiver,
                                transmitter,
                                point_id: cand.id,
                                probability: uniform_p,
                                chosen: chosen.contains(&k),
                            });
                        }
                        chosen.iter().map(|&k| approx[k].clone()).collect()
                    }
                    Strategy::FedAvg => unreachable!("fedavg never pulls"),
                };
                self.history.datapoints_exchanged += pulled.len();
                self.devices[receiver].pulled_buffer.extend(pulled);
            }
        }
        for d in &mut self.devices {
            d.refresh_training_set();
        }
        self.recompute_label_counts();
        self.history
            .exchange_compute_seconds
            .push(started.elapsed().as_secs_f64());
        Ok(())
    }

    fn sgd_step_all(&mut self, t: usize) -> Result<()> {
        let lr = self.config.training.learning_rate;
        let margin = self.config.training.margin;
        let batch_size = self.config.training.batch_size;
        for d in &mut self.devices {
            let mut rng = stream(self.config.seed, Purpose::Sgd, t as u64, d.id as u64, 0);
            let batch = sample_triplet_batch(d.training_set(), batch_size, &self.specs, &mut rng)?;
            let loss = batch_loss(&d.model, &batch, margin)?;
            let grad = batch_gradient(&d.model, &batch, margin)?;
            d.model.apply_delta(-lr, &grad);
            self.history.step_losses.push(StepLossRecord {
                t,
                device: d.id,
                loss,
            });
        }
        Ok(())
    }

    fn recompute_label_counts(&mut self) {
        for (d, counts) in self.devices.iter().zip(&mut self.device_label_counts) {
            let labels: Vec<usize> = d
                .training_set()
                .iter()
                .map(|p| self.labels_by_id[p.id])
                .collect();
            *counts = label_counts(&labels, self.class_count);
        }
    }

    fn network_label_variance(&self) -> f64 {
        let total: f64 = self
            .device_label_counts
            .iter()
            .map(|c| population_variance(c))
            .sum();
        total / self.devices.len() as f64
    }

    fn record_aggregation(&mut self, gamma: usize, t: usize) -> Result<()> {
        let cumulative_delay_s = transmission_delay(
            self.history.model_uplinks,
            self.history.datapoints_exchanged,
            &self.delay_params,
        );
        let label_variance_mean = self.network_label_variance();
        if gamma % self.config.evaluation.eval_stride == 0 {
            let accuracy = self.run_probe(&self.global.clone(), gamma as u64, 0)?;
            self.history.evaluations.push(EvalRecord {
                gamma,
                t,
                accuracy,
                label_variance_mean,
                cumulative_delay_s,
            });
        }
        let mut mrng = stream(self.config.seed, Purpose::Monitor, gamma as u64, 0, 0);
        let monitor = sample_monitor_triplets(
            &self.union_initial,
            self.config.evaluation.monitor_triplets,
            &self.specs,
            &mut mrng,
        )?;
        let global_loss =
            global_loss_estimate(&self.global, &monitor, self.config.training.margin)?;
        self.history.aggregations.push(AggregationRecord {
            gamma,
            t,
            label_variance_mean,
            global_loss,
            cumulative_delay_s,
            model: self.global.clone(),
        });
        Ok(())
    }

    /// Probes a monitoring-only aggregate of the current local models,
    /// weighted like a real aggregation over the partial window since the
    /// last one. The result never flows back into training.
    fn record_virtual_eval(&mut self, t: usize) -> Result<()> {
        let t_a = self.config.schedule.aggregation_interval;
        let gamma = t / t_a;
        let window_start = gamma * t_a;
        let weights: Vec<f64> = self
            .devices
            .iter()
            .map(|d| {
                let window = &d.cardinality_history[window_start..];
                window.iter().sum::<usize>() as f64 / window.len().max(1) as f64
            })
            .collect();
        let models: Vec<EncoderModel> =
            self.devices.iter().map(|d| d.model.clone()).collect();
        let virtual_global = aggregate(&models, &weights)?;
        let accuracy = self.run_probe(&virtual_global, t as u64, 1)?;
        self.history.evaluations.push(EvalRecord {
            gamma,
            t,
            accuracy,
            label_variance_mean: self.network_label_variance(),
            cumulative_delay_s: transmission_delay(
                self.history.model_uplinks,
                self.history.datapoints_exchanged,
                &self.delay_params,
            ),
        });
        Ok(())
    }

    fn run_probe(&self, model: &EncoderModel, coord: u64, kind: u64) -> Result<f64> {
        let embeddings: Vec<Vec<f64>> = self
            .eval_data
            .points
            .iter()
            .map(|p| model.embed(p))
            .collect::<Result<_>>()?;
        let (train_idx, test_idx) = &self.probe_split;
        let train_emb: Vec<Vec<f64>> = train_idx.iter().map(|&i| embeddings[i].clone()).collect();
        let train_labels: Vec<usize> = train_idx.iter().map(|&i| self.eval_data.labels[i]).collect();
        let test_emb: Vec<Vec<f64>> = test_idx.iter().map(|&i| embeddings[i].clone()).collect();
        let test_labels: Vec<usize> = test_idx.iter().map(|&i| self.eval_data.labels[i]).collect();
        let mut rng = stream(self.config.seed, Purpose::Probe, coord, kind, 0);
        let result = linear_probe(
            &train_emb,
            &train_labels,
            &test_emb,
            &test_labels,
            self.eval_data.class_count,
            ProbeParams {
                iters: self.config.evaluation.probe_iters,
                learning_rate: self.config.evaluation.probe_lr,
                batch_size: self.config.evaluation.probe_batch,
            },
            &mut rng,
        )?;
        Ok(result.accuracy)
    }
}

fn mean_per_dim_std(points: &[Vec<f64>]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let dim = points[0].len();
    let n = points.len() as f64;
    let mut total = 0.0;
    for d in 0..dim {
        let mean: f64 = points.iter().map(|p| p[d]).sum::<f64>() / n;
        let var: f64 = points.iter().map(|p| (p[d] - mean).powi(2)).sum::<f64>() / n;
        total += var.sqrt();
    }
    total / dim as f64
}
