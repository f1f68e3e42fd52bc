//! Run configuration: a single TOML file with flat keys and nested
//! sections. Field defaults follow the reference experimental setup; the
//! `configs/` directory in the repository holds smaller desk-scale files.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Activation, AugmentationSpec};

/// Which data-exchange policy a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    /// Importance-sampled pulls scored with the latest global model.
    #[serde(rename = "cf-cl")]
    CfCl,
    /// Pulls sampled uniformly from the transmitter's candidate pool.
    #[serde(rename = "uniform")]
    Uniform,
    /// No data exchange at all.
    #[serde(rename = "fedavg")]
    FedAvg,
    /// Importance-sampled pulls scored with the receiver's latest local model.
    #[serde(rename = "cf-cl-localmodel")]
    CfClLocalModel,
}

impl Strategy {
    /// Strategies whose pulls require pushed reserve data.
    pub fn uses_reserve(self) -> bool {
        matches!(self, Strategy::CfCl | Strategy::CfClLocalModel)
    }

    /// Strategies that pull data at all.
    pub fn pulls_data(self) -> bool {
        !matches!(self, Strategy::FedAvg)
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::CfCl => "cf-cl",
            Strategy::Uniform => "uniform",
            Strategy::FedAvg => "fedavg",
            Strategy::CfClLocalModel => "cf-cl-localmodel",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cf-cl" => Ok(Strategy::CfCl),
            "uniform" => Ok(Strategy::Uniform),
            "fedavg" => Ok(Strategy::FedAvg),
            "cf-cl-localmodel" => Ok(Strategy::CfClLocalModel),
            other => Err(Error::config(
                "strategy",
                format!("unknown strategy `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    /// Total local SGD iterations T.
    pub total_steps: usize,
    /// Aggregation interval T_a.
    pub aggregation_interval: usize,
    /// Pull interval T_p.
    pub pull_interval: usize,
    /// Selection temperature slope a in lambda(t) = a*(t/T) + b.
    pub lambda_slope: f64,
    /// Selection temperature intercept b.
    pub lambda_intercept: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            total_steps: 2500,
            aggregation_interval: 50,
            pull_interval: 10,
            lambda_slope: 6.0,
            lambda_intercept: 4.0,
        }
    }
}

impl ScheduleConfig {
    /// Selection temperature at step `t`.
    pub fn lambda_at(&self, t: usize) -> f64 {
        self.lambda_slope * (t as f64 / self.total_steps as f64) + self.lambda_intercept
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TopologyConfig {
    Rgg {
        #[serde(default = "default_target_degree")]
        target_avg_degree: f64,
        #[serde(default = "default_degree_tolerance")]
        tolerance: f64,
    },
    Explicit {
        adjacency: Vec<Vec<usize>>,
    },
}

fn default_target_degree() -> f64 {
    3.0
}

fn default_degree_tolerance() -> f64 {
    0.5
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig::Rgg {
            target_avg_degree: default_target_degree(),
            tolerance: default_degree_tolerance(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReserveSelection {
    Kmeans,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BufferMode {
    /// Purge the pulled buffer before every pull event.
    Limited,
    /// Accumulate pulled points across events.
    Unlimited,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExchangeConfig {
    /// Reserve size per ordered neighbor pair.
    pub reserve_size: usize,
    /// Candidate pool size per transmitter.
    pub approx_size: usize,
    /// Cluster count for pull scoring.
    pub cluster_count: usize,
    /// Points pulled per ordered neighbor pair per event.
    pub pull_budget: usize,
    pub reserve_selection: ReserveSelection,
    pub buffer_mode: BufferMode,
}

impl Default for ExchangeConfig {
    fn default() -> Self {
        Self {
            reserve_size: 500,
            approx_size: 1000,
            cluster_count: 4,
            pull_budget: 50,
            reserve_selection: ReserveSelection::Kmeans,
            buffer_mode: BufferMode::Limited,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub margin: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub activation: Activation,
    /// MLP layer sizes, input dimension first, embedding dimension last.
    pub encoder_dims: Vec<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            learning_rate: 1e-4,
            batch_size: 32,
            activation: Activation::Relu,
            encoder_dims: vec![784, 128, 64],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    /// Noise scale as a fraction of the mean per-dimension standard
    /// deviation of the training pool; ignored when `noise_sigma` is set.
    pub noise_sigma_scale: f64,
    /// Absolute noise standard deviation override.
    pub noise_sigma: Option<f64>,
    pub scale_lo: f64,
    pub scale_hi: f64,
    pub mask_fraction: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            noise_sigma_scale: 0.1,
            noise_sigma: None,
            scale_lo: 0.8,
            scale_hi: 1.2,
            mask_fraction: 0.1,
        }
    }
}

impl AugmentationConfig {
    /// Materializes the family, resolving the noise scale against the mean
    /// per-dimension standard deviation of the training pool.
    pub fn build_specs(&self, mean_per_dim_std: f64) -> Vec<AugmentationSpec> {
        let sigma = self
            .noise_sigma
            .unwrap_or(self.noise_sigma_scale * mean_per_dim_std);
        vec![
            AugmentationSpec::AdditiveGaussianNoise { sigma },
            AugmentationSpec::RandomUniformScaling {
                lo: self.scale_lo,
                hi: self.scale_hi,
            },
            AugmentationSpec::RandomCoordinateMasking {
                fraction: self.mask_fraction,
            },
        ]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSource {
    Synthetic {
        #[serde(default = "default_class_count")]
        class_count: usize,
        #[serde(default = "default_per_class")]
        per_class: usize,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_sigma")]
        sigma: f64,
        #[serde(default = "default_separation")]
        separation: f64,
    },
    Idx {
        images_path: String,
        labels_path: String,
    },
}

fn default_class_count() -> usize {
    10
}

fn default_per_class() -> usize {
    6100
}

fn default_dim() -> usize {
    784
}

fn default_sigma() -> f64 {
    1.0
}

fn default_separation() -> f64 {
    8.0
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic {
            class_count: default_class_count(),
            per_class: default_per_class(),
            dim: default_dim(),
            sigma: default_sigma(),
            separation: default_separation(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    #[serde(flatten)]
    pub source: DatasetSource,
    pub labels_per_device: usize,
    pub per_device_size: usize,
    /// Held-out labeled points per class, used only by the linear probe.
    pub eval_per_class: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            source: DatasetSource::default(),
            labels_per_device: 2,
            per_device_size: 6000,
            eval_per_class: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    pub probe_iters: usize,
    pub probe_lr: f64,
    pub probe_batch: usize,
    /// Fraction of the held-out set used to train the probe; the rest is the
    /// probe test set.
    pub probe_train_fraction: f64,
    /// Run the probe every `eval_stride` aggregations.
    pub eval_stride: usize,
    /// When nonzero, additionally probe a monitoring-only virtual aggregate
    /// of the current local models every this many steps, giving
    /// accuracy-vs-iteration curves finer than the aggregation interval.
    pub eval_every_steps: usize,
    /// Triplets sampled for the global loss estimate at each aggregation.
    pub monitor_triplets: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            probe_iters: 1000,
            probe_lr: 0.1,
            probe_batch: 64,
            probe_train_fraction: 0.5,
            eval_stride: 1,
            eval_every_steps: 0,
            monitor_triplets: 256,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DelayConfig {
    pub rate_bits_per_sec: f64,
    pub model_bits_per_param: f64,
    pub data_bits_per_element: f64,
}

impl Default for DelayConfig {
    fn default() -> Self {
        Self {
            rate_bits_per_sec: 1e6,
            model_bits_per_param: 32.0,
            data_bits_per_element: 8.0,
        }
    }
}

/// The full run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub strategy: Strategy,
    pub device_count: usize,
    pub schedule: ScheduleConfig,
    pub topology: TopologyConfig,
    pub exchange: ExchangeConfig,
    pub training: TrainingConfig,
    pub augmentation: AugmentationConfig,
    pub dataset: DatasetConfig,
    pub evaluation: EvaluationConfig,
    pub delay: DelayConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            strategy: Strategy::CfCl,
            device_count: 10,
            schedule: ScheduleConfig::default(),
            topology: TopologyConfig::default(),
            exchange: ExchangeConfig::default(),
            training: TrainingConfig::default(),
            augmentation: AugmentationConfig::default(),
            dataset: DatasetConfig::default(),
            evaluation: EvaluationConfig::default(),
            delay: DelayConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(s)
            .map_err(|e| Error::config("<file>", e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Cross-field validation; every rejected precondition names its field.
    pub fn validate(&self) -> Result<()> {
        if self.device_count == 0 {
            return Err(Error::config("device_count", "must be >= 1"));
        }
        let s = &self.schedule;
        if s.total_steps == 0 {
            return Err(Error::config("schedule.total_steps", "must be >= 1"));
        }
        if s.aggregation_interval == 0 {
            return Err(Error::config("schedule.aggregation_interval", "must be >= 1"));
        }
        if s.pull_interval == 0 {
            return Err(Error::config("schedule.pull_interval", "must be >= 1"));
        }

        match &self.topology {
            TopologyConfig::Rgg {
                target_avg_degree,
                tolerance,
            } => {
                if self.device_count < 2 {
                    return Err(Error::config(
                        "topology.kind",
                        "rgg needs device_count >= 2; use an explicit adjacency",
                    ));
                }
                if !(*target_avg_degree > 0.0
                    && *target_avg_degree <= (self.device_count - 1) as f64)
                {
                    return Err(Error::config(
                        "topology.target_avg_degree",
                        format!("must be in (0, {}]", self.device_count - 1),
                    ));
                }
                if *tolerance <= 0.0 {
                    return Err(Error::config("topology.tolerance", "must be > 0"));
                }
            }
            TopologyConfig::Explicit { adjacency } => {
                if adjacency.len() != self.device_count {
                    return Err(Error::config(
                        "topology.adjacency",
                        format!(
                            "has {} rows but device_count is {}",
                            adjacency.len(),
                            self.device_count
                        ),
                    ));
                }
            }
        }

        let e = &self.exchange;
        if e.reserve_size == 0 {
            return Err(Error::config("exchange.reserve_size", "must be >= 1"));
        }
        if e.reserve_size > self.dataset.per_device_size {
            return Err(Error::config(
                "exchange.reserve_size",
                format!(
                    "exceeds per-device dataset size {}",
                    self.dataset.per_device_size
                ),
            ));
        }
        if e.approx_size == 0 {
            return Err(Error::config("exchange.approx_size", "must be >= 1"));
        }
        if e.cluster_count == 0 {
            return Err(Error::config("exchange.cluster_count", "must be >= 1"));
        }
        if e.pull_budget > e.approx_size {
            return Err(Error::config(
                "exchange.pull_budget",
                format!("exceeds approx_size {}", e.approx_size),
            ));
        }
        if e.pull_budget > self.dataset.per_device_size {
            return Err(Error::config(
                "exchange.pull_budget",
                format!(
                    "exceeds per-device dataset size {}, so a candidate pool could run short",
                    self.dataset.per_device_size
                ),
            ));
        }

        let t = &self.training;
        if t.margin < 0.0 {
            return Err(Error::config("training.margin", "must be >= 0"));
        }
        if t.learning_rate < 0.0 {
            return Err(Error::config("training.learning_rate", "must be >= 0"));
        }
        if t.batch_size == 0 {
            return Err(Error::config("training.batch_size", "must be >= 1"));
        }
        if t.encoder_dims.len() < 2 {
            return Err(Error::config(
                "training.encoder_dims",
                "need at least input and embedding dimensions",
            ));
        }
        if t.encoder_dims.iter().any(|&d| d == 0) {
            return Err(Error::config("training.encoder_dims", "dimensions must be >= 1"));
        }

        let a = &self.augmentation;
        if a.noise_sigma_scale < 0.0 || a.noise_sigma.is_some_and(|v| v < 0.0) {
            return Err(Error::config("augmentation.noise_sigma", "must be >= 0"));
        }
        if !(a.scale_lo > 0.0 && a.scale_hi >= a.scale_lo) {
            return Err(Error::config(
                "augmentation.scale_range",
                "must satisfy 0 < scale_lo <= scale_hi",
            ));
        }
        if !(0.0..=1.0).contains(&a.mask_fraction) {
            return Err(Error::config("augmentation.mask_fraction", "must be in [0,1]"));
        }

        let d = &self.dataset;
        if d.labels_per_device == 0 {
            return Err(Error::config("dataset.labels_per_device", "must be >= 1"));
        }
        if d.per_device_size == 0 {
            return Err(Error::config("dataset.per_device_size", "must be >= 1"));
        }
        if let DatasetSource::Synthetic {
            class_count,
            per_class,
            dim,
            sigma,
            separation,
        } = &d.source
        {
            if *class_count == 0 || *per_class == 0 || *dim == 0 {
                return Err(Error::config("dataset", "sizes must be >= 1"));
            }
            if *sigma < 0.0 {
                return Err(Error::config("dataset.sigma", "must be >= 0"));
            }
            if *separation <= 0.0 {
                return Err(Error::config("dataset.separation", "must be > 0"));
            }
            if d.labels_per_device > *class_count {
                return Err(Error::config(
                    "dataset.labels_per_device",
                    format!("exceeds class_count {class_count}"),
                ));
            }
            if self.training.encoder_dims[0] != *dim {
                return Err(Error::config(
                    "training.encoder_dims",
                    format!(
                        "input dimension {} does not match dataset dim {dim}",
                        self.training.encoder_dims[0]
                    ),
                ));
            }
            let total = class_count * per_class;
            let demand =
                self.device_count * d.per_device_size + d.eval_per_class * class_count;
            if total < demand {
                return Err(Error::config(
                    "dataset.per_class",
                    format!("dataset supplies {total} points but the run needs {demand}"),
                ));
            }
        }

        let ev = &self.evaluation;
        if ev.probe_iters == 0 {
            return Err(Error::config("evaluation.probe_iters", "must be >= 1"));
        }
        if ev.probe_batch == 0 {
            return Err(Error::config("evaluation.probe_batch", "must be >= 1"));
        }
        if !(ev.probe_train_fraction > 0.0 && ev.probe_train_fraction < 1.0) {
            return Err(Error::config(
                "evaluation.probe_train_fraction",
                "must be in (0,1)",
            ));
        }
        if ev.eval_stride == 0 {
            return Err(Error::config("evaluation.eval_stride", "must be >= 1"));
        }
        if ev.monitor_triplets == 0 {
            return Err(Error::config("evaluation.monitor_triplets", "must be >= 1"));
        }

        let dl = &self.delay;
        if dl.rate_bits_per_sec <= 0.0
            || dl.model_bits_per_param <= 0.0
            || dl.data_bits_per_element <= 0.0
        {
            return Err(Error::config("delay", "all rates and widths must be > 0"));
        }
        Ok(())
    }
}
