//! Grid runner for the desk-scale comparison setup: prints per-seed
//! accuracy curves, iterations-to-target, and time-averaged label variance
//! for each strategy.

use cfcl::config::*;
use cfcl::federation::run_simulation;

fn desk_config(strategy: Strategy, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = seed;
    cfg.strategy = strategy;
    cfg.device_count = 10;
    cfg.schedule = ScheduleConfig {
        total_steps: 600,
        aggregation_interval: 50,
        pull_interval: 10,
        lambda_slope: env_f64("LAMBDA_A", 6.0),
        lambda_intercept: env_f64("LAMBDA_B", 4.0),
    };
    cfg.topology = TopologyConfig::Rgg {
        target_avg_degree: env_f64("DEGREE", 3.0),
        tolerance: 0.5,
    };
    cfg.exchange = ExchangeConfig {
        reserve_size: env_usize("RESERVE", 20),
        approx_size: env_usize("APPROX", 100),
        cluster_count: env_usize("CLUSTERS", 4),
        pull_budget: 20,
        reserve_selection: ReserveSelection::Kmeans,
        buffer_mode: if std::env::var("UNLIMITED").is_ok() {
            BufferMode::Unlimited
        } else {
            BufferMode::Limited
        },
    };
    cfg.training = TrainingConfig {
        margin: env_f64("MARGIN", 1.0),
        learning_rate: env_f64("LR", 0.01),
        batch_size: 32,
        activation: cfcl::model::Activation::Relu,
        encoder_dims: vec![16, 32, 8],
    };
    cfg.augmentation.noise_sigma_scale = env_f64("NOISE", 0.1);
    cfg.dataset = DatasetConfig {
        source: DatasetSource::Synthetic {
            class_count: 10,
            per_class: 600 * 10 * 2 / 10 / 2 + env_usize("EVALPC", 60),
            dim: 16,
            sigma: env_f64("SIGMA", 1.5),
            separation: env_f64("SEP", 6.0),
        },
        labels_per_device: 2,
        per_device_size: 600,
        eval_per_class: env_usize("EVALPC", 60),
    };
    cfg.evaluation = EvaluationConfig {
        probe_iters: env_usize("PROBE_ITERS", 1000),
        probe_lr: 0.1,
        probe_batch: 64,
        probe_train_fraction: 0.5,
        eval_stride: 1,
        eval_every_steps: env_usize("EVAL_EVERY", 0),
        monitor_triplets: 128,
    };
    cfg
}

/// First (interpolated) step at which the curve reaches `target`.
fn interpolated_reach(curve: &[(usize, f64)], target: f64) -> f64 {
    for w in curve.windows(2) {
        let (t0, a0) = w[0];
        let (t1, a1) = w[1];
        if a0 >= target {
            return t0 as f64;
        }
        if a1 >= target && a1 > a0 {
            return t0 as f64 + (target - a0) / (a1 - a0) * (t1 - t0) as f64;
        }
    }
    if let Some(&(t, a)) = curve.first() {
        if a >= target {
            return t as f64;
        }
    }
    f64::INFINITY
}

fn env_f64(name: &str, default: f64) -> f64 {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn env_usize(name: &str, default: usize) -> usize {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() {
    let seeds: Vec<u64> = (1..=env_usize("SEEDS", 5) as u64).collect();
    let strategies = [Strategy::CfCl, Strategy::Uniform, Strategy::FedAvg];

    let mut order6 = 0usize;
    let mut order7 = 0usize;
    for &seed in &seeds {
        let mut curves = Vec::new();
        let mut variances = Vec::new();
        for &strategy in &strategies {
            let start = std::time::Instant::now();
            let cfg = desk_config(strategy, seed);
            let history = run_simulation(&cfg).unwrap();
            let curve: Vec<(usize, f64)> = history
                .evaluations
                .iter()
                .map(|r| (r.t, r.accuracy))
                .collect();
            let tv = history.per_step_label_variance.iter().sum::<f64>()
                / history.per_step_label_variance.len() as f64;

            // Diagnostic: fraction of pulled points whose label the receiver
            // already owns.
            let owned_frac = {
                let prepared = cfcl::federation::prepare_data(&cfg).unwrap();
                let mut prng = cfcl::rng::stream(cfg.seed, cfcl::rng::Purpose::Partition, 0, 0, 0);
                let parts = cfcl::data::partition_noniid(
                    &prepared.train,
                    cfg.device_count,
                    cfg.dataset.labels_per_device,
                    cfg.dataset.per_device_size,
                    &mut prng,
                )
                .unwrap();
                let device_labels: Vec<std::collections::HashSet<usize>> = parts
                    .iter()
                    .map(|rows| rows.iter().map(|&r| prepared.train.labels[r]).collect())
                    .collect();
                let mut owned = 0usize;
                let mut total = 0usize;
                for r in history.exchange_candidates.iter().filter(|r| r.chosen) {
                    total += 1;
                    if device_labels[r.receiver].contains(&prepared.train.labels[r.point_id]) {
                        owned += 1;
                    }
                }
                if total == 0 { f64::NAN } else { owned as f64 / total as f64 }
            };
            println!(
                "seed {seed} {:>18}: tv={tv:9.2} owned={owned_frac:.3} curve={:?} ({:.1?})",
                strategy.name(),
                curve.iter().map(|&(_, a)| (a * 1000.0).round() / 1000.0).collect::<Vec<f64>>(),
                start.elapsed(),
            );
            curves.push(curve);
            variances.push(tv);
        }
        // Target: uniform accuracy at T/2 = 300.
        let target = curves[1]
            .iter()
            .find(|&&(t, _)| t == 300)
            .map(|&(_, a)| a)
            .unwrap();
        let r_cfcl = interpolated_reach(&curves[0], target);
        let r_uni = interpolated_reach(&curves[1], target);
        let r_fed = interpolated_reach(&curves[2], target);
        let ok6 = r_cfcl < r_uni && r_uni < r_fed;
        let ok7 = variances[0] <= variances[1] && variances[1] <= variances[2];
        if ok6 {
            order6 += 1;
        }
        if ok7 {
            order7 += 1;
        }
        println!(
            "seed {seed}: target={target:.3} reach cf-cl={r_cfcl:.0} uniform={r_uni:.0} fedavg={r_fed:.0} ok6={ok6} | tv {:?} ok7={ok7}",
            variances
        );
    }
    println!("criterion6 ordering holds in {order6}/{} seeds", seeds.len());
    println!("criterion7 ordering holds in {order7}/{} seeds", seeds.len());
}
