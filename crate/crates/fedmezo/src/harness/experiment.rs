//! Experiment assembly and the run loop.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::federation::{
    run_round, split_dataset, ClientState, CommLedger, LrAssigner, LocalTrainOpts, RoundRecord,
    ServerState, SplitSpec,
};
use crate::objective::{
    global_quadratic, make_client_quadratics, Heterogeneity, ObjectiveHandle, QuadraticSpec,
};
use crate::params::ParamsView;
use crate::personalize::LrStrategy;
use crate::rng::{derive_seed, RngRecipe, SeedStream, StreamDomain};
use crate::theory::lr_bound;
use crate::track;
use crate::zoo::ZooConfig;

use super::config::{DatasetConfig, ExperimentConfig, ObjectiveConfig};

/// Everything a replicate needs, materialized from the config.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub replicate_seed: u64,
    /// Shard-bound objective per client, ascending id order.
    pub client_objectives: Vec<ObjectiveHandle>,
    /// Held-out evaluator (exact global objective for quadratics).
    pub eval_objective: ObjectiveHandle,
    /// Shard assignment when the objective is data-backed.
    pub shards: Option<Vec<Vec<usize>>>,
    /// Smoothness constant used for ceilings (max over clients).
    pub smoothness: f64,
    /// Closed-form `(c_g, sigma_g^2)` when the construction provides one.
    pub batch_constants: Option<(f64, f64)>,
    /// Exact optimal loss when known.
    pub f_star: Option<f64>,
}

impl Experiment {
    /// Build all per-replicate state from the config and a replicate seed.
    pub fn build(config: &ExperimentConfig, replicate_seed: u64) -> Result<Experiment> {
        config.validate().map_err(|e| Error::Config(e.to_string()))?;
        match &config.objective {
            ObjectiveConfig::Quadratic {
                dim,
                samples_per_client,
                shift_scale,
                curvature_spread,
                scale_outlier_fraction,
                scale_outlier_value,
                ..
            } => {
                let het = Heterogeneity {
                    shift_scale: *shift_scale,
                    curvature_spread: *curvature_spread,
                };
                let base_specs =
                    make_client_quadratics(config.clients, *dim, het, replicate_seed)?;
                let scales =
                    outlier_scales(*samples_per_client, *scale_outlier_fraction, *scale_outlier_value);
                let mut client_objectives = Vec::with_capacity(config.clients);
                let mut specs_with_scales = Vec::with_capacity(config.clients);
                for spec in &base_specs {
                    let scaled = QuadraticSpec::with_sample_scales(
                        spec.curvature().clone(),
                        spec.optimum().clone(),
                        spec.offset(),
                        scales.clone(),
                    )?;
                    specs_with_scales.push(scaled.clone());
                    client_objectives.push(ObjectiveHandle::quadratic_uniform(
                        Arc::new(scaled),
                        *samples_per_client,
                    )?);
                }
                let global = global_quadratic(&base_specs)?;
                let f_star = Some(global.offset());
                let smoothness = specs_with_scales
                    .iter()
                    .map(|s| s.smoothness())
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .fold(0.0f64, f64::max);
                let batch_constants =
                    Some(specs_with_scales[0].batch_constants(client_objectives[0].data())?);
                let eval_objective =
                    ObjectiveHandle::quadratic_uniform(Arc::new(global), 1)?;
                Ok(Experiment {
                    config: config.clone(),
                    replicate_seed,
                    client_objectives,
                    eval_objective,
                    shards: None,
                    smoothness,
                    batch_constants,
                    f_star,
                })
            }
            ObjectiveConfig::Logreg { dim, l2, dataset } => {
                let data = build_dataset(dataset, *dim, replicate_seed)?;
                let spec = Arc::new(crate::objective::LogRegSpec::new(*dim, *l2)?);
                let (train, eval, shards) = split_train_eval(
                    &data,
                    config.eval_fraction,
                    &config.splitter.to_kind(),
                    config.clients,
                    replicate_seed,
                )?;
                let mut client_objectives = Vec::with_capacity(config.clients);
                for shard in &train {
                    client_objectives
                        .push(ObjectiveHandle::logreg(Arc::clone(&spec), Arc::new(shard.clone()))?);
                }
                let eval_objective = ObjectiveHandle::logreg(Arc::clone(&spec), Arc::new(eval))?;
                let smoothness = spec.smoothness_bound(&data)?;
                Ok(Experiment {
                    config: config.clone(),
                    replicate_seed,
                    client_objectives,
                    eval_objective,
                    shards: Some(shards),
                    smoothness,
                    batch_constants: None,
                    f_star: None,
                })
            }
            ObjectiveConfig::MlpLora {
                layers,
                rank,
                alpha,
                dataset,
            } => {
                let data = build_dataset(dataset, layers[0], replicate_seed)?;
                let spec = Arc::new(crate::objective::MlpLoraSpec::new(
                    layers.clone(),
                    *rank,
                    *alpha,
                    replicate_seed,
                )?);
                let (train, eval, shards) = split_train_eval(
                    &data,
                    config.eval_fraction,
                    &config.splitter.to_kind(),
                    config.clients,
                    replicate_seed,
                )?;
                let mut client_objectives = Vec::with_capacity(config.clients);
                for shard in &train {
                    client_objectives.push(ObjectiveHandle::mlp_lora(
                        Arc::clone(&spec),
                        Arc::new(shard.clone()),
                    )?);
                }
                let eval_objective =
                    ObjectiveHandle::mlp_lora(Arc::clone(&spec), Arc::new(eval))?;
                // Curvature probe at the adapter init point.
                let probe_params = eval_objective.init_params(replicate_seed, 0.0)?;
                let smoothness = crate::theory::estimate_smoothness(
                    &eval_objective,
                    &probe_params,
                    8,
                    replicate_seed,
                )?
                .max(1e-6);
                Ok(Experiment {
                    config: config.clone(),
                    replicate_seed,
                    client_objectives,
                    eval_objective,
                    shards: Some(shards),
                    smoothness,
                    batch_constants: None,
                    f_star: None,
                })
            }
        }
    }

    pub fn trainable_dim(&self) -> usize {
        self.eval_objective.dim()
    }

    /// Initial global trainable vector for this replicate.
    pub fn initial_params(&self) -> Result<ParamsView> {
        let radius = match &self.config.objective {
            ObjectiveConfig::Quadratic { init_radius, .. } => *init_radius,
            _ => 0.0,
        };
        self.eval_objective.init_params(self.replicate_seed, radius)
    }

    /// Theory ceiling with the construction's own constants where available
    /// (`c_g = 1` otherwise, which can only over-estimate the ceiling).
    pub fn lr_ceiling(&self) -> f64 {
        let c_g = self.batch_constants.map(|(c, _)| c).unwrap_or(1.0);
        lr_bound(
            self.config.local_steps,
            self.smoothness,
            c_g,
            self.trainable_dim(),
            self.config.clients,
        )
    }

    /// Fresh client states at the base learning rate.
    pub fn make_clients(&self) -> Result<Vec<ClientState>> {
        self.client_objectives
            .iter()
            .enumerate()
            .map(|(id, obj)| ClientState::new(id, obj.clone(), self.config.eta0))
            .collect()
    }

    /// The personalization strategy from the config.
    pub fn make_strategy(&self) -> Result<LrStrategy> {
        let ceiling = self
            .config
            .personalization
            .clamp_to_ceiling
            .then(|| self.lr_ceiling());
        Ok(LrStrategy {
            kind: self.config.personalization.kind,
            policy: self.config.lr_policy(ceiling)?,
        })
    }
}

/// Deterministic curvature-outlier scale vector: the first
/// `floor(fraction * n)` samples carry `value`, the rest are rescaled so the
/// mean is exactly 1.
fn outlier_scales(n: usize, fraction: f64, value: f64) -> Vec<f64> {
    let k = (fraction * n as f64).floor() as usize;
    if k == 0 || value <= 1.0 {
        return Vec::new();
    }
    let rest = (n - k) as f64;
    let low = (n as f64 - k as f64 * value) / rest;
    let low = low.max(0.0);
    let mut scales = vec![low; n];
    for s in scales.iter_mut().take(k) {
        *s = value;
    }
    // Exact mean-1 correction on the last entry against rounding.
    let mean: f64 = scales.iter().sum::<f64>() / n as f64;
    let correction = n as f64 * (1.0 - mean);
    if let Some(last) = scales.last_mut() {
        *last += correction;
    }
    scales
}

fn build_dataset(cfg: &DatasetConfig, dim: usize, replicate_seed: u64) -> Result<Dataset> {
    match cfg {
        DatasetConfig::Synthetic { n, separation, tasks } => Dataset::synthetic_blobs(
            *n,
            dim,
            *separation,
            *tasks,
            StreamDomain::Data.shift(replicate_seed),
        ),
        DatasetConfig::Csv { path } => {
            let ds = Dataset::from_csv(path)?;
            if ds.feature_dim() != dim {
                return Err(Error::Config(format!(
                    "dataset {} has feature dim {}, objective expects {dim}",
                    path,
                    ds.feature_dim()
                )));
            }
            Ok(ds)
        }
    }
}

/// Hold out `eval_fraction` of the dataset, then split the rest across
/// clients. Returns (client shards as owned datasets, eval set, the shard
/// index assignment relative to the original dataset).
fn split_train_eval(
    data: &Dataset,
    eval_fraction: f64,
    split_kind: &crate::federation::SplitKind,
    n_clients: usize,
    replicate_seed: u64,
) -> Result<(Vec<Dataset>, Dataset, Vec<Vec<usize>>)> {
    let n = data.n_samples();
    let n_eval = ((eval_fraction * n as f64).round() as usize).min(n.saturating_sub(n_clients));
    let mut indices: Vec<usize> = (0..n).collect();
    let mut stream = SeedStream::from_seed(StreamDomain::Split.shift(replicate_seed) ^ 0x5EED);
    stream.shuffle(&mut indices);
    let (eval_idx, train_idx) = indices.split_at(n_eval);
    let mut eval_idx = eval_idx.to_vec();
    eval_idx.sort_unstable();
    let mut train_idx = train_idx.to_vec();
    train_idx.sort_unstable();

    let eval = if eval_idx.is_empty() {
        // Degenerate but allowed (eval_fraction = 0): evaluate on everything.
        data.clone()
    } else {
        data.subset(&eval_idx)?
    };
    let train = data.subset(&train_idx)?;
    let spec = SplitSpec {
        kind: split_kind.clone(),
        n_clients,
        seed: replicate_seed,
    };
    let local = split_dataset(&train, &spec)?;
    // Map shard indices back to rows of the original dataset for the export.
    let shards_original: Vec<Vec<usize>> = local
        .iter()
        .map(|shard| shard.iter().map(|&i| train_idx[i]).collect())
        .collect();
    let shard_datasets = local
        .iter()
        .map(|shard| train.subset(shard))
        .collect::<Result<Vec<_>>>()?;
    Ok((shard_datasets, eval, shards_original))
}

/// One deterministic metrics row per (replicate, round). Round 0 is the
/// pre-training evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub replicate: usize,
    pub seed: u64,
    pub round: u64,
    pub eval_loss: f64,
    pub train_loss: Vec<Option<f64>>,
    pub eta: Vec<f64>,
    pub bytes_up_cum: u64,
    pub bytes_down_cum: u64,
    pub failed: Vec<usize>,
}

/// Wall-clock sidecar row (non-deterministic; kept out of metrics.jsonl).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub replicate: usize,
    pub round: u64,
    pub wall_ms: f64,
    pub buffer_allocs: u64,
}

/// Run summary, one JSON file per run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub replicates: usize,
    pub rounds: usize,
    pub final_loss_per_replicate: Vec<f64>,
    pub final_loss_mean: f64,
    pub final_loss_std: f64,
    pub warnings: Vec<String>,
    pub failed_rounds: Vec<String>,
}

/// Derived master seed for one replicate: replicate 0 keeps the configured
/// master seed (single-run reproducibility), later replicates get
/// counter-derived seeds.
pub fn replicate_seed(master_seed: u64, replicate: usize) -> u64 {
    if replicate == 0 {
        master_seed
    } else {
        derive_seed(&RngRecipe::new(
            StreamDomain::Replicate.shift(master_seed),
            replicate as u64,
            0,
            0,
        ))
    }
}

/// In-memory result of one replicate.
pub struct ReplicateResult {
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    pub timings: Vec<TimingRow>,
    pub failure: Option<String>,
    pub shards: Option<Vec<Vec<usize>>>,
}

/// Run one replicate, producing metrics rows (round 0 = initial evaluation).
pub fn run_replicate(
    config: &ExperimentConfig,
    replicate: usize,
) -> Result<ReplicateResult> {
    let seed = replicate_seed(config.master_seed, replicate);
    let experiment = Experiment::build(config, seed)?;
    let mut clients = experiment.make_clients()?;
    let mut strategy = experiment.make_strategy()?;
    let mut server = ServerState::new(experiment.initial_params()?, seed);
    let mut ledger = CommLedger::new(
        experiment.trainable_dim() as u64,
        config.bytes_per_param,
    );
    let opts = LocalTrainOpts {
        master_seed: seed,
        round: 0,
        local_steps: config.local_steps,
        zoo: ZooConfig::new(config.mu)?,
        batch_size: config.batch_size,
        rule: config.optimizer,
        restore: config.restore_mode,
        trace_batches: config.trace_batches,
    };
    let eval_obj = experiment.eval_objective.clone();
    let evaluator = move |params: &ParamsView| eval_obj.full_loss(params);

    let mut rows = Vec::with_capacity(config.rounds + 1);
    let mut timings = Vec::with_capacity(config.rounds + 1);
    let initial_eval = experiment.eval_objective.full_loss(&server.global_params)?;
    rows.push(MetricsRow {
        replicate,
        seed,
        round: 0,
        eval_loss: initial_eval,
        train_loss: vec![None; clients.len()],
        eta: vec![config.eta0; clients.len()],
        bytes_up_cum: 0,
        bytes_down_cum: 0,
        failed: Vec::new(),
    });

    let mut best = initial_eval;
    let mut rounds_since_improvement = 0usize;
    let mut failure = None;
    let mut bytes_up_cum = 0u64;
    let mut bytes_down_cum = 0u64;
    for _ in 0..config.rounds {
        let allocs_before = track::buffer_alloc_count();
        let record: RoundRecord = match run_round(
            &mut server,
            &mut clients,
            &opts,
            &mut strategy as &mut dyn LrAssigner,
            &mut ledger,
            &evaluator,
        ) {
            Ok(r) => r,
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        bytes_up_cum += record.bytes_up;
        bytes_down_cum += record.bytes_down;
        rows.push(MetricsRow {
            replicate,
            seed,
            round: server.round,
            eval_loss: record.global_eval_loss,
            train_loss: record.client_train_loss.clone(),
            eta: record.client_eta.clone(),
            bytes_up_cum,
            bytes_down_cum,
            failed: record.failed_clients.clone(),
        });
        timings.push(TimingRow {
            replicate,
            round: server.round,
            wall_ms: record.elapsed_ms,
            buffer_allocs: track::buffer_alloc_count() - allocs_before,
        });
        if let Some(patience) = config.patience {
            if record.global_eval_loss < best {
                best = record.global_eval_loss;
                rounds_since_improvement = 0;
            } else {
                rounds_since_improvement += 1;
                if rounds_since_improvement >= patience {
                    break;
                }
            }
        }
    }

    Ok(ReplicateResult {
        seed,
        rows,
        timings,
        failure,
        shards: experiment.shards.clone(),
    })
}

/// Run every replicate and persist metrics, timing, shard exports, and the
/// summary under `config.output_dir`. Returns the summary.
pub fn run(config: &ExperimentConfig, extra_warnings: &[String]) -> Result<RunSummary> {
    let out = PathBuf::from(&config.output_dir);
    std::fs::create_dir_all(&out)?;
    let metrics_path = out.join("metrics.jsonl");
    let timing_path = out.join("timing.jsonl");
    let mut metrics = std::io::BufWriter::new(std::fs::File::create(&metrics_path)?);
    let mut timing = std::io::BufWriter::new(std::fs::File::create(&timing_path)?);

    let mut final_losses = Vec::with_capacity(config.replicates);
    let mut failed_rounds = Vec::new();
    for rep in 0..config.replicates {
        let result = run_replicate(config, rep)?;
        for row in &result.rows {
            serde_json::to_writer(&mut metrics, row)?;
            metrics.write_all(b"\n")?;
            // Line-buffered: every prefix of the file is valid JSONL.
            metrics.flush()?;
        }
        for t in &result.timings {
            serde_json::to_writer(&mut timing, t)?;
            timing.write_all(b"\n")?;
        }
        timing.flush()?;
        if let Some(f) = result.failure {
            failed_rounds.push(format!("replicate {rep}: {f}"));
        }
        if let Some(shards) = &result.shards {
            std::fs::write(
                out.join(format!("shards_rep{rep}.json")),
                crate::federation::shard_assignment_json(shards),
            )?;
        }
        if let Some(last) = result.rows.last() {
            final_losses.push(last.eval_loss);
        }
    }

    let mean = final_losses.iter().sum::<f64>() / final_losses.len().max(1) as f64;
    let std = if final_losses.len() > 1 {
        (final_losses.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
            / (final_losses.len() - 1) as f64)
            .sqrt()
    } else {
        0.0
    };
    let summary = RunSummary {
        replicates: config.replicates,
        rounds: config.rounds,
        final_loss_per_replicate: final_losses,
        final_loss_mean: mean,
        final_loss_std: std,
        warnings: extra_warnings.to_vec(),
        failed_rounds,
    };
    std::fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(summary)
}

/// Read every metrics row from a `metrics.jsonl` file.
pub fn read_metrics<P: AsRef<Path>>(path: P) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
