//! Experiment configuration: JSON schema, defaults, validation.
//!
//! Field names are fixed by `docs/formats.md`. Unknown keys are rejected with
//! the offending key named; a base rate above the theory ceiling is a warning,
//! not an error (the blow-up experiments need over-ceiling rates).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::{OptimizerKind, SplitKind};
use crate::personalize::{LrForm, SignalKind};
use crate::zoo::RestoreMode;

/// Dataset source for data-backed objectives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Two-class Gaussian blobs.
    Synthetic {
        n: usize,
        #[serde(default = "default_separation")]
        separation: f64,
        /// Emit task tags cycling over this many groups (meta splitter).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tasks: Option<usize>,
    },
    /// CSV with a header row: float features, integer `label`, optional
    /// integer `task`.
    Csv { path: String },
}

fn default_separation() -> f64 {
    2.0
}

/// Objective family and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveConfig {
    /// Generated per-client quadratics with optional heterogeneity and
    /// per-sample curvature outliers (mini-batch noise with closed-form
    /// constants).
    Quadratic {
        dim: usize,
        #[serde(default = "default_samples_per_client")]
        samples_per_client: usize,
        #[serde(default)]
        shift_scale: f64,
        #[serde(default)]
        curvature_spread: f64,
        /// Fraction of samples carrying the outlier curvature scale.
        #[serde(default)]
        scale_outlier_fraction: f64,
        /// Curvature multiplier on outlier samples; the rest are rescaled so
        /// the mean stays exactly 1.
        #[serde(default = "default_outlier_value")]
        scale_outlier_value: f64,
        #[serde(default = "default_init_radius")]
        init_radius: f64,
    },
    Logreg {
        dim: usize,
        #[serde(default)]
        l2: f64,
        dataset: DatasetConfig,
    },
    MlpLora {
        layers: Vec<usize>,
        #[serde(default = "default_rank")]
        rank: usize,
        #[serde(default = "default_alpha")]
        alpha: f64,
        dataset: DatasetConfig,
    },
}

fn default_samples_per_client() -> usize {
    50
}

fn default_outlier_value() -> f64 {
    1.0
}

fn default_init_radius() -> f64 {
    10.0
}

fn default_rank() -> usize {
    4
}

fn default_alpha() -> f64 {
    8.0
}

/// Splitter selection (quadratic objectives generate shards directly and
/// ignore this).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitterConfig {
    Iid,
    Dirichlet { beta: f64 },
    MetaByTask,
}

impl SplitterConfig {
    pub fn to_kind(&self) -> SplitKind {
        match self {
            SplitterConfig::Iid => SplitKind::Iid,
            SplitterConfig::Dirichlet { beta } => SplitKind::Dirichlet { beta: *beta },
            SplitterConfig::MetaByTask => SplitKind::MetaByTask { assignment: None },
        }
    }
}

/// Adaptive learning-rate strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonalizationConfig {
    pub kind: SignalKind,
    /// Sensitivity; defaults to `eta0 / 2`, mirroring the reference band
    /// `[eta0 - alpha, eta0 + alpha] = [0.5 eta0, 1.5 eta0]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default = "default_form")]
    pub form: LrForm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_max: Option<f64>,
    /// Clamp produced rates to the measured theory ceiling as well.
    #[serde(default)]
    pub clamp_to_ceiling: bool,
}

fn default_form() -> LrForm {
    LrForm::Additive
}

impl Default for PersonalizationConfig {
    fn default() -> Self {
        Self {
            kind: SignalKind::Disabled,
            alpha: None,
            form: LrForm::Additive,
            eta_min: None,
            eta_max: None,
            clamp_to_ceiling: false,
        }
    }
}

/// Full experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub objective: ObjectiveConfig,
    #[serde(default = "default_clients")]
    pub clients: usize,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_local_steps")]
    pub local_steps: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_eta0")]
    pub eta0: f64,
    #[serde(default = "default_splitter")]
    pub splitter: SplitterConfig,
    #[serde(default)]
    pub personalization: PersonalizationConfig,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_master_seed")]
    pub master_seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    #[serde(default = "default_eval_fraction")]
    pub eval_fraction: f64,
    #[serde(default = "default_bytes_per_param")]
    pub bytes_per_param: u64,
    /// Early stopping: halt after this many rounds without eval improvement.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[serde(default)]
    pub trace_batches: bool,
    #[serde(default = "default_restore_mode")]
    pub restore_mode: RestoreMode,
}

fn default_clients() -> usize {
    3
}
fn default_rounds() -> usize {
    500
}
fn default_local_steps() -> usize {
    30
}
fn default_batch_size() -> usize {
    1
}
fn default_mu() -> f64 {
    1e-3
}
fn default_eta0() -> f64 {
    1e-5
}
fn default_splitter() -> SplitterConfig {
    SplitterConfig::Iid
}
fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Fedmezo
}
fn default_master_seed() -> u64 {
    42
}
fn default_replicates() -> usize {
    1
}
fn default_output_dir() -> String {
    "out".into()
}
fn default_eval_fraction() -> f64 {
    0.1
}
fn default_bytes_per_param() -> u64 {
    8
}
fn default_restore_mode() -> RestoreMode {
    RestoreMode::InPlace
}

impl ExperimentConfig {
    pub fn from_json(json: &str) -> Result<Self> {
        let config: ExperimentConfig =
            serde_json::from_str(json).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::Config("clients must be >= 1".into()));
        }
        if self.local_steps == 0 {
            return Err(Error::Config("local_steps must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(Error::Config("mu must be > 0".into()));
        }
        if !(self.eta0.is_finite() && self.eta0 > 0.0) {
            return Err(Error::Config("eta0 must be > 0".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.eval_fraction) {
            return Err(Error::Config("eval_fraction must lie in [0, 1)".into()));
        }
        match &self.objective {
            ObjectiveConfig::Quadratic {
                dim,
                samples_per_client,
                scale_outlier_fraction,
                scale_outlier_value,
                curvature_spread,
                shift_scale,
                ..
            } => {
                if *dim == 0 || *samples_per_client == 0 {
                    return Err(Error::Config(
                        "quadratic dim and samples_per_client must be >= 1".into(),
                    ));
                }
                if !(0.0..1.0).contains(scale_outlier_fraction) {
                    return Err(Error::Config(
                        "scale_outlier_fraction must lie in [0, 1)".into(),
                    ));
                }
                if *scale_outlier_value < 1.0 {
                    return Err(Error::Config(
                        "scale_outlier_value must be >= 1".into(),
                    ));
                }
                if *shift_scale < 0.0 || !(0.0..1.0).contains(curvature_spread) {
                    return Err(Error::Config(
                        "shift_scale >= 0 and curvature_spread in [0, 1) required".into(),
                    ));
                }
            }
            ObjectiveConfig::Logreg { dim, l2, .. } => {
                if *dim == 0 {
                    return Err(Error::Config("logreg dim must be >= 1".into()));
                }
                if *l2 < 0.0 {
                    return Err(Error::Config("l2 must be >= 0".into()));
                }
            }
            ObjectiveConfig::MlpLora { layers, rank, .. } => {
                if layers.len() < 2 {
                    return Err(Error::Config(
                        "mlp_lora layers needs input and output dims".into(),
                    ));
                }
                if *rank == 0 {
                    return Err(Error::Config("rank must be >= 1".into()));
                }
            }
        }
        Ok(())
    }

    /// The personalization policy resolved against `eta0` defaults.
    pub fn lr_policy(&self, ceiling: Option<f64>) -> Result<crate::personalize::LrPolicy> {
        let p = &self.personalization;
        let alpha = p.alpha.unwrap_or(self.eta0 / 2.0);
        let eta_min = p.eta_min.unwrap_or(self.eta0 - alpha);
        let eta_max = p.eta_max.unwrap_or(self.eta0 + alpha);
        let mut policy =
            crate::personalize::LrPolicy::new(self.eta0, alpha, p.form, eta_min, eta_max)
                .map_err(|e| Error::Config(e.to_string()))?;
        if p.clamp_to_ceiling {
            if let Some(c) = ceiling {
                policy = policy.with_ceiling(c);
            }
        }
        Ok(policy)
    }
}

/// Parsed config plus any non-fatal warnings raised while loading.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub warnings: Vec<String>,
}

/// Load, validate, fill defaults, and attach ceiling warnings.
pub fn load_config<P: AsRef<Path>>(path: P) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(&path).map_err(|e| {
        Error::Config(format!("cannot read {}: {e}", path.as_ref().display()))
    })?;
    load_config_str(&text)
}

/// As [`load_config`], from an in-memory JSON string.
pub fn load_config_str(json: &str) -> Result<LoadedConfig> {
    let config = ExperimentConfig::from_json(json)?;
    let mut warnings = Vec::new();
    match super::experiment::Experiment::build(&config, config.master_seed) {
        Ok(exp) => {
            let ceiling = exp.lr_ceiling();
            if config.eta0 > ceiling {
                warnings.push(format!(
                    "eta0 = {:.3e} exceeds the theory ceiling {:.3e} (ratio {:.1}); training may blow up",
                    config.eta0,
                    ceiling,
                    config.eta0 / ceiling
                ));
            }
        }
        Err(e) => {
            return Err(Error::Config(format!("config builds no experiment: {e}")));
        }
    }
    Ok(LoadedConfig { config, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_applies_defaults() {
        let loaded =
            load_config_str(r#"{"objective": {"kind": "quadratic", "dim": 8}}"#).unwrap();
        let c = loaded.config;
        assert_eq!(c.clients, 3);
        assert_eq!(c.rounds, 500);
        assert_eq!(c.local_steps, 30);
        assert_eq!(c.batch_size, 1);
        assert_eq!(c.mu, 1e-3);
        assert_eq!(c.eta0, 1e-5);
        assert_eq!(c.master_seed, 42);
        assert_eq!(c.replicates, 1);
        assert_eq!(c.bytes_per_param, 8);
        assert!(matches!(c.splitter, SplitterConfig::Iid));
        assert_eq!(c.personalization.kind, SignalKind::Disabled);
        assert!(loaded.warnings.is_empty());
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let err = ExperimentConfig::from_json(
            r#"{"objective": {"kind": "quadratic", "dim": 8}, "learning_rate": 0.1}"#,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("learning_rate"), "message: {msg}");
    }

    #[test]
    fn over_ceiling_rate_warns_but_loads() {
        let loaded = load_config_str(
            r#"{"objective": {"kind": "quadratic", "dim": 8}, "eta0": 10.0}"#,
        )
        .unwrap();
        assert_eq!(loaded.config.eta0, 10.0);
        assert_eq!(loaded.warnings.len(), 1);
        assert!(loaded.warnings[0].contains("ceiling"));
    }

    #[test]
    fn json_round_trip_is_stable() {
        let loaded = load_config_str(
            r#"{"objective": {"kind": "logreg", "dim": 4, "dataset": {"kind": "synthetic", "n": 64}},
                "splitter": {"kind": "dirichlet", "beta": 0.5},
                "personalization": {"kind": "update_norm_diff"}}"#,
        )
        .unwrap();
        let json = serde_json::to_string(&loaded.config).unwrap();
        let back = ExperimentConfig::from_json(&json).unwrap();
        assert_eq!(loaded.config, back);
    }
}
