//! Adaptive per-client learning rates driven by heterogeneity signals.
//!
//! Three measurable proxies estimate each client's heterogeneity index:
//! round-wise train-loss difference, five-round average train-loss
//! difference, and the parameter-update-norm difference. Raw signals are
//! mean-centered, normalized into `(-1, 1)`, and mapped onto learning rates
//! with a clamped additive (default) or multiplicative rule. Larger
//! heterogeneity means a larger rate: such clients have more room to
//! contribute to global descent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::{ClientState, LrAssigner};
use crate::rng::{derive_seed, RngRecipe, SeedStream, StreamDomain};

/// Which per-client signal drives the adjustment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    /// Last round's train loss, centered across clients.
    RoundLoss,
    /// Mean of the last five rounds' train losses, centered.
    FiveRoundAvgLoss,
    /// Squared deviation of the client's last update from the mean update,
    /// centered.
    UpdateNormDiff,
    /// Uniform draw in the clamp band each round (control arm).
    RandomBaseline,
    /// Keep the base rate everywhere.
    Disabled,
}

/// Additive: `eta_i = eta0 + alpha * phi_i`.
/// Multiplicative: `eta_i = eta0 * (1 + alpha * phi_i)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrForm {
    Additive,
    Multiplicative,
}

/// Base rate, sensitivity, form, and safety clamps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrPolicy {
    pub eta0: f64,
    pub alpha: f64,
    pub form: LrForm,
    pub eta_min: f64,
    pub eta_max: f64,
    /// Optional theory ceiling; applied after the clamp when present.
    pub ceiling: Option<f64>,
}

impl LrPolicy {
    pub fn new(eta0: f64, alpha: f64, form: LrForm, eta_min: f64, eta_max: f64) -> Result<Self> {
        if !(eta0.is_finite() && eta0 > 0.0) || !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::InvalidArgument(
                "eta0 must be > 0 and alpha >= 0".into(),
            ));
        }
        if !(eta_min <= eta0 && eta0 <= eta_max) {
            return Err(Error::InvalidArgument(format!(
                "clamp must satisfy eta_min <= eta0 <= eta_max (got {eta_min} <= {eta0} <= {eta_max})"
            )));
        }
        Ok(Self {
            eta0,
            alpha,
            form,
            eta_min,
            eta_max,
            ceiling: None,
        })
    }

    pub fn with_ceiling(mut self, ceiling: f64) -> Self {
        self.ceiling = Some(ceiling);
        self
    }

    fn clamp(&self, eta: f64) -> f64 {
        let mut eta = eta.clamp(self.eta_min, self.eta_max);
        if let Some(c) = self.ceiling {
            eta = eta.min(c);
        }
        eta
    }
}

/// Raw per-client signal values, flagged during warm-up rounds where the
/// required history does not exist yet (all zeros then).
#[derive(Debug, Clone, PartialEq)]
pub struct RawSignal {
    pub values: Vec<f64>,
    pub warmup: bool,
}

/// Normalized heterogeneity indices, each strictly inside `(-1, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiVector {
    values: Vec<f64>,
}

impl PhiVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            values: vec![0.0; n],
        }
    }
}

/// Compute the raw signal in ascending client-id order.
///
/// Round-loss signals center each client's value on the across-client mean so
/// the values carry sign; the update signal does the same with squared
/// deviations from the mean update.
pub fn raw_signal(kind: SignalKind, clients: &[ClientState]) -> RawSignal {
    let n = clients.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| clients[i].id);

    let warm = |values: Option<Vec<f64>>| match values {
        Some(values) => RawSignal {
            values: center(values),
            warmup: false,
        },
        None => RawSignal {
            values: vec![0.0; n],
            warmup: true,
        },
    };

    match kind {
        SignalKind::Disabled | SignalKind::RandomBaseline => RawSignal {
            values: vec![0.0; n],
            warmup: false,
        },
        SignalKind::RoundLoss => warm(
            order
                .iter()
                .map(|&i| clients[i].loss_history.back().copied())
                .collect(),
        ),
        SignalKind::FiveRoundAvgLoss => warm(
            order
                .iter()
                .map(|&i| {
                    let h = &clients[i].loss_history;
                    if h.len() < 5 {
                        None
                    } else {
                        Some(h.iter().rev().take(5).sum::<f64>() / 5.0)
                    }
                })
                .collect(),
        ),
        SignalKind::UpdateNormDiff => {
            let updates: Option<Vec<&[f64]>> = order
                .iter()
                .map(|&i| clients[i].last_update.as_ref().map(|u| u.as_slice()))
                .collect();
            match updates {
                None => RawSignal {
                    values: vec![0.0; n],
                    warmup: true,
                },
                Some(updates) => {
                    let d = updates[0].len();
                    let mut mean = vec![0.0; d];
                    for u in &updates {
                        for (m, v) in mean.iter_mut().zip(u.iter()) {
                            *m += v / n as f64;
                        }
                    }
                    let deviations: Vec<f64> = updates
                        .iter()
                        .map(|u| {
                            u.iter()
                                .zip(mean.iter())
                                .map(|(a, b)| (a - b) * (a - b))
                                .sum::<f64>()
                        })
                        .collect();
                    RawSignal {
                        values: center(deviations),
                        warmup: false,
                    }
                }
            }
        }
    }
}

fn center(mut values: Vec<f64>) -> Vec<f64> {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    for v in &mut values {
        *v -= mean;
    }
    values
}

const NORMALIZE_EPS: f64 = 1e-12;

/// Map raw values into `(-1, 1)` by max-absolute scaling:
/// `phi_i = raw_i / (max_j |raw_j| + eps)`. All-zero input stays all-zero and
/// signs are preserved.
///
/// The guard is `eps = 1e-12 * (1 + max_j |raw_j|)`: a purely absolute epsilon
/// underflows in the addition once the raw scale passes ~1e4, which would let
/// the extreme value normalize to exactly +/-1 and break the open interval.
pub fn normalize_phi(raw: &[f64]) -> PhiVector {
    let max_abs = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let denom = max_abs + NORMALIZE_EPS * (1.0 + max_abs);
    PhiVector {
        values: raw.iter().map(|v| v / denom).collect(),
    }
}

/// Apply the policy to the heterogeneity indices.
pub fn adjust_lr(policy: &LrPolicy, phi: &PhiVector) -> Vec<f64> {
    phi.values
        .iter()
        .map(|p| {
            let eta = match policy.form {
                LrForm::Additive => policy.eta0 + policy.alpha * p,
                LrForm::Multiplicative => policy.eta0 * (1.0 + policy.alpha * p),
            };
            policy.clamp(eta)
        })
        .collect()
}

/// Control arm: per-client, per-round uniform draws from the clamp band.
pub fn random_baseline(eta_min: f64, eta_max: f64, seed: u64, n_clients: usize) -> Result<Vec<f64>> {
    if !(eta_min < eta_max) {
        return Err(Error::InvalidArgument(
            "random baseline needs eta_min < eta_max".into(),
        ));
    }
    let mut stream = SeedStream::from_seed(seed);
    Ok((0..n_clients)
        .map(|_| stream.uniform(eta_min, eta_max))
        .collect())
}

/// The full strategy: a signal kind plus the rate policy. Implements the
/// round hook used by the federation orchestrator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrStrategy {
    pub kind: SignalKind,
    pub policy: LrPolicy,
}

impl LrStrategy {
    pub fn disabled(eta0: f64) -> Result<Self> {
        Ok(Self {
            kind: SignalKind::Disabled,
            policy: LrPolicy::new(eta0, 0.0, LrForm::Additive, eta0, eta0)?,
        })
    }
}

impl LrAssigner for LrStrategy {
    fn assign(&mut self, round: u64, master_seed: u64, clients: &[ClientState]) -> Vec<f64> {
        match self.kind {
            SignalKind::Disabled => vec![self.policy.clamp(self.policy.eta0); clients.len()],
            SignalKind::RandomBaseline => {
                let seed = derive_seed(&RngRecipe::new(
                    StreamDomain::Policy.shift(master_seed),
                    round,
                    0,
                    0,
                ));
                random_baseline(
                    self.policy.eta_min,
                    self.policy.eta_max,
                    seed,
                    clients.len(),
                )
                .expect("policy clamp validated at construction")
                .into_iter()
                .map(|eta| self.policy.clamp(eta))
                .collect()
            }
            kind => {
                let raw = raw_signal(kind, clients);
                let phi = normalize_phi(&raw.values);
                adjust_lr(&self.policy, &phi)
            }
        }
    }
}
