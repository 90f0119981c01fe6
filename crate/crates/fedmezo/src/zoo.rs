//! Zeroth-order optimization: two-point and one-point estimators and the
//! in-place seed-replay update step.
//!
//! The in-place step walks the parameter vector through four phases, each
//! regenerating the Gaussian direction `z` coordinate-by-coordinate from the
//! stored seed: perturb up, perturb down, restore, apply. No parameter-length
//! temporary is ever allocated, which is the memory contract that makes
//! training cost equal inference cost.

use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::linalg::DenseVector;
use crate::objective::ObjectiveHandle;
use crate::params::ParamsView;
use crate::rng::{sample_gaussian, SeedStream};

/// Estimator configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZooConfig {
    /// Perturbation scale `mu > 0`.
    pub mu: f64,
    /// Number of perturbations averaged per estimate (protocol runs use 1;
    /// larger values are diagnostics-only).
    pub n_perturbations: usize,
}

impl ZooConfig {
    pub fn new(mu: f64) -> Result<Self> {
        Self::with_perturbations(mu, 1)
    }

    pub fn with_perturbations(mu: f64, n_perturbations: usize) -> Result<Self> {
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::InvalidArgument("mu must be positive".into()));
        }
        if n_perturbations == 0 {
            return Err(Error::InvalidArgument(
                "n_perturbations must be >= 1".into(),
            ));
        }
        Ok(Self {
            mu,
            n_perturbations,
        })
    }
}

/// How a step recovers the pre-step parameters between loss evaluations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RestoreMode {
    /// Restore by replaying `z` (default; zero extra memory, rounding-only
    /// drift).
    InPlace,
    /// Restore from a bit-exact copy (test oracle; allocates).
    Snapshot,
}

/// Result of one update step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    /// Projected gradient `(l+ - l-) / (2 mu)`.
    pub projected_grad: f64,
    pub loss_plus: f64,
    pub loss_minus: f64,
    /// Seed the direction was replayed from.
    pub seed: u64,
    /// Learning rate applied.
    pub eta: f64,
}

/// Direction source: derived from a seed in production, or forced explicitly
/// for arithmetic unit tests.
#[derive(Debug, Clone)]
pub enum Direction<'a> {
    Seeded(u64),
    Forced(&'a DenseVector),
}

impl Direction<'_> {
    fn materialize(&self, d: usize) -> Result<DenseVector> {
        match self {
            Direction::Seeded(seed) => {
                let mut stream = SeedStream::from_seed(*seed);
                sample_gaussian(&mut stream, d)
            }
            Direction::Forced(z) => {
                if z.len() != d {
                    return Err(Error::InvalidDimension(format!(
                        "forced direction has length {}, objective dim {}",
                        z.len(),
                        d
                    )));
                }
                Ok((*z).clone())
            }
        }
    }

}

fn finite_or_overflow(loss: f64, params: &ParamsView) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NumericalOverflow {
            param_norm: params.norm(),
        })
    }
}

/// Two-point estimate `g = (F(th + mu z) - F(th - mu z)) / (2 mu)`, `e = g z`.
///
/// This materializing variant snapshots and restores the parameters exactly;
/// the protocol path uses [`mezo_step_inplace`] instead.
pub fn two_point_estimate(
    obj: &ObjectiveHandle,
    params: &mut ParamsView,
    batch: &Batch,
    cfg: &ZooConfig,
    direction: Direction<'_>,
) -> Result<(f64, DenseVector)> {
    let d = obj.dim();
    if params.len() != d {
        return Err(Error::InvalidDimension(format!(
            "params length {} but objective dim {d}",
            params.len()
        )));
    }
    let z = direction.materialize(d)?;
    let snapshot = params.snapshot();

    for (p, zi) in params.as_mut_slice().iter_mut().zip(z.as_slice()) {
        *p += cfg.mu * zi;
    }
    let loss_plus = obj.eval_loss_raw(params.as_slice(), batch);
    params.copy_from(&snapshot);
    finite_or_overflow(loss_plus, params)?;

    for (p, zi) in params.as_mut_slice().iter_mut().zip(z.as_slice()) {
        *p -= cfg.mu * zi;
    }
    let loss_minus = obj.eval_loss_raw(params.as_slice(), batch);
    params.copy_from(&snapshot);
    finite_or_overflow(loss_minus, params)?;

    let g = (loss_plus - loss_minus) / (2.0 * cfg.mu);
    let mut e = z;
    e.scale(g);
    Ok((g, e))
}

/// One-point estimate `e = z (F(th + mu z) - F(th)) / (2 mu)`.
///
/// Kept as a bias exhibit: the single-sided form halves the smoothed gradient
/// and is not used by the protocol.
pub fn one_point_estimate(
    obj: &ObjectiveHandle,
    params: &mut ParamsView,
    batch: &Batch,
    cfg: &ZooConfig,
    direction: Direction<'_>,
) -> Result<(f64, DenseVector)> {
    let d = obj.dim();
    if params.len() != d {
        return Err(Error::InvalidDimension(format!(
            "params length {} but objective dim {d}",
            params.len()
        )));
    }
    let z = direction.materialize(d)?;
    let snapshot = params.snapshot();

    let loss_base = obj.eval_loss_raw(params.as_slice(), batch);
    finite_or_overflow(loss_base, params)?;
    for (p, zi) in params.as_mut_slice().iter_mut().zip(z.as_slice()) {
        *p += cfg.mu * zi;
    }
    let loss_plus = obj.eval_loss_raw(params.as_slice(), batch);
    params.copy_from(&snapshot);
    finite_or_overflow(loss_plus, params)?;

    let g = (loss_plus - loss_base) / (2.0 * cfg.mu);
    let mut e = z;
    e.scale(g);
    Ok((g, e))
}

/// Apply `theta[j] += coeff * z[j]` streaming `z` from the seed; no
/// parameter-length temporary.
fn replay_axpy(params: &mut ParamsView, seed: u64, coeff: f64) {
    let mut stream = SeedStream::from_seed(seed);
    let values = params.as_mut_slice();
    let d = values.len();
    let mut i = 0;
    while i < d {
        let (a, b) = stream.gaussian_pair();
        values[i] += coeff * a;
        if i + 1 < d {
            values[i + 1] += coeff * b;
        }
        i += 2;
    }
}

/// One seed-replay update step: evaluate at `theta +/- mu z`, restore, then
/// apply `theta -= eta * g * z`.
///
/// In [`RestoreMode::InPlace`] the four phases replay `z` from the seed and
/// the step allocates no parameter-length buffer (checked by the allocation
/// counter in tests). In [`RestoreMode::Snapshot`] the restore is a bit-exact
/// copy-back, which serves as the rounding-drift oracle.
///
/// A non-finite loss aborts the step: parameters are restored (by replay or
/// copy-back) and the error carries the perturbed parameter norm.
pub fn mezo_step_inplace(
    obj: &ObjectiveHandle,
    params: &mut ParamsView,
    batch: &Batch,
    cfg: &ZooConfig,
    eta: f64,
    seed: u64,
    mode: RestoreMode,
) -> Result<StepOutcome> {
    if params.len() != obj.dim() {
        return Err(Error::InvalidDimension(format!(
            "params length {} but objective dim {}",
            params.len(),
            obj.dim()
        )));
    }
    if !(eta.is_finite() && eta >= 0.0) {
        return Err(Error::InvalidArgument("eta must be >= 0".into()));
    }

    match mode {
        RestoreMode::InPlace => {
            // (a) theta += mu z ; evaluate l+
            replay_axpy(params, seed, cfg.mu);
            let loss_plus = obj.eval_loss_raw(params.as_slice(), batch);
            if !loss_plus.is_finite() {
                let norm = params.norm();
                replay_axpy(params, seed, -cfg.mu);
                return Err(Error::NumericalOverflow { param_norm: norm });
            }
            // (b) theta -= 2 mu z ; evaluate l-
            replay_axpy(params, seed, -2.0 * cfg.mu);
            let loss_minus = obj.eval_loss_raw(params.as_slice(), batch);
            if !loss_minus.is_finite() {
                let norm = params.norm();
                replay_axpy(params, seed, cfg.mu);
                return Err(Error::NumericalOverflow { param_norm: norm });
            }
            // (c) theta += mu z (restore)
            replay_axpy(params, seed, cfg.mu);
            // (d) theta -= eta g z
            let g = (loss_plus - loss_minus) / (2.0 * cfg.mu);
            if !g.is_finite() {
                return Err(Error::NumericalOverflow {
                    param_norm: params.norm(),
                });
            }
            replay_axpy(params, seed, -eta * g);
            Ok(StepOutcome {
                projected_grad: g,
                loss_plus,
                loss_minus,
                seed,
                eta,
            })
        }
        RestoreMode::Snapshot => {
            let snapshot = params.snapshot();
            replay_axpy(params, seed, cfg.mu);
            let loss_plus = obj.eval_loss_raw(params.as_slice(), batch);
            if !loss_plus.is_finite() {
                let norm = params.norm();
                params.copy_from(&snapshot);
                return Err(Error::NumericalOverflow { param_norm: norm });
            }
            params.copy_from(&snapshot);
            replay_axpy(params, seed, -cfg.mu);
            let loss_minus = obj.eval_loss_raw(params.as_slice(), batch);
            if !loss_minus.is_finite() {
                let norm = params.norm();
                params.copy_from(&snapshot);
                return Err(Error::NumericalOverflow { param_norm: norm });
            }
            params.copy_from(&snapshot);
            let g = (loss_plus - loss_minus) / (2.0 * cfg.mu);
            if !g.is_finite() {
                return Err(Error::NumericalOverflow {
                    param_norm: params.norm(),
                });
            }
            replay_axpy(params, seed, -eta * g);
            Ok(StepOutcome {
                projected_grad: g,
                loss_plus,
                loss_minus,
                seed,
                eta,
            })
        }
    }
}

/// Monte-Carlo estimate of the estimator second moment `E ||e||^2`.
///
/// For exact quadratics this converges to `(d + 2) ||grad f||^2`; the related
/// exact-gradient moment `n / (d + n - 1) * E||e||^2` is reported by the
/// diagnostics layer, which surfaces both quantities rather than asserting
/// either ratio.
pub fn estimator_second_moment(
    obj: &ObjectiveHandle,
    params: &mut ParamsView,
    batch: &Batch,
    cfg: &ZooConfig,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    if n_samples < 1_000 {
        return Err(Error::InvalidArgument(
            "second-moment probe needs at least 1000 samples".into(),
        ));
    }
    let d = obj.dim();
    let snapshot = params.snapshot();
    let mut acc = 0.0;
    let mut stream = SeedStream::from_seed(seed);
    for _ in 0..n_samples {
        let step_seed = stream.next_u64();
        if cfg.n_perturbations == 1 {
            // ||e||^2 = g^2 ||z||^2, with g from in-place perturbation and
            // ||z||^2 replayed from the same seed.
            replay_axpy(params, step_seed, cfg.mu);
            let lp = obj.eval_loss_raw(params.as_slice(), batch);
            replay_axpy(params, step_seed, -2.0 * cfg.mu);
            let lm = obj.eval_loss_raw(params.as_slice(), batch);
            params.copy_from(&snapshot);
            if !(lp.is_finite() && lm.is_finite()) {
                return Err(Error::NumericalOverflow {
                    param_norm: snapshot.norm(),
                });
            }
            let g = (lp - lm) / (2.0 * cfg.mu);
            let mut zstream = SeedStream::from_seed(step_seed);
            let mut norm_sq = 0.0;
            let mut i = 0;
            while i < d {
                let (a, b) = zstream.gaussian_pair();
                norm_sq += a * a;
                if i + 1 < d {
                    norm_sq += b * b;
                }
                i += 2;
            }
            acc += g * g * norm_sq;
        } else {
            // Plain mean of n independent two-point estimates.
            let mut e_sum = vec![0.0; d];
            let mut sub = SeedStream::from_seed(step_seed);
            for _ in 0..cfg.n_perturbations {
                let s = sub.next_u64();
                let single = ZooConfig::new(cfg.mu)?;
                let (_, e) =
                    two_point_estimate(obj, params, batch, &single, Direction::Seeded(s))?;
                for (acc_e, ev) in e_sum.iter_mut().zip(e.as_slice()) {
                    *acc_e += ev;
                }
            }
            let inv = 1.0 / cfg.n_perturbations as f64;
            acc += e_sum.iter().map(|v| (v * inv) * (v * inv)).sum::<f64>();
        }
    }
    params.copy_from(&snapshot);
    Ok(acc / n_samples as f64)
}
