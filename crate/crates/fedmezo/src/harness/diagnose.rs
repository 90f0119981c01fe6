//! The diagnostics report: measured constants, ceilings, and predicted rates
//! for a configured experiment.

use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::error::Result;
use crate::federation::estimate_heterogeneity_constants;
use crate::theory::{
    effective_rank, estimate_cg_sigma, hessian_of, iid_rate_bound, lr_bound, lr_bound_branches,
    noniid_rate_bound, rate_scaling, TheoryConstants, TheoryInputs,
};
use crate::zoo::{estimator_second_moment, ZooConfig};

use super::config::ExperimentConfig;
use super::experiment::Experiment;

/// Probe of the estimator second moment against its two reference moments.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SecondMomentProbe {
    /// Monte-Carlo `E ||e||^2` at the initial point.
    pub measured: f64,
    /// Full-shard squared gradient norm at the same point.
    pub grad_norm_sq: f64,
    /// Gaussian fourth-moment reference `(d + 2) ||grad||^2` (exact on
    /// quadratics).
    pub gaussian_identity: f64,
    /// Exact-gradient moment implied by the `n/(d+n-1)` relationship; both
    /// references are reported, neither is asserted.
    pub exact_gradient_relationship: f64,
}

/// Everything `diagnose` emits, as JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnoseReport {
    pub trainable_dim: usize,
    pub smoothness: f64,
    /// trace/opnorm of the measured Hessian, when the dimension admits one.
    pub effective_rank: Option<f64>,
    /// Effective rank rounded up; the `r` fed to the rate calculators.
    pub r_input: Option<usize>,
    pub c_g: f64,
    pub sigma_g_sq: f64,
    pub c_h: f64,
    pub sigma_h_sq: f64,
    pub constants: Option<TheoryConstants>,
    pub lr_ceiling: f64,
    pub lr_branches: [f64; 3],
    pub eta0: f64,
    pub over_ceiling: bool,
    pub f0: f64,
    pub f_star: f64,
    pub iid_bound: Option<f64>,
    pub noniid_bound: Option<f64>,
    pub rate_iid: Option<f64>,
    pub rate_noniid: Option<f64>,
    pub second_moment: SecondMomentProbe,
    pub notes: Vec<String>,
}

/// Measure constants and evaluate every calculator for the configured
/// experiment (replicate 0).
pub fn diagnose(config: &ExperimentConfig) -> Result<DiagnoseReport> {
    let experiment = Experiment::build(config, config.master_seed)?;
    let mut notes = Vec::new();
    let d = experiment.trainable_dim();
    let init = experiment.initial_params()?;
    let f0 = experiment.eval_objective.full_loss(&init)?;
    let f_star = experiment.f_star.unwrap_or_else(|| {
        notes.push("f_star unknown for this objective; reported bounds assume f_star = 0".into());
        0.0
    });

    // Effective rank of the global Hessian at the initial point.
    let (rank, r_input) = match hessian_of(&experiment.eval_objective, &init) {
        Ok(h) => match effective_rank(&h) {
            Ok(r) => (Some(r), Some(r.ceil() as usize)),
            Err(e) => {
                notes.push(format!("effective rank unavailable: {e}"));
                (None, None)
            }
        },
        Err(e) => {
            notes.push(format!("dense Hessian unavailable: {e}"));
            (None, None)
        }
    };

    // Mini-batch constants: closed form when the construction provides one,
    // Monte-Carlo regression otherwise.
    let (c_g, sigma_g_sq) = match experiment.batch_constants {
        Some(pair) => pair,
        None => estimate_cg_sigma(
            &experiment.client_objectives[0],
            24,
            config.batch_size,
            64,
            1.0,
            experiment.replicate_seed,
        )?,
    };

    // Heterogeneity constants across client objectives.
    let (c_h, sigma_h_sq) = if experiment.client_objectives.len() >= 2 {
        match estimate_heterogeneity_constants(
            &experiment.client_objectives,
            24,
            1.0,
            experiment.replicate_seed,
        ) {
            Ok(pair) => pair,
            Err(e) => {
                notes.push(format!("heterogeneity estimation failed: {e}"));
                (0.0, 0.0)
            }
        }
    } else {
        (0.0, 0.0)
    };

    let lr_branches = lr_bound_branches(
        config.local_steps,
        experiment.smoothness,
        c_g,
        d,
        config.clients,
    );
    let lr_ceiling = lr_bound(
        config.local_steps,
        experiment.smoothness,
        c_g,
        d,
        config.clients,
    );

    let mut constants = None;
    let mut iid = None;
    let mut noniid = None;
    let mut rate_i = None;
    let mut rate_n = None;
    if let Some(r) = r_input {
        let inputs = TheoryInputs {
            d,
            r: r.max(1),
            n: 1,
            clients: config.clients,
            local_steps: config.local_steps,
            rounds: config.rounds.max(1),
            smoothness: experiment.smoothness,
            c_g: c_g.max(1.0),
            sigma_g: sigma_g_sq.max(0.0).sqrt(),
            c_h,
            sigma_h: sigma_h_sq.max(0.0).sqrt(),
            mu: config.mu,
            f0,
            f_star: f_star.min(f0),
        };
        match TheoryConstants::derive(&inputs) {
            Ok(c) => {
                constants = Some(c);
                match iid_rate_bound(&inputs, config.eta0) {
                    Ok(v) => iid = Some(v),
                    Err(e) => notes.push(format!("iid bound not evaluated: {e}")),
                }
                match noniid_rate_bound(&inputs, config.eta0) {
                    Ok(v) => noniid = Some(v),
                    Err(e) => notes.push(format!("non-iid bound not evaluated: {e}")),
                }
                rate_i = Some(rate_scaling(
                    inputs.r,
                    config.clients,
                    config.local_steps,
                    config.rounds.max(1),
                    None,
                ));
                rate_n = Some(rate_scaling(
                    inputs.r,
                    config.clients,
                    config.local_steps,
                    config.rounds.max(1),
                    Some(c.c_h_tilde),
                ));
            }
            Err(e) => notes.push(format!("constants not derived: {e}")),
        }
    }

    // Second-moment probe at the initial point.
    let mut probe_params = init.snapshot();
    let batch = Batch::full(experiment.client_objectives[0].n_samples())?;
    let measured = estimator_second_moment(
        &experiment.client_objectives[0],
        &mut probe_params,
        &batch,
        &ZooConfig::new(config.mu)?,
        2_000,
        experiment.replicate_seed,
    )?;
    let grad = experiment.client_objectives[0].full_grad(&init)?;
    let grad_norm_sq = grad.dot(&grad);
    let second_moment = SecondMomentProbe {
        measured,
        grad_norm_sq,
        gaussian_identity: (d as f64 + 2.0) * grad_norm_sq,
        // n/(d+n-1) with the protocol's n = 1.
        exact_gradient_relationship: measured / d as f64,
    };

    Ok(DiagnoseReport {
        trainable_dim: d,
        smoothness: experiment.smoothness,
        effective_rank: rank,
        r_input,
        c_g,
        sigma_g_sq,
        c_h,
        sigma_h_sq,
        constants,
        lr_ceiling,
        lr_branches,
        eta0: config.eta0,
        over_ceiling: config.eta0 > lr_ceiling,
        f0,
        f_star,
        iid_bound: iid,
        noniid_bound: noniid,
        rate_iid: rate_i,
        rate_noniid: rate_n,
        second_moment,
        notes,
    })
}
