//! Estimation of the global-local disparity constants `(c_h, sigma_h^2)`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::objective::ObjectiveHandle;
use crate::params::ParamsView;
use crate::rng::{RngRecipe, SeedStream, StreamDomain};
use crate::theory::fit_line;

/// Fit `mean_i ||grad f_i - grad f||^2 = c_h ||grad f||^2 + sigma_h^2` over
/// random probe points, using the exact gradient oracle. The slope is clamped
/// at 0. Fails when every probe gradient is (numerically) zero.
pub fn estimate_heterogeneity_constants(
    client_objectives: &[ObjectiveHandle],
    probe_count: usize,
    probe_radius: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    if client_objectives.is_empty() {
        return Err(Error::InvalidArgument("no client objectives".into()));
    }
    if probe_count < 20 {
        return Err(Error::InvalidArgument(
            "heterogeneity estimation needs at least 20 probes".into(),
        ));
    }
    let d = client_objectives[0].dim();
    if client_objectives.iter().any(|o| o.dim() != d) {
        return Err(Error::InvalidDimension(
            "client objectives disagree on trainable dim".into(),
        ));
    }
    let n = client_objectives.len() as f64;
    let layout = Arc::clone(client_objectives[0].layout());

    let mut xs = Vec::with_capacity(probe_count);
    let mut ys = Vec::with_capacity(probe_count);
    for p in 0..probe_count {
        let mut stream = SeedStream::from_recipe(&RngRecipe::new(
            StreamDomain::Probe.shift(seed),
            1,
            0,
            p as u64,
        ));
        let mut point = vec![0.0; d];
        stream.fill_gaussian(&mut point);
        for v in &mut point {
            *v *= probe_radius;
        }
        let probe = ParamsView::from_vec(Arc::clone(&layout), point)?;

        let grads: Vec<Vec<f64>> = client_objectives
            .iter()
            .map(|obj| obj.full_grad(&probe).map(|g| g.into_vec()))
            .collect::<Result<_>>()?;
        let mut mean = vec![0.0; d];
        for g in &grads {
            for (m, v) in mean.iter_mut().zip(g.iter()) {
                *m += v / n;
            }
        }
        let x: f64 = mean.iter().map(|v| v * v).sum();
        let y: f64 = grads
            .iter()
            .map(|g| {
                g.iter()
                    .zip(mean.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / n;
        xs.push(x);
        ys.push(y);
    }

    let (slope, intercept) = fit_line(&xs, &ys).map_err(|_| {
        Error::DegenerateRegression(
            "all probe gradients are numerically zero; cannot fit heterogeneity constants".into(),
        )
    })?;
    Ok((slope.max(0.0), intercept.max(0.0)))
}
