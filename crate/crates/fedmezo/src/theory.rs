//! Executable theory: low-rank constants, learning-rate ceilings,
//! convergence-rate predictors, effective-rank measurement, and
//! assumption-constant estimators.

use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::linalg::{power_iteration, DenseMatrix};
use crate::objective::ObjectiveHandle;
use crate::params::ParamsView;
use crate::rng::{RngRecipe, SeedStream, StreamDomain};

/// Everything the rate calculators consume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryInputs {
    /// Trainable dimension.
    pub d: usize,
    /// Hessian effective rank.
    pub r: usize,
    /// Perturbations per estimate.
    pub n: usize,
    /// Clients.
    pub clients: usize,
    /// Local steps per round.
    pub local_steps: usize,
    /// Communication rounds.
    pub rounds: usize,
    /// Smoothness constant.
    pub smoothness: f64,
    /// Mini-batch second-moment slope (>= 1).
    pub c_g: f64,
    /// Mini-batch second-moment floor (std, not squared).
    pub sigma_g: f64,
    /// Heterogeneity slope.
    pub c_h: f64,
    /// Heterogeneity floor (std, not squared).
    pub sigma_h: f64,
    /// Perturbation scale.
    pub mu: f64,
    /// Initial global loss.
    pub f0: f64,
    /// Optimal loss.
    pub f_star: f64,
}

impl TheoryInputs {
    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::InvalidArgument("d must be >= 2".into()));
        }
        if self.r < 1 || self.n < 1 {
            return Err(Error::InvalidArgument("r and n must be >= 1".into()));
        }
        if self.clients < 1 || self.local_steps < 1 || self.rounds < 1 {
            return Err(Error::InvalidArgument(
                "clients, local_steps, rounds must be >= 1".into(),
            ));
        }
        if !(self.smoothness > 0.0) {
            return Err(Error::InvalidArgument("smoothness must be > 0".into()));
        }
        if self.c_g < 1.0 {
            return Err(Error::InvalidArgument("c_g must be >= 1".into()));
        }
        if self.sigma_g < 0.0 || self.c_h < 0.0 || self.sigma_h < 0.0 {
            return Err(Error::InvalidArgument(
                "sigma_g, c_h, sigma_h must be >= 0".into(),
            ));
        }
        if !(self.mu > 0.0) {
            return Err(Error::InvalidArgument("mu must be > 0".into()));
        }
        if self.f0 < self.f_star {
            return Err(Error::InvalidArgument("f0 must be >= f_star".into()));
        }
        Ok(())
    }
}

/// Derived constants: the low-rank pair, their aggregate forms, and the
/// heterogeneity-adjusted variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub gamma: f64,
    pub zeta: f64,
    /// `(d - zeta*gamma) / (d*gamma)`.
    pub gamma_cap: f64,
    /// `(d - N*gamma*zeta) / (d*gamma*N)`.
    pub gamma_cap_noniid: f64,
    /// `c_h + N`.
    pub c_h_tilde: f64,
    /// `3 c_g sigma_h^2 + sigma_g^2`.
    pub sigma_tilde_sq: f64,
    /// Large-d simplification `1/gamma` reported alongside the exact form.
    pub gamma_cap_simplified: f64,
    /// Large-d simplification `1/(gamma*N)`.
    pub gamma_cap_noniid_simplified: f64,
}

impl TheoryConstants {
    pub fn derive(inputs: &TheoryInputs) -> Result<Self> {
        inputs.validate()?;
        let (gamma, zeta) = gamma_zeta(inputs.d, inputs.r, inputs.n)?;
        let d = inputs.d as f64;
        let n_clients = inputs.clients as f64;
        Ok(Self {
            gamma,
            zeta,
            gamma_cap: (d - zeta * gamma) / (d * gamma),
            gamma_cap_noniid: (d - n_clients * gamma * zeta) / (d * gamma * n_clients),
            c_h_tilde: inputs.c_h + n_clients,
            sigma_tilde_sq: 3.0 * inputs.c_g * inputs.sigma_h * inputs.sigma_h
                + inputs.sigma_g * inputs.sigma_g,
            gamma_cap_simplified: 1.0 / gamma,
            gamma_cap_noniid_simplified: 1.0 / (gamma * n_clients),
        })
    }
}

/// Low-rank descent constants:
/// `gamma = (d r + d - 2) / (n (d + 2))`,
/// `zeta = (d + 2) n^2 / ((d r + d - 2)(d + n - 1))`.
///
/// Their product collapses to `n / (d + n - 1)` for every valid `(d, r)`.
pub fn gamma_zeta(d: usize, r: usize, n: usize) -> Result<(f64, f64)> {
    if d < 2 || r < 1 || n < 1 {
        return Err(Error::InvalidArgument(
            "gamma_zeta needs d >= 2, r >= 1, n >= 1".into(),
        ));
    }
    let df = d as f64;
    let rf = r as f64;
    let nf = n as f64;
    let denom = df * rf + df - 2.0;
    if denom <= 0.0 {
        return Err(Error::InvalidArgument(
            "degenerate denominator d*r + d - 2".into(),
        ));
    }
    let gamma = denom / (nf * (df + 2.0));
    let zeta = (df + 2.0) * nf * nf / (denom * (df + nf - 1.0));
    Ok((gamma, zeta))
}

/// Learning-rate ceiling
/// `min{ 1/(3 H L sqrt(c_g d)), N/(3 H L c_g), 1/H^2 }`.
pub fn lr_bound(local_steps: usize, smoothness: f64, c_g: f64, d: usize, clients: usize) -> f64 {
    lr_bound_branches(local_steps, smoothness, c_g, d, clients)
        .into_iter()
        .fold(f64::INFINITY, f64::min)
}

/// The three ceiling branches, in the order written above.
pub fn lr_bound_branches(
    local_steps: usize,
    smoothness: f64,
    c_g: f64,
    d: usize,
    clients: usize,
) -> [f64; 3] {
    let h = local_steps as f64;
    let l = smoothness;
    let df = d as f64;
    let nf = clients as f64;
    [
        1.0 / (3.0 * h * l * (c_g * df).sqrt()),
        nf / (3.0 * h * l * c_g),
        1.0 / (h * h),
    ]
}

/// Bound on `min_t E||grad f(theta_t)||^2` in the homogeneous setting:
/// `(f0 - f*) / (2 eta T Gamma) + sigma_g^2 zeta L / (N H d Gamma)
///  + zeta mu^2 L^3 / (4 N H Gamma)`.
pub fn iid_rate_bound(inputs: &TheoryInputs, eta: f64) -> Result<f64> {
    inputs.validate()?;
    let ceiling = lr_bound(
        inputs.local_steps,
        inputs.smoothness,
        inputs.c_g,
        inputs.d,
        inputs.clients,
    );
    if !(eta > 0.0) || eta > ceiling {
        return Err(Error::InvalidRegime(format!(
            "eta {eta} outside (0, {ceiling}]"
        )));
    }
    let c = TheoryConstants::derive(inputs)?;
    if c.gamma_cap <= 0.0 {
        return Err(Error::InvalidRegime(format!(
            "Gamma = {} is not positive",
            c.gamma_cap
        )));
    }
    let d = inputs.d as f64;
    let n = inputs.clients as f64;
    let h = inputs.local_steps as f64;
    let t = inputs.rounds as f64;
    let l = inputs.smoothness;
    let gap = inputs.f0 - inputs.f_star;
    Ok(gap / (2.0 * eta * t * c.gamma_cap)
        + inputs.sigma_g * inputs.sigma_g * c.zeta * l / (n * h * d * c.gamma_cap)
        + c.zeta * inputs.mu * inputs.mu * l.powi(3) / (4.0 * n * h * c.gamma_cap))
}

/// Bound on `min_t E||grad f(theta_t)||^2` under bounded heterogeneity:
/// `(f0 - f*) / (2 Gt ct eta T) + st^2 zeta L / (Gt ct N H d)
///  + zeta mu^2 L^3 / (4 Gt ct N H) - sigma_h^2 / (Gt ct gamma N)`.
pub fn noniid_rate_bound(inputs: &TheoryInputs, eta: f64) -> Result<f64> {
    inputs.validate()?;
    let ceiling = lr_bound(
        inputs.local_steps,
        inputs.smoothness,
        inputs.c_g,
        inputs.d,
        inputs.clients,
    );
    if !(eta > 0.0) || eta > ceiling {
        return Err(Error::InvalidRegime(format!(
            "eta {eta} outside (0, {ceiling}]"
        )));
    }
    let c = TheoryConstants::derive(inputs)?;
    if c.gamma_cap_noniid <= 0.0 {
        return Err(Error::InvalidRegime(format!(
            "Gamma-tilde = {} is not positive",
            c.gamma_cap_noniid
        )));
    }
    let d = inputs.d as f64;
    let n = inputs.clients as f64;
    let h = inputs.local_steps as f64;
    let t = inputs.rounds as f64;
    let l = inputs.smoothness;
    let gap = inputs.f0 - inputs.f_star;
    let gt_ct = c.gamma_cap_noniid * c.c_h_tilde;
    Ok(gap / (2.0 * gt_ct * eta * t)
        + c.sigma_tilde_sq * c.zeta * l / (gt_ct * n * h * d)
        + c.zeta * inputs.mu * inputs.mu * l.powi(3) / (4.0 * gt_ct * n * h)
        - inputs.sigma_h * inputs.sigma_h / (gt_ct * c.gamma * n))
}

/// Dominant convergence-rate term `r^{3/2} (N H T)^{-1/2}`, or
/// `r^{3/2} (ct N H T)^{-1/2}` when a heterogeneity factor is supplied.
pub fn rate_scaling(
    r: usize,
    clients: usize,
    local_steps: usize,
    rounds: usize,
    c_h_tilde: Option<f64>,
) -> f64 {
    let rf = r as f64;
    let mut denom = (clients * local_steps * rounds) as f64;
    if let Some(ct) = c_h_tilde {
        denom *= ct;
    }
    rf.powf(1.5) / denom.sqrt()
}

/// Effective rank `trace(H) / opnorm(H)` of a symmetric PSD matrix, with the
/// operator norm measured by power iteration.
pub fn effective_rank(h: &DenseMatrix) -> Result<f64> {
    if !h.is_symmetric() {
        return Err(Error::InvalidArgument(
            "effective_rank requires a symmetric matrix".into(),
        ));
    }
    let (opnorm, _) = power_iteration(h, 200_000, 1e-12)?;
    if opnorm == 0.0 {
        return Err(Error::UndefinedRank);
    }
    Ok(h.trace() / opnorm.abs())
}

/// Dense Hessian of the full-shard loss: the exact curvature for quadratics,
/// central finite differences of the gradient oracle otherwise
/// (`h = 1e-4`, symmetrized as `(M + M')/2`). Refused above 256 dims.
pub fn hessian_of(obj: &ObjectiveHandle, params: &ParamsView) -> Result<DenseMatrix> {
    if let Some(spec) = obj.quadratic_spec() {
        return Ok(spec.curvature().clone());
    }
    let d = obj.dim();
    if d > 256 {
        return Err(Error::InvalidDimension(format!(
            "dense Hessian refused for d = {d} > 256"
        )));
    }
    let h = 1e-4;
    let mut probe = params.snapshot();
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(d);
    for j in 0..d {
        let original = probe.as_slice()[j];
        probe.as_mut_slice()[j] = original + h;
        let grad_plus = obj.full_grad(&probe)?;
        probe.as_mut_slice()[j] = original - h;
        let grad_minus = obj.full_grad(&probe)?;
        probe.as_mut_slice()[j] = original;
        columns.push(
            grad_plus
                .as_slice()
                .iter()
                .zip(grad_minus.as_slice())
                .map(|(p, m)| (p - m) / (2.0 * h))
                .collect(),
        );
    }
    let mut values = vec![0.0; d * d];
    for (j, col) in columns.iter().enumerate() {
        for i in 0..d {
            values[i * d + j] = col[i];
        }
    }
    let m = DenseMatrix::new(d, d, values)?;
    let mt = m.transpose();
    let mut sym = m.add(&mt)?;
    sym.scale(0.5);
    Ok(sym)
}

/// Estimate the mini-batch second-moment constants `(c_g, sigma_g^2)` by
/// regressing the Monte-Carlo batch-gradient moment against the full-shard
/// gradient norm over random probe points. The slope is clamped to `>= 1`.
pub fn estimate_cg_sigma(
    obj: &ObjectiveHandle,
    probe_count: usize,
    batch_size: usize,
    batches_per_probe: usize,
    probe_radius: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    if probe_count < 20 {
        return Err(Error::InvalidArgument(
            "estimate_cg_sigma needs at least 20 probes".into(),
        ));
    }
    if batch_size == 0 || batches_per_probe == 0 {
        return Err(Error::InvalidArgument(
            "batch_size and batches_per_probe must be >= 1".into(),
        ));
    }
    let d = obj.dim();
    let n_samples = obj.n_samples();
    let mut xs = Vec::with_capacity(probe_count);
    let mut ys = Vec::with_capacity(probe_count);
    for p in 0..probe_count {
        let mut stream = SeedStream::from_recipe(&RngRecipe::new(
            StreamDomain::Probe.shift(seed),
            0,
            0,
            p as u64,
        ));
        let mut values = vec![0.0; d];
        stream.fill_gaussian(&mut values);
        for v in &mut values {
            *v *= probe_radius;
        }
        let probe_params = ParamsView::from_vec(std::sync::Arc::clone(obj.layout()), values)?;
        let full = obj.full_grad(&probe_params)?;
        let x = full.dot(&full);

        let mut y = 0.0;
        for _ in 0..batches_per_probe {
            let batch = Batch::sample(&mut stream, batch_size, n_samples)?;
            let g = obj.true_grad(&probe_params, &batch)?;
            y += g.dot(&g);
        }
        y /= batches_per_probe as f64;
        xs.push(x);
        ys.push(y);
    }
    let (slope, intercept) = fit_line(&xs, &ys)?;
    Ok((slope.max(1.0), intercept.max(0.0)))
}

/// Least squares `y = slope x + intercept`. Errors when the design is
/// degenerate (all x equal, e.g. every probe gradient vanished).
pub(crate) fn fit_line(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys.iter()) {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    let scale = xs.iter().map(|x| x * x).sum::<f64>().max(1.0);
    if sxx <= 1e-14 * scale {
        return Err(Error::DegenerateRegression(format!(
            "design variance {sxx:.3e} too small"
        )));
    }
    let slope = sxy / sxx;
    Ok((slope, mean_y - slope * mean_x))
}

/// Heuristic smoothness estimate: the largest gradient difference quotient
/// over random probe directions. Exact (spectral) for quadratics; a lower
/// bound elsewhere, used only for ceiling warnings and diagnostics.
pub fn estimate_smoothness(
    obj: &ObjectiveHandle,
    params: &ParamsView,
    probes: usize,
    seed: u64,
) -> Result<f64> {
    if let Some(spec) = obj.quadratic_spec() {
        return spec.smoothness();
    }
    if let Some(spec) = obj.logreg_spec() {
        return spec.smoothness_bound(obj.data());
    }
    let d = obj.dim();
    let h = 1e-4;
    let base_grad = obj.full_grad(params)?;
    let mut best: f64 = 0.0;
    let mut stream = SeedStream::from_seed(StreamDomain::Probe.shift(seed));
    let mut probe = params.snapshot();
    let mut dir = vec![0.0; d];
    for _ in 0..probes.max(1) {
        stream.fill_gaussian(&mut dir);
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        for ((p, base), z) in probe
            .as_mut_slice()
            .iter_mut()
            .zip(params.as_slice())
            .zip(dir.iter())
        {
            *p = base + h * z / norm;
        }
        let g = obj.full_grad(&probe)?;
        let diff = g.sub(&base_grad)?;
        best = best.max(diff.norm() / h);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn base_inputs() -> TheoryInputs {
        TheoryInputs {
            d: 100,
            r: 4,
            n: 1,
            clients: 4,
            local_steps: 30,
            rounds: 500,
            smoothness: 1.0,
            c_g: 1.0,
            sigma_g: 0.1,
            c_h: 0.0,
            sigma_h: 0.0,
            mu: 1e-3,
            f0: 1.0,
            f_star: 0.0,
        }
    }

    #[test]
    fn gamma_zeta_worked_examples() {
        let (g, z) = gamma_zeta(10, 2, 1).unwrap();
        assert!((g - 28.0 / 12.0).abs() < 1e-15);
        assert!((z - 12.0 / 280.0).abs() < 1e-15);
        let (g, z) = gamma_zeta(2, 1, 1).unwrap();
        assert_eq!(g, 0.5);
        assert_eq!(z, 1.0);
    }

    #[test]
    fn lr_bound_worked_example() {
        let b = lr_bound(30, 1.0, 1.0, 100, 4);
        assert!((b - 1.0 / 900.0).abs() < 1e-18);
        let branches = lr_bound_branches(30, 1.0, 1.0, 100, 4);
        assert_eq!(b, branches.into_iter().fold(f64::INFINITY, f64::min));
    }

    #[test]
    fn lr_bound_tracks_inverse_sqrt_d() {
        // With H*3*L*c_g ~ 1 the first branch is ~ 1/sqrt(d).
        let b = lr_bound(1, 1.0 / 3.0, 1.0, 400, 1_000_000);
        assert!((b * 20.0 - 1.0).abs() < 1e-12, "b = {b}");
    }

    #[test]
    fn iid_rate_bound_golden() {
        // Frozen from an independent 50-digit re-evaluation of the formula.
        let inputs = base_inputs();
        let v = iid_rate_bound(&inputs, 1e-3).unwrap();
        assert!(
            (v - 4.882841233654003).abs() <= 1e-12 * v,
            "value = {v:.15}"
        );
    }

    #[test]
    fn iid_rate_bound_first_term_halves_with_doubled_rounds() {
        let mut inputs = base_inputs();
        let v1 = iid_rate_bound(&inputs, 1e-3).unwrap();
        inputs.rounds *= 2;
        let v2 = iid_rate_bound(&inputs, 1e-3).unwrap();
        // Only the first term scales with 1/T.
        let c = TheoryConstants::derive(&inputs).unwrap();
        let first = 1.0 / (2.0 * 1e-3 * 500.0 * c.gamma_cap);
        assert!((v1 - v2 - first / 2.0).abs() < 1e-12);
    }

    #[test]
    fn iid_rate_bound_limit_is_floor_terms() {
        let mut inputs = base_inputs();
        inputs.rounds = usize::MAX / 2;
        let v = iid_rate_bound(&inputs, 1e-3).unwrap();
        let c = TheoryConstants::derive(&inputs).unwrap();
        let d = inputs.d as f64;
        let floors = inputs.sigma_g.powi(2) * c.zeta / (4.0 * 30.0 * d * c.gamma_cap)
            + c.zeta * inputs.mu.powi(2) / (4.0 * 4.0 * 30.0 * c.gamma_cap);
        assert!((v - floors) / floors < 1e-6);
    }

    #[test]
    fn noniid_rate_bound_golden() {
        let mut inputs = base_inputs();
        inputs.c_h = 0.5;
        inputs.sigma_h = 0.2;
        let v = noniid_rate_bound(&inputs, 1e-3).unwrap();
        assert!(
            (v - 4.332713573901238).abs() <= 1e-12 * v.abs(),
            "value = {v:.15}"
        );
    }

    #[test]
    fn noniid_negative_term_grows_with_sigma_h() {
        let mut inputs = base_inputs();
        inputs.c_h = 0.5;
        inputs.sigma_h = 0.2;
        let v1 = noniid_rate_bound(&inputs, 1e-3).unwrap();
        inputs.sigma_h = 0.4;
        let v2 = noniid_rate_bound(&inputs, 1e-3).unwrap();
        assert!(v2 < v1);
    }

    #[test]
    fn noniid_last_term_vanishes_in_iid_limit() {
        let inputs = base_inputs();
        let c = TheoryConstants::derive(&inputs).unwrap();
        assert_eq!(c.sigma_tilde_sq, inputs.sigma_g * inputs.sigma_g);
        assert_eq!(c.c_h_tilde, 4.0);
        let v = noniid_rate_bound(&inputs, 1e-3).unwrap();
        assert!(v.is_finite());
    }

    #[test]
    fn rate_scaling_worked_example() {
        let v = rate_scaling(2, 4, 30, 500, None);
        assert!((v - 0.011547005383792516).abs() <= 1e-12 * v);
        // Quadrupling T halves it; r -> 4r multiplies by 8.
        let v_t = rate_scaling(2, 4, 30, 2000, None);
        assert!((v_t * 2.0 - v).abs() < 1e-15);
        let v_r = rate_scaling(8, 4, 30, 500, None);
        assert!((v_r - 8.0 * v).abs() < 1e-12);
    }

    #[test]
    fn effective_rank_identity_and_rank_one() {
        let id = DenseMatrix::identity(5).unwrap();
        assert_eq!(effective_rank(&id).unwrap(), 5.0);
        let r1 = DenseMatrix::from_diag(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(effective_rank(&r1).unwrap(), 1.0);
    }

    #[test]
    fn effective_rank_rejects_zero_matrix() {
        let z = DenseMatrix::zeros(4, 4).unwrap();
        assert!(matches!(effective_rank(&z), Err(Error::UndefinedRank)));
    }

    #[test]
    fn fit_line_recovers_exact_affine_data() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.5 * x + 0.75).collect();
        let (a, b) = fit_line(&xs, &ys).unwrap();
        assert!((a - 2.5).abs() < 1e-12);
        assert!((b - 0.75).abs() < 1e-12);
    }

    #[test]
    fn fit_line_rejects_constant_design() {
        let xs = [3.0; 25];
        let ys = [1.0; 25];
        assert!(fit_line(&xs, &ys).is_err());
    }

    proptest! {
        #[test]
        fn gamma_zeta_product_identity(d in 2usize..500, r in 1usize..64, n in 1usize..8) {
            let (g, z) = gamma_zeta(d, r, n).unwrap();
            let expected = n as f64 / (d as f64 + n as f64 - 1.0);
            prop_assert!(((g * z) - expected).abs() <= 1e-12 * expected);
        }

        #[test]
        fn lr_bound_is_min_of_branches(
            h in 1usize..200,
            l in 0.01f64..100.0,
            cg in 1.0f64..50.0,
            d in 2usize..1000,
            n in 1usize..64,
        ) {
            let branches = lr_bound_branches(h, l, cg, d, n);
            let bound = lr_bound(h, l, cg, d, n);
            prop_assert_eq!(bound, branches.into_iter().fold(f64::INFINITY, f64::min));
            // Monotone non-increasing in d (first branch) and H.
            let bigger_d = lr_bound(h, l, cg, d * 2, n);
            prop_assert!(bigger_d <= bound);
            let bigger_h = lr_bound(h * 2, l, cg, d, n);
            prop_assert!(bigger_h <= bound);
        }
    }
}
