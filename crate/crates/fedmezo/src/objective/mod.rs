//! Desk-scale loss functions standing in for model fine-tuning.
//!
//! Every objective exposes loss evaluation (the only thing the zeroth-order
//! path needs) plus an exact-gradient oracle used strictly for verification
//! and the backprop baseline.

mod logreg;
mod mlp;
mod quadratic;

pub use logreg::LogRegSpec;
pub use mlp::{init_lora, MlpLoraSpec};
pub use quadratic::QuadraticSpec;

use std::sync::Arc;

use crate::data::{Batch, Dataset};
use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::params::{ParamLayout, ParamsView};
use crate::rng::SeedStream;

/// Which family an [`ObjectiveHandle`] belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    Quadratic,
    LogReg,
    MlpLora,
}

#[derive(Debug, Clone)]
enum Inner {
    Quadratic(Arc<QuadraticSpec>),
    LogReg(Arc<LogRegSpec>),
    MlpLora(Arc<MlpLoraSpec>),
}

/// A loss function bound to its data shard. Read-only after construction and
/// cheap to share across threads.
#[derive(Debug, Clone)]
pub struct ObjectiveHandle {
    inner: Inner,
    data: Arc<Dataset>,
    layout: Arc<ParamLayout>,
}

impl ObjectiveHandle {
    pub fn quadratic(spec: Arc<QuadraticSpec>, data: Arc<Dataset>) -> Result<Self> {
        spec.check_data(&data)?;
        let layout = Arc::new(ParamLayout::dense(spec.dim())?);
        Ok(Self {
            inner: Inner::Quadratic(spec),
            data,
            layout,
        })
    }

    /// Quadratic over `n_samples` zero-offset samples (deterministic batches).
    pub fn quadratic_uniform(spec: Arc<QuadraticSpec>, n_samples: usize) -> Result<Self> {
        let d = spec.dim();
        let data = Arc::new(Dataset::new(vec![0.0; n_samples * d], d, vec![0; n_samples], None)?);
        Self::quadratic(spec, data)
    }

    pub fn logreg(spec: Arc<LogRegSpec>, data: Arc<Dataset>) -> Result<Self> {
        spec.check_data(&data)?;
        let layout = Arc::new(ParamLayout::dense(spec.dim())?);
        Ok(Self {
            inner: Inner::LogReg(spec),
            data,
            layout,
        })
    }

    pub fn mlp_lora(spec: Arc<MlpLoraSpec>, data: Arc<Dataset>) -> Result<Self> {
        spec.check_data(&data)?;
        let layout = Arc::new(spec.layout()?);
        Ok(Self {
            inner: Inner::MlpLora(spec),
            data,
            layout,
        })
    }

    pub fn kind(&self) -> ObjectiveKind {
        match self.inner {
            Inner::Quadratic(_) => ObjectiveKind::Quadratic,
            Inner::LogReg(_) => ObjectiveKind::LogReg,
            Inner::MlpLora(_) => ObjectiveKind::MlpLora,
        }
    }

    /// Trainable dimension `d`.
    pub fn dim(&self) -> usize {
        self.layout.total()
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn data(&self) -> &Arc<Dataset> {
        &self.data
    }

    pub fn n_samples(&self) -> usize {
        self.data.n_samples()
    }

    pub fn quadratic_spec(&self) -> Option<&Arc<QuadraticSpec>> {
        match &self.inner {
            Inner::Quadratic(s) => Some(s),
            _ => None,
        }
    }

    pub fn logreg_spec(&self) -> Option<&Arc<LogRegSpec>> {
        match &self.inner {
            Inner::LogReg(s) => Some(s),
            _ => None,
        }
    }

    pub fn mlp_spec(&self) -> Option<&Arc<MlpLoraSpec>> {
        match &self.inner {
            Inner::MlpLora(s) => Some(s),
            _ => None,
        }
    }

    /// Same objective family and spec over a different shard.
    pub fn with_data(&self, data: Arc<Dataset>) -> Result<Self> {
        match &self.inner {
            Inner::Quadratic(s) => Self::quadratic(Arc::clone(s), data),
            Inner::LogReg(s) => Self::logreg(Arc::clone(s), data),
            Inner::MlpLora(s) => Self::mlp_lora(Arc::clone(s), data),
        }
    }

    fn check_params(&self, params: &ParamsView) -> Result<()> {
        if params.len() != self.dim() {
            return Err(Error::InvalidDimension(format!(
                "params length {} but objective dim {}",
                params.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Deterministic scalar loss of `params` on the mini-batch.
    pub fn eval_loss(&self, params: &ParamsView, batch: &Batch) -> Result<f64> {
        self.check_params(params)?;
        Ok(self.eval_loss_raw(params.as_slice(), batch))
    }

    /// Loss on a raw slice; the hot path for in-place perturbation.
    pub fn eval_loss_raw(&self, params: &[f64], batch: &Batch) -> f64 {
        match &self.inner {
            Inner::Quadratic(s) => s.loss(params, &self.data, batch),
            Inner::LogReg(s) => s.loss(params, &self.data, batch),
            Inner::MlpLora(s) => s.loss(params, &self.data, batch),
        }
    }

    /// Loss over the whole shard.
    pub fn full_loss(&self, params: &ParamsView) -> Result<f64> {
        let batch = Batch::full(self.n_samples())?;
        self.eval_loss(params, &batch)
    }

    /// Exact gradient (analytic for quadratic/logreg, reverse-mode through the
    /// adapters for the MLP). Verification oracle and backprop baseline; the
    /// zeroth-order path never calls this.
    pub fn true_grad(&self, params: &ParamsView, batch: &Batch) -> Result<DenseVector> {
        self.check_params(params)?;
        let g = match &self.inner {
            Inner::Quadratic(s) => s.grad(params.as_slice(), &self.data, batch),
            Inner::LogReg(s) => s.grad(params.as_slice(), &self.data, batch),
            Inner::MlpLora(s) => s.grad(params.as_slice(), &self.data, batch),
        };
        DenseVector::new(g)
    }

    /// Gradient over the whole shard.
    pub fn full_grad(&self, params: &ParamsView) -> Result<DenseVector> {
        let batch = Batch::full(self.n_samples())?;
        self.true_grad(params, &batch)
    }

    /// Initial trainable vector for this objective: adapter init for the MLP,
    /// a seeded Gaussian of the given radius otherwise.
    pub fn init_params(&self, seed: u64, radius: f64) -> Result<ParamsView> {
        match &self.inner {
            Inner::MlpLora(s) => init_lora(s, seed),
            _ => {
                let mut stream = SeedStream::from_seed(
                    crate::rng::StreamDomain::Init.shift(seed),
                );
                let mut values = vec![0.0; self.dim()];
                stream.fill_gaussian(&mut values);
                let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    for v in &mut values {
                        *v *= radius / norm;
                    }
                }
                ParamsView::from_vec(Arc::clone(&self.layout), values)
            }
        }
    }
}

/// Per-client heterogeneity knobs for generated quadratics.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Heterogeneity {
    /// Standard deviation of the per-client optimum shift.
    pub shift_scale: f64,
    /// Half-width of the uniform curvature multiplier `1 + spread_i`.
    pub curvature_spread: f64,
}

impl Heterogeneity {
    pub fn none() -> Self {
        Self {
            shift_scale: 0.0,
            curvature_spread: 0.0,
        }
    }
}

/// Generate `n_clients` quadratics around a shared base: client `i` gets
/// optimum `theta* + shift_i` and curvature `A * (1 + spread_i)`.
///
/// The base is the isotropic unit quadratic; use
/// [`make_client_quadratics_from`] to supply a custom base.
pub fn make_client_quadratics(
    n_clients: usize,
    dim: usize,
    heterogeneity: Heterogeneity,
    seed: u64,
) -> Result<Vec<QuadraticSpec>> {
    let base = QuadraticSpec::isotropic(dim, 1.0, vec![0.0; dim], 0.0)?;
    make_client_quadratics_from(&base, n_clients, heterogeneity, seed)
}

pub fn make_client_quadratics_from(
    base: &QuadraticSpec,
    n_clients: usize,
    heterogeneity: Heterogeneity,
    seed: u64,
) -> Result<Vec<QuadraticSpec>> {
    if n_clients == 0 {
        return Err(Error::InvalidArgument("need at least one client".into()));
    }
    if heterogeneity.shift_scale < 0.0 {
        return Err(Error::InvalidArgument("shift_scale must be >= 0".into()));
    }
    if !(0.0..1.0).contains(&heterogeneity.curvature_spread) {
        return Err(Error::InvalidArgument(
            "curvature_spread must lie in [0, 1) to keep every curvature PSD".into(),
        ));
    }
    let dim = base.dim();
    let mut stream = SeedStream::from_seed(crate::rng::StreamDomain::Data.shift(seed));
    let mut specs = Vec::with_capacity(n_clients);
    let mut shift = vec![0.0; dim];
    for _ in 0..n_clients {
        stream.fill_gaussian(&mut shift);
        let optimum: Vec<f64> = base
            .optimum()
            .as_slice()
            .iter()
            .zip(shift.iter())
            .map(|(o, s)| o + heterogeneity.shift_scale * s)
            .collect();
        let spread = if heterogeneity.curvature_spread > 0.0 {
            stream.uniform(-heterogeneity.curvature_spread, heterogeneity.curvature_spread)
        } else {
            0.0
        };
        let mut curvature = base.curvature().clone();
        curvature.scale(1.0 + spread);
        specs.push(QuadraticSpec::new(
            curvature,
            DenseVector::new(optimum)?,
            base.offset(),
        )?);
    }
    Ok(specs)
}

/// The exact global quadratic `f = mean_i f_i`: mean curvature, optimum from
/// solving the stationarity system, and the matching offset.
pub fn global_quadratic(specs: &[QuadraticSpec]) -> Result<QuadraticSpec> {
    if specs.is_empty() {
        return Err(Error::InvalidArgument("no client quadratics".into()));
    }
    let d = specs[0].dim();
    let n = specs.len() as f64;
    let mut mean_a = DenseMatrix::zeros(d, d)?;
    let mut rhs = DenseVector::zeros(d)?;
    let mut const_term = 0.0;
    for spec in specs {
        if spec.dim() != d {
            return Err(Error::InvalidDimension("client dims differ".into()));
        }
        mean_a = mean_a.add(spec.curvature())?;
        let ax = spec.curvature().matvec(spec.optimum())?;
        rhs.axpy(1.0, &ax);
        const_term += 0.5 * spec.optimum().dot(&ax) + spec.offset();
    }
    mean_a.scale(1.0 / n);
    rhs.scale(1.0 / n);
    const_term /= n;
    let optimum = mean_a.solve(&rhs)?;
    // f(theta) = 0.5 th' A th - th' rhs + const = 0.5 (th - opt)' A (th - opt) + c*
    let a_opt = mean_a.matvec(&optimum)?;
    let offset = const_term - 0.5 * optimum.dot(&a_opt);
    QuadraticSpec::new(mean_a, optimum, offset)
}
