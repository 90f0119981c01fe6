//! Quadratic objective with an exactly known optimum and smoothness constant.
//!
//! Per-sample structure makes mini-batch stochasticity tunable in closed form:
//! sample `j` contributes `0.5 * s_j * (v - x_j)' A (v - x_j)` with
//! `v = theta - optimum`, where `x_j` is the sample's feature row (a target
//! offset) and `s_j` an optional curvature scale. Zero offsets and unit scales
//! recover the plain deterministic quadratic.

use serde::{Deserialize, Serialize};

use crate::data::{Batch, Dataset};
use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, DenseVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticSpec {
    curvature: DenseMatrix,
    optimum: DenseVector,
    offset: f64,
    /// Per-sample curvature scales; empty means all ones. Must average to 1
    /// so the full-shard Hessian stays exactly `curvature`.
    sample_scales: Vec<f64>,
}

impl QuadraticSpec {
    pub fn new(curvature: DenseMatrix, optimum: DenseVector, offset: f64) -> Result<Self> {
        Self::with_sample_scales(curvature, optimum, offset, Vec::new())
    }

    pub fn with_sample_scales(
        curvature: DenseMatrix,
        optimum: DenseVector,
        offset: f64,
        sample_scales: Vec<f64>,
    ) -> Result<Self> {
        if curvature.rows() != curvature.cols() || curvature.rows() != optimum.len() {
            return Err(Error::InvalidDimension(
                "curvature must be square and match the optimum length".into(),
            ));
        }
        if !curvature.is_psd(1e-10) {
            return Err(Error::InvalidArgument(
                "curvature matrix must be symmetric PSD".into(),
            ));
        }
        if !sample_scales.is_empty() {
            if sample_scales.iter().any(|s| *s < 0.0 || !s.is_finite()) {
                return Err(Error::InvalidArgument(
                    "sample scales must be finite and non-negative".into(),
                ));
            }
            let mean: f64 = sample_scales.iter().sum::<f64>() / sample_scales.len() as f64;
            if (mean - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "sample scales must average to 1 (got {mean})"
                )));
            }
        }
        Ok(Self {
            curvature,
            optimum,
            offset,
            sample_scales,
        })
    }

    /// Isotropic spec `0.5 * lambda * ||theta - optimum||^2 + offset`.
    pub fn isotropic(dim: usize, lambda: f64, optimum: Vec<f64>, offset: f64) -> Result<Self> {
        let mut a = DenseMatrix::identity(dim)?;
        a.scale(lambda);
        Self::new(a, DenseVector::new(optimum)?, offset)
    }

    pub fn dim(&self) -> usize {
        self.optimum.len()
    }

    pub fn curvature(&self) -> &DenseMatrix {
        &self.curvature
    }

    pub fn optimum(&self) -> &DenseVector {
        &self.optimum
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn sample_scale(&self, idx: usize) -> f64 {
        if self.sample_scales.is_empty() {
            1.0
        } else {
            self.sample_scales[idx]
        }
    }

    pub fn sample_scales(&self) -> &[f64] {
        &self.sample_scales
    }

    /// Exact smoothness constant of the full-shard loss.
    pub fn smoothness(&self) -> Result<f64> {
        let (lambda, _) = crate::linalg::power_iteration(&self.curvature, 100_000, 1e-12)?;
        Ok(lambda.abs())
    }

    /// Mini-batch second-moment constants `(c_g, sigma_g^2)` in closed form
    /// for size-1 batches, given the dataset the spec is paired with.
    ///
    /// With scales `s_j` averaging to 1 and target offsets `x_j`:
    /// `c_g = mean(s_j^2)` at zero offsets; offsets contribute an additive
    /// `sigma_g^2 = mean ||s_j A (x_j - weighted mean)||^2` term. The general
    /// mixed case is reported through the same decomposition around the
    /// full-shard gradient.
    pub fn batch_constants(&self, data: &Dataset) -> Result<(f64, f64)> {
        let n = data.n_samples();
        if n == 0 {
            return Err(Error::InvalidArgument("empty dataset".into()));
        }
        // Full gradient at v: mean_j s_j A (v - x_j) = A(v - xbar_w) with
        // xbar_w the scale-weighted mean of targets. Decompose per-sample
        // gradients as s_j * A v - s_j A x_j; second moments follow from the
        // empirical scale moments and target spread.
        let mut mean_s2 = 0.0;
        for j in 0..n {
            let s = self.sample_scale(j);
            mean_s2 += s * s;
        }
        mean_s2 /= n as f64;

        // sigma_g^2: the v-independent part, mean_j ||s_j A x_j - mean_k s_k A x_k||^2.
        let d = self.dim();
        let mut mean_ax = vec![0.0; d];
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
        for j in 0..n {
            let s = self.sample_scale(j);
            let mut ax = vec![0.0; d];
            self.curvature.matvec_into(data.row(j), &mut ax);
            for v in &mut ax {
                *v *= s;
            }
            for (m, v) in mean_ax.iter_mut().zip(ax.iter()) {
                *m += v / n as f64;
            }
            rows.push(ax);
        }
        let mut sigma_sq = 0.0;
        for ax in &rows {
            sigma_sq += ax
                .iter()
                .zip(mean_ax.iter())
                .map(|(a, m)| (a - m) * (a - m))
                .sum::<f64>();
        }
        sigma_sq /= n as f64;
        Ok((mean_s2, sigma_sq))
    }

    pub(crate) fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.feature_dim() != self.dim() {
            return Err(Error::InvalidDimension(format!(
                "quadratic dim {} but dataset feature dim {}",
                self.dim(),
                data.feature_dim()
            )));
        }
        if !self.sample_scales.is_empty() && self.sample_scales.len() != data.n_samples() {
            return Err(Error::InvalidDimension(format!(
                "{} sample scales for {} samples",
                self.sample_scales.len(),
                data.n_samples()
            )));
        }
        Ok(())
    }

    pub(crate) fn loss(&self, theta: &[f64], data: &Dataset, batch: &Batch) -> f64 {
        let d = self.dim();
        let opt = self.optimum.as_slice();
        let mut acc = 0.0;
        for &j in batch.indices() {
            let x = data.row(j);
            let s = self.sample_scale(j);
            // 0.5 * s * (theta - opt - x)' A (theta - opt - x), no allocation.
            let mut q = 0.0;
            for r in 0..d {
                let row = self.curvature.row(r);
                let mut av = 0.0;
                for c in 0..d {
                    av += row[c] * (theta[c] - opt[c] - x[c]);
                }
                q += (theta[r] - opt[r] - x[r]) * av;
            }
            acc += 0.5 * s * q;
        }
        acc / batch.len() as f64 + self.offset
    }

    pub(crate) fn grad(&self, theta: &[f64], data: &Dataset, batch: &Batch) -> Vec<f64> {
        let d = self.dim();
        let opt = self.optimum.as_slice();
        let mut grad = vec![0.0; d];
        let inv = 1.0 / batch.len() as f64;
        for &j in batch.indices() {
            let x = data.row(j);
            let s = self.sample_scale(j) * inv;
            for r in 0..d {
                let row = self.curvature.row(r);
                let mut av = 0.0;
                for c in 0..d {
                    av += row[c] * (theta[c] - opt[c] - x[c]);
                }
                grad[r] += s * av;
            }
        }
        grad
    }
}
