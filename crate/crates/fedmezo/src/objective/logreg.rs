//! Binary logistic regression with L2 regularization.

use serde::{Deserialize, Serialize};

use crate::data::{Batch, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegSpec {
    dim: usize,
    l2: f64,
}

impl LogRegSpec {
    pub fn new(dim: usize, l2: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDimension("weight dim must be >= 1".into()));
        }
        if l2 < 0.0 || !l2.is_finite() {
            return Err(Error::InvalidArgument("l2 penalty must be >= 0".into()));
        }
        Ok(Self { dim, l2 })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn l2(&self) -> f64 {
        self.l2
    }

    /// Computable smoothness bound `lambda_max(X'X) / (4 n) + l2`.
    pub fn smoothness_bound(&self, data: &Dataset) -> Result<f64> {
        let n = data.n_samples();
        let d = self.dim;
        let mut gram = vec![0.0; d * d];
        for j in 0..n {
            let x = data.row(j);
            for r in 0..d {
                for c in 0..d {
                    gram[r * d + c] += x[r] * x[c];
                }
            }
        }
        let gram = crate::linalg::DenseMatrix::new(d, d, gram)?;
        let (lambda, _) = crate::linalg::power_iteration(&gram, 100_000, 1e-10)?;
        Ok(lambda.abs() / (4.0 * n as f64) + self.l2)
    }

    pub(crate) fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.feature_dim() != self.dim {
            return Err(Error::InvalidDimension(format!(
                "logreg dim {} but dataset feature dim {}",
                self.dim,
                data.feature_dim()
            )));
        }
        if data.labels().iter().any(|&l| l != 0 && l != 1) {
            return Err(Error::InvalidArgument(
                "logreg labels must be 0 or 1".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn loss(&self, w: &[f64], data: &Dataset, batch: &Batch) -> f64 {
        let mut acc = 0.0;
        for &j in batch.indices() {
            let x = data.row(j);
            let y = if data.label(j) == 1 { 1.0 } else { -1.0 };
            let margin: f64 = y * dot(x, w);
            acc += softplus(-margin);
        }
        let reg: f64 = 0.5 * self.l2 * w.iter().map(|v| v * v).sum::<f64>();
        acc / batch.len() as f64 + reg
    }

    pub(crate) fn grad(&self, w: &[f64], data: &Dataset, batch: &Batch) -> Vec<f64> {
        let mut grad = vec![0.0; self.dim];
        let inv = 1.0 / batch.len() as f64;
        for &j in batch.indices() {
            let x = data.row(j);
            let y = if data.label(j) == 1 { 1.0 } else { -1.0 };
            let margin = y * dot(x, w);
            // d/dw softplus(-y x'w) = -y * sigmoid(-margin) * x
            let coeff = -y * sigmoid(-margin) * inv;
            for (g, xi) in grad.iter_mut().zip(x.iter()) {
                *g += coeff * xi;
            }
        }
        for (g, wi) in grad.iter_mut().zip(w.iter()) {
            *g += self.l2 * wi;
        }
        grad
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

#[inline]
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln(1 + exp(t))`.
#[inline]
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn balanced_data() -> Dataset {
        Dataset::new(vec![1.0, 0.5, -1.0, 0.25], 2, vec![1, 0], None).unwrap()
    }

    #[test]
    fn zero_weights_give_ln_two() {
        let spec = LogRegSpec::new(2, 0.0).unwrap();
        let data = balanced_data();
        let batch = Batch::full(2).unwrap();
        let loss = spec.loss(&[0.0, 0.0], &data, &batch);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_labels() {
        let spec = LogRegSpec::new(1, 0.0).unwrap();
        let data = Dataset::new(vec![1.0], 1, vec![2], None).unwrap();
        assert!(spec.check_data(&data).is_err());
    }

    #[test]
    fn softplus_is_stable_at_extremes() {
        assert!(softplus(800.0).is_finite());
        assert_eq!(softplus(-800.0), 0.0);
    }
}
