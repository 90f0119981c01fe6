//! Small MLP classifier whose linear layers carry trainable low-rank adapters
//! over frozen base weights.
//!
//! Each linear layer computes `W0 x + (alpha/r) * B (A x) + b` with `W0`, `b`
//! frozen and only the factors `A` (r x d_in) and `B` (d_out x r) trainable.
//! Hidden activations are tanh; the head is linear into softmax cross-entropy.
//! The effective weight `W0 + (alpha/r) B A` is never materialized.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{Batch, Dataset};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::params::{ParamLayout, ParamsView, SliceInfo, SliceRole};
use crate::rng::{RngRecipe, SeedStream, StreamDomain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpLoraSpec {
    layer_dims: Vec<usize>,
    base_weights: Vec<DenseMatrix>,
    base_biases: Vec<Vec<f64>>,
    rank: usize,
    alpha: f64,
}

impl MlpLoraSpec {
    /// Build a spec with deterministic frozen base weights.
    ///
    /// `layer_dims` lists `[input, hidden..., classes]`; every consecutive
    /// pair becomes one adapted linear layer.
    pub fn new(layer_dims: Vec<usize>, rank: usize, alpha: f64, seed: u64) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::InvalidDimension(
                "mlp needs at least input and output dims".into(),
            ));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidDimension("layer dims must be >= 1".into()));
        }
        if rank == 0 {
            return Err(Error::InvalidRank {
                rank,
                d_in: layer_dims[0],
                d_out: layer_dims[1],
            });
        }
        for pair in layer_dims.windows(2) {
            let (d_in, d_out) = (pair[0], pair[1]);
            if rank > d_in.min(d_out) {
                return Err(Error::InvalidRank { rank, d_in, d_out });
            }
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidArgument("alpha must be positive".into()));
        }

        let mut base_weights = Vec::new();
        let mut base_biases = Vec::new();
        let mut stream =
            SeedStream::from_seed(StreamDomain::Data.shift(seed));
        for pair in layer_dims.windows(2) {
            let (d_in, d_out) = (pair[0], pair[1]);
            let scale = 1.0 / (d_in as f64).sqrt();
            let mut w = vec![0.0; d_out * d_in];
            stream.fill_gaussian(&mut w);
            for v in &mut w {
                *v *= scale;
            }
            base_weights.push(DenseMatrix::new(d_out, d_in, w)?);
            let mut b = vec![0.0; d_out];
            stream.fill_gaussian(&mut b);
            for v in &mut b {
                *v *= 0.1;
            }
            base_biases.push(b);
        }
        Ok(Self {
            layer_dims,
            base_weights,
            base_biases,
            rank,
            alpha,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn n_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn n_classes(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Adapter scale `alpha / r`.
    pub fn adapter_scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    /// Trainable parameter count: sum over layers of `r * (d_in + d_out)`.
    pub fn trainable_dim(&self) -> usize {
        self.layer_dims
            .windows(2)
            .map(|p| self.rank * (p[0] + p[1]))
            .sum()
    }

    /// Layout of the flat trainable vector: per layer, factor A then factor B.
    pub fn layout(&self) -> Result<ParamLayout> {
        let mut slices = Vec::new();
        let mut offset = 0;
        for (l, pair) in self.layer_dims.windows(2).enumerate() {
            let (d_in, d_out) = (pair[0], pair[1]);
            slices.push(SliceInfo {
                name: format!("layer{l}.a"),
                role: SliceRole::AdapterA,
                offset,
                rows: self.rank,
                cols: d_in,
            });
            offset += self.rank * d_in;
            slices.push(SliceInfo {
                name: format!("layer{l}.b"),
                role: SliceRole::AdapterB,
                offset,
                rows: d_out,
                cols: self.rank,
            });
            offset += d_out * self.rank;
        }
        ParamLayout::new(slices)
    }

    pub(crate) fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.feature_dim() != self.layer_dims[0] {
            return Err(Error::InvalidDimension(format!(
                "mlp input dim {} but dataset feature dim {}",
                self.layer_dims[0],
                data.feature_dim()
            )));
        }
        let classes = self.n_classes() as i64;
        if data.labels().iter().any(|&l| l < 0 || l >= classes) {
            return Err(Error::InvalidArgument(format!(
                "labels must lie in 0..{classes}"
            )));
        }
        Ok(())
    }

    fn layer_a<'p>(&self, params: &'p [f64], layer: usize, offsets: &[(usize, usize)]) -> &'p [f64] {
        let (a_off, _) = offsets[layer];
        let d_in = self.layer_dims[layer];
        &params[a_off..a_off + self.rank * d_in]
    }

    fn layer_b<'p>(&self, params: &'p [f64], layer: usize, offsets: &[(usize, usize)]) -> &'p [f64] {
        let (_, b_off) = offsets[layer];
        let d_out = self.layer_dims[layer + 1];
        &params[b_off..b_off + d_out * self.rank]
    }

    fn slice_offsets(&self) -> Vec<(usize, usize)> {
        let mut offsets = Vec::with_capacity(self.n_layers());
        let mut off = 0;
        for pair in self.layer_dims.windows(2) {
            let a_off = off;
            off += self.rank * pair[0];
            let b_off = off;
            off += pair[1] * self.rank;
            offsets.push((a_off, b_off));
        }
        offsets
    }

    /// Forward pass for one sample; returns per-layer post-activation values
    /// (activations[0] is the input row) and the logits.
    fn forward_sample(&self, params: &[f64], x: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let offsets = self.slice_offsets();
        let s = self.adapter_scale();
        let mut activations: Vec<Vec<f64>> = vec![x.to_vec()];
        let mut current = x.to_vec();
        for l in 0..self.n_layers() {
            let d_in = self.layer_dims[l];
            let d_out = self.layer_dims[l + 1];
            let a = self.layer_a(params, l, &offsets);
            let b = self.layer_b(params, l, &offsets);
            // u = A x (rank)
            let mut u = vec![0.0; self.rank];
            for (r, uv) in u.iter_mut().enumerate() {
                let row = &a[r * d_in..(r + 1) * d_in];
                *uv = row.iter().zip(current.iter()).map(|(p, q)| p * q).sum();
            }
            // z = W0 x + s * B u + bias
            let w0 = &self.base_weights[l];
            let bias = &self.base_biases[l];
            let mut z = vec![0.0; d_out];
            for (o, zv) in z.iter_mut().enumerate() {
                let base: f64 = w0
                    .row(o)
                    .iter()
                    .zip(current.iter())
                    .map(|(p, q)| p * q)
                    .sum();
                let brow = &b[o * self.rank..(o + 1) * self.rank];
                let delta: f64 = brow.iter().zip(u.iter()).map(|(p, q)| p * q).sum();
                *zv = base + s * delta + bias[o];
            }
            if l + 1 < self.n_layers() {
                for zv in &mut z {
                    *zv = zv.tanh();
                }
                activations.push(z.clone());
                current = z;
            } else {
                return (activations, z);
            }
        }
        unreachable!("mlp has at least one layer");
    }

    pub(crate) fn loss(&self, params: &[f64], data: &Dataset, batch: &Batch) -> f64 {
        let mut acc = 0.0;
        for &j in batch.indices() {
            let (_, logits) = self.forward_sample(params, data.row(j));
            acc += cross_entropy(&logits, data.label(j) as usize);
        }
        acc / batch.len() as f64
    }

    pub(crate) fn grad(&self, params: &[f64], data: &Dataset, batch: &Batch) -> Vec<f64> {
        let offsets = self.slice_offsets();
        let s = self.adapter_scale();
        let mut grad = vec![0.0; self.trainable_dim()];
        let inv = 1.0 / batch.len() as f64;

        for &j in batch.indices() {
            let x = data.row(j);
            let (activations, logits) = self.forward_sample(params, x);
            // dL/dz for the head: softmax(logits) - onehot(label)
            let mut delta = softmax(&logits);
            delta[data.label(j) as usize] -= 1.0;
            for dv in &mut delta {
                *dv *= inv;
            }

            for l in (0..self.n_layers()).rev() {
                let d_in = self.layer_dims[l];
                let d_out = self.layer_dims[l + 1];
                let a = self.layer_a(params, l, &offsets);
                let b = self.layer_b(params, l, &offsets);
                let h_in = &activations[l];
                let (a_off, b_off) = offsets[l];

                // u = A h_in (rank), bt = B' delta (rank)
                let mut u = vec![0.0; self.rank];
                let mut bt = vec![0.0; self.rank];
                for r in 0..self.rank {
                    let arow = &a[r * d_in..(r + 1) * d_in];
                    u[r] = arow.iter().zip(h_in.iter()).map(|(p, q)| p * q).sum();
                    bt[r] = (0..d_out).map(|o| b[o * self.rank + r] * delta[o]).sum();
                }
                // dL/dA = s * (B' delta) h_in',  dL/dB = s * delta u'
                for r in 0..self.rank {
                    let coeff = s * bt[r];
                    if coeff != 0.0 {
                        let g = &mut grad[a_off + r * d_in..a_off + (r + 1) * d_in];
                        for (gv, hv) in g.iter_mut().zip(h_in.iter()) {
                            *gv += coeff * hv;
                        }
                    }
                }
                for o in 0..d_out {
                    let coeff = s * delta[o];
                    let g = &mut grad[b_off + o * self.rank..b_off + (o + 1) * self.rank];
                    for (gv, uv) in g.iter_mut().zip(u.iter()) {
                        *gv += coeff * uv;
                    }
                }

                if l > 0 {
                    // dL/dh_in = W0' delta + s * A' (B' delta)
                    let w0 = &self.base_weights[l];
                    let mut dh = vec![0.0; d_in];
                    for (o, dv) in delta.iter().enumerate() {
                        if *dv == 0.0 {
                            continue;
                        }
                        for (c, w) in w0.row(o).iter().enumerate() {
                            dh[c] += w * dv;
                        }
                    }
                    for r in 0..self.rank {
                        let coeff = s * bt[r];
                        if coeff != 0.0 {
                            let arow = &a[r * d_in..(r + 1) * d_in];
                            for (c, av) in arow.iter().enumerate() {
                                dh[c] += coeff * av;
                            }
                        }
                    }
                    // through tanh: h_in = tanh(z_prev)
                    for (dv, hv) in dh.iter_mut().zip(h_in.iter()) {
                        *dv *= 1.0 - hv * hv;
                    }
                    delta = dh;
                }
            }
        }
        grad
    }
}

/// Initialize adapters: `A ~ 0.01 * N(0, 1)`, `B = 0`, so the initial forward
/// pass equals the frozen base model exactly.
pub fn init_lora(spec: &MlpLoraSpec, seed: u64) -> Result<ParamsView> {
    let layout = Arc::new(spec.layout()?);
    let mut view = ParamsView::zeros(Arc::clone(&layout));
    let mut stream = SeedStream::from_recipe(&RngRecipe::new(
        StreamDomain::Init.shift(seed),
        0,
        0,
        0,
    ));
    for info in layout.slices().to_vec() {
        if info.role == SliceRole::AdapterA {
            let dst = &mut view.as_mut_slice()[info.range()];
            stream.fill_gaussian(dst);
            for v in dst {
                *v *= 0.01;
            }
        }
    }
    Ok(view)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let mut out: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

/// `-ln softmax(logits)[label]` via logsumexp.
fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> MlpLoraSpec {
        MlpLoraSpec::new(vec![20, 10], 4, 8.0, 7).unwrap()
    }

    #[test]
    fn trainable_dim_single_layer() {
        assert_eq!(small_spec().trainable_dim(), 4 * (20 + 10));
    }

    #[test]
    fn rejects_oversized_rank() {
        let err = MlpLoraSpec::new(vec![20, 10], 11, 8.0, 7);
        assert!(matches!(err, Err(Error::InvalidRank { rank: 11, .. })));
    }

    #[test]
    fn init_matches_frozen_base_exactly() {
        let spec = MlpLoraSpec::new(vec![6, 8, 8, 3], 2, 4.0, 9).unwrap();
        let data = Dataset::synthetic_blobs(12, 6, 1.0, None, 3).unwrap();
        let labels_ok = data.labels().iter().all(|&l| l < 3);
        assert!(labels_ok);
        let batch = Batch::full(12).unwrap();
        let init = init_lora(&spec, 42).unwrap();
        let zeroed = ParamsView::zeros(Arc::new(spec.layout().unwrap()));
        let loss_init = spec.loss(init.as_slice(), &data, &batch);
        let loss_base = spec.loss(zeroed.as_slice(), &data, &batch);
        assert_eq!(loss_init, loss_base);
    }

    #[test]
    fn init_is_deterministic() {
        let spec = small_spec();
        let a = init_lora(&spec, 5).unwrap();
        let b = init_lora(&spec, 5).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn a_gradient_vanishes_at_init() {
        // With B = 0, dL/dA = s * B' delta * h' = 0 for every entry.
        let spec = MlpLoraSpec::new(vec![5, 6, 2], 2, 4.0, 11).unwrap();
        let data = Dataset::synthetic_blobs(8, 5, 1.5, None, 4).unwrap();
        let batch = Batch::full(8).unwrap();
        let init = init_lora(&spec, 1).unwrap();
        let grad = spec.grad(init.as_slice(), &data, &batch);
        let layout = spec.layout().unwrap();
        for info in layout.slices() {
            let g = &grad[info.range()];
            match info.role {
                SliceRole::AdapterA => assert!(g.iter().all(|v| *v == 0.0)),
                SliceRole::AdapterB => assert!(g.iter().any(|v| *v != 0.0)),
                SliceRole::Dense => unreachable!(),
            }
        }
    }
}
