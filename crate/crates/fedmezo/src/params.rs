//! Flat trainable-parameter buffers with a slice layout.
//!
//! A [`ParamsView`] is the single mutable object in the training loop: a flat
//! `f64` vector plus a descriptor mapping named slices (adapter factors,
//! weight blocks) onto it. Frozen base weights never live here; only what is
//! trained and transmitted does. Allocations of these buffers are counted via
//! [`crate::track`] so tests can assert that the in-place optimizer allocates
//! nothing per step.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::track;

/// Role a slice plays inside the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SliceRole {
    /// Whole trainable vector of a non-adapter objective.
    Dense,
    /// LoRA down-projection factor (rank x d_in).
    AdapterA,
    /// LoRA up-projection factor (d_out x rank).
    AdapterB,
}

/// One named slice of the flat vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceInfo {
    pub name: String,
    pub role: SliceRole,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl SliceInfo {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Layout descriptor: contiguous, non-overlapping slices covering the vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    slices: Vec<SliceInfo>,
    total: usize,
}

impl ParamLayout {
    pub fn new(slices: Vec<SliceInfo>) -> Result<Self> {
        let mut expected = 0usize;
        for s in &slices {
            if s.offset != expected {
                return Err(Error::InvalidArgument(format!(
                    "slice {} starts at {}, expected {}",
                    s.name, s.offset, expected
                )));
            }
            expected += s.len();
        }
        if expected == 0 {
            return Err(Error::InvalidDimension(
                "layout must cover at least one parameter".into(),
            ));
        }
        Ok(Self {
            slices,
            total: expected,
        })
    }

    /// Single anonymous dense block of length `n`.
    pub fn dense(n: usize) -> Result<Self> {
        Self::new(vec![SliceInfo {
            name: "theta".into(),
            role: SliceRole::Dense,
            offset: 0,
            rows: n,
            cols: 1,
        }])
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn slices(&self) -> &[SliceInfo] {
        &self.slices
    }

    pub fn slice_named(&self, name: &str) -> Option<&SliceInfo> {
        self.slices.iter().find(|s| s.name == name)
    }
}

/// Flat trainable vector plus its layout. Single-owner mutable buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsView {
    values: Vec<f64>,
    layout: Arc<ParamLayout>,
}

impl ParamsView {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        track::note_buffer_alloc();
        Self {
            values: vec![0.0; layout.total()],
            layout,
        }
    }

    pub fn from_vec(layout: Arc<ParamLayout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total() {
            return Err(Error::InvalidDimension(format!(
                "parameter buffer has {} entries, layout expects {}",
                values.len(),
                layout.total()
            )));
        }
        track::note_buffer_alloc();
        Ok(Self { values, layout })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// View of one named slice.
    pub fn slice(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .slice_named(name)
            .map(|s| &self.values[s.range()])
    }

    /// Allocating copy of the whole buffer (counted).
    pub fn snapshot(&self) -> ParamsView {
        track::note_buffer_alloc();
        ParamsView {
            values: self.values.clone(),
            layout: Arc::clone(&self.layout),
        }
    }

    /// Overwrite in place from a same-layout buffer. Never allocates.
    pub fn copy_from(&mut self, other: &ParamsView) {
        debug_assert_eq!(self.values.len(), other.values.len());
        self.values.copy_from_slice(&other.values);
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
