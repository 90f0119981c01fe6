//! Datasets, mini-batches, and loaders.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeedStream;

/// In-memory sample table: dense float features, integer labels, and an
/// optional per-sample task tag used by the meta splitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Vec<f64>,
    feature_dim: usize,
    labels: Vec<i64>,
    task_tags: Option<Vec<i64>>,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        feature_dim: usize,
        labels: Vec<i64>,
        task_tags: Option<Vec<i64>>,
    ) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::InvalidDimension("feature_dim must be > 0".into()));
        }
        if features.len() % feature_dim != 0 {
            return Err(Error::InvalidDimension(format!(
                "feature buffer length {} is not a multiple of feature_dim {}",
                features.len(),
                feature_dim
            )));
        }
        let n = features.len() / feature_dim;
        if labels.len() != n {
            return Err(Error::InvalidDimension(format!(
                "{} labels for {} samples",
                labels.len(),
                n
            )));
        }
        if let Some(tags) = &task_tags {
            if tags.len() != n {
                return Err(Error::InvalidDimension(format!(
                    "{} task tags for {} samples",
                    tags.len(),
                    n
                )));
            }
        }
        Ok(Self {
            features,
            feature_dim,
            labels,
            task_tags,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn row(&self, idx: usize) -> &[f64] {
        &self.features[idx * self.feature_dim..(idx + 1) * self.feature_dim]
    }

    pub fn label(&self, idx: usize) -> i64 {
        self.labels[idx]
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn task_tag(&self, idx: usize) -> Option<i64> {
        self.task_tags.as_ref().map(|t| t[idx])
    }

    pub fn task_tags(&self) -> Option<&[i64]> {
        self.task_tags.as_deref()
    }

    /// New dataset containing the given rows, in order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut features = Vec::with_capacity(indices.len() * self.feature_dim);
        let mut labels = Vec::with_capacity(indices.len());
        let mut tags = self.task_tags.as_ref().map(|_| Vec::with_capacity(indices.len()));
        for &i in indices {
            if i >= self.n_samples() {
                return Err(Error::InvalidArgument(format!(
                    "subset index {i} out of range for {} samples",
                    self.n_samples()
                )));
            }
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
            if let (Some(out), Some(src)) = (tags.as_mut(), self.task_tags.as_ref()) {
                out.push(src[i]);
            }
        }
        Dataset::new(features, self.feature_dim, labels, tags)
    }

    /// Load from a CSV file with a header row: float feature columns, an
    /// integer `label` column, and an optional integer `task` column.
    pub fn from_csv<P: AsRef<Path>>(path: P) -> Result<Dataset> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let label_col = headers
            .iter()
            .position(|h| h == "label")
            .ok_or_else(|| Error::Config("CSV is missing a `label` column".into()))?;
        let task_col = headers.iter().position(|h| h == "task");
        let feature_cols: Vec<usize> = (0..headers.len())
            .filter(|c| *c != label_col && Some(*c) != task_col)
            .collect();
        if feature_cols.is_empty() {
            return Err(Error::Config("CSV has no feature columns".into()));
        }

        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut tags: Vec<i64> = Vec::new();
        for record in reader.records() {
            let record = record?;
            for &c in &feature_cols {
                let v: f64 = record[c].trim().parse().map_err(|_| {
                    Error::Config(format!(
                        "non-numeric feature value {:?} in column `{}`",
                        &record[c], &headers[c]
                    ))
                })?;
                features.push(v);
            }
            let label: i64 = record[label_col].trim().parse().map_err(|_| {
                Error::Config(format!("non-integer label value {:?}", &record[label_col]))
            })?;
            labels.push(label);
            if let Some(tc) = task_col {
                let tag: i64 = record[tc].trim().parse().map_err(|_| {
                    Error::Config(format!("non-integer task value {:?}", &record[tc]))
                })?;
                tags.push(tag);
            }
        }
        let task_tags = task_col.map(|_| tags);
        Dataset::new(features, feature_cols.len(), labels, task_tags)
    }

    /// Synthetic two-class Gaussian blobs for classification objectives.
    ///
    /// Class means sit at +/- `separation`/2 along a deterministic direction;
    /// task tags cycle over `n_tasks` groups when requested.
    pub fn synthetic_blobs(
        n: usize,
        d: usize,
        separation: f64,
        n_tasks: Option<usize>,
        seed: u64,
    ) -> Result<Dataset> {
        if n == 0 || d == 0 {
            return Err(Error::InvalidDimension(
                "synthetic dataset needs n >= 1 and d >= 1".into(),
            ));
        }
        let mut stream = SeedStream::from_seed(seed);
        let mut direction = vec![0.0; d];
        stream.fill_gaussian(&mut direction);
        let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut direction {
            *v /= norm;
        }

        let mut features = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        let mut buf = vec![0.0; d];
        for i in 0..n {
            let label = (i % 2) as i64;
            let sign = if label == 0 { -1.0 } else { 1.0 };
            stream.fill_gaussian(&mut buf);
            for (j, b) in buf.iter().enumerate() {
                features.push(b + sign * 0.5 * separation * direction[j]);
            }
            labels.push(label);
        }
        let task_tags = n_tasks.map(|k| (0..n).map(|i| (i % k) as i64).collect());
        Dataset::new(features, d, labels, task_tags)
    }
}

/// Mini-batch: row indices into a dataset. Non-empty, in range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    indices: Vec<usize>,
}

impl Batch {
    pub fn new(indices: Vec<usize>, n_samples: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument("batch must be non-empty".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n_samples) {
            return Err(Error::InvalidArgument(format!(
                "batch index {bad} out of range for {n_samples} samples"
            )));
        }
        Ok(Self { indices })
    }

    /// Every row of the dataset, in order.
    pub fn full(n_samples: usize) -> Result<Self> {
        Self::new((0..n_samples).collect(), n_samples)
    }

    /// Uniform draw with replacement from the stream. A requested size at or
    /// above the dataset size degenerates to the deterministic full batch.
    pub fn sample(stream: &mut SeedStream, batch_size: usize, n_samples: usize) -> Result<Self> {
        if batch_size >= n_samples {
            return Self::full(n_samples);
        }
        let indices = (0..batch_size).map(|_| stream.index(n_samples)).collect();
        Self::new(indices, n_samples)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}
