//! Dataset splitters: uniform, Dirichlet-by-label, and meta-by-task.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{SeedStream, StreamDomain};

/// How the dataset is partitioned across clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitKind {
    /// Near-equal random shards (size difference at most 1).
    Iid,
    /// Label-distribution split: per label class, client proportions are
    /// drawn from `Dirichlet(beta * 1_N)`.
    Dirichlet { beta: f64 },
    /// Shard `i` holds all samples whose task tag maps to group `i`.
    /// Without an explicit assignment, distinct tags (sorted) are dealt
    /// round-robin over clients.
    MetaByTask {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        assignment: Option<BTreeMap<i64, usize>>,
    },
}

/// Full splitter specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub kind: SplitKind,
    pub n_clients: usize,
    pub seed: u64,
}

const DIRICHLET_RETRIES: usize = 100;

/// Partition the dataset: returns per-client sample indices. Shards are
/// disjoint, cover the dataset exactly once, and are all non-empty.
pub fn split_dataset(ds: &Dataset, spec: &SplitSpec) -> Result<Vec<Vec<usize>>> {
    let n = ds.n_samples();
    if spec.n_clients == 0 {
        return Err(Error::InvalidArgument("need at least one client".into()));
    }
    if n < spec.n_clients {
        return Err(Error::InvalidArgument(format!(
            "{n} samples cannot cover {} clients",
            spec.n_clients
        )));
    }
    let mut stream = SeedStream::from_seed(StreamDomain::Split.shift(spec.seed));
    let shards = match &spec.kind {
        SplitKind::Iid => split_iid(n, spec.n_clients, &mut stream),
        SplitKind::Dirichlet { beta } => {
            if !(beta.is_finite() && *beta > 0.0) {
                return Err(Error::InvalidArgument(
                    "dirichlet beta must be positive".into(),
                ));
            }
            split_dirichlet(ds, spec.n_clients, *beta, &mut stream)?
        }
        SplitKind::MetaByTask { assignment } => {
            split_meta(ds, spec.n_clients, assignment.as_ref())?
        }
    };
    verify_partition(&shards, n)?;
    Ok(shards)
}

fn split_iid(n: usize, n_clients: usize, stream: &mut SeedStream) -> Vec<Vec<usize>> {
    let mut indices: Vec<usize> = (0..n).collect();
    stream.shuffle(&mut indices);
    let base = n / n_clients;
    let extra = n % n_clients;
    let mut shards = Vec::with_capacity(n_clients);
    let mut cursor = 0;
    for i in 0..n_clients {
        let size = base + usize::from(i < extra);
        shards.push(indices[cursor..cursor + size].to_vec());
        cursor += size;
    }
    shards
}

fn split_dirichlet(
    ds: &Dataset,
    n_clients: usize,
    beta: f64,
    stream: &mut SeedStream,
) -> Result<Vec<Vec<usize>>> {
    // Group sample indices by label, deterministically ordered.
    let mut by_label: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for i in 0..ds.n_samples() {
        by_label.entry(ds.label(i)).or_default().push(i);
    }

    for _attempt in 0..DIRICHLET_RETRIES {
        let mut shards: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
        for indices in by_label.values() {
            let mut class = indices.clone();
            stream.shuffle(&mut class);
            let proportions = stream.dirichlet(beta, n_clients);
            let counts = apportion(class.len(), &proportions);
            let mut cursor = 0;
            for (client, count) in counts.into_iter().enumerate() {
                shards[client].extend_from_slice(&class[cursor..cursor + count]);
                cursor += count;
            }
        }
        if shards.iter().all(|s| !s.is_empty()) {
            for s in &mut shards {
                s.sort_unstable();
            }
            return Ok(shards);
        }
    }
    Err(Error::EmptyShard {
        attempts: DIRICHLET_RETRIES,
    })
}

/// Integer counts proportional to `proportions` summing to `total`
/// (largest-remainder rounding, deterministic tie-break on index).
fn apportion(total: usize, proportions: &[f64]) -> Vec<usize> {
    let mut counts: Vec<usize> = proportions
        .iter()
        .map(|p| (p * total as f64).floor() as usize)
        .collect();
    let assigned: usize = counts.iter().sum();
    let mut remainders: Vec<(usize, f64)> = proportions
        .iter()
        .enumerate()
        .map(|(i, p)| (i, p * total as f64 - counts[i] as f64))
        .collect();
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for (i, _) in remainders.into_iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

fn split_meta(
    ds: &Dataset,
    n_clients: usize,
    assignment: Option<&BTreeMap<i64, usize>>,
) -> Result<Vec<Vec<usize>>> {
    let tags = ds.task_tags().ok_or_else(|| {
        Error::InvalidArgument("meta split requires per-sample task tags".into())
    })?;
    let mut distinct: Vec<i64> = tags.to_vec();
    distinct.sort_unstable();
    distinct.dedup();

    let map: BTreeMap<i64, usize> = match assignment {
        Some(m) => {
            if let Some((tag, client)) = m.iter().find(|(_, &c)| c >= n_clients) {
                return Err(Error::InvalidArgument(format!(
                    "task {tag} mapped to client {client} >= {n_clients}"
                )));
            }
            m.clone()
        }
        None => distinct
            .iter()
            .enumerate()
            .map(|(i, &tag)| (tag, i % n_clients))
            .collect(),
    };

    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
    for (i, tag) in tags.iter().enumerate() {
        let client = *map.get(tag).ok_or_else(|| {
            Error::InvalidArgument(format!("task tag {tag} has no group assignment"))
        })?;
        shards[client].push(i);
    }
    if shards.iter().any(|s| s.is_empty()) {
        return Err(Error::EmptyShard { attempts: 1 });
    }
    Ok(shards)
}

fn verify_partition(shards: &[Vec<usize>], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    let mut count = 0usize;
    for shard in shards {
        if shard.is_empty() {
            return Err(Error::EmptyShard { attempts: 1 });
        }
        for &i in shard {
            if seen[i] {
                return Err(Error::InvalidArgument(format!(
                    "sample {i} assigned to two shards"
                )));
            }
            seen[i] = true;
            count += 1;
        }
    }
    if count != n {
        return Err(Error::InvalidArgument(format!(
            "shards cover {count} of {n} samples"
        )));
    }
    Ok(())
}

/// Reproducibility export: client id -> sample indices, as pretty JSON.
pub fn shard_assignment_json(shards: &[Vec<usize>]) -> String {
    let map: BTreeMap<String, &Vec<usize>> = shards
        .iter()
        .enumerate()
        .map(|(i, s)| (i.to_string(), s))
        .collect();
    serde_json::to_string_pretty(&map).expect("shard map serializes")
}
