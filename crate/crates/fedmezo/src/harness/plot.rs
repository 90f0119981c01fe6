//! Plot-data emission: tidy per-round CSV with 90% bands across replicates.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::experiment::read_metrics;

/// Two-sided 90% normal band half-width multiplier.
const Z90: f64 = 1.6448536269514722;

/// Mean and 90% confidence band of a replicate sample. A single replicate
/// collapses the band onto the mean.
pub fn band90(values: &[f64]) -> (f64, f64, f64) {
    let k = values.len();
    let mean = values.iter().sum::<f64>() / k as f64;
    if k < 2 {
        return (mean, mean, mean);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1) as f64;
    let half = Z90 * (var / k as f64).sqrt();
    (mean, mean - half, mean + half)
}

/// Emit `plot.csv` for a metrics directory.
///
/// A directory containing `metrics.jsonl` produces one series named `run`;
/// otherwise every immediate subdirectory with a `metrics.jsonl` becomes a
/// series named after the subdirectory (the sweep layout). Rows are
/// `round,series,mean,band_lo,band_hi`, rounds ascending within each series,
/// series in lexicographic order.
pub fn emit_plot_data<P: AsRef<Path>>(metrics_dir: P) -> Result<String> {
    let dir = metrics_dir.as_ref();
    let mut series: Vec<(String, std::path::PathBuf)> = Vec::new();
    let direct = dir.join("metrics.jsonl");
    if direct.is_file() {
        series.push(("run".into(), direct));
    } else if dir.is_dir() {
        for entry in std::fs::read_dir(dir)? {
            let entry = entry?;
            let candidate = entry.path().join("metrics.jsonl");
            if candidate.is_file() {
                series.push((entry.file_name().to_string_lossy().into_owned(), candidate));
            }
        }
        series.sort_by(|a, b| a.0.cmp(&b.0));
    }
    if series.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no metrics.jsonl under {}",
            dir.display()
        )));
    }

    let mut csv = String::from("round,series,mean,band_lo,band_hi\n");
    for (name, path) in series {
        let rows = read_metrics(&path)?;
        if rows.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "{} holds no metrics rows",
                path.display()
            )));
        }
        let mut by_round: std::collections::BTreeMap<u64, Vec<f64>> = Default::default();
        for row in rows {
            by_round.entry(row.round).or_default().push(row.eval_loss);
        }
        for (round, losses) in by_round {
            let (mean, lo, hi) = band90(&losses);
            writeln!(csv, "{round},{name},{mean},{lo},{hi}").expect("string write");
        }
    }
    let out = dir.join("plot.csv");
    std::fs::write(&out, &csv)?;
    Ok(csv)
}
