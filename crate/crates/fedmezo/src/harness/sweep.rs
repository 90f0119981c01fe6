//! Ablation sweeps: one run per axis value under a shared master seed.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::personalize::SignalKind;

use super::config::{ExperimentConfig, SplitterConfig};
use super::experiment::{read_metrics, run};
use super::plot::band90;

/// Sweepable hyperparameter axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Mu,
    LocalSteps,
    Clients,
    Splitter,
    Lr,
    Strategy,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mu" => Ok(Self::Mu),
            "h" | "local_steps" => Ok(Self::LocalSteps),
            "n" | "clients" => Ok(Self::Clients),
            "splitter" => Ok(Self::Splitter),
            "lr" | "eta0" => Ok(Self::Lr),
            "strategy" => Ok(Self::Strategy),
            other => Err(Error::Config(format!(
                "unknown sweep axis `{other}` (expected mu|h|n|splitter|lr|strategy)"
            ))),
        }
    }
}

fn apply_axis(config: &ExperimentConfig, axis: SweepAxis, value: &str) -> Result<ExperimentConfig> {
    let mut c = config.clone();
    match axis {
        SweepAxis::Mu => {
            c.mu = value
                .parse()
                .map_err(|_| Error::Config(format!("mu value `{value}` is not a float")))?;
        }
        SweepAxis::LocalSteps => {
            c.local_steps = value
                .parse()
                .map_err(|_| Error::Config(format!("h value `{value}` is not an integer")))?;
        }
        SweepAxis::Clients => {
            c.clients = value
                .parse()
                .map_err(|_| Error::Config(format!("n value `{value}` is not an integer")))?;
        }
        SweepAxis::Lr => {
            c.eta0 = value
                .parse()
                .map_err(|_| Error::Config(format!("lr value `{value}` is not a float")))?;
        }
        SweepAxis::Splitter => {
            c.splitter = parse_splitter(value)?;
        }
        SweepAxis::Strategy => {
            c.personalization.kind = parse_strategy(value)?;
        }
    }
    c.validate()?;
    Ok(c)
}

fn parse_splitter(value: &str) -> Result<SplitterConfig> {
    match value.split(':').collect::<Vec<_>>().as_slice() {
        ["iid"] => Ok(SplitterConfig::Iid),
        ["dirichlet", beta] => Ok(SplitterConfig::Dirichlet {
            beta: beta
                .parse()
                .map_err(|_| Error::Config(format!("bad dirichlet beta `{beta}`")))?,
        }),
        ["meta"] | ["meta_by_task"] => Ok(SplitterConfig::MetaByTask),
        _ => Err(Error::Config(format!(
            "unknown splitter `{value}` (expected iid|dirichlet:<beta>|meta)"
        ))),
    }
}

fn parse_strategy(value: &str) -> Result<SignalKind> {
    match value {
        "disabled" => Ok(SignalKind::Disabled),
        "random_baseline" => Ok(SignalKind::RandomBaseline),
        "round_loss" => Ok(SignalKind::RoundLoss),
        "five_round_avg_loss" => Ok(SignalKind::FiveRoundAvgLoss),
        "update_norm_diff" => Ok(SignalKind::UpdateNormDiff),
        other => Err(Error::Config(format!("unknown strategy `{other}`"))),
    }
}

/// Result of one sweep cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub value: String,
    pub output_dir: String,
    pub final_loss_mean: Option<f64>,
    pub error: Option<String>,
}

/// Run the sweep: one full run per value (shared master seed), a merged
/// per-round CSV keyed by (axis value, round), and a cell summary JSON.
///
/// Per-cell failures are isolated: the failing value is recorded and the
/// remaining cells still run.
pub fn sweep(config: &ExperimentConfig, axis: SweepAxis, values: &[String]) -> Result<Vec<SweepCell>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let root = PathBuf::from(&config.output_dir);
    std::fs::create_dir_all(&root)?;

    let mut cells = Vec::with_capacity(values.len());
    let mut merged = String::from("axis,value,round,mean,band_lo,band_hi\n");
    let axis_name = format!("{axis:?}").to_lowercase();
    for value in values {
        let dir = root.join(format!("{axis_name}_{}", sanitize(value)));
        let cell = match apply_axis(config, axis, value) {
            Ok(mut cell_config) => {
                cell_config.output_dir = dir.to_string_lossy().into_owned();
                match run(&cell_config, &[]) {
                    Ok(summary) => {
                        append_merged_rows(&mut merged, &axis_name, value, &cell_config)?;
                        SweepCell {
                            value: value.clone(),
                            output_dir: cell_config.output_dir.clone(),
                            final_loss_mean: Some(summary.final_loss_mean),
                            error: None,
                        }
                    }
                    Err(e) => SweepCell {
                        value: value.clone(),
                        output_dir: cell_config.output_dir.clone(),
                        final_loss_mean: None,
                        error: Some(e.to_string()),
                    },
                }
            }
            Err(e) => SweepCell {
                value: value.clone(),
                output_dir: dir.to_string_lossy().into_owned(),
                final_loss_mean: None,
                error: Some(e.to_string()),
            },
        };
        cells.push(cell);
    }

    std::fs::write(root.join("sweep.csv"), merged)?;
    std::fs::write(
        root.join("sweep_summary.json"),
        serde_json::to_string_pretty(&cells)?,
    )?;
    Ok(cells)
}

fn append_merged_rows(
    merged: &mut String,
    axis_name: &str,
    value: &str,
    cell_config: &ExperimentConfig,
) -> Result<()> {
    let rows = read_metrics(PathBuf::from(&cell_config.output_dir).join("metrics.jsonl"))?;
    let mut by_round: std::collections::BTreeMap<u64, Vec<f64>> = Default::default();
    for row in rows {
        by_round.entry(row.round).or_default().push(row.eval_loss);
    }
    for (round, losses) in by_round {
        let (mean, lo, hi) = band90(&losses);
        writeln!(merged, "{axis_name},{value},{round},{mean},{lo},{hi}")
            .expect("string write cannot fail");
    }
    Ok(())
}

fn sanitize(value: &str) -> String {
    value
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}
