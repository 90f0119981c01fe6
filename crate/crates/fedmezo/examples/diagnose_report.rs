//! Measure an experiment's constants and evaluate the theory calculators on
//! them: the programmatic form of `fedmezo diagnose <config>`.
//!
//! ```bash
//! cargo run --release -p fedmezo --example diagnose_report
//! ```

use fedmezo::harness::{diagnose, ExperimentConfig};

fn main() -> fedmezo::Result<()> {
    let config = ExperimentConfig::from_json(
        r#"{"objective": {"kind": "quadratic", "dim": 40, "samples_per_client": 50,
             "shift_scale": 0.6, "curvature_spread": 0.3, "init_radius": 6.0},
           "clients": 6, "rounds": 200, "local_steps": 30,
           "eta0": 2e-4, "master_seed": 5}"#,
    )?;
    let report = diagnose(&config)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    println!(
        "\nsummary: d = {}, L = {:.3}, effective rank = {:.2}, c_h = {:.4}, sigma_h^2 = {:.4}",
        report.trainable_dim,
        report.smoothness,
        report.effective_rank.unwrap_or(f64::NAN),
        report.c_h,
        report.sigma_h_sq
    );
    println!(
        "eta0 = {:.2e} vs ceiling {:.2e} -> over_ceiling = {}",
        report.eta0, report.lr_ceiling, report.over_ceiling
    );
    Ok(())
}
