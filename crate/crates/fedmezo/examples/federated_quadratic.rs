//! A full federated run on the i.i.d. quadratic benchmark, with the learning
//! rate set to half the theory ceiling. Prints the descent trace and the
//! communication ledger.
//!
//! ```bash
//! cargo run --release -p fedmezo --example federated_quadratic
//! ```

use fedmezo::federation::format_bytes;
use fedmezo::harness::{run_replicate, Experiment, ExperimentConfig};

fn main() -> fedmezo::Result<()> {
    let base = ExperimentConfig::from_json(
        r#"{"objective": {"kind": "quadratic", "dim": 50, "samples_per_client": 50,
             "scale_outlier_fraction": 0.02, "scale_outlier_value": 28.0,
             "init_radius": 10.0},
           "clients": 4, "rounds": 150, "local_steps": 30,
           "eta0": 1e-5, "master_seed": 7}"#,
    )?;
    let experiment = Experiment::build(&base, base.master_seed)?;
    let ceiling = experiment.lr_ceiling();
    let (c_g, sigma_g_sq) = experiment.batch_constants.unwrap();
    println!(
        "benchmark: d = {}, N = {}, H = {}, closed-form c_g = {c_g:.4}, sigma_g^2 = {sigma_g_sq:.1e}",
        experiment.trainable_dim(),
        base.clients,
        base.local_steps
    );
    println!("theory ceiling = {ceiling:.4e}; running at eta = 0.5 x ceiling");

    let mut config = base;
    config.eta0 = 0.5 * ceiling;
    let result = run_replicate(&config, 0)?;
    for row in result.rows.iter().step_by(25) {
        println!(
            "  round {:>3}: eval loss {:.5}  (cumulative upload {})",
            row.round,
            row.eval_loss,
            format_bytes(row.bytes_up_cum)
        );
    }
    let initial = result.rows[0].eval_loss;
    let last = result.rows.last().unwrap();
    println!(
        "final/initial = {:.4}; each client moved {} per round ({} trainable f64s)",
        last.eval_loss / initial,
        format_bytes(last.bytes_up_cum / (last.round * config.clients as u64)),
        experiment.trainable_dim(),
    );
    Ok(())
}
