//! Hyperparameter sweeps: perturbation scale and local-step grids over a
//! shared master seed, with merged per-round CSV output.
//!
//! ```bash
//! cargo run --release -p fedmezo --example ablation_sweep
//! ```

use fedmezo::harness::{sweep, ExperimentConfig, SweepAxis};

fn main() -> fedmezo::Result<()> {
    let out = std::env::temp_dir().join("fedmezo_ablation_example");
    let config = ExperimentConfig::from_json(&format!(
        r#"{{"objective": {{"kind": "quadratic", "dim": 50, "samples_per_client": 50,
             "scale_outlier_fraction": 0.02, "scale_outlier_value": 28.0,
             "init_radius": 10.0}},
           "clients": 4, "rounds": 50, "local_steps": 30,
           "eta0": 1.18e-4, "master_seed": 1, "replicates": 3,
           "output_dir": {:?}}}"#,
        out.to_string_lossy()
    ))?;

    println!("local-step grid (fixed eta, shared master seed):");
    for cell in sweep(&config, SweepAxis::LocalSteps, &["10".into(), "30".into(), "50".into()])? {
        println!(
            "  H = {:>2}: mean final loss {:.4}",
            cell.value,
            cell.final_loss_mean.unwrap()
        );
    }

    println!("\nperturbation-scale grid:");
    for cell in sweep(&config, SweepAxis::Mu, &["5e-3".into(), "1e-3".into(), "2e-4".into()])? {
        println!(
            "  mu = {:>5}: mean final loss {:.6}",
            cell.value,
            cell.final_loss_mean.unwrap()
        );
    }
    println!("\nmerged per-round CSV at {}/sweep.csv", out.display());
    Ok(())
}
