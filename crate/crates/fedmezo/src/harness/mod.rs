//! Experiment harness: configuration, the run loop, sweeps, plot-data
//! emission, diagnostics, and the self-check report.

mod config;
mod diagnose;
mod experiment;
mod plot;
mod sweep;
mod verify;

pub use config::{
    load_config, load_config_str, DatasetConfig, ExperimentConfig, LoadedConfig,
    ObjectiveConfig, PersonalizationConfig, SplitterConfig,
};
pub use diagnose::{diagnose, DiagnoseReport, SecondMomentProbe};
pub use experiment::{
    read_metrics, replicate_seed, run, run_replicate, Experiment, MetricsRow, ReplicateResult,
    RunSummary, TimingRow,
};
pub use plot::{band90, emit_plot_data};
pub use sweep::{sweep, SweepAxis, SweepCell};
pub use verify::{render_report, verify, CheckResult};

/// Environment variable controlling the worker-thread count for parallel
/// clients/replicates. Unset or 0 keeps the library default.
pub const WORKERS_ENV: &str = "FEDMEZO_WORKERS";

/// Apply [`WORKERS_ENV`] to the global thread pool. Safe to call more than
/// once (later calls are no-ops). Results never depend on worker count.
pub fn init_workers() {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        if let Ok(n) = v.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}
