//! Runtime self-check suite: re-runs the derived-value oracles against the
//! golden files and reports one pass/fail line per check.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::objective::{ObjectiveHandle, QuadraticSpec};
use crate::params::ParamsView;
use crate::rng::{derive_seed, RngRecipe, SeedStream};
use crate::theory::{self, TheoryInputs};
use crate::track;
use crate::zoo::{estimator_second_moment, mezo_step_inplace, RestoreMode, ZooConfig};

/// One self-check outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub measured: String,
    pub expected: String,
}

impl CheckResult {
    fn new(name: &str, pass: bool, measured: String, expected: String) -> Self {
        Self {
            name: name.into(),
            pass,
            measured,
            expected,
        }
    }
}

#[derive(Debug, Deserialize)]
struct SeedGolden {
    recipe: RngRecipe,
    seed: u64,
}

#[derive(Debug, Deserialize)]
struct GammaZetaGolden {
    d: usize,
    r: usize,
    n: usize,
    gamma: f64,
    zeta: f64,
}

#[derive(Debug, Deserialize)]
struct LrBoundGolden {
    local_steps: usize,
    smoothness: f64,
    c_g: f64,
    d: usize,
    clients: usize,
    value: f64,
}

#[derive(Debug, Deserialize)]
struct RateBoundGolden {
    inputs: TheoryInputs,
    eta: f64,
    value: f64,
}

#[derive(Debug, Deserialize)]
struct RateScalingGolden {
    r: usize,
    clients: usize,
    local_steps: usize,
    rounds: usize,
    value: f64,
}

#[derive(Debug, Deserialize)]
struct CommGolden {
    adapter_params: u64,
    bytes_per_param: u64,
    adapter_bytes: u64,
    full_params: u64,
    full_bytes: u64,
}

#[derive(Debug, Deserialize)]
struct TheoryGoldens {
    gamma_zeta: GammaZetaGolden,
    lr_bound: LrBoundGolden,
    iid_rate_bound: RateBoundGolden,
    noniid_rate_bound: RateBoundGolden,
    rate_scaling: RateScalingGolden,
    comm: CommGolden,
}

fn rel_ok(measured: f64, expected: f64, tol: f64) -> bool {
    (measured - expected).abs() <= tol * expected.abs().max(f64::MIN_POSITIVE)
}

/// Run every check. Each golden file is read independently so a tampered
/// file fails only its own checks.
pub fn verify(goldens_dir: &Path) -> Vec<CheckResult> {
    let mut results = Vec::new();
    results.push(check_seed_golden(goldens_dir));
    results.push(check_seed_distinctness());
    results.push(check_gaussian_moments());
    results.push(check_unbiasedness());
    results.push(check_second_moment());
    results.extend(check_theory_goldens(goldens_dir));
    results.push(check_gamma_zeta_identity());
    results.push(check_memory_parity());
    results.push(check_determinism_replay());
    results
}

fn fail_with(name: &str, err: impl std::fmt::Display) -> CheckResult {
    CheckResult::new(name, false, format!("error: {err}"), "check completes".into())
}

fn check_seed_golden(goldens_dir: &Path) -> CheckResult {
    const NAME: &str = "seed_derivation_golden";
    let path = goldens_dir.join("seeds.json");
    let golden: SeedGolden = match std::fs::read_to_string(&path)
        .map_err(Error::from)
        .and_then(|t| serde_json::from_str(&t).map_err(Error::from))
    {
        Ok(g) => g,
        Err(e) => return fail_with(NAME, e),
    };
    let derived = derive_seed(&golden.recipe);
    CheckResult::new(
        NAME,
        derived == golden.seed,
        format!("{derived}"),
        format!("{}", golden.seed),
    )
}

fn check_seed_distinctness() -> CheckResult {
    let mut seen = std::collections::HashSet::with_capacity(10_000);
    let mut collisions = 0usize;
    for t in 0..10u64 {
        for i in 0..100 {
            for k in 0..10 {
                if !seen.insert(derive_seed(&RngRecipe::new(7, t, i, k))) {
                    collisions += 1;
                }
            }
        }
    }
    CheckResult::new(
        "seed_adjacent_tuple_distinctness",
        collisions == 0,
        format!("{collisions} collisions over 10^4 tuples"),
        "0 collisions".into(),
    )
}

fn check_gaussian_moments() -> CheckResult {
    let n = 100_000usize;
    let mut stream = SeedStream::from_seed(2024);
    let mut buf = [0.0f64; 4];
    let mut sums = [0.0f64; 4];
    let mut sqs = [0.0f64; 4];
    for _ in 0..n {
        stream.fill_gaussian(&mut buf);
        for j in 0..4 {
            sums[j] += buf[j];
            sqs[j] += buf[j] * buf[j];
        }
    }
    let tol_mean = 4.0 / (n as f64).sqrt();
    let mut worst_mean = 0.0f64;
    let mut worst_var = 0.0f64;
    for j in 0..4 {
        let mean = sums[j] / n as f64;
        let var = sqs[j] / n as f64 - mean * mean;
        worst_mean = worst_mean.max(mean.abs());
        worst_var = worst_var.max((var - 1.0).abs());
    }
    CheckResult::new(
        "gaussian_moments",
        worst_mean < tol_mean && worst_var < 0.03,
        format!("|mean| <= {worst_mean:.5}, |var-1| <= {worst_var:.5}"),
        format!("|mean| < {tol_mean:.5}, |var-1| < 0.03"),
    )
}

/// d = 10 quadratic with grad norm 5 at the probe point.
fn unbiasedness_fixture() -> Result<(ObjectiveHandle, ParamsView, Vec<f64>)> {
    let d = 10;
    let spec = Arc::new(QuadraticSpec::isotropic(d, 1.0, vec![0.0; d], 0.0)?);
    let obj = ObjectiveHandle::quadratic_uniform(spec, 1)?;
    let mut values = vec![0.0; d];
    values[0] = 3.0;
    values[1] = 4.0; // ||grad|| = ||theta|| = 5
    let params = ParamsView::from_vec(Arc::clone(obj.layout()), values.clone())?;
    Ok((obj, params, values))
}

fn check_unbiasedness() -> CheckResult {
    const NAME: &str = "two_point_unbiasedness";
    let (obj, mut params, grad) = match unbiasedness_fixture() {
        Ok(f) => f,
        Err(e) => return fail_with(NAME, e),
    };
    let batch = Batch::full(1).unwrap();
    let cfg = ZooConfig::new(1e-3).unwrap();
    let k = 200_000usize;
    let d = obj.dim();
    let mut mean = vec![0.0; d];
    let mut seeds = SeedStream::from_seed(31337);
    for _ in 0..k {
        let seed = seeds.next_u64();
        let (g, e) = match crate::zoo::two_point_estimate(
            &obj,
            &mut params,
            &batch,
            &cfg,
            crate::zoo::Direction::Seeded(seed),
        ) {
            Ok(x) => x,
            Err(e) => return fail_with(NAME, e),
        };
        let _ = g;
        for (m, v) in mean.iter_mut().zip(e.as_slice()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= k as f64;
    }
    let err: f64 = mean
        .iter()
        .zip(grad.iter())
        .map(|(m, g)| (m - g) * (m - g))
        .sum::<f64>()
        .sqrt();
    let rel = err / 5.0;
    CheckResult::new(
        NAME,
        rel <= 0.02,
        format!("relative error {rel:.5} over {k} estimates"),
        "<= 0.02".into(),
    )
}

fn check_second_moment() -> CheckResult {
    const NAME: &str = "second_moment_identity";
    let (obj, mut params, _) = match unbiasedness_fixture() {
        Ok(f) => f,
        Err(e) => return fail_with(NAME, e),
    };
    let batch = Batch::full(1).unwrap();
    let cfg = ZooConfig::new(1e-3).unwrap();
    // 2e5 samples keeps the CLI check fast; the acceptance suite runs 1e6.
    let measured = match estimator_second_moment(&obj, &mut params, &batch, &cfg, 200_000, 99) {
        Ok(m) => m,
        Err(e) => return fail_with(NAME, e),
    };
    let expected = (obj.dim() as f64 + 2.0) * 25.0;
    CheckResult::new(
        NAME,
        rel_ok(measured, expected, 0.05),
        format!("{measured:.3}"),
        format!("{expected:.3} within 5%"),
    )
}

fn check_theory_goldens(goldens_dir: &Path) -> Vec<CheckResult> {
    let path = goldens_dir.join("theory.json");
    let goldens: TheoryGoldens = match std::fs::read_to_string(&path)
        .map_err(Error::from)
        .and_then(|t| serde_json::from_str(&t).map_err(Error::from))
    {
        Ok(g) => g,
        Err(e) => return vec![fail_with("theory_goldens", e)],
    };
    let tol = 1e-12;
    let mut out = Vec::new();

    let g = &goldens.gamma_zeta;
    match theory::gamma_zeta(g.d, g.r, g.n) {
        Ok((gamma, zeta)) => {
            out.push(CheckResult::new(
                "gamma_zeta_golden",
                rel_ok(gamma, g.gamma, tol) && rel_ok(zeta, g.zeta, tol),
                format!("gamma {gamma:.17}, zeta {zeta:.17}"),
                format!("gamma {:.17}, zeta {:.17}", g.gamma, g.zeta),
            ));
        }
        Err(e) => out.push(fail_with("gamma_zeta_golden", e)),
    }

    let b = &goldens.lr_bound;
    let bound = theory::lr_bound(b.local_steps, b.smoothness, b.c_g, b.d, b.clients);
    out.push(CheckResult::new(
        "lr_bound_golden",
        rel_ok(bound, b.value, tol),
        format!("{bound:.17}"),
        format!("{:.17}", b.value),
    ));

    match theory::iid_rate_bound(&goldens.iid_rate_bound.inputs, goldens.iid_rate_bound.eta) {
        Ok(v) => out.push(CheckResult::new(
            "iid_rate_bound_golden",
            rel_ok(v, goldens.iid_rate_bound.value, tol),
            format!("{v:.15}"),
            format!("{:.15}", goldens.iid_rate_bound.value),
        )),
        Err(e) => out.push(fail_with("iid_rate_bound_golden", e)),
    }

    match theory::noniid_rate_bound(
        &goldens.noniid_rate_bound.inputs,
        goldens.noniid_rate_bound.eta,
    ) {
        Ok(v) => out.push(CheckResult::new(
            "noniid_rate_bound_golden",
            rel_ok(v, goldens.noniid_rate_bound.value, tol),
            format!("{v:.15}"),
            format!("{:.15}", goldens.noniid_rate_bound.value),
        )),
        Err(e) => out.push(fail_with("noniid_rate_bound_golden", e)),
    }

    let r = &goldens.rate_scaling;
    let v = theory::rate_scaling(r.r, r.clients, r.local_steps, r.rounds, None);
    out.push(CheckResult::new(
        "rate_scaling_golden",
        rel_ok(v, r.value, tol),
        format!("{v:.17}"),
        format!("{:.17}", r.value),
    ));

    let c = &goldens.comm;
    let adapter = crate::federation::comm_cost(c.adapter_params, c.bytes_per_param);
    let full = crate::federation::comm_cost(c.full_params, c.bytes_per_param);
    out.push(CheckResult::new(
        "comm_arithmetic",
        adapter == c.adapter_bytes && full == c.full_bytes,
        format!(
            "adapter {adapter} B ({}), full {full} B ({}); note: exact adapter arithmetic is 81.25 MiB, not the sometimes-quoted 80.45 MB",
            crate::federation::format_bytes(adapter),
            crate::federation::format_bytes(full),
        ),
        format!("adapter {} B, full {} B", c.adapter_bytes, c.full_bytes),
    ));
    out
}

fn check_gamma_zeta_identity() -> CheckResult {
    let mut worst = 0.0f64;
    for d in [2usize, 3, 10, 50, 100, 377, 1000] {
        for r in [1usize, 2, 7, 32] {
            for n in [1usize, 2, 5] {
                let (g, z) = theory::gamma_zeta(d, r, n).unwrap();
                let expected = n as f64 / (d as f64 + n as f64 - 1.0);
                worst = worst.max(((g * z) - expected).abs() / expected);
            }
        }
    }
    CheckResult::new(
        "gamma_zeta_product_identity",
        worst <= 1e-12,
        format!("max relative deviation {worst:.3e}"),
        "<= 1e-12".into(),
    )
}

fn check_memory_parity() -> CheckResult {
    const NAME: &str = "seed_replay_memory_parity";
    let d = 64;
    let spec = Arc::new(QuadraticSpec::isotropic(d, 1.0, vec![0.0; d], 0.0).unwrap());
    let obj = ObjectiveHandle::quadratic_uniform(spec, 1).unwrap();
    let batch = Batch::full(1).unwrap();
    let cfg = ZooConfig::new(1e-3).unwrap();
    let mut inplace = obj.init_params(4, 2.0).unwrap();
    let mut snapshot = inplace.snapshot();
    let steps = 1000u64;
    let before = track::buffer_alloc_count();
    for k in 0..steps {
        let seed = derive_seed(&RngRecipe::new(12, 0, 0, k));
        if let Err(e) = mezo_step_inplace(
            &obj,
            &mut inplace,
            &batch,
            &cfg,
            1e-3,
            seed,
            RestoreMode::InPlace,
        ) {
            return fail_with(NAME, e);
        }
    }
    let allocs = track::buffer_alloc_count() - before;
    for k in 0..steps {
        let seed = derive_seed(&RngRecipe::new(12, 0, 0, k));
        if let Err(e) = mezo_step_inplace(
            &obj,
            &mut snapshot,
            &batch,
            &cfg,
            1e-3,
            seed,
            RestoreMode::Snapshot,
        ) {
            return fail_with(NAME, e);
        }
    }
    let mut worst = 0.0f64;
    for (a, b) in inplace.as_slice().iter().zip(snapshot.as_slice()) {
        worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(1.0));
    }
    CheckResult::new(
        NAME,
        allocs == 0 && worst <= 1e-9,
        format!("{allocs} buffer allocs, drift {worst:.3e}"),
        "0 allocs, drift <= 1e-9".into(),
    )
}

fn check_determinism_replay() -> CheckResult {
    const NAME: &str = "determinism_replay";
    let config = match super::config::ExperimentConfig::from_json(
        r#"{"objective": {"kind": "quadratic", "dim": 8, "init_radius": 3.0},
            "clients": 2, "rounds": 5, "local_steps": 3, "eta0": 0.01,
            "master_seed": 77}"#,
    ) {
        Ok(c) => c,
        Err(e) => return fail_with(NAME, e),
    };
    let serialize = |rows: &[super::experiment::MetricsRow]| {
        rows.iter()
            .map(|r| serde_json::to_string(r).unwrap())
            .collect::<Vec<_>>()
            .join("\n")
    };
    let a = match super::experiment::run_replicate(&config, 0) {
        Ok(r) => serialize(&r.rows),
        Err(e) => return fail_with(NAME, e),
    };
    let b = match super::experiment::run_replicate(&config, 0) {
        Ok(r) => serialize(&r.rows),
        Err(e) => return fail_with(NAME, e),
    };
    CheckResult::new(
        NAME,
        a == b,
        format!("{} bytes, replay {}", a.len(), if a == b { "identical" } else { "differs" }),
        "byte-identical metrics".into(),
    )
}

/// Render the report as one line per check plus a tally; returns overall pass.
pub fn render_report(results: &[CheckResult], out: &mut String) -> bool {
    use std::fmt::Write;
    let mut all_pass = true;
    for r in results {
        all_pass &= r.pass;
        writeln!(
            out,
            "[{}] {:<34} measured: {} | expected: {}",
            if r.pass { "PASS" } else { "FAIL" },
            r.name,
            r.measured,
            r.expected
        )
        .expect("string write");
    }
    let passed = results.iter().filter(|r| r.pass).count();
    writeln!(out, "{passed}/{} checks passed", results.len()).expect("string write");
    all_pass
}
