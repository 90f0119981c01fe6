//! Acceptance suite: one test per criterion, each printing a pass/fail line
//! (`cargo test --test acceptance -- --nocapture` to see them all).
//!
//! Monte-Carlo tolerances and benchmark constructions are pinned here, not
//! configurable; runtime-limited criteria assert their own budgets.

mod common;

use std::sync::Arc;
use std::time::Instant;

use fedmezo::data::{Batch, Dataset};
use fedmezo::federation::{
    comm_cost, format_bytes, run_round, ClientState, CommLedger, FixedLr, LocalTrainOpts,
    OptimizerKind, ServerState,
};
use fedmezo::harness::{
    band90, run, run_replicate, Experiment, ExperimentConfig, MetricsRow,
};
use fedmezo::linalg::{DenseMatrix, DenseVector};
use fedmezo::objective::{
    make_client_quadratics, make_client_quadratics_from, Heterogeneity, LogRegSpec,
    ObjectiveHandle, QuadraticSpec,
};
use fedmezo::params::ParamsView;
use fedmezo::rng::{derive_seed, RngRecipe, SeedStream, StreamDomain};
use fedmezo::theory::{
    effective_rank, estimate_cg_sigma, gamma_zeta, iid_rate_bound, lr_bound, noniid_rate_bound,
    rate_scaling, TheoryInputs,
};
use fedmezo::track;
use fedmezo::zoo::{
    estimator_second_moment, mezo_step_inplace, two_point_estimate, Direction, RestoreMode,
    ZooConfig,
};

use common::{jacobi_eigenvalues, random_psd, slope};

fn criterion(n: u32, name: &str, pass: bool, details: &str) {
    println!(
        "[criterion {n:02}] {}: {name} -- {details}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {n} ({name}) failed: {details}");
}

/// d = 10 unit quadratic probed at a point with gradient norm 5.
fn unbiasedness_fixture() -> (ObjectiveHandle, ParamsView, Vec<f64>) {
    let d = 10;
    let spec = Arc::new(QuadraticSpec::isotropic(d, 1.0, vec![0.0; d], 0.0).unwrap());
    let obj = ObjectiveHandle::quadratic_uniform(spec, 1).unwrap();
    let mut values = vec![0.0; d];
    values[0] = 3.0;
    values[1] = 4.0;
    let params = ParamsView::from_vec(Arc::clone(obj.layout()), values.clone()).unwrap();
    (obj, params, values)
}

#[test]
fn criterion_01_estimator_unbiasedness_and_rate() {
    let started = Instant::now();
    let (obj, params, grad) = unbiasedness_fixture();
    let mut params = params;
    let batch = Batch::full(1).unwrap();
    let cfg = ZooConfig::new(1e-3).unwrap();
    let d = obj.dim();

    // Mean of 2e5 estimates within 2% of the true gradient.
    let total = 200_000usize;
    let mut mean = vec![0.0; d];
    let mut seeds = SeedStream::from_seed(0xACC1);
    for _ in 0..total {
        let (_, e) = two_point_estimate(
            &obj,
            &mut params,
            &batch,
            &cfg,
            Direction::Seeded(seeds.next_u64()),
        )
        .unwrap();
        for (m, v) in mean.iter_mut().zip(e.as_slice()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= total as f64;
    }
    let err_full: f64 = mean
        .iter()
        .zip(grad.iter())
        .map(|(m, g)| (m - g) * (m - g))
        .sum::<f64>()
        .sqrt()
        / 5.0;

    // 1/sqrt(K) rate: 16 repetitions, prefix errors at K in {1e3, 1e4, 1e5},
    // regression of mean log error on log K.
    let reps = 16;
    let checkpoints = [1_000usize, 10_000, 100_000];
    let mut mean_log_err = [0.0f64; 3];
    for rep in 0..reps {
        let mut acc = vec![0.0; d];
        let mut rep_seeds = SeedStream::from_seed(0xACC2 + rep);
        let mut next_checkpoint = 0;
        for k in 1..=checkpoints[2] {
            let (_, e) = two_point_estimate(
                &obj,
                &mut params,
                &batch,
                &cfg,
                Direction::Seeded(rep_seeds.next_u64()),
            )
            .unwrap();
            for (a, v) in acc.iter_mut().zip(e.as_slice()) {
                *a += v;
            }
            if k == checkpoints[next_checkpoint] {
                let err: f64 = acc
                    .iter()
                    .zip(grad.iter())
                    .map(|(a, g)| (a / k as f64 - g) * (a / k as f64 - g))
                    .sum::<f64>()
                    .sqrt();
                mean_log_err[next_checkpoint] += err.ln() / reps as f64;
                next_checkpoint += 1;
            }
        }
    }
    let log_k: Vec<f64> = checkpoints.iter().map(|k| (*k as f64).ln()).collect();
    let fitted = slope(&log_k, &mean_log_err);
    let elapsed = started.elapsed().as_secs_f64();

    let pass = err_full <= 0.02 && (fitted + 0.5).abs() <= 0.1 && elapsed < 30.0;
    criterion(
        1,
        "estimator unbiasedness",
        pass,
        &format!(
            "relative error {err_full:.5} (<= 0.02), slope {fitted:.3} (-0.5 +/- 0.1), {elapsed:.1}s (< 30s)"
        ),
    );
}

#[test]
fn criterion_02_second_moment_identity() {
    let started = Instant::now();
    let (obj, mut params, _) = unbiasedness_fixture();
    let batch = Batch::full(1).unwrap();
    let cfg = ZooConfig::new(1e-3).unwrap();
    let measured =
        estimator_second_moment(&obj, &mut params, &batch, &cfg, 1_000_000, 0xACC3).unwrap();
    let expected = (obj.dim() as f64 + 2.0) * 25.0;
    let rel = (measured - expected).abs() / expected;
    let elapsed = started.elapsed().as_secs_f64();
    criterion(
        2,
        "second-moment identity",
        rel <= 0.05 && elapsed < 60.0,
        &format!("E||e||^2 = {measured:.2} vs (d+2)||grad||^2 = {expected} (rel {rel:.4}), {elapsed:.1}s (< 60s)"),
    );
}

#[test]
fn criterion_03_smoothing_bias_order() {
    // Logistic regression, d = 20. For each mu the bias E[e] - grad F is
    // measured with 1e6 common-random-number samples and a zeroth-order
    // control variate (subtracting z z'g0, whose expectation is exactly g0),
    // then the log-log slope across mu must be 2.0 +/- 0.4.
    let d = 20;
    let spec = Arc::new(LogRegSpec::new(d, 0.0).unwrap());
    let data = Arc::new(Dataset::synthetic_blobs(24, d, 3.0, None, 55).unwrap());
    let obj = ObjectiveHandle::logreg(spec, data).unwrap();
    let batch = Batch::full(24).unwrap();
    let mut theta = vec![0.0; d];
    let mut init_stream = SeedStream::from_seed(808);
    init_stream.fill_gaussian(&mut theta);
    let norm: f64 = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut theta {
        *v *= 1.2 / norm;
    }
    let params = ParamsView::from_vec(Arc::clone(obj.layout()), theta.clone()).unwrap();
    let g0 = obj.true_grad(&params, &batch).unwrap();
    let g0 = g0.as_slice();

    let mus = [0.05, 0.1, 0.2, 0.4];
    let k = 1_000_000usize;
    let mut log_bias = Vec::with_capacity(4);
    let mut perturbed = vec![0.0; d];
    let mut z = vec![0.0; d];
    for &mu in &mus {
        // Common random numbers: the same direction sequence for every mu.
        let mut seeds = SeedStream::from_seed(0xACC4);
        let mut bias_acc = vec![0.0; d];
        for _ in 0..k {
            let zseed = seeds.next_u64();
            let mut zstream = SeedStream::from_seed(zseed);
            zstream.fill_gaussian(&mut z);
            for (p, (t, zi)) in perturbed.iter_mut().zip(theta.iter().zip(&z)) {
                *p = t + mu * zi;
            }
            let plus = obj.eval_loss_raw(&perturbed, &batch);
            for (p, (t, zi)) in perturbed.iter_mut().zip(theta.iter().zip(&z)) {
                *p = t - mu * zi;
            }
            let minus = obj.eval_loss_raw(&perturbed, &batch);
            let g = (plus - minus) / (2.0 * mu);
            let zg0: f64 = z.iter().zip(g0).map(|(a, b)| a * b).sum();
            for (acc, zi) in bias_acc.iter_mut().zip(&z) {
                *acc += zi * (g - zg0);
            }
        }
        let bias: f64 = bias_acc
            .iter()
            .map(|v| (v / k as f64) * (v / k as f64))
            .sum::<f64>()
            .sqrt();
        log_bias.push(bias.ln());
    }
    let log_mu: Vec<f64> = mus.iter().map(|m| m.ln()).collect();
    let fitted = slope(&log_mu, &log_bias);
    criterion(
        3,
        "smoothing-bias order",
        (fitted - 2.0).abs() <= 0.4,
        &format!(
            "log-log slope {fitted:.3} (2.0 +/- 0.4); biases {:?}",
            log_bias.iter().map(|b| b.exp()).collect::<Vec<_>>()
        ),
    );
}

#[test]
fn criterion_04_seed_replay_memory_parity() {
    let d = 100;
    let spec = Arc::new(QuadraticSpec::isotropic(d, 1.0, vec![0.0; d], 0.0).unwrap());
    let obj = ObjectiveHandle::quadratic_uniform(spec, 1).unwrap();
    let batch = Batch::full(1).unwrap();
    let cfg = ZooConfig::new(1e-3).unwrap();
    let steps = 10_000u64;

    let mut inplace = obj.init_params(21, 3.0).unwrap();
    let mut snapshot = inplace.snapshot();
    let before = track::buffer_alloc_count();
    for k in 0..steps {
        let seed = derive_seed(&RngRecipe::new(404, 0, 0, k));
        mezo_step_inplace(&obj, &mut inplace, &batch, &cfg, 2e-3, seed, RestoreMode::InPlace)
            .unwrap();
    }
    let allocs = track::buffer_alloc_count() - before;
    for k in 0..steps {
        let seed = derive_seed(&RngRecipe::new(404, 0, 0, k));
        mezo_step_inplace(&obj, &mut snapshot, &batch, &cfg, 2e-3, seed, RestoreMode::Snapshot)
            .unwrap();
    }
    let mut worst = 0.0f64;
    for (a, b) in inplace.as_slice().iter().zip(snapshot.as_slice()) {
        worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(1.0));
    }
    criterion(
        4,
        "seed-replay memory parity",
        allocs == 0 && worst <= 1e-9,
        &format!("{allocs} parameter-buffer allocations over {steps} steps (== 0), max per-coordinate relative drift {worst:.3e} (<= 1e-9)"),
    );
}

/// The i.i.d. quadratic benchmark of criteria 5-7: d = 50, N = 4, H = 30,
/// heavy-tailed per-sample curvature (c_g ~ 15.9 in closed form) so the
/// 20x-ceiling run actually diverges at these pinned sizes.
fn iid_benchmark_config(eta0: f64, rounds: usize, local_steps: usize, replicates: usize) -> ExperimentConfig {
    ExperimentConfig::from_json(&format!(
        r#"{{"objective": {{"kind": "quadratic", "dim": 50, "samples_per_client": 50,
             "scale_outlier_fraction": 0.02, "scale_outlier_value": 28.0,
             "init_radius": 10.0}},
           "clients": 4, "rounds": {rounds}, "local_steps": {local_steps},
           "eta0": {eta0}, "master_seed": 90210, "replicates": {replicates},
           "output_dir": "unused"}}"#
    ))
    .unwrap()
}

fn benchmark_ceiling(local_steps: usize) -> f64 {
    let config = iid_benchmark_config(1e-5, 1, local_steps, 1);
    Experiment::build(&config, config.master_seed)
        .unwrap()
        .lr_ceiling()
}

fn eval_series(config: &ExperimentConfig) -> Vec<Vec<f64>> {
    (0..config.replicates)
        .map(|rep| {
            run_replicate(config, rep)
                .unwrap()
                .rows
                .iter()
                .map(|r| r.eval_loss)
                .collect()
        })
        .collect()
}

#[test]
fn criterion_05_descent_under_theory_ceiling() {
    let started = Instant::now();
    let ceiling = benchmark_ceiling(30);
    let config = iid_benchmark_config(0.5 * ceiling, 300, 30, 5);
    let series = eval_series(&config);
    let mut worst_ratio = 0.0f64;
    let mut worst_monotone = 1.0f64;
    for losses in &series {
        let ratio = losses.last().unwrap() / losses[0];
        worst_ratio = worst_ratio.max(ratio);
        let smoothed: Vec<f64> = (0..losses.len())
            .map(|i| {
                let window = &losses[i.saturating_sub(4)..=i];
                window.iter().sum::<f64>() / window.len() as f64
            })
            .collect();
        let non_increasing = (1..smoothed.len())
            .filter(|&i| smoothed[i] <= smoothed[i - 1])
            .count() as f64
            / (smoothed.len() - 1) as f64;
        worst_monotone = worst_monotone.min(non_increasing);
    }
    let elapsed = started.elapsed().as_secs_f64();
    criterion(
        5,
        "descent under the theory ceiling",
        worst_ratio <= 0.1 && worst_monotone >= 0.95 && elapsed < 120.0,
        &format!(
            "eta = 0.5 x {ceiling:.4e}; worst final/initial {worst_ratio:.4} (<= 0.1), worst window-5 monotone fraction {worst_monotone:.3} (>= 0.95), {elapsed:.1}s (< 120s)"
        ),
    );
}

#[test]
fn criterion_06_learning_rate_blow_up() {
    let ceiling = benchmark_ceiling(30);
    let config = iid_benchmark_config(20.0 * ceiling, 300, 30, 5);
    let series = eval_series(&config);
    let mut blown = 0;
    for losses in &series {
        let mut running_min = f64::INFINITY;
        for &l in losses {
            running_min = running_min.min(l);
            if l > 10.0 * running_min {
                blown += 1;
                break;
            }
        }
    }
    criterion(
        6,
        "learning-rate blow-up",
        blown >= 4,
        &format!("eta = 20 x ceiling: {blown}/5 seeds exceeded 10x their running minimum (need >= 4)"),
    );
}

#[test]
fn criterion_07_local_steps_ablation() {
    // Fixed eta (half the H = 50 ceiling, valid for every H in the grid);
    // seed-averaged loss at round 50 must improve with more local steps.
    let eta = 0.5 * benchmark_ceiling(50);
    let mean_at_50 = |local_steps: usize| {
        let config = iid_benchmark_config(eta, 50, local_steps, 5);
        let series = eval_series(&config);
        series.iter().map(|s| s[50]).sum::<f64>() / series.len() as f64
    };
    let h10 = mean_at_50(10);
    let h30 = mean_at_50(30);
    let h50 = mean_at_50(50);
    criterion(
        7,
        "local-steps ablation direction",
        h50 < h10,
        &format!("round-50 loss: H=10 -> {h10:.3}, H=30 -> {h30:.3}, H=50 -> {h50:.3} (need H=50 < H=10)"),
    );
}

#[test]
fn criterion_08_perturbation_scale_ablation() {
    let config_for = |mu: f64| {
        ExperimentConfig::from_json(&format!(
            r#"{{"objective": {{"kind": "logreg", "dim": 20, "l2": 0.001,
                 "dataset": {{"kind": "synthetic", "n": 400, "separation": 2.0}}}},
               "clients": 4, "rounds": 100, "local_steps": 30, "mu": {mu},
               "eta0": 0.02, "master_seed": 4242, "replicates": 5,
               "output_dir": "unused"}}"#
        ))
        .unwrap()
    };
    let mean_final = |mu: f64| {
        let config = config_for(mu);
        let series = eval_series(&config);
        series.iter().map(|s| *s.last().unwrap()).sum::<f64>() / series.len() as f64
    };
    let coarse = mean_final(5e-3);
    let default = mean_final(1e-3);
    let fine = mean_final(2e-4);
    // Non-increasing as mu decreases, with 5% slack (ties allowed).
    let pass = default <= coarse * 1.05 && fine <= default * 1.05;
    criterion(
        8,
        "perturbation-scale ablation direction",
        pass,
        &format!("final loss: mu=5e-3 -> {coarse:.6}, mu=1e-3 -> {default:.6}, mu=2e-4 -> {fine:.6} (non-increasing within 5%)"),
    );
}

#[test]
fn criterion_09_personalization_ordering() {
    // Heterogeneous quadratics (shifted optima + curvature spread), 10 seeds,
    // T = 100 (mid-descent, where rate allocation matters). Hard assertion:
    // the update-norm signal beats the random baseline; soft: within 2% of
    // the non-personalized run.
    let config_for = |strategy: &str| {
        ExperimentConfig::from_json(&format!(
            r#"{{"objective": {{"kind": "quadratic", "dim": 30, "samples_per_client": 50,
                 "shift_scale": 1.0, "curvature_spread": 0.4, "init_radius": 8.0}},
               "clients": 8, "rounds": 100, "local_steps": 30,
               "eta0": 5e-4, "master_seed": 777, "replicates": 10,
               "personalization": {{"kind": "{strategy}"}},
               "output_dir": "unused"}}"#
        ))
        .unwrap()
    };
    let finals = |strategy: &str| -> Vec<f64> {
        let config = config_for(strategy);
        eval_series(&config)
            .iter()
            .map(|s| *s.last().unwrap())
            .collect()
    };
    let disabled = finals("disabled");
    let random = finals("random_baseline");
    let update = finals("update_norm_diff");
    let (mean_d, lo_d, hi_d) = band90(&disabled);
    let (mean_r, lo_r, hi_r) = band90(&random);
    let (mean_u, lo_u, hi_u) = band90(&update);
    let pass = mean_u <= mean_r && mean_u <= mean_d * 1.02;
    criterion(
        9,
        "personalization ordering",
        pass,
        &format!(
            "final loss means with 90% bands: update_norm_diff {mean_u:.4} [{lo_u:.4}, {hi_u:.4}] <= random {mean_r:.4} [{lo_r:.4}, {hi_r:.4}] (hard) and <= 1.02 x disabled {mean_d:.4} [{lo_d:.4}, {hi_d:.4}]"
        ),
    );
}

#[test]
fn criterion_10_constants_and_calculators() {
    // Golden values frozen from an independent 50-digit re-evaluation.
    let tol = 1e-12;
    let rel_ok = |a: f64, b: f64| (a - b).abs() <= tol * b.abs();

    let (gamma, zeta) = gamma_zeta(10, 2, 1).unwrap();
    let gz_ok = rel_ok(gamma, 2.3333333333333335) && rel_ok(zeta, 0.04285714285714286);

    let lr_ok = rel_ok(lr_bound(30, 1.0, 1.0, 100, 4), 0.0011111111111111111);

    let inputs = TheoryInputs {
        d: 100,
        r: 4,
        n: 1,
        clients: 4,
        local_steps: 30,
        rounds: 500,
        smoothness: 1.0,
        c_g: 1.0,
        sigma_g: 0.1,
        c_h: 0.0,
        sigma_h: 0.0,
        mu: 1e-3,
        f0: 1.0,
        f_star: 0.0,
    };
    let iid_ok = rel_ok(iid_rate_bound(&inputs, 1e-3).unwrap(), 4.882841233654003);
    let mut noniid_inputs = inputs;
    noniid_inputs.c_h = 0.5;
    noniid_inputs.sigma_h = 0.2;
    let noniid_ok = rel_ok(
        noniid_rate_bound(&noniid_inputs, 1e-3).unwrap(),
        4.332713573901238,
    );
    let rate_ok = rel_ok(
        rate_scaling(2, 4, 30, 500, None),
        0.011547005383792516,
    );

    // gamma * zeta = n / (d + n - 1) across a grid.
    let mut identity_ok = true;
    for d in [2usize, 7, 64, 513] {
        for r in [1usize, 3, 17] {
            for n in [1usize, 2, 6] {
                let (g, z) = gamma_zeta(d, r, n).unwrap();
                let expected = n as f64 / (d as f64 + n as f64 - 1.0);
                identity_ok &= (g * z - expected).abs() <= tol * expected;
            }
        }
    }

    // Communication arithmetic: exact bytes; the full-model figure lands at
    // ~6.38 GiB against the quoted 6.39 (within 1%), and the exact adapter
    // figure is 81.25 MiB -- the sometimes-quoted 80.45 MB does not match the
    // arithmetic and is documented, not reproduced.
    let adapter = comm_cost(42_598_400, 2);
    let full = comm_cost(3_426_473_000, 2);
    let gib = full as f64 / f64::powi(1024.0, 3);
    let comm_ok = adapter == 85_196_800
        && full == 6_852_946_000
        && (gib - 6.39).abs() <= 0.01 * 6.39
        && comm_cost(0, 2) == 0;

    let pass = gz_ok && lr_ok && iid_ok && noniid_ok && rate_ok && identity_ok && comm_ok;
    criterion(
        10,
        "constants and calculators vs goldens",
        pass,
        &format!(
            "gamma_zeta {gz_ok}, lr_bound {lr_ok}, iid {iid_ok}, noniid {noniid_ok}, rate {rate_ok}, identity {identity_ok}, comm {comm_ok} (adapter {} = {}, full {} = {})",
            adapter,
            format_bytes(adapter),
            full,
            format_bytes(full)
        ),
    );
}

#[test]
fn criterion_11_assumption_constant_estimators() {
    // (a) Shifted quadratics: c_h ~ 0 and sigma_h^2 equal to the closed form
    // mean_i ||A (opt_i - mean opt)||^2 within 1%.
    let het = Heterogeneity {
        shift_scale: 0.8,
        curvature_spread: 0.0,
    };
    let specs = make_client_quadratics(6, 5, het, 2024).unwrap();
    let n = specs.len() as f64;
    let d = 5;
    let mut mean_opt = vec![0.0; d];
    for s in &specs {
        for (m, o) in mean_opt.iter_mut().zip(s.optimum().as_slice()) {
            *m += o / n;
        }
    }
    let mut closed_form = 0.0;
    for s in &specs {
        let diff = DenseVector::new(
            s.optimum()
                .as_slice()
                .iter()
                .zip(&mean_opt)
                .map(|(o, m)| o - m)
                .collect(),
        )
        .unwrap();
        let adiff = s.curvature().matvec(&diff).unwrap();
        closed_form += adiff.dot(&adiff) / n;
    }
    let objs: Vec<ObjectiveHandle> = specs
        .into_iter()
        .map(|s| ObjectiveHandle::quadratic_uniform(Arc::new(s), 2).unwrap())
        .collect();
    let (c_h, sigma_h_sq) =
        fedmezo::federation::estimate_heterogeneity_constants(&objs, 40, 1.5, 6).unwrap();
    let hetero_ok = c_h <= 1e-6 && (sigma_h_sq - closed_form).abs() <= 0.01 * closed_form;

    // (b) Mini-batch constants vs exhaustive enumeration on a 40-sample shard
    // with both per-sample targets and curvature scales.
    let shard_n = 40;
    let dim = 4;
    let curvature = random_psd(dim, 91, 0.2);
    let mut scale_stream = SeedStream::from_seed(92);
    let mut scales: Vec<f64> = (0..shard_n)
        .map(|_| 0.25 + 1.5 * scale_stream.next_f64())
        .collect();
    let mean_s: f64 = scales.iter().sum::<f64>() / shard_n as f64;
    for s in &mut scales {
        *s /= mean_s;
    }
    let mut features = vec![0.0; shard_n * dim];
    scale_stream.fill_gaussian(&mut features);
    let data = Arc::new(Dataset::new(features, dim, vec![0; shard_n], None).unwrap());
    let spec = Arc::new(
        QuadraticSpec::with_sample_scales(
            curvature,
            DenseVector::zeros(dim).unwrap(),
            0.0,
            scales,
        )
        .unwrap(),
    );
    let obj = ObjectiveHandle::quadratic(spec, data).unwrap();
    let probe_count = 40;
    let probe_radius = 1.0;
    let est_seed = 31;
    let (cg_est, sg_est) =
        estimate_cg_sigma(&obj, probe_count, 1, 600, probe_radius, est_seed).unwrap();

    // Exhaustive oracle: identical probe points (the probe stream recipe is
    // public), with E_B ||grad F||^2 enumerated exactly over all size-1
    // batches instead of sampled.
    let mut xs = Vec::with_capacity(probe_count);
    let mut ys = Vec::with_capacity(probe_count);
    for p in 0..probe_count {
        let mut stream = SeedStream::from_recipe(&RngRecipe::new(
            StreamDomain::Probe.shift(est_seed),
            0,
            0,
            p as u64,
        ));
        let mut point = vec![0.0; dim];
        stream.fill_gaussian(&mut point);
        for v in &mut point {
            *v *= probe_radius;
        }
        let probe = ParamsView::from_vec(Arc::clone(obj.layout()), point).unwrap();
        let full = obj.full_grad(&probe).unwrap();
        xs.push(full.dot(&full));
        let mut y = 0.0;
        for j in 0..shard_n {
            let batch = Batch::new(vec![j], shard_n).unwrap();
            let g = obj.true_grad(&probe, &batch).unwrap();
            y += g.dot(&g) / shard_n as f64;
        }
        ys.push(y);
    }
    let sxx: f64 = {
        let mx = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - mx) * (x - mx)).sum()
    };
    assert!(sxx > 0.0);
    let slope_exact = {
        let mx = xs.iter().sum::<f64>() / xs.len() as f64;
        let my = ys.iter().sum::<f64>() / ys.len() as f64;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        sxy / sxx
    };
    let intercept_exact = {
        let mx = xs.iter().sum::<f64>() / xs.len() as f64;
        let my = ys.iter().sum::<f64>() / ys.len() as f64;
        my - slope_exact * mx
    };
    let cg_exact = slope_exact.max(1.0);
    let sg_exact = intercept_exact.max(0.0);
    let batch_ok = (cg_est - cg_exact).abs() <= 0.10 * cg_exact
        && (sg_est - sg_exact).abs() <= 0.10 * sg_exact;

    criterion(
        11,
        "assumption-constant estimators",
        hetero_ok && batch_ok,
        &format!(
            "c_h {c_h:.2e} (<= 1e-6), sigma_h^2 {sigma_h_sq:.6} vs closed form {closed_form:.6}; c_g {cg_est:.4} vs exhaustive {cg_exact:.4}, sigma_g^2 {sg_est:.4} vs {sg_exact:.4} (within 10%)"
        ),
    );
}

#[test]
fn criterion_12_effective_rank() {
    let id5 = DenseMatrix::identity(5).unwrap();
    let exact_id = effective_rank(&id5).unwrap();
    let rank1 = DenseMatrix::from_diag(&[1.0, 0.0, 0.0]).unwrap();
    let exact_r1 = effective_rank(&rank1).unwrap();
    let mut worst = 0.0f64;
    for (d, seed) in [(6usize, 1u64), (10, 2), (16, 3), (16, 4)] {
        let m = random_psd(d, 7000 + seed, 0.02);
        let measured = effective_rank(&m).unwrap();
        let eigs = jacobi_eigenvalues(&m);
        let oracle: f64 = eigs.iter().sum::<f64>() / eigs[0];
        worst = worst.max((measured - oracle).abs() / oracle);
    }
    criterion(
        12,
        "effective rank",
        exact_id == 5.0 && exact_r1 == 1.0 && worst <= 1e-6,
        &format!("identity-5 -> {exact_id} (exact), rank-1 -> {exact_r1} (exact), worst deviation vs eigensolver {worst:.2e} (<= 1e-6)"),
    );
}

#[test]
fn criterion_13_determinism() {
    // (a) Two full `run` invocations with the same config + master seed must
    // produce byte-identical metrics files.
    let tmp = tempfile::tempdir().unwrap();
    let dir_a = tmp.path().join("a");
    let dir_b = tmp.path().join("b");
    let config_json = |dir: &std::path::Path| {
        format!(
            r#"{{"objective": {{"kind": "logreg", "dim": 6,
                 "dataset": {{"kind": "synthetic", "n": 120}}}},
               "clients": 3, "rounds": 8, "local_steps": 5,
               "eta0": 0.02, "master_seed": 31337, "replicates": 2,
               "splitter": {{"kind": "dirichlet", "beta": 0.5}},
               "personalization": {{"kind": "update_norm_diff"}},
               "output_dir": {:?}}}"#,
            dir.to_string_lossy()
        )
    };
    let config_a = ExperimentConfig::from_json(&config_json(&dir_a)).unwrap();
    let config_b = ExperimentConfig::from_json(&config_json(&dir_b)).unwrap();
    run(&config_a, &[]).unwrap();
    run(&config_b, &[]).unwrap();
    let bytes_a = std::fs::read(dir_a.join("metrics.jsonl")).unwrap();
    let bytes_b = std::fs::read(dir_b.join("metrics.jsonl")).unwrap();
    let files_identical = bytes_a == bytes_b;
    let shards_identical = std::fs::read(dir_a.join("shards_rep0.json")).unwrap()
        == std::fs::read(dir_b.join("shards_rep0.json")).unwrap();

    // (b) Permuting client execution order leaves every output unchanged.
    let build_clients = |order: &[usize]| -> Vec<ClientState> {
        let specs = make_client_quadratics_from(
            &QuadraticSpec::isotropic(6, 1.0, vec![0.0; 6], 0.0).unwrap(),
            4,
            Heterogeneity {
                shift_scale: 0.5,
                curvature_spread: 0.2,
            },
            11,
        )
        .unwrap();
        order
            .iter()
            .map(|&id| {
                let obj =
                    ObjectiveHandle::quadratic_uniform(Arc::new(specs[id].clone()), 3).unwrap();
                ClientState::new(id, obj, 1e-3).unwrap()
            })
            .collect()
    };
    let run_rounds = |mut clients: Vec<ClientState>| -> Vec<f64> {
        let layout = Arc::clone(clients[0].objective.layout());
        let mut server = ServerState::new(
            ParamsView::from_vec(layout, vec![2.0, -1.0, 0.5, 1.5, -0.25, 0.75]).unwrap(),
            55,
        );
        let mut ledger = CommLedger::new(6, 8);
        let mut fixed = FixedLr(1e-3);
        let opts = LocalTrainOpts {
            master_seed: 55,
            round: 0,
            local_steps: 6,
            zoo: ZooConfig::new(1e-3).unwrap(),
            batch_size: 1,
            rule: OptimizerKind::Fedmezo,
            restore: RestoreMode::InPlace,
            trace_batches: false,
        };
        for _ in 0..5 {
            run_round(
                &mut server,
                &mut clients,
                &opts,
                &mut fixed,
                &mut ledger,
                &|p| Ok(p.norm()),
            )
            .unwrap();
        }
        server.global_params.as_slice().to_vec()
    };
    let forward = run_rounds(build_clients(&[0, 1, 2, 3]));
    let shuffled = run_rounds(build_clients(&[2, 0, 3, 1]));
    let order_invariant = forward == shuffled;

    criterion(
        13,
        "end-to-end determinism",
        files_identical && shards_identical && order_invariant,
        &format!(
            "metrics byte-identical: {files_identical} ({} bytes), shard exports identical: {shards_identical}, client-order permutation invariant: {order_invariant}",
            bytes_a.len()
        ),
    );
}

/// Serialization helper kept for parity with the metrics schema doc.
#[allow(dead_code)]
fn row_to_json(row: &MetricsRow) -> String {
    serde_json::to_string(row).unwrap()
}
