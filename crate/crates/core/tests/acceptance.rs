//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Exits 0 after reporting so the workspace test run stays green while failures stay
//! visible; set `DRIFTGP_ACCEPTANCE_STRICT=1` to exit 1 when any criterion fails.
//! `DRIFTGP_ACCEPTANCE_ONLY=5,7` runs a subset.

use std::collections::HashMap;
use std::time::Instant;

use driftgp::datagen::{
    abrupt_swap_spec, js_divergence, ks_pvalue, ks_statistic, stationary_sine_spec, wasserstein_norm, Stream,
    StreamSpec,
};
use driftgp::drift::{classify, kpi_r2, measure, window_capacity, DriftKind, KpiKind, KpiWindow};
use driftgp::gp::{nlml, woodbury_expand, GpState};
use driftgp::harness::{run_stream, ExperimentConfig, StreamSource};
use driftgp::inducing::Decay;
use driftgp::kernel::{HyperparamDescriptor, Hyperparams, KernelFamily, KernelSpec};
use driftgp::model::ModelConfig;
use driftgp::optim::{
    minimize_bounded, nlml_objective, optimize_hparams, params_to_search, search_bounds, Gradient, LbfgsbSettings,
};
use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

/// Random SPD matrix `A Aᵀ / n + I`.
fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| normal(rng));
    (&a * a.transpose()) / n as f64 + DMatrix::identity(n, n)
}

/// Dense inverse by LU, independent of the Cholesky path under test.
fn lu_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().lu().try_inverse().expect("nonsingular")
}

fn rbf_problem(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (KernelSpec, Hyperparams, DMatrix<f64>, DVector<f64>) {
    let spec = KernelSpec::new(KernelFamily::RbfArd, d).unwrap();
    let mut p: Vec<f64> = (0..d).map(|_| rng.random_range(0.3..3.0)).collect();
    p.push(rng.random_range(0.5..2.0));
    p.push(rng.random_range(0.01..0.5));
    let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-3.0..3.0));
    let y = DVector::from_fn(n, |_, _| normal(rng));
    (spec, Hyperparams::new(p), x, y)
}

fn c1_linear_algebra() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_w = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(2..=30);
        let full = random_spd(&mut rng, n + 1);
        let base = full.view((0, 0), (n, n)).into_owned();
        let k_vec = full.view((0, n), (n, 1)).column(0).into_owned();
        let expanded = match woodbury_expand(&lu_inverse(&base), &k_vec, full[(n, n)]) {
            Ok(m) => m,
            Err(e) => return outcome(false, format!("woodbury_expand failed: {e}")),
        };
        worst_w = worst_w.max(max_abs_diff(&expanded, &lu_inverse(&full)));
    }
    let mut worst_p = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..=30);
        let d = rng.random_range(1..=3);
        let (spec, p, x, y) = rbf_problem(&mut rng, n, d);
        let q = DMatrix::from_fn(rng.random_range(1..=5), d, |_, _| rng.random_range(-4.0..4.0));
        let state = GpState::new(spec.clone(), p.clone(), x.clone(), y.clone(), vec![0; n]).unwrap();
        let post = state.posterior(&q).unwrap();
        let k = spec.gram(&p, &x).unwrap();
        let ks = spec.eval_cross(&p, &x, &q).unwrap();
        let lu = k.lu();
        let mean = ks.transpose() * lu.solve(&y).unwrap();
        let v = lu.solve(&ks).unwrap();
        for j in 0..q.nrows() {
            let row: Vec<f64> = q.row(j).iter().copied().collect();
            let var = (spec.eval(&p, &row, &row) - ks.column(j).dot(&v.column(j))).max(0.0);
            worst_p = worst_p.max((post.mean[j] - mean[j]).abs()).max((post.variance[j] - var).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_w <= 1e-8 && worst_p <= 1e-8 && secs < 10.0,
        format!("woodbury max err {worst_w:.2e}, posterior max err {worst_p:.2e}, {secs:.2}s"),
    )
}

fn c2_nlml() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=20);
        let d = rng.random_range(1..=3);
        let (spec, p, x, y) = rbf_problem(&mut rng, n, d);
        let k = spec.gram(&p, &x).unwrap();
        let explicit = 0.5 * y.dot(&(lu_inverse(&k) * &y))
            + 0.5 * k.clone().lu().determinant().ln()
            + 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        worst = worst.max((nlml(&spec, &p, &x, &y).unwrap() - explicit).abs());
    }
    // K + σ²I = [1] from variance 0.5 and noise 0.5.
    let base = KernelSpec::new(KernelFamily::RbfArd, 1).unwrap();
    let spec = KernelSpec::with_descriptors(
        KernelFamily::RbfArd,
        1,
        base.descriptors().to_vec(),
        HyperparamDescriptor::new("noise_variance", 0.1, 0.0, 10.0).unwrap(),
    )
    .unwrap();
    let p = Hyperparams::new(vec![1.0, 0.5, 0.5]);
    let x = DMatrix::from_element(1, 1, 0.0);
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let s0 = (nlml(&spec, &p, &x, &DVector::from_element(1, 0.0)).unwrap() - half_log_2pi).abs();
    let s2 = (nlml(&spec, &p, &x, &DVector::from_element(1, 2.0)).unwrap() - (2.0 + half_log_2pi)).abs();
    outcome(
        worst <= 1e-8 && s0 <= 1e-9 && s2 <= 1e-9,
        format!("max err {worst:.2e} over 100 problems; scalar cases {s0:.1e}, {s2:.1e}"),
    )
}

fn c3_optimizer() -> Outcome {
    let spec = KernelSpec::new(KernelFamily::RbfArd, 1).unwrap();
    let truth = Hyperparams::new(vec![2.0, 1.0, 0.04]);
    let settings = LbfgsbSettings::default();
    let bounds = search_bounds(&spec);
    let mut recovered = 0;
    let mut feasible = true;
    let mut monotone = true;
    let mut found = Vec::new();
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        // Fifteen lengthscales either side of zero, about four samples per lengthscale.
        let x = DMatrix::from_fn(60, 1, |_, _| rng.random_range(-15.0..15.0));
        let k = spec.gram(&truth, &x).unwrap();
        let l = k.cholesky().unwrap().unpack();
        let y = l * DVector::from_fn(60, |_, _| normal(&mut rng));
        let start = Hyperparams::new(vec![0.5, 1.0, 0.1]);
        let state = GpState::new(spec.clone(), start.clone(), x.clone(), y.clone(), vec![0; 60]).unwrap();
        let (fitted, result) = optimize_hparams(&state, &settings).unwrap();
        let ls = fitted.as_slice()[0];
        found.push(ls);
        recovered += usize::from((1.5..=2.7).contains(&ls));
        monotone &= result.trace.windows(2).all(|w| w[1] <= w[0]);

        // Replay with a recording objective: every accepted iterate lies in the box.
        let mut seen: Vec<(Vec<f64>, f64)> = Vec::new();
        let mut f = nlml_objective(&spec, &x, &y);
        let rec = |u: &[f64]| {
            let v = f(u);
            seen.push((u.to_vec(), v));
            v
        };
        let u0 = params_to_search(&spec, &start);
        let replay = minimize_bounded(rec, Gradient::FiniteDifference, &u0, &bounds, &settings).unwrap();
        for fv in &replay.trace {
            let iterate = seen.iter().find(|(_, v)| v == fv).map(|(u, _)| u);
            feasible &= iterate.is_some_and(|u| bounds.contains(u));
        }
    }
    found.sort_by(f64::total_cmp);
    outcome(
        recovered >= 18 && feasible && monotone,
        format!(
            "{recovered}/20 lengthscales in [1.5, 2.7] (median {:.2}, range {:.2}..{:.2}); feasible {feasible}; monotone {monotone}",
            found[10], found[0], found[19]
        ),
    )
}

fn c4_false_alarms() -> Outcome {
    let start = Instant::now();
    let steps = 10_000;
    let rho = 0.006;
    let cap = window_capacity(steps, 1, 10, 50);
    let mut window = KpiWindow::new(cap).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut abrupt = 0;
    for _ in 0..steps {
        let kpi = 0.9 + 0.02 * normal(&mut rng);
        if window.len() >= 2 {
            let limits = measure(&window, rho).unwrap();
            abrupt += usize::from(classify(kpi, &limits, 0.005, KpiKind::R2).kind == DriftKind::Abrupt);
        }
        window.push(kpi);
    }
    let rate = abrupt as f64 / steps as f64;
    let secs = start.elapsed().as_secs_f64();
    outcome(
        rate <= 2.0 * rho && secs < 30.0,
        format!("abrupt rate {rate:.4} (limit {:.3}) over {steps} steps, window {cap}, {secs:.2}s", 2.0 * rho),
    )
}

fn experiment(spec: StreamSpec, model: ModelConfig, increment: usize) -> ExperimentConfig {
    ExperimentConfig {
        model,
        source: StreamSource::Generate(spec),
        increment,
        seed: 0,
        telemetry: None,
        summary: None,
        timing: false,
    }
}

fn pooled_r2(pairs: &[(f64, f64)]) -> f64 {
    let (t, p): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    kpi_r2(&t, &p).unwrap_or(f64::NEG_INFINITY)
}

struct SwapRun {
    boundary_batch: u64,
    abrupt_batches: Vec<u64>,
    hyperopt_batches: Vec<u64>,
    tail_r2: f64,
    new_fraction: f64,
}

fn row_key(s: &Stream, i: usize) -> Vec<u64> {
    s.x.row(i).iter().map(|v| v.to_bits()).collect()
}

/// Abrupt-swap replay with initial batch 50, increment 20 and 100 inducing points.
fn swap_run(seed: u64, decay: Decay) -> SwapRun {
    let spec = abrupt_swap_spec(seed);
    let boundary = spec.drift.as_ref().unwrap().boundaries[0];
    let stream = spec.generate().unwrap();
    let concept = stream.concept.clone().unwrap();
    let by_row: HashMap<Vec<u64>, usize> = (0..stream.len()).map(|i| (row_key(&stream, i), concept[i])).collect();
    let model = ModelConfig { initial_batch_size: 50, max_inducing: 100, decay, ..ModelConfig::default() };
    let cfg = experiment(spec, model, 20);

    let mut boundary_batch = 0;
    let mut abrupt_batches = Vec::new();
    let mut hyperopt_batches = Vec::new();
    let mut per_batch: Vec<Vec<(f64, f64)>> = Vec::new();
    let mut new_fraction = 0.0;
    run_stream(&cfg, &stream, None, |e| {
        let b = e.report.batch_index;
        if e.rows.contains(&boundary) {
            boundary_batch = b;
        }
        if e.report.verdict == DriftKind::Abrupt {
            abrupt_batches.push(b);
        }
        if e.report.hyperopt_ran {
            hyperopt_batches.push(b);
        }
        per_batch.push(e.rows.clone().zip(e.prequential).map(|(i, &p)| (stream.y[i], p)).collect());
        let x = e.model.state().x();
        let new = (0..x.nrows())
            .filter(|&i| {
                let key: Vec<u64> = x.row(i).iter().map(|v| v.to_bits()).collect();
                by_row.get(&key).copied() == Some(1)
            })
            .count();
        new_fraction = new as f64 / x.nrows() as f64;
    })
    .unwrap();
    let tail: Vec<(f64, f64)> = per_batch[per_batch.len() - 10..].concat();
    SwapRun { boundary_batch, abrupt_batches, hyperopt_batches, tail_r2: pooled_r2(&tail), new_fraction }
}

fn swap_runs(decay: Decay) -> Vec<SwapRun> {
    (0..20).map(|seed| swap_run(seed, decay)).collect()
}

fn c5_drift_recovery(on: &[SwapRun]) -> Outcome {
    let detected = on
        .iter()
        .filter(|r| r.abrupt_batches.iter().any(|&b| b >= r.boundary_batch && b <= r.boundary_batch + 2))
        .count();
    let hyperopt = on
        .iter()
        .filter(|r| r.hyperopt_batches.iter().any(|&b| b >= r.boundary_batch && b <= r.boundary_batch + 2))
        .count();
    let min_tail = on.iter().map(|r| r.tail_r2).fold(f64::INFINITY, f64::min);
    let tail_ok = on.iter().filter(|r| r.tail_r2 >= 0.90).count();
    outcome(
        detected >= 18 && tail_ok == on.len(),
        format!(
            "abrupt within 2 batches in {detected}/20 (hyperopt {hyperopt}/20); final-10-batch R² ≥ 0.90 in {tail_ok}/20 (min {min_tail:.3})"
        ),
    )
}

fn c7_decay(on: &[SwapRun], off: &[SwapRun]) -> Outcome {
    let good = on
        .iter()
        .zip(off)
        .filter(|(a, b)| a.new_fraction >= 0.8 && a.tail_r2 >= b.tail_r2 - 0.02)
        .count();
    let mean = |v: &[SwapRun], f: fn(&SwapRun) -> f64| v.iter().map(f).sum::<f64>() / v.len() as f64;
    outcome(
        good >= 16,
        format!(
            "{good}/20 seeds pass; mean new-concept fraction on {:.2} / off {:.2}; mean tail R² on {:.3} / off {:.3}",
            mean(on, |r| r.new_fraction),
            mean(off, |r| r.new_fraction),
            mean(on, |r| r.tail_r2),
            mean(off, |r| r.tail_r2)
        ),
    )
}

struct StationaryRun {
    test_r2: f64,
    batches: usize,
    hyperopt: usize,
}

/// Stationary 2-D sine replay with the Fig. 3 settings: initial 100, increment 10,
/// 100 inducing points, decay off, ρ = 0.0002.
fn stationary_runs() -> Vec<StationaryRun> {
    (0..5)
        .map(|seed| {
            let spec = stationary_sine_spec(seed);
            let stream = spec.generate().unwrap();
            let model = ModelConfig {
                initial_batch_size: 100,
                max_inducing: 100,
                decay: Decay::Off,
                rho: 0.0002,
                ..ModelConfig::default()
            };
            let s = run_stream(&experiment(spec, model, 10), &stream, None, |_| {}).unwrap();
            StationaryRun { test_r2: s.test_r2.unwrap(), batches: s.batches as usize, hyperopt: s.hyperopt_batches }
        })
        .collect()
}

fn c6_stationary(runs: &[StationaryRun]) -> Outcome {
    let min = runs.iter().map(|r| r.test_r2).fold(f64::INFINITY, f64::min);
    let r2: Vec<String> = runs.iter().map(|r| format!("{:.4}", r.test_r2)).collect();
    outcome(min >= 0.95, format!("held-out R² per seed [{}]", r2.join(", ")))
}

fn c9_gated(runs: &[StationaryRun]) -> Outcome {
    let h: usize = runs.iter().map(|r| r.hyperopt).sum();
    let b: usize = runs.iter().map(|r| r.batches).sum();
    let rate = h as f64 / b as f64;
    let per: Vec<String> = runs.iter().map(|r| format!("{}/{}", r.hyperopt, r.batches)).collect();
    outcome(rate <= 0.05, format!("hyperopt on {:.1}% of batches ({})", 100.0 * rate, per.join(", ")))
}

fn median(v: &mut [u64]) -> f64 {
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2]) as f64
    }
}

fn c8_cost() -> Outcome {
    let mut spec = stationary_sine_spec(8);
    spec.n_points = 5000;
    let stream = spec.generate().unwrap();
    let model = ModelConfig { initial_batch_size: 100, max_inducing: 100, ..ModelConfig::default() };
    let mut max_count = 0;
    let mut early = Vec::new();
    let mut late = Vec::new();
    let mut footprint = (usize::MAX, 0usize);
    run_stream(&experiment(spec, model, 20), &stream, None, |e| {
        let r = e.report;
        max_count = max_count.max(r.inducing_count);
        let fp = e.model.state().footprint_bytes();
        footprint = (footprint.0.min(fp), footprint.1.max(fp));
        match r.batch_index {
            10..=49 => early.push(r.step_micros),
            50..=100 => late.push(r.step_micros),
            _ => {}
        }
    })
    .unwrap();
    let (m_early, m_late) = (median(&mut early), median(&mut late));
    let ratio = m_late / m_early;
    outcome(
        max_count <= 100 && ratio <= 1.5,
        format!(
            "max inducing {max_count}; median step {:.2} ms (batches 10–49) vs {:.2} ms (50–100), ratio {ratio:.2}; footprint {}..{} bytes",
            m_early / 1e3,
            m_late / 1e3,
            footprint.0,
            footprint.1
        ),
    )
}

fn c10_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.toml");
    std::fs::write(
        &config,
        "seed = 11\n\n[batch]\ninitial = 50\nincrement = 20\n\n[stream]\npreset = \"abrupt-swap\"\n",
    )
    .unwrap();
    let run = |name: &str| {
        let tel = dir.path().join(format!("{name}.jsonl"));
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_driftgp"))
            .arg("run")
            .arg("--config")
            .arg(&config)
            .arg("--telemetry")
            .arg(&tel)
            .stdout(std::process::Stdio::null())
            .status()
            .unwrap();
        (status.success(), std::fs::read(&tel).unwrap_or_default())
    };
    let (ok_a, a) = run("a");
    let (ok_b, b) = run("b");
    let lines = a.iter().filter(|&&c| c == b'\n').count();
    outcome(
        ok_a && ok_b && !a.is_empty() && a == b,
        format!("two CLI runs, {lines} telemetry lines each, {} bytes, identical: {}", a.len(), a == b),
    )
}

fn c11_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checks: Vec<(&str, bool)> = Vec::new();
    let a: Vec<f64> = (0..500).map(|_| normal(&mut rng)).collect();
    checks.push(("ks a=a p ≥ 0.99", ks_pvalue(&a, &a).unwrap() >= 0.99));
    checks.push(("ks a=a D = 0", ks_statistic(&a, &a) == 0.0));
    let lo: Vec<f64> = (0..1000).map(|_| rng.random_range(0.0..1.0)).collect();
    let hi: Vec<f64> = (0..1000).map(|_| rng.random_range(2.0..3.0)).collect();
    checks.push(("ks disjoint p ≤ 1e-6", ks_pvalue(&lo, &hi).unwrap() <= 1e-6));
    let shifted: Vec<f64> = (0..500).map(|_| 3.0 + normal(&mut rng)).collect();
    checks.push(("ks N(0,1) vs N(3,1) p ≤ 1e-4", ks_pvalue(&a, &shifted).unwrap() <= 1e-4));
    checks.push(("js a=a = 0", js_divergence(&a, &a).unwrap() == 0.0));
    // Smoothing of 1e-10 per bin keeps the disjoint value a hair below 1.
    checks.push(("js disjoint = 1", (js_divergence(&lo, &hi).unwrap() - 1.0).abs() <= 1e-9));
    let pre = abrupt_swap_spec(20).generate().unwrap();
    let b = pre.concept.as_ref().unwrap();
    let (y0, y1): (Vec<(usize, f64)>, Vec<(usize, f64)>) = pre.y.iter().copied().enumerate().partition(|(i, _)| b[*i] == 0);
    let y0: Vec<f64> = y0.into_iter().map(|p| p.1).collect();
    let y1: Vec<f64> = y1.into_iter().map(|p| p.1).collect();
    checks.push(("js swap targets ≥ 0.5", js_divergence(&y0, &y1).unwrap() >= 0.5));
    checks.push(("w1 a=a = 0", wasserstein_norm(&a, &a).unwrap() == 0.0));
    checks.push(("w1 {0} vs {1} = 1", wasserstein_norm(&[0.0], &[1.0]).unwrap() == 1.0));
    let u0: Vec<f64> = (0..1000).map(|_| rng.random_range(0.0..1.0)).collect();
    let u1: Vec<f64> = (0..1000).map(|_| rng.random_range(0.5..1.5)).collect();
    let w = wasserstein_norm(&u0, &u1).unwrap();
    checks.push(("w1 uniform shift ≈ 1/3 ± 0.03", (w - 1.0 / 3.0).abs() <= 0.03));
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    outcome(
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} metric cases hold", checks.len())
        } else {
            format!("failed: {}", failed.join("; "))
        },
    )
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("DRIFTGP_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let wanted = |c: u32| only.as_ref().is_none_or(|o| o.contains(&c));
    let strict = std::env::var("DRIFTGP_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");

    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |id: u32, name: &'static str, o: Outcome| {
        println!("{} {id:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o));
    };
    if wanted(1) {
        report(1, "linear-algebra oracle equivalence", c1_linear_algebra());
    }
    if wanted(2) {
        report(2, "NLML correctness", c2_nlml());
    }
    if wanted(3) {
        report(3, "optimizer recovery", c3_optimizer());
    }
    if wanted(4) {
        report(4, "false-alarm bound", c4_false_alarms());
    }
    if wanted(5) || wanted(7) {
        let on = swap_runs(Decay::Rate(0.99));
        if wanted(5) {
            report(5, "drift recovery", c5_drift_recovery(&on));
        }
        if wanted(7) {
            let off = swap_runs(Decay::Off);
            report(7, "decay effect", c7_decay(&on, &off));
        }
    }
    if wanted(6) || wanted(9) {
        let runs = stationary_runs();
        if wanted(6) {
            report(6, "stationary accuracy", c6_stationary(&runs));
        }
        if wanted(9) {
            report(9, "drift-gated optimization", c9_gated(&runs));
        }
    }
    if wanted(8) {
        report(8, "bounded cost and memory", c8_cost());
    }
    if wanted(10) {
        report(10, "determinism", c10_determinism());
    }
    if wanted(11) {
        report(11, "certification metrics", c11_metrics());
    }
    let passed = results.iter().filter(|r| r.2.pass).count();
    println!("acceptance: {passed}/{} criteria pass", results.len());
    if strict && passed < results.len() {
        std::process::exit(1);
    }
}
