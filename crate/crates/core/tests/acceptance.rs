//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Run with `cargo test --test acceptance` (add `--release` for speed).

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use tvkb::config::ExperimentConfig;
use tvkb::environment::{generate_sequence, CenterBasis, DriftKind, DriftSchedule, RkhsFunction};
use tvkb::feature_space::{
    operator_norm_bound_check, self_normalized_statistic, FeatureMap, FeatureSpaceState,
};
use tvkb::harness::{
    block_inequality_audit, coverage_test, identity_suite, infogain_suite, loglog_slope, run_many,
    sweep, DriftMode, Experiment, GammaOracle, SweepAxis, SweepTable, VariantSpec, WindowSpec,
};
use tvkb::infogain::{best_available, InfoGainMethod};
use tvkb::kernels::{CandidateSet, Domain, Kernel, MaternNu, Point};
use tvkb::policies::BetaForm;
use tvkb::posterior::{Dataset, GridPosterior, Posterior};
use tvkb::seed;

// Tolerances and sizes, pinned.
const POSTERIOR_TOL: f64 = 1e-8;
const IDENTITY_TOL: f64 = 1e-8;
const ORTHONORMAL_TOL: f64 = 1e-10;
const BUDGET_TOL: f64 = 1e-9;
const COVERAGE_DELTA: f64 = 0.1;
const COVERAGE_MAX_RATE: f64 = 0.13;
const COVERAGE_RUNS: usize = 2000;
const SELF_NORMALIZED_MAX_RATE: f64 = 0.13;
const SELF_NORMALIZED_RUNS: usize = 2000;
const SLOPE_MAX: f64 = 0.95;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed <= Duration::from_secs(limit_secs)
}

fn unit_ball_point<R: Rng>(rng: &mut R, d: usize) -> Point {
    let p: Point = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 1.0 {
        p.iter().map(|v| v / n).collect()
    } else {
        p
    }
}

/// Ridge regression in the primal: `theta = (X^T X + lambda I)^{-1} X^T y`,
/// `sigma^2(x) = lambda x^T (X^T X + lambda I)^{-1} x`, solved by LU.
fn posterior_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for i in 0..100u64 {
        let mut rng = seed::rng(seed::derive(101, i));
        let d = rng.random_range(1..=5);
        let n = rng.random_range(1..=30);
        let lambda = [0.1, 1.0, 10.0][(i % 3) as usize];
        let points: Vec<Point> = (0..n).map(|_| unit_ball_point(&mut rng, d)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x = DMatrix::from_fn(n, d, |r, c| points[r][c]);
        let a = x.transpose() * &x + DMatrix::identity(d, d) * lambda;
        let lu = a.clone().lu();
        let theta = lu
            .solve(&(x.transpose() * DVector::from_vec(y.clone())))
            .expect("invertible");

        let data = Dataset::from_pairs(points.iter().cloned().zip(y.iter().copied()));
        let post = Posterior::fit(&Kernel::linear(), lambda, &data).expect("fit");
        let queries: Vec<Point> = (0..10).map(|_| unit_ball_point(&mut rng, d)).collect();
        // Grid posterior over the queries followed by the data points.
        let mut grid_points = queries.clone();
        grid_points.extend(points.iter().cloned());
        let cands = Arc::new(CandidateSet::new(Kernel::linear(), grid_points).expect("candidates"));
        let mut grid = GridPosterior::new(cands, lambda).expect("grid posterior");
        grid.refit(y.iter().enumerate().map(|(j, &yj)| (queries.len() + j, yj)));
        for (q, xq) in queries.iter().enumerate() {
            let v = DVector::from_vec(xq.clone());
            let mu = v.dot(&theta);
            let var = lambda * v.dot(&lu.solve(&v).expect("invertible"));
            worst = worst
                .max((post.mean(xq) - mu).abs())
                .max((post.variance(xq) - var).abs())
                .max((grid.mean(q) - mu).abs())
                .max((grid.variance(q) - var).abs());
        }
    }
    let elapsed = start.elapsed();
    check(
        worst <= POSTERIOR_TOL && within(elapsed, 5),
        format!(
            "max |error| {worst:.2e} (tol {POSTERIOR_TOL:.0e}), {:.2}s (limit 5s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn feature_identities() -> Outcome {
    let start = Instant::now();
    let report = identity_suite(100, 202, IDENTITY_TOL).expect("identity suite");
    let elapsed = start.elapsed();
    check(
        report.passes() && within(elapsed, 5),
        format!(
            "max sigma^2 error {:.2e}, max log-det error {:.2e} (tol {IDENTITY_TOL:.0e}), {:.2}s (limit 5s)",
            report.max_sigma_error,
            report.max_logdet_error,
            elapsed.as_secs_f64()
        ),
    )
}

fn operator_norm_audit() -> Outcome {
    let start = Instant::now();
    let mut violations = 0;
    let mut worst_ratio = 0.0f64;
    let mut exhaustive = 0;
    for i in 0..500u64 {
        let mut rng = seed::rng(seed::derive(303, i));
        let d = rng.random_range(1..=4);
        let g = rng.random_range(2..=6);
        let h = rng.random_range(1..=50);
        let lambda = [0.1, 1.0, 10.0][(i % 3) as usize];
        let points: Vec<Point> = (0..g).map(|_| unit_ball_point(&mut rng, d)).collect();
        let cands =
            Arc::new(CandidateSet::new(Kernel::linear(), points.clone()).expect("candidates"));
        let est = best_available(&cands, h, lambda).expect("gamma");
        if est.method == InfoGainMethod::Exhaustive {
            exhaustive += 1;
        }
        let block: Vec<DVector<f64>> = (0..h)
            .map(|_| DVector::from_vec(points[rng.random_range(0..g)].clone()))
            .collect();
        // Greedy may undershoot gamma_H; the block's own half log-det never exceeds it.
        let gram = DMatrix::from_fn(h, h, |a, b| block[a].dot(&block[b]));
        let realized = 0.5 * (DMatrix::identity(h, h) + gram / lambda).determinant().ln();
        let gamma = est.value.max(realized);
        let partial = rng.random_range(1..=h);
        let (norm, bound) =
            operator_norm_bound_check(&block, lambda, partial, h, gamma).expect("check");
        worst_ratio = worst_ratio.max(norm / bound);
        if norm > bound + 1e-12 {
            violations += 1;
        }
    }
    let elapsed = start.elapsed();
    check(
        violations == 0 && within(elapsed, 60),
        format!(
            "{violations} violations in 500 blocks ({exhaustive} with exhaustive gamma), max norm/bound {worst_ratio:.3}, {:.2}s (limit 60s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn information_gain_oracle() -> Outcome {
    let kernels = [
        (Kernel::linear(), 3),
        (Kernel::squared_exponential(0.5).expect("kernel"), 2),
        (
            Kernel::matern(MaternNu::ThreeHalves, 0.7).expect("kernel"),
            1,
        ),
    ];
    let mut pass = true;
    let mut details = Vec::new();
    for (i, (kernel, dim)) in kernels.iter().enumerate() {
        let r = infogain_suite(kernel, *dim, 200, 404 + i as u64).expect("suite");
        pass &= r.first_step_mismatches == 0
            && r.ratio_violations == 0
            && r.orthonormal_error <= ORTHONORMAL_TOL;
        details.push(format!(
            "{}: t=1 mismatches {}, bound violations {}, min greedy/exhaustive {:.3}",
            kernel.name(),
            r.first_step_mismatches,
            r.ratio_violations,
            r.min_ratio
        ));
        if i == 0 {
            details.push(format!("orthonormal |error| {:.1e}", r.orthonormal_error));
        }
    }
    check(pass, details.join("; "))
}

fn coverage_config(variant: &str) -> String {
    format!(
        r#"
[kernel]
name = "se"
lengthscale = 0.2

[domain]
lower = [0.0]
upper = [1.0]
resolution = 50

[environment]
schedule = "stationary"
B = 1.0
R = 0.1
centers = 10
seed = 5

[policy]
{variant}
delta = {COVERAGE_DELTA}

[run]
T = 200
"#
    )
}

fn confidence_coverage() -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut details = Vec::new();
    for (label, variant, mode) in [
        ("stationary", "variant = \"stationary\"", DriftMode::None),
        (
            "restart H=64",
            "variant = \"restart\"\nH = 64",
            DriftMode::Restart,
        ),
        (
            "window w=64",
            "variant = \"sliding_window\"\nw = 64",
            DriftMode::Window,
        ),
    ] {
        let exp = ExperimentConfig::parse(&coverage_config(variant), &[])
            .expect("config")
            .to_experiment()
            .expect("experiment");
        let r = coverage_test(&exp, COVERAGE_DELTA, COVERAGE_RUNS, mode, 505).expect("coverage");
        pass &= r.violation_rate <= COVERAGE_MAX_RATE;
        details.push(format!("{label}: rate {:.4}", r.violation_rate));
    }
    let elapsed = start.elapsed();
    pass &= within(elapsed, 600);
    check(
        pass,
        format!(
            "{} (limit {COVERAGE_MAX_RATE}, {COVERAGE_RUNS} runs, T=200), {:.1}s (limit 600s)",
            details.join(", "),
            elapsed.as_secs_f64()
        ),
    )
}

/// Any-time check over every prefix of a 60-step sequence of unit-ball
/// features with Gaussian noise.
fn self_normalized_bound() -> Outcome {
    let start = Instant::now();
    let (d, n, r_scale, lambda) = (3, 60, 0.5, 1.0);
    let map = FeatureMap::exact_for(&Kernel::linear(), d).expect("map");
    let mut exceed = 0;
    for run in 0..SELF_NORMALIZED_RUNS as u64 {
        let mut rng = seed::rng(seed::derive(606, run));
        let points: Vec<Point> = (0..n).map(|_| unit_ball_point(&mut rng, d)).collect();
        let noise: Vec<f64> = (0..n)
            .map(|_| r_scale * rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let mut any = false;
        for t in 1..=n {
            let state = FeatureSpaceState::new(&map, &points[..t], lambda)
                .and_then(|s| s.with_noise(noise[..t].to_vec()))
                .expect("state");
            let (stat, threshold) =
                self_normalized_statistic(&state, r_scale, 0.1).expect("statistic");
            if stat > threshold {
                any = true;
                break;
            }
        }
        exceed += usize::from(any);
    }
    let rate = exceed as f64 / SELF_NORMALIZED_RUNS as f64;
    let elapsed = start.elapsed();
    check(
        rate <= SELF_NORMALIZED_MAX_RATE && within(elapsed, 120),
        format!(
            "any-time exceedance rate {rate:.4} (limit {SELF_NORMALIZED_MAX_RATE}, {SELF_NORMALIZED_RUNS} runs), {:.1}s (limit 120s)",
            elapsed.as_secs_f64()
        ),
    )
}

/// One flip `f -> -f` at `T/2 + 1` (`P_T = 2B`), SE kernel on a 60-point grid.
const ABRUPT: &str = r#"
[kernel]
name = "se"
lengthscale = 0.2

[domain]
lower = [0.0]
upper = [1.0]
resolution = 60

[environment]
schedule = "abrupt"
B = 1.0
P_T = 2.0
R = 0.05
centers = 20
seed = 1

[policy]
variant = "stationary"

[run]
T = 2000
seeds = 10
master_seed = 0
"#;

fn abrupt_experiment() -> (Experiment, Vec<u64>) {
    let config = ExperimentConfig::parse(ABRUPT, &[]).expect("config");
    (
        config.to_experiment().expect("experiment"),
        config.episode_seeds(),
    )
}

fn best_cell(table: &SweepTable) -> f64 {
    table.argmin().expect("non-empty").value
}

fn interval(table: &SweepTable) -> (f64, f64) {
    let c = &table.cells[0];
    (c.mean - 2.0 * c.stderr, c.mean + 2.0 * c.stderr)
}

fn regret_separation() -> Outcome {
    let start = Instant::now();
    let (base, seeds) = abrupt_experiment();
    // Tune on held-out seeds, then evaluate on the 10 evaluation seeds.
    let tuning = seed::episode_seeds(9_999, 3);
    let grid = [64.0, 128.0, 256.0, 512.0, 1024.0];
    let h = best_cell(&sweep(&base, SweepAxis::H, &grid, &tuning).expect("sweep"));
    let w = best_cell(&sweep(&base, SweepAxis::W, &grid, &tuning).expect("sweep"));

    let stationary = sweep(&base, SweepAxis::T, &[base.horizon as f64], &seeds).expect("sweep");
    let restart = sweep(&base, SweepAxis::H, &[h], &seeds).expect("sweep");
    let window = sweep(&base, SweepAxis::W, &[w], &seeds).expect("sweep");
    let (s_lo, s_hi) = interval(&stationary);
    let (r_lo, r_hi) = interval(&restart);
    let (w_lo, w_hi) = interval(&window);
    let elapsed = start.elapsed();
    check(
        r_hi < s_lo && w_hi < s_lo && within(elapsed, 900),
        format!(
            "mean R(T) +- 2se: stationary [{s_lo:.1}, {s_hi:.1}], restart H={h} [{r_lo:.1}, {r_hi:.1}], window w={w} [{w_lo:.1}, {w_hi:.1}], {:.1}s (limit 900s)",
            elapsed.as_secs_f64()
        ),
    )
}

/// Rotation spending a fixed `P_T = 6` whatever the horizon.
const ROTATION: &str = r#"
[kernel]
name = "se"
lengthscale = 0.2

[domain]
lower = [0.0]
upper = [1.0]
resolution = 60

[environment]
schedule = "rotation"
B = 1.0
P_T = 6.0
R = 0.05
centers = 20
seed = 1

[policy]
variant = "restart"
H = "auto"

[run]
T = 500
seeds = 5
master_seed = 0
"#;

fn sublinearity() -> Outcome {
    let start = Instant::now();
    let config = ExperimentConfig::parse(ROTATION, &[]).expect("config");
    let tuned = config.to_experiment().expect("experiment");
    let seeds = config.episode_seeds();
    let horizons = [500.0, 1000.0, 2000.0, 4000.0];
    let tuned_table = sweep(&tuned, SweepAxis::T, &horizons, &seeds).expect("sweep");
    let mut baseline = tuned.clone();
    baseline.policy.variant = VariantSpec::Stationary;
    let base_table = sweep(&baseline, SweepAxis::T, &horizons, &seeds).expect("sweep");
    let means = |t: &SweepTable| t.cells.iter().map(|c| c.mean).collect::<Vec<_>>();
    let tuned_slope = loglog_slope(&horizons, &means(&tuned_table));
    let base_slope = loglog_slope(&horizons, &means(&base_table));
    let windows: Vec<String> = tuned_table
        .cells
        .iter()
        .map(|c| format!("{}", c.resolved_window.unwrap_or(0)))
        .collect();
    let elapsed = start.elapsed();
    check(
        tuned_slope < SLOPE_MAX && base_slope >= tuned_slope && within(elapsed, 1800),
        format!(
            "log-log slope: auto-H restart {tuned_slope:.3} (H = {}), stationary {base_slope:.3} (limit {SLOPE_MAX}), {:.1}s (limit 1800s)",
            windows.join("/"),
            elapsed.as_secs_f64()
        ),
    )
}

fn u_shape() -> Outcome {
    let (base, seeds) = abrupt_experiment();
    let t = base.horizon as f64;
    let values = [1.0, 4.0, 16.0, 64.0, 256.0, t];
    let table = sweep(&base, SweepAxis::H, &values, &seeds).expect("sweep");
    let best = best_cell(&table);
    let means: Vec<String> = table
        .cells
        .iter()
        .map(|c| format!("H={}: {:.1}", c.value, c.mean))
        .collect();
    check(
        best != 1.0 && best != t,
        format!("argmin H = {best}; {}", means.join(", ")),
    )
}

fn equivalence_and_determinism() -> Outcome {
    let config = ExperimentConfig::parse(
        ABRUPT,
        &["run.T=300".to_string(), "environment.R=0.2".to_string()],
    )
    .expect("config");
    let base = config.to_experiment().expect("experiment");
    let t = base.horizon;
    let with = |variant: VariantSpec, delta: f64, form: BetaForm| {
        let mut e = base.clone();
        e.policy.variant = variant;
        e.policy.delta = delta;
        e.policy.beta_form = form;
        e.fingerprint = None;
        e.prepare().expect("prepare")
    };
    let delta = base.policy.delta;
    let mut mismatches = 0;
    let seeds = seed::episode_seeds(77, 5);
    for form in [BetaForm::SelfNormalized, BetaForm::Simple] {
        // The window width carries ln(T / delta), the others ln(1 / delta).
        let stat_delta = if form == BetaForm::SelfNormalized {
            delta / t as f64
        } else {
            delta
        };
        let runs = [
            with(VariantSpec::Stationary, stat_delta, form),
            with(VariantSpec::Restart(WindowSpec::Fixed(t)), stat_delta, form),
            with(
                VariantSpec::SlidingWindow(WindowSpec::Fixed(t)),
                delta,
                form,
            ),
        ];
        for &s in &seeds {
            let queries: Vec<Vec<usize>> = runs
                .iter()
                .map(|p| p.run_episode(s).expect("episode").queries())
                .collect();
            mismatches += usize::from(queries[0] != queries[1] || queries[0] != queries[2]);
        }
    }
    let prepared = base.prepare().expect("prepare");
    let first = run_many(&prepared, &seeds).expect("runs");
    let second = run_many(&prepared, &seeds).expect("runs");
    let identical = first
        .iter()
        .zip(&second)
        .all(|(a, b)| a.to_csv() == b.to_csv());
    check(
        mismatches == 0 && identical,
        format!(
            "{mismatches} query-sequence mismatches over 2 width forms x {} seeds; CSV byte-identical: {identical}",
            seeds.len()
        ),
    )
}

/// `|f|_H^2 = a^T K_c a` evaluated from kernel calls.
fn norm_oracle(f: &RkhsFunction) -> f64 {
    let basis = f.basis();
    let c = basis.centers();
    let a = f.coeffs();
    let mut q = 0.0;
    for i in 0..c.len() {
        for j in 0..c.len() {
            q += a[i] * a[j] * basis.kernel().eval(&c[i], &c[j]).expect("eval");
        }
    }
    q.max(0.0).sqrt()
}

fn difference_norm(f: &RkhsFunction, g: &RkhsFunction) -> f64 {
    let diff = RkhsFunction::new(
        f.basis().clone(),
        (f.coeffs() - g.coeffs()).iter().copied().collect(),
    )
    .expect("same basis");
    norm_oracle(&diff)
}

fn budget_conformance() -> Outcome {
    let mut failures = 0;
    let mut worst_slack = f64::INFINITY;
    for i in 0..100u64 {
        let mut rng = seed::rng(seed::derive(1111, i));
        let t = rng.random_range(2..=300);
        let b = rng.random_range(0.2..3.0);
        let dim = rng.random_range(1..=2);
        let kernel = if i % 2 == 0 {
            Kernel::squared_exponential(rng.random_range(0.1..0.5)).expect("kernel")
        } else {
            Kernel::matern(MaternNu::FiveHalves, rng.random_range(0.1..0.5)).expect("kernel")
        };
        let domain = Domain::grid(vec![0.0; dim], vec![1.0; dim], 5).expect("domain");
        let count = rng.random_range(2..=15);
        let basis = CenterBasis::sample(kernel, &domain, count, &mut rng).expect("basis");
        let schedule = match i % 3 {
            0 => DriftSchedule::stationary(b),
            1 => {
                let switches = rng.random_range(1..=(t - 1).min(5));
                let mut times: Vec<usize> = (2..=t).collect();
                for k in (1..times.len()).rev() {
                    times.swap(k, rng.random_range(0..=k));
                }
                let mut times: Vec<usize> = times.into_iter().take(switches).collect();
                times.sort_unstable();
                let magnitude = rng.random_range(0.0..=2.0 * b);
                DriftSchedule {
                    kind: DriftKind::AbruptSwitch { times, magnitude },
                    norm_bound: b,
                    budget: switches as f64 * magnitude + rng.random_range(0.0..0.5),
                }
            }
            _ => DriftSchedule::rotation_filling_budget(b, rng.random_range(0.0..10.0), t),
        };
        let seq = generate_sequence(&schedule, &basis, t, rng.random()).expect("sequence");
        let variation: f64 = seq.windows(2).map(|w| difference_norm(&w[1], &w[0])).sum();
        let max_norm = seq.iter().map(norm_oracle).fold(0.0, f64::max);
        let ok = variation <= schedule.budget + BUDGET_TOL
            && max_norm <= b + BUDGET_TOL
            && seq.len() == t;
        worst_slack = worst_slack.min((schedule.budget - variation).min(b - max_norm));
        failures += usize::from(!ok);
    }
    check(
        failures == 0,
        format!("{failures} of 100 sequences out of bounds; min slack {worst_slack:.2e} (tol {BUDGET_TOL:.0e})"),
    )
}

fn block_audit() -> Outcome {
    let mut violations = 0;
    let mut non_exhaustive = 0;
    let mut blocks = 0;
    for i in 0..100u64 {
        let mut rng = seed::rng(seed::derive(1212, i));
        let g = rng.random_range(2..=4);
        let h = rng.random_range(1..=5);
        let lambda = [0.1, 0.5, 1.0][(i % 3) as usize];
        let config = ExperimentConfig::parse(
            ABRUPT,
            &[
                format!("domain.resolution={g}"),
                "environment.schedule=stationary".into(),
                "environment.P_T=0.0".into(),
                "environment.R=0.1".into(),
                "environment.centers=3".into(),
                format!("environment.seed={i}"),
                "policy.variant=restart".into(),
                format!("policy.H={h}"),
                format!("policy.lambda={lambda}"),
                "run.T=40".into(),
            ],
        )
        .expect("config");
        let exp = config.to_experiment().expect("experiment");
        let record = exp.run_episode(rng.random()).expect("episode");
        let audit = block_inequality_audit(&record, &exp.candidates, GammaOracle::BestAvailable)
            .expect("audit");
        non_exhaustive += usize::from(audit.gamma_method != InfoGainMethod::Exhaustive.as_str());
        violations += audit.blocks.iter().filter(|b| !b.variance_ok).count();
        blocks += audit.blocks.len();
    }
    check(
        violations == 0 && non_exhaustive == 0,
        format!("{violations} violations over {blocks} blocks in 100 runs; runs without exhaustive gamma: {non_exhaustive}"),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 12] = [
        (
            "posterior matches primal ridge regression",
            posterior_oracle,
        ),
        ("kernel and feature-space identities", feature_identities),
        ("operator-norm bound on restart blocks", operator_norm_audit),
        (
            "greedy versus exhaustive information gain",
            information_gain_oracle,
        ),
        ("confidence coverage", confidence_coverage),
        ("self-normalized bound", self_normalized_bound),
        ("dynamic-regret separation", regret_separation),
        ("sublinear regret with auto H", sublinearity),
        ("U-shaped regret in H", u_shape),
        ("equivalence and determinism", equivalence_and_determinism),
        ("environment budget conformance", budget_conformance),
        ("per-block variance sum", block_audit),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = run();
        let tag = if outcome.pass { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {tag}: {name}: {}", i + 1, outcome.detail);
        failed += usize::from(!outcome.pass);
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
