//! Episodes, dynamic regret, confidence-coverage experiments, sweeps and the
//! per-block audit of restart runs.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::environment::{
    generate_sequence, CenterBasis, DriftKind, DriftSchedule, Environment, NoiseModel,
};
use crate::error::{Error, Result};
use crate::feature_space::drift_prefactor;
use crate::infogain::{best_available, greedy_curve};
use crate::kernels::{CandidateSet, Domain, Point};
use crate::linalg::logdet_regularized;
use crate::policies::{
    recommended_horizon, BetaForm, GammaMode, Policy, PolicyConfig, PolicyVariant,
};
use crate::seed;

/// Where the environment's kernel centers come from.
#[derive(Debug, Clone, PartialEq)]
pub enum CenterSpec {
    /// `count` points drawn uniformly from the domain box (or unit ball).
    Sampled(usize),
    Explicit(Vec<Point>),
}

/// Horizon-independent description of a drift schedule.
#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleSpec {
    Stationary,
    /// Jumps at `times` (default: one flip at `T / 2 + 1` when `T >= 2`), each of chord
    /// `magnitude` (default: `min(P_T / #switches, 2B)`).
    Abrupt {
        times: Option<Vec<usize>>,
        magnitude: Option<f64>,
    },
    /// Rotation by `step_angle` per step (default: the angle spending `P_T`).
    Rotation {
        step_angle: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub schedule: ScheduleSpec,
    pub norm_bound: f64,
    pub budget: f64,
    pub centers: CenterSpec,
    pub noise: NoiseModel,
    pub seed: u64,
}

impl EnvSpec {
    pub fn drift_schedule(&self, horizon: usize) -> Result<DriftSchedule> {
        let b = self.norm_bound;
        let schedule = match &self.schedule {
            ScheduleSpec::Stationary => DriftSchedule {
                kind: DriftKind::Stationary,
                norm_bound: b,
                budget: self.budget,
            },
            ScheduleSpec::Abrupt { times, magnitude } => {
                let times = times.clone().unwrap_or_else(|| {
                    // No switch fits in a single-step horizon.
                    if horizon >= 2 {
                        vec![horizon / 2 + 1]
                    } else {
                        Vec::new()
                    }
                });
                let magnitude = magnitude
                    .unwrap_or_else(|| (self.budget / times.len().max(1) as f64).min(2.0 * b));
                DriftSchedule {
                    kind: DriftKind::AbruptSwitch { times, magnitude },
                    norm_bound: b,
                    budget: self.budget,
                }
            }
            ScheduleSpec::Rotation {
                step_angle: Some(step_angle),
            } => DriftSchedule {
                kind: DriftKind::SmoothRotation {
                    step_angle: *step_angle,
                },
                norm_bound: b,
                budget: self.budget,
            },
            ScheduleSpec::Rotation { step_angle: None } => {
                DriftSchedule::rotation_filling_budget(b, self.budget, horizon)
            }
        };
        schedule.validate(horizon)?;
        Ok(schedule)
    }
}

/// Restart interval or window length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowSpec {
    Fixed(usize),
    /// Resolved with [`recommended_horizon`] from the greedy `gamma_T`.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariantSpec {
    Stationary,
    Restart(WindowSpec),
    SlidingWindow(WindowSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySpec {
    pub variant: VariantSpec,
    pub norm_bound: f64,
    pub noise_scale: f64,
    pub lambda: f64,
    pub delta: f64,
    pub gamma_mode: GammaMode,
    pub beta_form: BetaForm,
    /// Whether `auto` windows may use the environment's `P_T`.
    pub budget_known: bool,
}

/// A fully specified experiment: grid, environment, policy and horizon.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub candidates: Arc<CandidateSet>,
    pub domain: Domain,
    pub env: EnvSpec,
    pub policy: PolicySpec,
    pub horizon: usize,
    /// Overrides the default fingerprint (hash of the debug form).
    pub fingerprint: Option<String>,
}

impl Experiment {
    pub fn fingerprint(&self) -> String {
        if let Some(f) = &self.fingerprint {
            return f.clone();
        }
        let repr = format!(
            "{:?}|{:?}|{:?}|{:?}|{}",
            self.candidates.kernel(),
            self.candidates.points(),
            self.env,
            self.policy,
            self.horizon
        );
        hex::encode(Sha256::digest(repr.as_bytes()))
    }

    /// Resolves `auto` windows and precomputes what every episode shares.
    pub fn prepare(&self) -> Result<Prepared> {
        if self.horizon == 0 {
            return Err(Error::invalid("T", "must be >= 1"));
        }
        let schedule = self.env.drift_schedule(self.horizon)?;
        let p = &self.policy;
        let needs_full_curve = matches!(
            p.variant,
            VariantSpec::Restart(WindowSpec::Auto) | VariantSpec::SlidingWindow(WindowSpec::Auto)
        );
        let mut gamma_t = None;
        let mut curve: Option<Vec<f64>> = None;
        if needs_full_curve {
            let c = greedy_curve(&self.candidates, self.horizon, p.lambda)?;
            gamma_t = Some(c[self.horizon]);
            curve = Some(c);
        }
        let budget = p.budget_known.then_some(self.env.budget);
        let resolve = |w: WindowSpec| match w {
            WindowSpec::Fixed(n) => n,
            WindowSpec::Auto => recommended_horizon(gamma_t.unwrap_or(0.0), self.horizon, budget),
        };
        let variant = match p.variant {
            VariantSpec::Stationary => PolicyVariant::Stationary,
            VariantSpec::Restart(w) => PolicyVariant::Restart { h: resolve(w) },
            VariantSpec::SlidingWindow(w) => PolicyVariant::SlidingWindow { w: resolve(w) },
        };
        let config = PolicyConfig {
            variant,
            norm_bound: p.norm_bound,
            noise_scale: p.noise_scale,
            lambda: p.lambda,
            delta: p.delta,
            horizon: self.horizon,
            gamma_mode: p.gamma_mode,
            beta_form: p.beta_form,
        };
        config.validate()?;
        let gamma_curve = match p.gamma_mode {
            GammaMode::Realized => None,
            GammaMode::Greedy => {
                let n = variant.max_window(self.horizon);
                let c = match curve {
                    Some(mut c) => {
                        c.truncate(n + 1);
                        c
                    }
                    None => greedy_curve(&self.candidates, n, p.lambda)?,
                };
                Some(Arc::from(c))
            }
        };
        let resolved_window = match variant {
            PolicyVariant::Stationary => None,
            PolicyVariant::Restart { h } => Some(h),
            PolicyVariant::SlidingWindow { w } => Some(w),
        };
        Ok(Prepared {
            experiment: self.clone(),
            schedule,
            config,
            gamma_curve,
            gamma_t,
            resolved_window,
            fingerprint: self.fingerprint(),
        })
    }

    pub fn run_episode(&self, seed: u64) -> Result<RunRecord> {
        self.prepare()?.run_episode(seed)
    }
}

/// An experiment with its per-episode invariants computed once.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub experiment: Experiment,
    pub schedule: DriftSchedule,
    pub config: PolicyConfig,
    pub gamma_curve: Option<Arc<[f64]>>,
    /// Greedy `gamma_T` used for `auto` windows.
    pub gamma_t: Option<f64>,
    pub resolved_window: Option<usize>,
    pub fingerprint: String,
}

impl Prepared {
    /// Oblivious function sequence and noise stream for one episode seed.
    pub fn environment(&self, episode_seed: u64) -> Result<Environment> {
        let exp = &self.experiment;
        let stream = seed::derive(exp.env.seed, episode_seed);
        let kernel = exp.candidates.kernel().clone();
        let basis = match &exp.env.centers {
            CenterSpec::Explicit(points) => CenterBasis::new(kernel, points.clone())?,
            CenterSpec::Sampled(count) => {
                let mut rng = seed::rng(seed::derive(stream, 0));
                CenterBasis::sample(kernel, &exp.domain, *count, &mut rng)?
            }
        };
        let functions =
            generate_sequence(&self.schedule, &basis, exp.horizon, seed::derive(stream, 1))?;
        Environment::new(
            functions,
            exp.candidates.clone(),
            exp.env.noise,
            seed::derive(stream, 2),
        )
    }

    pub fn policy(&self) -> Result<Policy> {
        Policy::with_gamma_curve(
            self.config.clone(),
            self.experiment.candidates.clone(),
            self.gamma_curve.clone(),
        )
    }

    pub fn run_episode(&self, episode_seed: u64) -> Result<RunRecord> {
        let mut env = self.environment(episode_seed)?;
        let policy = self.policy()?;
        let mut record = run_with(policy, &mut env)?;
        record.seed = episode_seed;
        record.fingerprint = self.fingerprint.clone();
        record.resolved_window = self.resolved_window;
        Ok(record)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub index: usize,
    pub x: Point,
    pub y: f64,
    pub f_xt: f64,
    pub f_star: f64,
    pub regret: f64,
    pub beta: f64,
    pub sigma: f64,
    pub window_len: usize,
    pub reset: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub steps: Vec<StepRecord>,
    pub regret_total: f64,
    pub sigma2_sum: f64,
    pub wall_time_secs: f64,
    pub fingerprint: String,
    pub seed: u64,
    pub policy: String,
    /// Restart interval or window length when the policy has one.
    pub resolved_window: Option<usize>,
    pub lambda: f64,
}

impl RunRecord {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn queries(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.index).collect()
    }

    /// Per-step CSV, `t,x0..,y,f_xt,f_star,regret,beta,sigma,window_len,reset`.
    pub fn to_csv(&self) -> String {
        let dim = self.steps.first().map_or(1, |s| s.x.len());
        let mut out = String::from("t");
        for j in 0..dim {
            let _ = write!(out, ",x{j}");
        }
        out.push_str(",y,f_xt,f_star,regret,beta,sigma,window_len,reset\n");
        for s in &self.steps {
            let _ = write!(out, "{}", s.t);
            for v in &s.x {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(
                out,
                ",{},{},{},{},{},{},{},{}",
                s.y,
                s.f_xt,
                s.f_star,
                s.regret,
                s.beta,
                s.sigma,
                s.window_len,
                u8::from(s.reset)
            );
        }
        out
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "fingerprint": self.fingerprint,
            "seed": self.seed,
            "policy": self.policy,
            "window": self.resolved_window,
            "T": self.horizon(),
            "regret_T": self.regret_total,
            "sigma2_sum": self.sigma2_sum,
            "wall_time_secs": self.wall_time_secs,
        })
    }
}

/// The select, sample, update loop over the environment's full horizon.
pub fn run_with(mut policy: Policy, env: &mut Environment) -> Result<RunRecord> {
    let start = Instant::now();
    let horizon = env.horizon();
    let candidates = env.candidates().clone();
    let mut steps = Vec::with_capacity(horizon);
    let mut regret_total = 0.0;
    let mut sigma2_sum = 0.0;
    for t in 1..=horizon {
        let sel = policy.select();
        let values = env.values_on_grid(t)?;
        let f_star = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let f_xt = values[sel.index];
        let y = env.sample_reward(sel.index)?;
        if !y.is_finite() {
            return Err(Error::NonFinite);
        }
        let regret = (f_star - f_xt).max(0.0);
        regret_total += regret;
        sigma2_sum += sel.sigma * sel.sigma;
        steps.push(StepRecord {
            t,
            index: sel.index,
            x: candidates.point(sel.index).to_vec(),
            y,
            f_xt,
            f_star,
            regret,
            beta: sel.beta,
            sigma: sel.sigma,
            window_len: sel.window_len,
            reset: sel.reset,
        });
        policy.update(sel.index, y);
        env.advance();
    }
    let config = policy.config();
    Ok(RunRecord {
        steps,
        regret_total,
        sigma2_sum,
        wall_time_secs: start.elapsed().as_secs_f64(),
        fingerprint: String::new(),
        seed: 0,
        policy: config.variant.name().to_string(),
        resolved_window: match config.variant {
            PolicyVariant::Stationary => None,
            PolicyVariant::Restart { h } => Some(h),
            PolicyVariant::SlidingWindow { w } => Some(w),
        },
        lambda: config.lambda,
    })
}

/// Runs `seeds` in parallel; results keep the order of `seeds`.
pub fn run_many(prepared: &Prepared, seeds: &[u64]) -> Result<Vec<RunRecord>> {
    seeds.par_iter().map(|&s| prepared.run_episode(s)).collect()
}

/// Drift allowance added to `beta_t sigma_{t-1}(x)` in coverage tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftMode {
    /// No drift allowance.
    None,
    /// `xi_H sum_{s=t0}^{t-1} |f_s - f_{s+1}|_H` with `xi_H = (1/lambda) sqrt(2 H (1+lambda) gamma_H)`.
    Restart,
    /// `sum_{s=t0}^{t-1} |f_s - f_{s+1}|_H` with unit prefactor.
    Window,
}

impl DriftMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(DriftMode::None),
            "restart" => Some(DriftMode::Restart),
            "window" => Some(DriftMode::Window),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverageReport {
    pub n_runs: usize,
    pub delta: f64,
    pub drift_mode: DriftMode,
    pub drift_term: String,
    /// Drift prefactor used (1 for the window mode, 0 for none).
    pub prefactor: f64,
    /// Per run: any violation at any `t` and grid point, drift term included.
    pub violated: Vec<bool>,
    pub violation_rate: f64,
    /// The same runs with the drift term dropped.
    pub violated_without_drift: Vec<bool>,
    pub violation_rate_without_drift: f64,
    /// `delta + 3 sqrt(delta (1 - delta) / n_runs)`.
    pub tolerance: f64,
    /// Largest `|mu - f| / (drift + beta sigma)` seen in any run.
    pub max_ratio: f64,
}

impl CoverageReport {
    pub fn passes(&self) -> bool {
        self.violation_rate <= self.tolerance
    }
}

/// Monte-Carlo check of `|mu_{t-1}(x) - f_t(x)| <= drift + beta_t sigma_{t-1}(x)`
/// at every step and every grid point. The policy uses `delta` in place of
/// its configured value.
pub fn coverage_test(
    experiment: &Experiment,
    delta: f64,
    n_runs: usize,
    mode: DriftMode,
    master_seed: u64,
) -> Result<CoverageReport> {
    if n_runs < 100 {
        return Err(Error::invalid(
            "n_runs",
            format!("must be >= 100, got {n_runs}"),
        ));
    }
    let mut exp = experiment.clone();
    exp.policy.delta = delta;
    let prepared = exp.prepare()?;
    let lambda = prepared.config.lambda;
    let h = prepared.config.variant.max_window(exp.horizon);
    let (prefactor, drift_term) = match mode {
        DriftMode::None => (0.0, "none".to_string()),
        DriftMode::Restart => {
            let gamma_h = greedy_curve(&exp.candidates, h, lambda)?[h];
            (
                drift_prefactor(lambda, h, gamma_h),
                format!("(1/lambda) sqrt(2 H (1+lambda) gamma_H) * sum |f_s - f_(s+1)|, H = {h}, greedy gamma_H = {gamma_h}"),
            )
        }
        DriftMode::Window => (1.0, "sum_(s=t0)^(t-1) |f_s - f_(s+1)|".to_string()),
    };
    let seeds = seed::episode_seeds(master_seed, n_runs);
    let outcomes: Vec<(bool, bool, f64)> = seeds
        .par_iter()
        .map(|&s| coverage_run(&prepared, s, prefactor))
        .collect::<Result<_>>()?;
    let violated: Vec<bool> = outcomes.iter().map(|o| o.0).collect();
    let violated_without_drift: Vec<bool> = outcomes.iter().map(|o| o.1).collect();
    let max_ratio = outcomes.iter().map(|o| o.2).fold(0.0, f64::max);
    let rate = |v: &[bool]| v.iter().filter(|&&b| b).count() as f64 / v.len() as f64;
    Ok(CoverageReport {
        n_runs,
        delta,
        drift_mode: mode,
        drift_term,
        prefactor,
        violation_rate: rate(&violated),
        violation_rate_without_drift: rate(&violated_without_drift),
        violated,
        violated_without_drift,
        tolerance: delta + 3.0 * (delta * (1.0 - delta) / n_runs as f64).sqrt(),
        max_ratio,
    })
}

const COVERAGE_SLACK: f64 = 1e-9;

fn coverage_run(
    prepared: &Prepared,
    episode_seed: u64,
    prefactor: f64,
) -> Result<(bool, bool, f64)> {
    let mut env = prepared.environment(episode_seed)?;
    let mut policy = prepared.policy()?;
    let mut with_drift = false;
    let mut without_drift = false;
    let mut max_ratio = 0.0f64;
    for t in 1..=env.horizon() {
        let sel = policy.select();
        let drift = prefactor * env.drift_between(policy.window_start(), t);
        let values = env.values_on_grid(t)?;
        let post = policy.posterior();
        for (g, f) in values.iter().enumerate() {
            let err = (post.mean(g) - f).abs();
            let width = sel.beta * post.std(g);
            without_drift |= err > width + COVERAGE_SLACK;
            with_drift |= err > width + drift + COVERAGE_SLACK;
            let denom = width + drift;
            if denom > 0.0 {
                max_ratio = max_ratio.max(err / denom);
            } else if err > COVERAGE_SLACK {
                max_ratio = f64::INFINITY;
            }
        }
        let y = env.sample_reward(sel.index)?;
        policy.update(sel.index, y);
        env.advance();
    }
    Ok((with_drift, without_drift, max_ratio))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    #[serde(rename = "H")]
    H,
    #[serde(rename = "w")]
    W,
    #[serde(rename = "P_T")]
    PT,
    #[serde(rename = "T")]
    T,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "H" => Some(SweepAxis::H),
            "w" => Some(SweepAxis::W),
            "P_T" => Some(SweepAxis::PT),
            "T" => Some(SweepAxis::T),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::H => "H",
            SweepAxis::W => "w",
            SweepAxis::PT => "P_T",
            SweepAxis::T => "T",
        }
    }
}

fn as_count(name: &'static str, v: f64) -> Result<usize> {
    if v.is_finite() && v >= 1.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(Error::invalid(
            name,
            format!("sweep value {v} must be a positive integer"),
        ))
    }
}

/// `base` with one axis set to `value`.
pub fn with_axis(base: &Experiment, axis: SweepAxis, value: f64) -> Result<Experiment> {
    let mut exp = base.clone();
    exp.fingerprint = None;
    match axis {
        SweepAxis::H => {
            exp.policy.variant = VariantSpec::Restart(WindowSpec::Fixed(as_count("H", value)?))
        }
        SweepAxis::W => {
            exp.policy.variant =
                VariantSpec::SlidingWindow(WindowSpec::Fixed(as_count("w", value)?))
        }
        SweepAxis::PT => {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::invalid(
                    "P_T",
                    format!("sweep value {value} must be >= 0"),
                ));
            }
            exp.env.budget = value;
        }
        SweepAxis::T => exp.horizon = as_count("T", value)?,
    }
    Ok(exp)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub seed: u64,
    pub regret_t: f64,
    /// Standard error of the cell mean this row belongs to.
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub value: f64,
    pub resolved_window: Option<usize>,
    pub regrets: Vec<f64>,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
    pub cells: Vec<SweepCell>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("axis,value,seed,regret_T,stderr\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.axis.as_str(),
                r.value,
                r.seed,
                r.regret_t,
                r.stderr
            );
        }
        out
    }

    /// Cell with the smallest mean regret (first on ties).
    pub fn argmin(&self) -> Option<&SweepCell> {
        self.cells
            .iter()
            .fold(None, |best: Option<&SweepCell>, c| match best {
                Some(b) if b.mean <= c.mean => Some(b),
                _ => Some(c),
            })
    }
}

/// Sample mean and standard error (`n - 1` denominator; 0 for a single value).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Mean and standard error of `R(T)` per value of `axis`.
pub fn sweep(
    base: &Experiment,
    axis: SweepAxis,
    values: &[f64],
    seeds: &[u64],
) -> Result<SweepTable> {
    if values.is_empty() || seeds.is_empty() {
        return Err(Error::invalid(
            "sweep",
            "needs at least one value and one seed",
        ));
    }
    let prepared: Vec<Prepared> = values
        .par_iter()
        .map(|&v| with_axis(base, axis, v)?.prepare())
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, u64)> = (0..values.len())
        .flat_map(|i| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let regrets: Vec<f64> = jobs
        .par_iter()
        .map(|&(i, s)| prepared[i].run_episode(s).map(|r| r.regret_total))
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(jobs.len());
    let mut cells = Vec::with_capacity(values.len());
    for (i, &value) in values.iter().enumerate() {
        let cell_regrets = regrets[i * seeds.len()..(i + 1) * seeds.len()].to_vec();
        let (mean, stderr) = mean_stderr(&cell_regrets);
        for (&s, &r) in seeds.iter().zip(&cell_regrets) {
            rows.push(SweepRow {
                axis,
                value,
                seed: s,
                regret_t: r,
                stderr,
            });
        }
        cells.push(SweepCell {
            value,
            resolved_window: prepared[i].resolved_window,
            regrets: cell_regrets,
            mean,
            stderr,
        });
    }
    Ok(SweepTable { axis, rows, cells })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Source of `gamma_H` in the block audit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaOracle {
    /// Exhaustive when feasible, greedy otherwise.
    BestAvailable,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockCheck {
    pub start: usize,
    pub len: usize,
    pub sigma2_sum: f64,
    pub sigma_sum: f64,
    /// Half log-determinant of the block's own queries.
    pub realized_gamma: f64,
    pub gamma: f64,
    pub variance_bound: f64,
    pub sum_bound: f64,
    pub variance_ok: bool,
    pub sum_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockAudit {
    pub horizon_h: usize,
    pub lambda: f64,
    pub gamma_oracle: f64,
    pub gamma_method: String,
    pub blocks: Vec<BlockCheck>,
    /// Whether `sum sigma <= sqrt(4 (H + 2) gamma_H)` is implied at this `lambda`.
    pub sum_bound_applicable: bool,
    pub violations: usize,
}

impl BlockAudit {
    pub fn passes(&self) -> bool {
        self.violations == 0
    }
}

/// Largest `lambda` for which the summed-width inequality follows from the
/// variance inequality for every block.
pub fn sum_bound_lambda_limit() -> f64 {
    1.0 / (0.5f64.exp() - 1.0)
}

const AUDIT_SLACK: f64 = 1e-9;

/// Per restart block: `sum sigma^2 <= 2 (1 + lambda) gamma` and
/// `sum sigma <= sqrt(4 (H + 2) gamma)`.
///
/// `gamma` is the larger of the oracle `gamma_H` and the block's realized
/// half log-determinant, which never exceeds the true `gamma_H`.
pub fn block_inequality_audit(
    record: &RunRecord,
    candidates: &Arc<CandidateSet>,
    oracle: GammaOracle,
) -> Result<BlockAudit> {
    let lambda = record.lambda;
    let h = record.resolved_window.unwrap_or(record.horizon()).max(1);
    let (gamma_oracle, gamma_method) = match oracle {
        GammaOracle::Fixed(g) => (g, "fixed".to_string()),
        GammaOracle::BestAvailable => {
            let est = best_available(candidates, h, lambda)?;
            (est.value, est.method.as_str().to_string())
        }
    };
    let sum_bound_applicable = lambda <= sum_bound_lambda_limit();
    let mut blocks = Vec::new();
    let mut start = 0;
    while start < record.steps.len() {
        let mut end = start + 1;
        while end < record.steps.len() && !record.steps[end].reset {
            end += 1;
        }
        blocks.push(audit_block(
            record,
            candidates,
            start,
            end,
            h,
            lambda,
            gamma_oracle,
        )?);
        start = end;
    }
    let violations = blocks
        .iter()
        .filter(|b| !b.variance_ok || (sum_bound_applicable && !b.sum_ok))
        .count();
    Ok(BlockAudit {
        horizon_h: h,
        lambda,
        gamma_oracle,
        gamma_method,
        blocks,
        sum_bound_applicable,
        violations,
    })
}

fn audit_block(
    record: &RunRecord,
    candidates: &Arc<CandidateSet>,
    start: usize,
    end: usize,
    h: usize,
    lambda: f64,
    gamma_oracle: f64,
) -> Result<BlockCheck> {
    let steps = &record.steps[start..end];
    let indices: Vec<usize> = steps.iter().map(|s| s.index).collect();
    let realized_gamma = 0.5 * logdet_regularized(&candidates.sub_gram(&indices), lambda)?;
    let gamma = gamma_oracle.max(realized_gamma);
    let sigma2_sum: f64 = steps.iter().map(|s| s.sigma * s.sigma).sum();
    let sigma_sum: f64 = steps.iter().map(|s| s.sigma).sum();
    let variance_bound = 2.0 * (1.0 + lambda) * gamma;
    let sum_bound = (4.0 * (h as f64 + 2.0) * gamma).sqrt();
    Ok(BlockCheck {
        start: start + 1,
        len: steps.len(),
        sigma2_sum,
        sigma_sum,
        realized_gamma,
        gamma,
        variance_bound,
        sum_bound,
        variance_ok: sigma2_sum <= variance_bound + AUDIT_SLACK,
        sum_ok: sigma_sum <= sum_bound + AUDIT_SLACK,
    })
}

/// Worst agreement seen by [`identity_suite`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityReport {
    pub instances: usize,
    pub max_sigma_error: f64,
    pub max_logdet_error: f64,
    pub tolerance: f64,
}

impl IdentityReport {
    pub fn passes(&self) -> bool {
        self.max_sigma_error <= self.tolerance && self.max_logdet_error <= self.tolerance
    }
}

fn unit_ball_point(rng: &mut rand_chacha::ChaCha8Rng, d: usize) -> Point {
    use rand::Rng;
    let p: Point = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = crate::kernels::norm(&p);
    if n > 1.0 {
        p.iter().map(|v| v / n).collect()
    } else {
        p
    }
}

/// Kernel versus feature-space forms of the posterior variance and the
/// log-determinant on random exact-feature instances: linear kernels in
/// dimensions 1 to 5 and finite cosine expansions in one dimension.
pub fn identity_suite(
    instances: usize,
    master_seed: u64,
    tolerance: f64,
) -> Result<IdentityReport> {
    use crate::feature_space::{logdet_identity_check, sigma_identity_check, FeatureMap};
    use crate::kernels::{FiniteBasis, Kernel};
    use crate::posterior::Dataset;
    use rand::Rng;

    let mut max_sigma_error = 0.0f64;
    let mut max_logdet_error = 0.0f64;
    for i in 0..instances {
        let mut rng = seed::rng(seed::derive(master_seed, i as u64));
        let lambda = [0.1, 1.0, 10.0][i % 3];
        let n = rng.random_range(1..=30);
        let (map, points, x) = if i % 2 == 0 {
            let d = rng.random_range(1..=5);
            let map = FeatureMap::exact_for(&Kernel::linear(), d)?;
            let points: Vec<Point> = (0..n).map(|_| unit_ball_point(&mut rng, d)).collect();
            (map, points, unit_ball_point(&mut rng, d))
        } else {
            let terms = rng.random_range(1..=6);
            let kernel = Kernel::finite_feature(FiniteBasis::cosine_1d(terms)?);
            let map = FeatureMap::exact_for(&kernel, 1)?;
            let points: Vec<Point> = (0..n).map(|_| vec![rng.random_range(0.0..1.0)]).collect();
            (map, points, vec![rng.random_range(0.0..1.0)])
        };
        let data = Dataset::from_pairs(points.into_iter().map(|p| (p, 0.0)));
        let (a, b) = sigma_identity_check(&map, &data, lambda, &x)?;
        max_sigma_error = max_sigma_error.max((a - b).abs());
        let (a, b) = logdet_identity_check(&map, &data, lambda)?;
        max_logdet_error = max_logdet_error.max((a - b).abs());
    }
    Ok(IdentityReport {
        instances,
        max_sigma_error,
        max_logdet_error,
        tolerance,
    })
}

/// Greedy against exhaustive information gain on tiny grids.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfoGainReport {
    pub instances: usize,
    /// Instances where `t = 1` greedy and exhaustive differ.
    pub first_step_mismatches: usize,
    /// Instances outside `(1 - 1/e) exhaustive <= greedy <= exhaustive`.
    pub ratio_violations: usize,
    pub min_ratio: f64,
    /// `|exhaustive - (d/2) ln 2|` on orthonormal linear instances.
    pub orthonormal_error: f64,
}

impl InfoGainReport {
    pub fn passes(&self) -> bool {
        self.first_step_mismatches == 0
            && self.ratio_violations == 0
            && self.orthonormal_error <= 1e-10
    }
}

/// Random grids of at most 5 points and `t <= 4` for `kernel`, plus the
/// orthonormal linear instances `{e_1, ..., e_d}` with `t = d`, `lambda = 1`.
pub fn infogain_suite(
    kernel: &crate::kernels::Kernel,
    dim: usize,
    instances: usize,
    master_seed: u64,
) -> Result<InfoGainReport> {
    use crate::infogain::exhaustive_max_info_gain;
    use crate::kernels::Kernel;
    use rand::Rng;

    let slack = 1e-12;
    let mut first_step_mismatches = 0;
    let mut ratio_violations = 0;
    let mut min_ratio = f64::INFINITY;
    for i in 0..instances {
        let mut rng = seed::rng(seed::derive(master_seed, i as u64));
        let g = rng.random_range(1..=5);
        let t = rng.random_range(1..=4);
        let lambda = [0.1, 1.0, 10.0][i % 3];
        let points: Vec<Point> = (0..g).map(|_| unit_ball_point(&mut rng, dim)).collect();
        let cands = Arc::new(CandidateSet::new(kernel.clone(), points)?);
        let curve = greedy_curve(&cands, t, lambda)?;
        if curve[1] != exhaustive_max_info_gain(&cands, 1, lambda)?.value {
            first_step_mismatches += 1;
        }
        let exh = exhaustive_max_info_gain(&cands, t, lambda)?.value;
        let greedy = curve[t];
        let lower = (1.0 - (-1.0f64).exp()) * exh;
        if greedy < lower - slack || greedy > exh + slack {
            ratio_violations += 1;
        }
        if exh > 0.0 {
            min_ratio = min_ratio.min(greedy / exh);
        }
    }
    let mut orthonormal_error = 0.0f64;
    for d in 1..=4 {
        let basis: Vec<Point> = (0..d)
            .map(|j| (0..d).map(|k| if j == k { 1.0 } else { 0.0 }).collect())
            .collect();
        let cands = CandidateSet::new(Kernel::linear(), basis)?;
        let exh = exhaustive_max_info_gain(&cands, d, 1.0)?.value;
        orthonormal_error = orthonormal_error.max((exh - 0.5 * d as f64 * 2f64.ln()).abs());
    }
    Ok(InfoGainReport {
        instances,
        first_step_mismatches,
        ratio_violations,
        min_ratio,
        orthonormal_error,
    })
}
