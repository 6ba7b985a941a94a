//! Drifting reward functions in the RKHS and noisy bandit feedback.
//!
//! Every function of a sequence is a finite expansion `f = sum_i a_i k(., c_i)`
//! over one shared center set, so norms and distances are quadratic forms in
//! the coefficients: `|f|_H^2 = a^T K_c a`.
//!
//! Drifting schedules move along a great circle
//! `f(theta) = B (cos(theta) u + sin(theta) v)` with `u`, `v` orthonormal in
//! the RKHS inner product, so a step of angle `d` has length `2 B sin(d / 2)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{argmax, CandidateSet, Domain, Kernel, Point};
use crate::seed;

/// Slack for the post-hoc budget and norm verification.
pub const BUDGET_SLACK: f64 = 1e-9;

/// Shared center set with its Gram matrix.
#[derive(Debug)]
pub struct CenterBasis {
    kernel: Kernel,
    centers: Vec<Point>,
    gram: DMatrix<f64>,
}

impl CenterBasis {
    pub fn new(kernel: Kernel, centers: Vec<Point>) -> Result<Arc<Self>> {
        if centers.is_empty() {
            return Err(Error::invalid("centers", "at least one center required"));
        }
        let gram = kernel.gram(&centers)?;
        Ok(Arc::new(Self {
            kernel,
            centers,
            gram,
        }))
    }

    /// `count` centers drawn uniformly from the domain.
    pub fn sample(
        kernel: Kernel,
        domain: &Domain,
        count: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Arc<Self>> {
        let centers = (0..count).map(|_| domain.sample(rng)).collect();
        Self::new(kernel, centers)
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn centers(&self) -> &[Point] {
        &self.centers
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    fn quad(&self, a: &DVector<f64>) -> f64 {
        a.dot(&(&self.gram * a)).max(0.0)
    }

    fn inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        a.dot(&(&self.gram * b))
    }
}

/// `f = sum_i alpha_i k(., c_i)`.
#[derive(Debug, Clone)]
pub struct RkhsFunction {
    basis: Arc<CenterBasis>,
    coeffs: DVector<f64>,
}

impl RkhsFunction {
    pub fn new(basis: Arc<CenterBasis>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != basis.len() {
            return Err(Error::DimensionMismatch {
                expected: basis.len(),
                got: coeffs.len(),
            });
        }
        if !coeffs.iter().all(|c| c.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            basis,
            coeffs: DVector::from_vec(coeffs),
        })
    }

    pub fn zero(basis: Arc<CenterBasis>) -> Self {
        let n = basis.len();
        Self {
            basis,
            coeffs: DVector::zeros(n),
        }
    }

    pub fn basis(&self) -> &Arc<CenterBasis> {
        &self.basis
    }

    pub fn coeffs(&self) -> &DVector<f64> {
        &self.coeffs
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.basis
            .centers
            .iter()
            .zip(self.coeffs.iter())
            .map(|(c, a)| a * self.basis.kernel.eval_unchecked(c, x))
            .sum()
    }

    /// `sqrt(alpha^T K_c alpha)`.
    pub fn rkhs_norm(&self) -> f64 {
        self.basis.quad(&self.coeffs).sqrt()
    }

    /// `|f - g|_H`; both functions must share the center basis.
    pub fn rkhs_distance(&self, other: &RkhsFunction) -> Result<f64> {
        if !Arc::ptr_eq(&self.basis, &other.basis)
            && (self.basis.centers != other.basis.centers
                || self.basis.kernel != other.basis.kernel)
        {
            return Err(Error::MismatchedCenters);
        }
        let diff = &self.coeffs - &other.coeffs;
        Ok(self.basis.quad(&diff).sqrt())
    }
}

pub fn rkhs_norm(f: &RkhsFunction) -> f64 {
    f.rkhs_norm()
}

pub fn rkhs_distance(f: &RkhsFunction, g: &RkhsFunction) -> Result<f64> {
    f.rkhs_distance(g)
}

/// Exact maximum over the grid, lowest index on ties.
pub fn oracle_max(f: &RkhsFunction, grid: &[Point]) -> Result<(usize, f64)> {
    argmax(grid.iter().map(|x| f.eval(x))).ok_or(Error::EmptyGrid)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLaw {
    Gaussian,
    /// Uniform on `[-R, R]`, which is `R`-sub-Gaussian by Hoeffding's lemma.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub scale: f64,
    pub law: NoiseLaw,
}

impl NoiseModel {
    pub fn gaussian(scale: f64) -> Self {
        Self {
            scale,
            law: NoiseLaw::Gaussian,
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.scale == 0.0 {
            return 0.0;
        }
        match self.law {
            NoiseLaw::Gaussian => {
                let z: f64 = StandardNormal.sample(rng);
                self.scale * z
            }
            NoiseLaw::Uniform => rng.random_range(-self.scale..=self.scale),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DriftKind {
    Stationary,
    /// At each listed time step `t` the function jumps along the circle by the
    /// angle whose chord has length `magnitude`; `magnitude = 2B` flips `f -> -f`.
    AbruptSwitch {
        times: Vec<usize>,
        magnitude: f64,
    },
    /// Rotation by a fixed angle per step.
    SmoothRotation {
        step_angle: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftSchedule {
    pub kind: DriftKind,
    /// RKHS norm bound `B`.
    pub norm_bound: f64,
    /// Declared variation budget `P_T`.
    pub budget: f64,
}

impl DriftSchedule {
    pub fn stationary(norm_bound: f64) -> Self {
        Self {
            kind: DriftKind::Stationary,
            norm_bound,
            budget: 0.0,
        }
    }

    /// Single flip `f -> -f` at `time`, using the budget `2B`.
    pub fn single_flip(norm_bound: f64, time: usize) -> Self {
        Self {
            kind: DriftKind::AbruptSwitch {
                times: vec![time],
                magnitude: 2.0 * norm_bound,
            },
            norm_bound,
            budget: 2.0 * norm_bound,
        }
    }

    /// Rotation whose per-step chord is `budget / (T - 1)`, exhausting `P_T`.
    pub fn rotation_filling_budget(norm_bound: f64, budget: f64, horizon: usize) -> Self {
        let steps = horizon.saturating_sub(1).max(1) as f64;
        let chord = (budget / steps).min(2.0 * norm_bound);
        let step_angle = 2.0 * (chord / (2.0 * norm_bound)).clamp(0.0, 1.0).asin();
        Self {
            kind: DriftKind::SmoothRotation { step_angle },
            norm_bound,
            budget,
        }
    }

    /// Rejects schedules that cannot meet `(B, P_T)` over `horizon` steps.
    pub fn validate(&self, horizon: usize) -> Result<()> {
        let b = self.norm_bound;
        if !(b.is_finite() && b > 0.0) {
            return Err(Error::invalid("B", format!("must be > 0, got {b}")));
        }
        if !(self.budget.is_finite() && self.budget >= 0.0) {
            return Err(Error::invalid(
                "P_T",
                format!("must be >= 0, got {}", self.budget),
            ));
        }
        if horizon == 0 {
            return Err(Error::invalid("T", "horizon must be >= 1"));
        }
        let planned = self.planned_variation(horizon);
        match &self.kind {
            DriftKind::Stationary => Ok(()),
            DriftKind::AbruptSwitch { times, magnitude } => {
                if !(magnitude.is_finite() && *magnitude >= 0.0 && *magnitude <= 2.0 * b + 1e-12) {
                    return Err(Error::InfeasibleSchedule(format!(
                        "switch magnitude {magnitude} outside [0, 2B] = [0, {}]",
                        2.0 * b
                    )));
                }
                if let Some(t) = times.iter().find(|&&t| t < 2 || t > horizon) {
                    return Err(Error::InfeasibleSchedule(format!(
                        "switch time {t} outside 2..={horizon}"
                    )));
                }
                if times.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::InfeasibleSchedule(
                        "switch times must be increasing".into(),
                    ));
                }
                if planned > self.budget + BUDGET_SLACK {
                    return Err(Error::InfeasibleSchedule(format!(
                        "switch magnitudes sum to {planned} > P_T = {}",
                        self.budget
                    )));
                }
                Ok(())
            }
            DriftKind::SmoothRotation { step_angle } => {
                if !(step_angle.is_finite() && *step_angle >= 0.0) {
                    return Err(Error::InfeasibleSchedule(format!(
                        "step angle {step_angle} must be >= 0"
                    )));
                }
                if planned > self.budget + BUDGET_SLACK {
                    return Err(Error::InfeasibleSchedule(format!(
                        "rotation travels {planned} > P_T = {}",
                        self.budget
                    )));
                }
                Ok(())
            }
        }
    }

    /// Total variation the schedule is designed to spend.
    pub fn planned_variation(&self, horizon: usize) -> f64 {
        let b = self.norm_bound;
        match &self.kind {
            DriftKind::Stationary => 0.0,
            DriftKind::AbruptSwitch { times, magnitude } => times.len() as f64 * magnitude,
            DriftKind::SmoothRotation { step_angle } => {
                horizon.saturating_sub(1) as f64 * 2.0 * b * (step_angle / 2.0).sin().abs()
            }
        }
    }

    /// Circle angle at step `t` (1-based).
    fn angles(&self, horizon: usize) -> Vec<f64> {
        match &self.kind {
            DriftKind::Stationary => vec![0.0; horizon],
            DriftKind::AbruptSwitch { times, magnitude } => {
                let jump = 2.0 * (magnitude / (2.0 * self.norm_bound)).clamp(0.0, 1.0).asin();
                let mut theta = 0.0;
                let mut next = times.iter().peekable();
                (1..=horizon)
                    .map(|t| {
                        while next.peek().is_some_and(|&&s| s == t) {
                            theta += jump;
                            next.next();
                        }
                        theta
                    })
                    .collect()
            }
            DriftKind::SmoothRotation { step_angle } => {
                (0..horizon).map(|i| i as f64 * step_angle).collect()
            }
        }
    }

    fn needs_second_direction(&self) -> bool {
        match &self.kind {
            DriftKind::Stationary => false,
            DriftKind::AbruptSwitch { magnitude, .. } => {
                (magnitude - 2.0 * self.norm_bound).abs() > 1e-12 && *magnitude > 0.0
            }
            DriftKind::SmoothRotation { step_angle } => *step_angle != 0.0,
        }
    }
}

/// Builds `u`, `v` orthonormal in the `K_c` inner product from Gaussian draws.
fn orthonormal_pair(
    basis: &CenterBasis,
    rng: &mut ChaCha8Rng,
    need_v: bool,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = basis.len();
    let draw = |rng: &mut ChaCha8Rng| {
        DVector::from_fn(n, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            z
        })
    };
    let a = draw(rng);
    let na = basis.quad(&a).sqrt();
    if na <= 1e-12 {
        return Err(Error::InfeasibleSchedule(
            "degenerate center Gram matrix".into(),
        ));
    }
    let u = a / na;
    let b = draw(rng);
    let proj = basis.inner(&b, &u);
    let b = b - &u * proj;
    // Second Gram-Schmidt pass for orthogonality at round-off level.
    let b = &b - &u * basis.inner(&b, &u);
    let nb = basis.quad(&b).sqrt();
    if nb <= 1e-9 {
        if need_v {
            return Err(Error::InfeasibleSchedule(
                "rotation needs two linearly independent directions; add centers".into(),
            ));
        }
        return Ok((u, DVector::zeros(n)));
    }
    Ok((u, b / nb))
}

/// Length-`horizon` function sequence following `schedule`.
///
/// The sequence is verified post hoc against `P_T` and `B`.
pub fn generate_sequence(
    schedule: &DriftSchedule,
    basis: &Arc<CenterBasis>,
    horizon: usize,
    seed: u64,
) -> Result<Vec<RkhsFunction>> {
    schedule.validate(horizon)?;
    let mut rng = seed::rng(seed);
    let (u, v) = orthonormal_pair(basis, &mut rng, schedule.needs_second_direction())?;
    let b = schedule.norm_bound;
    let seq: Vec<RkhsFunction> = schedule
        .angles(horizon)
        .into_iter()
        .map(|theta| RkhsFunction {
            basis: basis.clone(),
            coeffs: (&u * theta.cos() + &v * theta.sin()) * b,
        })
        .collect();
    verify_sequence(&seq, schedule.budget, b)?;
    Ok(seq)
}

/// Total variation `sum_t |f_{t+1} - f_t|_H`.
pub fn total_variation(seq: &[RkhsFunction]) -> Result<f64> {
    seq.windows(2).map(|w| w[1].rkhs_distance(&w[0])).sum()
}

pub fn verify_sequence(seq: &[RkhsFunction], budget: f64, norm_bound: f64) -> Result<()> {
    let variation = total_variation(seq)?;
    if variation > budget + BUDGET_SLACK {
        return Err(Error::BudgetViolated(format!(
            "total variation {variation} > P_T = {budget}"
        )));
    }
    let max_norm = seq.iter().map(RkhsFunction::rkhs_norm).fold(0.0, f64::max);
    if max_norm > norm_bound + BUDGET_SLACK {
        return Err(Error::BudgetViolated(format!(
            "norm {max_norm} > B = {norm_bound}"
        )));
    }
    Ok(())
}

/// One episode's environment: a fixed (oblivious) function sequence and a
/// seeded noise stream.
#[derive(Debug, Clone)]
pub struct Environment {
    functions: Vec<RkhsFunction>,
    candidates: Arc<CandidateSet>,
    /// `[k(x_g, c_i)]` for fast evaluation on the grid.
    grid_cross: DMatrix<f64>,
    /// Cumulative variation: entry `t` is `sum_{s < t} |f_{s+1} - f_s|` (0-based).
    cumulative_drift: Vec<f64>,
    noise: NoiseModel,
    rng: ChaCha8Rng,
    t: usize,
}

impl Environment {
    pub fn new(
        functions: Vec<RkhsFunction>,
        candidates: Arc<CandidateSet>,
        noise: NoiseModel,
        noise_seed: u64,
    ) -> Result<Self> {
        let first = functions
            .first()
            .ok_or_else(|| Error::invalid("T", "empty function sequence"))?;
        if !(noise.scale.is_finite() && noise.scale >= 0.0) {
            return Err(Error::invalid("R", "noise scale must be >= 0"));
        }
        let basis = first.basis().clone();
        let grid_cross = basis.kernel().cross(candidates.points(), basis.centers());
        let mut cumulative_drift = Vec::with_capacity(functions.len());
        let mut acc = 0.0;
        cumulative_drift.push(0.0);
        for w in functions.windows(2) {
            acc += w[1].rkhs_distance(&w[0])?;
            cumulative_drift.push(acc);
        }
        Ok(Self {
            functions,
            candidates,
            grid_cross,
            cumulative_drift,
            noise,
            rng: seed::rng(noise_seed),
            t: 1,
        })
    }

    pub fn horizon(&self) -> usize {
        self.functions.len()
    }

    /// Current time step (1-based).
    pub fn time(&self) -> usize {
        self.t
    }

    pub fn advance(&mut self) {
        self.t += 1;
    }

    pub fn noise(&self) -> NoiseModel {
        self.noise
    }

    pub fn functions(&self) -> &[RkhsFunction] {
        &self.functions
    }

    fn check_time(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.horizon() {
            Err(Error::BeyondHorizon {
                t,
                horizon: self.horizon(),
            })
        } else {
            Ok(())
        }
    }

    /// `f_t` (1-based).
    pub fn function(&self, t: usize) -> Result<&RkhsFunction> {
        self.check_time(t)?;
        Ok(&self.functions[t - 1])
    }

    /// `f_t` on every candidate point.
    pub fn values_on_grid(&self, t: usize) -> Result<Vec<f64>> {
        let f = self.function(t)?;
        Ok((&self.grid_cross * f.coeffs()).iter().copied().collect())
    }

    /// `sum_{s=from}^{to-1} |f_s - f_{s+1}|_H` for 1-based `from <= to`.
    pub fn drift_between(&self, from: usize, to: usize) -> f64 {
        if to <= from {
            return 0.0;
        }
        self.cumulative_drift[to - 1] - self.cumulative_drift[from - 1]
    }

    /// `y = f_t(x_i) + eta_t` for candidate `index` at the current time.
    pub fn sample_reward(&mut self, index: usize) -> Result<f64> {
        self.check_time(self.t)?;
        let value = self
            .grid_cross
            .row(index)
            .iter()
            .zip(self.functions[self.t - 1].coeffs().iter())
            .map(|(k, a)| k * a)
            .sum::<f64>();
        Ok(value + self.noise.sample(&mut self.rng))
    }

    /// Reward at an arbitrary point of the domain.
    pub fn sample_reward_at(&mut self, x: &[f64]) -> Result<f64> {
        self.check_time(self.t)?;
        let value = self.functions[self.t - 1].eval(x);
        Ok(value + self.noise.sample(&mut self.rng))
    }

    pub fn candidates(&self) -> &Arc<CandidateSet> {
        &self.candidates
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn linear_basis() -> Arc<CenterBasis> {
        CenterBasis::new(Kernel::linear(), vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()
    }

    fn se_basis(seed: u64, n: usize) -> Arc<CenterBasis> {
        let domain = Domain::grid(vec![0.0], vec![1.0], 50).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CenterBasis::sample(
            Kernel::squared_exponential(0.2).unwrap(),
            &domain,
            n,
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn norm_examples() {
        let single =
            CenterBasis::new(Kernel::squared_exponential(1.0).unwrap(), vec![vec![0.3]]).unwrap();
        assert_eq!(
            RkhsFunction::new(single.clone(), vec![1.0])
                .unwrap()
                .rkhs_norm(),
            1.0
        );
        assert_eq!(RkhsFunction::zero(single).rkhs_norm(), 0.0);
        let f = RkhsFunction::new(linear_basis(), vec![3.0, 4.0]).unwrap();
        assert!((f.rkhs_norm() - 5.0).abs() < 1e-15);
    }

    #[test]
    fn distance_examples() {
        let b = linear_basis();
        let f = RkhsFunction::new(b.clone(), vec![1.0, 0.0]).unwrap();
        let g = RkhsFunction::new(b.clone(), vec![0.0, 1.0]).unwrap();
        assert_eq!(f.rkhs_distance(&f).unwrap(), 0.0);
        assert!((f.rkhs_distance(&g).unwrap() - 2f64.sqrt()).abs() < 1e-15);

        let single =
            CenterBasis::new(Kernel::squared_exponential(1.0).unwrap(), vec![vec![0.0]]).unwrap();
        let p = RkhsFunction::new(single.clone(), vec![0.7]).unwrap();
        let m = RkhsFunction::new(single, vec![-0.7]).unwrap();
        assert!((p.rkhs_distance(&m).unwrap() - 1.4).abs() < 1e-15);

        let other =
            CenterBasis::new(Kernel::linear(), vec![vec![0.5, 0.5], vec![0.0, 1.0]]).unwrap();
        let h = RkhsFunction::new(other, vec![1.0, 0.0]).unwrap();
        assert!(matches!(f.rkhs_distance(&h), Err(Error::MismatchedCenters)));
    }

    #[test]
    fn evaluation_is_kernel_expansion() {
        let basis = se_basis(1, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let coeffs: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = RkhsFunction::new(basis.clone(), coeffs.clone()).unwrap();
        for _ in 0..50 {
            let x = vec![rng.random_range(0.0..1.0)];
            let direct: f64 = basis
                .centers()
                .iter()
                .zip(&coeffs)
                .map(|(c, a)| a * basis.kernel().eval(c, &x).unwrap())
                .sum();
            assert!((f.eval(&x) - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn stationary_sequence_is_constant() {
        let seq =
            generate_sequence(&DriftSchedule::stationary(1.0), &se_basis(3, 5), 20, 4).unwrap();
        assert_eq!(seq.len(), 20);
        assert_eq!(total_variation(&seq).unwrap(), 0.0);
        assert!((seq[0].rkhs_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_flip_spends_two_b() {
        let schedule = DriftSchedule::single_flip(0.8, 10);
        let seq = generate_sequence(&schedule, &se_basis(5, 5), 20, 6).unwrap();
        assert!((total_variation(&seq).unwrap() - 1.6).abs() < 1e-12);
        let a = seq[8].coeffs();
        let b = seq[9].coeffs();
        assert!((a + b).norm() < 1e-12);

        let tight = DriftSchedule {
            budget: 1.5,
            ..schedule
        };
        assert!(matches!(
            generate_sequence(&tight, &se_basis(5, 5), 20, 6),
            Err(Error::InfeasibleSchedule(_))
        ));
    }

    #[test]
    fn quarter_turn_rotation() {
        let t = 200;
        let b = 1.0;
        let schedule = DriftSchedule {
            kind: DriftKind::SmoothRotation {
                step_angle: std::f64::consts::PI / (2.0 * t as f64),
            },
            norm_bound: b,
            budget: b * std::f64::consts::PI / 2.0,
        };
        let seq = generate_sequence(&schedule, &se_basis(7, 6), t, 8).unwrap();
        let expected = (t - 1) as f64 * 2.0 * b * (std::f64::consts::PI / (4.0 * t as f64)).sin();
        assert!((total_variation(&seq).unwrap() - expected).abs() < 1e-9);
        assert!(expected <= b * std::f64::consts::PI / 2.0);
    }

    #[test]
    fn rotation_needs_two_centers() {
        let single =
            CenterBasis::new(Kernel::squared_exponential(1.0).unwrap(), vec![vec![0.0]]).unwrap();
        let schedule = DriftSchedule::rotation_filling_budget(1.0, 1.0, 10);
        assert!(generate_sequence(&schedule, &single, 10, 0).is_err());
        assert!(generate_sequence(&DriftSchedule::single_flip(1.0, 5), &single, 10, 0).is_ok());
    }

    #[test]
    fn oracle_examples() {
        let b = linear_basis();
        let grid = vec![
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, -1.0],
        ];
        let f = RkhsFunction::new(b.clone(), vec![1.0, 0.0]).unwrap();
        assert_eq!(oracle_max(&f, &grid).unwrap(), (0, 1.0));
        let zero = RkhsFunction::zero(b);
        assert_eq!(oracle_max(&zero, &grid).unwrap(), (0, 0.0));
        assert!(oracle_max(&f, &[]).is_err());
    }

    #[test]
    fn oracle_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let basis = se_basis(rng.random(), 4);
            let coeffs = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let f = RkhsFunction::new(basis, coeffs).unwrap();
            let grid: Vec<Point> = (0..30).map(|_| vec![rng.random_range(0.0..1.0)]).collect();
            let (i, v) = oracle_max(&f, &grid).unwrap();
            for x in &grid {
                assert!(f.eval(x) <= v);
            }
            assert_eq!(f.eval(&grid[i]), v);
        }
    }

    fn env_with(noise: NoiseModel, seed: u64) -> Environment {
        let domain = Domain::grid(vec![0.0], vec![1.0], 11).unwrap();
        let basis = se_basis(2, 4);
        let cands = Arc::new(CandidateSet::from_domain(basis.kernel().clone(), &domain).unwrap());
        let seq = generate_sequence(&DriftSchedule::stationary(1.0), &basis, 5, 1).unwrap();
        Environment::new(seq, cands, noise, seed).unwrap()
    }

    #[test]
    fn noiseless_reward_is_function_value() {
        let mut env = env_with(NoiseModel::gaussian(0.0), 3);
        let values = env.values_on_grid(1).unwrap();
        let f = env.function(1).unwrap().clone();
        for (i, &v) in values.iter().enumerate() {
            let y = env.sample_reward(i).unwrap();
            assert_eq!(y, v);
            assert!((y - f.eval(env.candidates().point(i))).abs() < 1e-14);
        }
    }

    #[test]
    fn reward_beyond_horizon_errors() {
        let mut env = env_with(NoiseModel::gaussian(0.1), 3);
        for _ in 0..5 {
            env.sample_reward(0).unwrap();
            env.advance();
        }
        assert!(matches!(
            env.sample_reward(0),
            Err(Error::BeyondHorizon { t: 6, .. })
        ));
    }

    #[test]
    fn gaussian_noise_moments() {
        let r = 0.5;
        let noise = NoiseModel::gaussian(r);
        let mut rng = seed::rng(99);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| noise.sample(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() <= 0.01 * r * 3.0);
        assert!((var / (r * r) - 1.0).abs() <= 0.05);
    }

    #[test]
    fn uniform_noise_bounded() {
        let noise = NoiseModel {
            scale: 0.3,
            law: NoiseLaw::Uniform,
        };
        let mut rng = seed::rng(1);
        for _ in 0..10_000 {
            assert!(noise.sample(&mut rng).abs() <= 0.3);
        }
    }

    #[test]
    fn equal_seeds_equal_streams() {
        let mut a = env_with(NoiseModel::gaussian(1.0), 42);
        let mut b = env_with(NoiseModel::gaussian(1.0), 42);
        for i in 0..5 {
            assert_eq!(
                a.sample_reward(i).unwrap().to_bits(),
                b.sample_reward(i).unwrap().to_bits()
            );
            a.advance();
            b.advance();
        }
    }

    #[test]
    fn drift_prefix_sums() {
        let domain = Domain::grid(vec![0.0], vec![1.0], 5).unwrap();
        let basis = se_basis(4, 5);
        let cands = Arc::new(CandidateSet::from_domain(basis.kernel().clone(), &domain).unwrap());
        let seq = generate_sequence(&DriftSchedule::single_flip(1.0, 3), &basis, 6, 2).unwrap();
        let env = Environment::new(seq, cands, NoiseModel::gaussian(0.0), 0).unwrap();
        assert_eq!(env.drift_between(1, 2), 0.0);
        assert!((env.drift_between(1, 3) - 2.0).abs() < 1e-12);
        assert!((env.drift_between(3, 6)).abs() < 1e-12);
    }
}
