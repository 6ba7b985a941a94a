//! Regularized kernel regression: the surrogate GP posterior
//!
//! ```text
//! mu_t(x)      = k_t(x)^T (K_t + lambda I)^{-1} Y_t
//! sigma_t^2(x) = k(x, x) - k_t(x)^T (K_t + lambda I)^{-1} k_t(x)
//! ```
//!
//! [`Posterior`] refits from scratch with a dense Cholesky factorization and
//! answers queries at arbitrary points. [`GridPosterior`] keeps the same
//! quantities for every point of a fixed [`CandidateSet`] and extends them in
//! `O(n * |grid|)` per appended observation; the policies use it.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::{CandidateSet, Kernel, Point};
use crate::linalg::cholesky_with_jitter;

const NEGATIVE_VARIANCE_WARN: f64 = -1e-6;

/// Observations of the active window, in chronological order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    points: Vec<Point>,
    rewards: Vec<f64>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Point, f64)>) -> Self {
        let (points, rewards) = pairs.into_iter().unzip();
        Self { points, rewards }
    }

    pub fn push(&mut self, x: Point, y: f64) {
        self.points.push(x);
        self.rewards.push(y);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    /// Same points with a different reward vector.
    pub fn with_rewards(&self, rewards: Vec<f64>) -> Self {
        assert_eq!(rewards.len(), self.points.len());
        Self {
            points: self.points.clone(),
            rewards,
        }
    }

    /// The first `n` observations.
    pub fn prefix(&self, n: usize) -> Self {
        Self {
            points: self.points[..n].to_vec(),
            rewards: self.rewards[..n].to_vec(),
        }
    }
}

fn clamp_variance(raw: f64, prior: f64) -> f64 {
    if raw < NEGATIVE_VARIANCE_WARN {
        log::warn!("posterior variance {raw:e} below round-off tolerance");
    }
    raw.clamp(0.0, prior.max(0.0))
}

/// Fitted posterior over a data window.
#[derive(Debug, Clone)]
pub struct Posterior {
    kernel: Kernel,
    lambda: f64,
    points: Vec<Point>,
    /// Lower-triangular factor of `K_t + lambda I`.
    chol_l: DMatrix<f64>,
    /// `(K_t + lambda I)^{-1} Y_t`.
    alpha: DVector<f64>,
    /// `ln det(I + K_t / lambda)`.
    logdet: f64,
}

impl Posterior {
    pub fn fit(kernel: &Kernel, lambda: f64, data: &Dataset) -> Result<Self> {
        check_lambda(lambda)?;
        let n = data.len();
        let mut k = kernel.gram(data.points())?;
        for i in 0..n {
            k[(i, i)] += lambda;
        }
        let (chol_l, alpha) = if n == 0 {
            (DMatrix::zeros(0, 0), DVector::zeros(0))
        } else {
            let chol = cholesky_with_jitter(k)?;
            let y = DVector::from_column_slice(data.rewards());
            let alpha = chol.solve(&y);
            (chol.l(), alpha)
        };
        let logdet = chol_l
            .diagonal()
            .iter()
            .map(|d| 2.0 * d.ln() - lambda.ln())
            .sum();
        Ok(Self {
            kernel: kernel.clone(),
            lambda,
            points: data.points().to_vec(),
            chol_l,
            alpha,
            logdet,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol_l
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.alpha
    }

    fn k_vec(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_vec(self.kernel.column(&self.points, x))
    }

    pub fn mean(&self, x: &[f64]) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.k_vec(x).dot(&self.alpha)
    }

    pub fn variance(&self, x: &[f64]) -> f64 {
        let prior = self.kernel.eval_unchecked(x, x);
        if self.is_empty() {
            return prior;
        }
        let v = self
            .chol_l
            .solve_lower_triangular(&self.k_vec(x))
            .expect("Cholesky factor has a positive diagonal");
        clamp_variance(prior - v.norm_squared(), prior)
    }

    pub fn std(&self, x: &[f64]) -> f64 {
        self.variance(x).sqrt()
    }

    /// `ln det(I + K_t / lambda)`; half of it is the information gain of the window.
    pub fn observed_logdet(&self) -> f64 {
        self.logdet
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(
            "lambda",
            format!("must be finite and > 0, got {lambda}"),
        ))
    }
}

/// Posterior mean and variance maintained on every candidate point.
///
/// Appending candidate `i` uses `L^{-1} k_t(x_i)`, which is already cached
/// for every candidate, so no factor of `K_t + lambda I` is stored: the new
/// Cholesky diagonal entry is `sqrt(sigma_t^2(x_i) + lambda)`.
#[derive(Debug, Clone)]
pub struct GridPosterior {
    candidates: Arc<CandidateSet>,
    lambda: f64,
    indices: Vec<usize>,
    rewards: Vec<f64>,
    /// `L^{-1} Y_t`.
    whitened: Vec<f64>,
    /// Per candidate: `L^{-1} k_t(x)`.
    proj: Vec<Vec<f64>>,
    mean: Vec<f64>,
    var: Vec<f64>,
    logdet: f64,
}

impl GridPosterior {
    pub fn new(candidates: Arc<CandidateSet>, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        let g = candidates.len();
        let var = (0..g).map(|i| candidates.k(i, i)).collect();
        Ok(Self {
            candidates,
            lambda,
            indices: Vec::new(),
            rewards: Vec::new(),
            whitened: Vec::new(),
            proj: vec![Vec::new(); g],
            mean: vec![0.0; g],
            var,
            logdet: 0.0,
        })
    }

    pub fn candidates(&self) -> &Arc<CandidateSet> {
        &self.candidates
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Drops all observations, returning to the prior.
    pub fn clear(&mut self) {
        self.indices.clear();
        self.rewards.clear();
        self.whitened.clear();
        self.proj.iter_mut().for_each(Vec::clear);
        self.mean.iter_mut().for_each(|m| *m = 0.0);
        for (i, v) in self.var.iter_mut().enumerate() {
            *v = self.candidates.k(i, i);
        }
        self.logdet = 0.0;
    }

    /// Appends the observation `(x_index, y)`.
    pub fn push(&mut self, index: usize, y: f64) {
        let l = self.proj[index].clone();
        let prior = self.candidates.k(index, index);
        let sigma2 = (prior - dot(&l, &l)).max(0.0);
        let d2 = sigma2 + self.lambda;
        let d = d2.sqrt();
        let z = (y - dot(&l, &self.whitened)) / d;
        for g in 0..self.proj.len() {
            let c = (self.candidates.k(index, g) - dot(&l, &self.proj[g])) / d;
            self.proj[g].push(c);
            self.var[g] -= c * c;
            self.mean[g] += c * z;
        }
        self.whitened.push(z);
        self.indices.push(index);
        self.rewards.push(y);
        self.logdet += (d2 / self.lambda).ln();
    }

    /// Refits from scratch on the given window.
    pub fn refit(&mut self, window: impl IntoIterator<Item = (usize, f64)>) {
        self.clear();
        for (i, y) in window {
            self.push(i, y);
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    #[inline]
    pub fn mean(&self, i: usize) -> f64 {
        self.mean[i]
    }

    pub fn variance(&self, i: usize) -> f64 {
        clamp_variance(self.var[i], self.candidates.k(i, i))
    }

    pub fn std(&self, i: usize) -> f64 {
        self.variance(i).sqrt()
    }

    pub fn means(&self) -> &[f64] {
        &self.mean
    }

    /// `ln det(I + K_t / lambda)` of the current window.
    pub fn observed_logdet(&self) -> f64 {
        self.logdet
    }

    /// The window as a [`Dataset`] of points.
    pub fn dataset(&self) -> Dataset {
        Dataset::from_pairs(
            self.indices
                .iter()
                .zip(&self.rewards)
                .map(|(&i, &y)| (self.candidates.point(i).to_vec(), y)),
        )
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
