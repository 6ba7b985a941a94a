//! GP-UCB policies for time-varying rewards.
//!
//! - `Stationary`: IGP-UCB on all past samples.
//! - `Restart { h }`: R-GP-UCB, reset to the prior whenever `(t - 1) mod H = 0`.
//! - `SlidingWindow { w }`: SW-GP-UCB, conditioned on the most recent `w` samples.
//!
//! The confidence width is
//! `beta_t = B + (R / sqrt(lambda)) sqrt(2 gamma + 2 ln(1 / delta))`
//! (`ln(T / delta)` for the sliding window), where `gamma` defaults to half
//! the observed log-determinant `ln det(I + K_window / lambda)`.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infogain::greedy_curve;
use crate::kernels::{argmax, CandidateSet};
use crate::posterior::GridPosterior;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "variant")]
pub enum PolicyVariant {
    Stationary,
    Restart { h: usize },
    SlidingWindow { w: usize },
}

impl PolicyVariant {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyVariant::Stationary => "stationary",
            PolicyVariant::Restart { .. } => "restart",
            PolicyVariant::SlidingWindow { .. } => "sliding_window",
        }
    }

    /// Largest window the variant can hold over `horizon` steps.
    pub fn max_window(&self, horizon: usize) -> usize {
        match *self {
            PolicyVariant::Stationary => horizon,
            PolicyVariant::Restart { h } => h.min(horizon),
            PolicyVariant::SlidingWindow { w } => w.min(horizon),
        }
    }
}

/// Source of the information-gain term inside `beta_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMode {
    /// Half the log-determinant of the active window.
    #[default]
    Realized,
    /// Greedy estimate of `gamma_n` for the current window length `n`.
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaForm {
    /// `B + (R / sqrt(lambda)) sqrt(2 gamma + 2 ln(1/delta))`, `ln(T/delta)` for the window.
    #[default]
    SelfNormalized,
    /// `B + R sqrt(2 (gamma + 1 + ln(1/delta)))` for every variant.
    Simple,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyConfig {
    pub variant: PolicyVariant,
    /// RKHS norm bound `B`.
    pub norm_bound: f64,
    /// Sub-Gaussian noise scale `R`.
    pub noise_scale: f64,
    pub lambda: f64,
    pub delta: f64,
    pub horizon: usize,
    pub gamma_mode: GammaMode,
    pub beta_form: BetaForm,
}

impl PolicyConfig {
    pub fn new(variant: PolicyVariant, horizon: usize) -> Self {
        Self {
            variant,
            norm_bound: 1.0,
            noise_scale: 0.1,
            lambda: 1.0,
            delta: 0.1,
            horizon,
            gamma_mode: GammaMode::Realized,
            beta_form: BetaForm::SelfNormalized,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.variant {
            PolicyVariant::Restart { h: 0 } => return Err(Error::invalid("H", "must be >= 1")),
            PolicyVariant::SlidingWindow { w: 0 } => {
                return Err(Error::invalid("w", "must be >= 1"))
            }
            _ => {}
        }
        if !(self.norm_bound.is_finite() && self.norm_bound >= 0.0) {
            return Err(Error::invalid("B", "must be >= 0"));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(Error::invalid("R", "must be >= 0"));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::invalid("lambda", "must be > 0"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(
                "delta",
                format!("must be in (0, 1), got {}", self.delta),
            ));
        }
        if self.horizon == 0 {
            return Err(Error::invalid("T", "must be >= 1"));
        }
        Ok(())
    }

    /// Confidence width for an information-gain value `gamma`.
    pub fn beta_for(&self, gamma: f64) -> f64 {
        let gamma = gamma.max(0.0);
        let r = self.noise_scale;
        match self.beta_form {
            BetaForm::SelfNormalized => {
                let log_term = match self.variant {
                    PolicyVariant::SlidingWindow { .. } => (self.horizon as f64 / self.delta).ln(),
                    _ => (1.0 / self.delta).ln(),
                };
                self.norm_bound
                    + r / self.lambda.sqrt() * (2.0 * gamma + 2.0 * log_term).max(0.0).sqrt()
            }
            BetaForm::Simple => {
                self.norm_bound + r * (2.0 * (gamma + 1.0 + (1.0 / self.delta).ln())).sqrt()
            }
        }
    }
}

/// Restart or window length from `gamma_T^{1/4} sqrt(T / max(P_T, 1))`
/// (`sqrt(T)` when `P_T` is unknown), rounded up and clamped to `[1, T]`.
pub fn recommended_horizon(gamma_t: f64, horizon: usize, budget: Option<f64>) -> usize {
    let t = horizon.max(1) as f64;
    let ratio = match budget {
        Some(p) => t / p.max(1.0),
        None => t,
    };
    let raw = gamma_t.max(0.0).sqrt().sqrt() * ratio.sqrt();
    (raw.ceil() as usize).clamp(1, horizon.max(1))
}

/// What `select` decided at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub beta: f64,
    pub mean: f64,
    pub sigma: f64,
    pub window_len: usize,
    /// Whether the window was reset at the start of this step.
    pub reset: bool,
}

/// Policy state for one episode.
#[derive(Debug, Clone)]
pub struct Policy {
    config: PolicyConfig,
    posterior: GridPosterior,
    /// `(time, candidate, reward)` in the active window.
    window: VecDeque<(usize, usize, f64)>,
    gamma_curve: Option<Arc<[f64]>>,
    /// Time step of the next selection (1-based).
    t: usize,
    /// Start of the current restart block, or of the window.
    t0: usize,
    reset_at_t: bool,
    last_beta: f64,
}

impl Policy {
    pub fn new(config: PolicyConfig, candidates: Arc<CandidateSet>) -> Result<Self> {
        config.validate()?;
        let gamma_curve = match config.gamma_mode {
            GammaMode::Realized => None,
            GammaMode::Greedy => {
                let n = config.variant.max_window(config.horizon);
                Some(Arc::from(greedy_curve(&candidates, n, config.lambda)?))
            }
        };
        Self::with_gamma_curve(config, candidates, gamma_curve)
    }

    /// Uses a precomputed greedy curve for [`GammaMode::Greedy`].
    pub fn with_gamma_curve(
        config: PolicyConfig,
        candidates: Arc<CandidateSet>,
        gamma_curve: Option<Arc<[f64]>>,
    ) -> Result<Self> {
        config.validate()?;
        if config.gamma_mode == GammaMode::Greedy && gamma_curve.is_none() {
            return Err(Error::invalid(
                "gamma_mode",
                "greedy mode needs a gamma curve",
            ));
        }
        let posterior = GridPosterior::new(candidates, config.lambda)?;
        let mut policy = Self {
            config,
            posterior,
            window: VecDeque::new(),
            gamma_curve,
            t: 1,
            t0: 1,
            reset_at_t: false,
            last_beta: 0.0,
        };
        policy.begin_step();
        Ok(policy)
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn posterior(&self) -> &GridPosterior {
        &self.posterior
    }

    pub fn time(&self) -> usize {
        self.t
    }

    pub fn window_start(&self) -> usize {
        self.t0
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    pub fn last_beta(&self) -> f64 {
        self.last_beta
    }

    /// Candidate indices in the active window, oldest first.
    pub fn window_indices(&self) -> Vec<usize> {
        self.window.iter().map(|&(_, i, _)| i).collect()
    }

    /// Time steps of the active window, oldest first.
    pub fn window_times(&self) -> Vec<usize> {
        self.window.iter().map(|&(s, _, _)| s).collect()
    }

    /// Applies the reset / eviction rule for the step about to be played.
    fn begin_step(&mut self) {
        self.reset_at_t = false;
        match self.config.variant {
            PolicyVariant::Stationary => {}
            PolicyVariant::Restart { h } => {
                if (self.t - 1).is_multiple_of(h) {
                    self.window.clear();
                    self.posterior.clear();
                    self.t0 = self.t;
                    self.reset_at_t = true;
                }
            }
            PolicyVariant::SlidingWindow { w } => {
                self.t0 = self.t.saturating_sub(w).max(1);
                let mut evicted = false;
                while self.window.front().is_some_and(|&(s, _, _)| s < self.t0) {
                    self.window.pop_front();
                    evicted = true;
                }
                if evicted {
                    self.posterior
                        .refit(self.window.iter().map(|&(_, i, y)| (i, y)));
                }
            }
        }
    }

    fn gamma(&self) -> f64 {
        match (&self.gamma_curve, self.config.gamma_mode) {
            (Some(curve), GammaMode::Greedy) => {
                let n = self.window.len().min(curve.len() - 1);
                curve[n]
            }
            _ => 0.5 * self.posterior.observed_logdet(),
        }
    }

    /// `beta_t` for the current window.
    pub fn beta(&self) -> f64 {
        self.config.beta_for(self.gamma())
    }

    /// `argmax_x mu_{t-1}(x) + beta_t sigma_{t-1}(x)` over the candidates,
    /// lowest index on ties.
    pub fn select(&mut self) -> Selection {
        let beta = self.beta();
        self.last_beta = beta;
        let post = &self.posterior;
        let n = post.candidates().len();
        let (index, _) = argmax((0..n).map(|i| post.mean(i) + beta * post.std(i)))
            .expect("candidate set is non-empty");
        Selection {
            index,
            beta,
            mean: post.mean(index),
            sigma: post.std(index),
            window_len: self.window.len(),
            reset: self.reset_at_t,
        }
    }

    /// Records `(x_t, y_t)` and prepares the state for step `t + 1`.
    pub fn update(&mut self, index: usize, reward: f64) {
        self.window.push_back((self.t, index, reward));
        self.posterior.push(index, reward);
        self.t += 1;
        self.begin_step();
    }
}
