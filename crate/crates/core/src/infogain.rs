//! Maximum information gain `gamma_t = max_{|A| = t} 1/2 ln det(I + K_A / lambda)`.
//!
//! Sets are multisets over the candidate grid (a point may be queried more
//! than once). The greedy estimator picks, at each step, the candidate with
//! the largest marginal gain `1/2 ln(1 + sigma^2 / lambda)`, lowest index on
//! ties; by submodularity it is within a factor `1 - 1/e` of the exhaustive
//! optimum.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::{argmax, CandidateSet, Kernel, KernelKind, Point};
use crate::linalg::logdet_regularized;
use crate::posterior::GridPosterior;

/// Largest number of size-`t` sequences the exhaustive search accepts.
pub const EXHAUSTIVE_LIMIT: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InfoGainMethod {
    Exhaustive,
    Greedy,
    /// Closed-form upper bound; `linear` uses the rank/trace bound, `hadamard`
    /// the diagonal bound valid for any kernel with `k(x, x) <= 1`.
    AnalyticLinear,
    AnalyticHadamard,
}

impl InfoGainMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            InfoGainMethod::Exhaustive => "exhaustive",
            InfoGainMethod::Greedy => "greedy",
            InfoGainMethod::AnalyticLinear => "analytic_linear",
            InfoGainMethod::AnalyticHadamard => "analytic_hadamard",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfoGainEstimate {
    pub value: f64,
    pub method: InfoGainMethod,
    pub t: usize,
    pub lambda: f64,
}

/// `1/2 ln det(I + K_A / lambda)`.
pub fn info_gain_of_set(kernel: &Kernel, points: &[Point], lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(0.5 * logdet_regularized(&kernel.gram(points)?, lambda)?.max(0.0))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(
            "lambda",
            format!("must be > 0, got {lambda}"),
        ))
    }
}

/// Greedy curve: entry `t` is the greedy value after `t` selections,
/// for `t = 0..=t_max`.
pub fn greedy_curve(candidates: &Arc<CandidateSet>, t_max: usize, lambda: f64) -> Result<Vec<f64>> {
    Ok(greedy_trace(candidates, t_max, lambda)?.0)
}

/// Greedy curve together with the selected indices and marginal gains.
pub fn greedy_trace(
    candidates: &Arc<CandidateSet>,
    t_max: usize,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<usize>, Vec<f64>)> {
    let mut post = GridPosterior::new(candidates.clone(), lambda)?;
    let mut curve = Vec::with_capacity(t_max + 1);
    let mut picks = Vec::with_capacity(t_max);
    let mut gains = Vec::with_capacity(t_max);
    curve.push(0.0);
    let mut total = 0.0;
    for _ in 0..t_max {
        let (i, var) =
            argmax((0..candidates.len()).map(|i| post.variance(i))).ok_or(Error::EmptyGrid)?;
        let gain = 0.5 * (1.0 + var / lambda).ln();
        total += gain;
        post.push(i, 0.0);
        curve.push(total);
        picks.push(i);
        gains.push(gain);
    }
    Ok((curve, picks, gains))
}

pub fn greedy_max_info_gain(
    candidates: &Arc<CandidateSet>,
    t: usize,
    lambda: f64,
) -> Result<InfoGainEstimate> {
    let curve = greedy_curve(candidates, t, lambda)?;
    Ok(InfoGainEstimate {
        value: curve[t],
        method: InfoGainMethod::Greedy,
        t,
        lambda,
    })
}

/// Exact maximum over all size-`t` multisets of candidates.
pub fn exhaustive_max_info_gain(
    candidates: &CandidateSet,
    t: usize,
    lambda: f64,
) -> Result<InfoGainEstimate> {
    check_lambda(lambda)?;
    let n = candidates.len();
    if n == 0 {
        return Err(Error::EmptyGrid);
    }
    let too_large = Error::InstanceTooLarge {
        candidates: n,
        t,
        limit: EXHAUSTIVE_LIMIT,
    };
    match n.checked_pow(t as u32) {
        Some(count) if count <= EXHAUSTIVE_LIMIT => {}
        _ => return Err(too_large),
    }
    if t == 1 {
        // Single points: the same closed form the greedy step uses.
        let value = (0..n)
            .map(|i| 0.5 * (1.0 + candidates.k(i, i) / lambda).ln())
            .fold(0.0, f64::max);
        return Ok(InfoGainEstimate {
            value,
            method: InfoGainMethod::Exhaustive,
            t,
            lambda,
        });
    }
    let mut best = 0.0f64;
    let mut combo = vec![0usize; t];
    loop {
        let gram = candidates.sub_gram(&combo);
        best = best.max(0.5 * logdet_regularized(&gram, lambda)?);
        // Next nondecreasing index sequence.
        let Some(pos) = (0..t).rev().find(|&p| combo[p] + 1 < n) else {
            break;
        };
        let next = combo[pos] + 1;
        combo[pos..].iter_mut().for_each(|c| *c = next);
    }
    Ok(InfoGainEstimate {
        value: best,
        method: InfoGainMethod::Exhaustive,
        t,
        lambda,
    })
}

/// Whether the exhaustive search is within its size guard.
pub fn exhaustive_feasible(candidates: usize, t: usize) -> bool {
    candidates
        .checked_pow(t as u32)
        .is_some_and(|c| c <= EXHAUSTIVE_LIMIT)
}

/// Exhaustive when feasible, greedy otherwise.
pub fn best_available(
    candidates: &Arc<CandidateSet>,
    t: usize,
    lambda: f64,
) -> Result<InfoGainEstimate> {
    if exhaustive_feasible(candidates.len(), t) {
        exhaustive_max_info_gain(candidates, t, lambda)
    } else {
        greedy_max_info_gain(candidates, t, lambda)
    }
}

/// Closed-form upper bound on `gamma_t`.
///
/// For the linear kernel on `R^d` with `k(x, x) <= c`: the rank is at most
/// `r = min(t, d)` and the trace at most `c t`, so AM-GM gives
/// `(r / 2) ln(1 + c t / (r lambda))`. Any kernel with `k(x, x) <= 1` obeys
/// Hadamard's bound `(t / 2) ln(1 + 1 / lambda)`.
pub fn analytic_bound(
    kernel: &Kernel,
    dim: usize,
    t: usize,
    lambda: f64,
) -> Result<InfoGainEstimate> {
    check_lambda(lambda)?;
    let hadamard = 0.5 * t as f64 * (1.0 + 1.0 / lambda).ln();
    let (value, method) = match kernel.kind() {
        KernelKind::Linear if t > 0 => {
            let r = t.min(dim) as f64;
            let c = kernel.scale().min(1.0);
            let linear = 0.5 * r * (1.0 + c * t as f64 / (r * lambda)).ln();
            (linear.min(hadamard), InfoGainMethod::AnalyticLinear)
        }
        _ => (hadamard, InfoGainMethod::AnalyticHadamard),
    };
    Ok(InfoGainEstimate {
        value,
        method,
        t,
        lambda,
    })
}
