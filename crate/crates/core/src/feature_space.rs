//! Explicit finite feature maps and design-matrix computations.
//!
//! For an exact map (`phi(x)^T phi(y) = k(x, y)`), the kernelized posterior
//! quantities have feature-space counterparts built from
//! `V_t = Phi_t^T Phi_t + lambda I` and `V~_t = V_t / lambda`:
//!
//! - `lambda * |phi(x)|^2_{V_t^{-1}} = sigma_t^2(x)`
//! - `ln det(V~_t) = ln det(I + K_t / lambda)`
//!
//! The checks in this module compute both sides independently.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kernels::{FiniteBasis, Kernel, KernelKind, Point};
use crate::linalg::{cholesky_with_jitter, logdet_from_cholesky, spectral_norm};
use crate::posterior::{Dataset, Posterior};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap {
    /// `phi(x) = sqrt(scale) * x`, paired with the (scaled) linear kernel.
    LinearIdentity { dim: usize, scale: f64 },
    /// Paired with [`KernelKind::FiniteFeature`].
    ExplicitList(std::sync::Arc<FiniteBasis>),
    /// `sqrt(2 / D) cos(W x + b)`, approximating the SE kernel.
    RandomFourier {
        weights: DMatrix<f64>,
        phases: Vec<f64>,
        lengthscale: f64,
    },
}

impl FeatureMap {
    /// Exact feature map of `kernel`, when one exists.
    pub fn exact_for(kernel: &Kernel, dim: usize) -> Result<Self> {
        match kernel.kind() {
            KernelKind::Linear => Ok(FeatureMap::LinearIdentity {
                dim,
                scale: kernel.scale(),
            }),
            KernelKind::FiniteFeature(basis) if kernel.scale() == 1.0 => {
                Ok(FeatureMap::ExplicitList(basis.clone()))
            }
            KernelKind::FiniteFeature(basis) => {
                let s = kernel.scale().sqrt();
                let terms = basis
                    .terms()
                    .iter()
                    .map(|t| crate::kernels::BasisFunction::new(t.weight * s, t.shape.clone()))
                    .collect();
                Ok(FeatureMap::ExplicitList(std::sync::Arc::new(
                    FiniteBasis::new(basis.dim(), terms)?,
                )))
            }
            _ => Err(Error::invalid(
                "kernel",
                format!("{} kernel has no exact finite feature map", kernel.name()),
            )),
        }
    }

    pub fn random_fourier(
        input_dim: usize,
        features: usize,
        lengthscale: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(lengthscale.is_finite() && lengthscale > 0.0) {
            return Err(Error::invalid("lengthscale", "must be > 0"));
        }
        if features == 0 || input_dim == 0 {
            return Err(Error::invalid("features", "dimensions must be >= 1"));
        }
        let mut rng = seed::rng(seed);
        let weights = DMatrix::from_fn(features, input_dim, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z / lengthscale
        });
        let phases = (0..features)
            .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
            .collect();
        Ok(FeatureMap::RandomFourier {
            weights,
            phases,
            lengthscale,
        })
    }

    /// First `d` random features, reweighted as a `d`-feature approximation.
    pub fn truncated(&self, d: usize) -> Result<Self> {
        match self {
            FeatureMap::RandomFourier {
                weights,
                phases,
                lengthscale,
            } if d >= 1 && d <= phases.len() => Ok(FeatureMap::RandomFourier {
                weights: weights.rows(0, d).into_owned(),
                phases: phases[..d].to_vec(),
                lengthscale: *lengthscale,
            }),
            FeatureMap::RandomFourier { phases, .. } => Err(Error::invalid(
                "features",
                format!("truncation {d} outside 1..={}", phases.len()),
            )),
            _ => Err(Error::invalid(
                "features",
                "only random Fourier maps truncate",
            )),
        }
    }

    pub fn is_exact(&self) -> bool {
        !matches!(self, FeatureMap::RandomFourier { .. })
    }

    pub fn output_dim(&self) -> usize {
        match self {
            FeatureMap::LinearIdentity { dim, .. } => *dim,
            FeatureMap::ExplicitList(basis) => basis.len(),
            FeatureMap::RandomFourier { phases, .. } => phases.len(),
        }
    }

    /// The kernel this map reproduces exactly.
    pub fn paired_kernel(&self) -> Result<Kernel> {
        match self {
            FeatureMap::LinearIdentity { scale, .. } => Kernel::linear().with_scale(*scale),
            FeatureMap::ExplicitList(basis) => Ok(Kernel::finite_feature((**basis).clone())),
            FeatureMap::RandomFourier { .. } => Err(Error::ApproximateFeatureMap),
        }
    }

    pub fn map(&self, x: &[f64]) -> DVector<f64> {
        match self {
            FeatureMap::LinearIdentity { scale, .. } => {
                let s = scale.sqrt();
                DVector::from_iterator(x.len(), x.iter().map(|v| v * s))
            }
            FeatureMap::ExplicitList(basis) => {
                DVector::from_iterator(basis.len(), basis.terms().iter().map(|t| t.eval(x)))
            }
            FeatureMap::RandomFourier {
                weights, phases, ..
            } => {
                let d = phases.len();
                let c = (2.0 / d as f64).sqrt();
                let xv = DVector::from_column_slice(x);
                let proj = weights * xv;
                DVector::from_iterator(d, proj.iter().zip(phases).map(|(p, b)| c * (p + b).cos()))
            }
        }
    }

    /// Design matrix with rows `phi(x_s)^T`.
    pub fn design(&self, points: &[Point]) -> DMatrix<f64> {
        let d = self.output_dim();
        let mut phi = DMatrix::zeros(points.len(), d);
        for (r, x) in points.iter().enumerate() {
            phi.set_row(r, &self.map(x).transpose());
        }
        phi
    }
}

/// Feature-space view of a data window.
#[derive(Debug, Clone)]
pub struct FeatureSpaceState {
    /// Rows `phi(x_s)^T` of the active window.
    pub phi: DMatrix<f64>,
    pub lambda: f64,
    /// `Phi^T Phi + lambda I`.
    pub design: DMatrix<f64>,
    /// Noise realizations `eta_s` aligned with the rows of `phi`.
    pub noise: DVector<f64>,
}

impl FeatureSpaceState {
    pub fn new(map: &FeatureMap, points: &[Point], lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::invalid("lambda", "must be > 0"));
        }
        let phi = map.design(points);
        let d = phi.ncols();
        let design = phi.transpose() * &phi + DMatrix::identity(d, d) * lambda;
        let noise = DVector::zeros(points.len());
        Ok(Self {
            phi,
            lambda,
            design,
            noise,
        })
    }

    pub fn with_noise(mut self, noise: Vec<f64>) -> Result<Self> {
        if noise.len() != self.phi.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.phi.nrows(),
                got: noise.len(),
            });
        }
        self.noise = DVector::from_vec(noise);
        Ok(self)
    }

    /// `V / lambda`.
    pub fn normalized_design(&self) -> DMatrix<f64> {
        &self.design / self.lambda
    }

    /// `ln det(V / lambda)`.
    pub fn logdet_normalized(&self) -> Result<f64> {
        Ok(logdet_from_cholesky(&cholesky_with_jitter(
            self.normalized_design(),
        )?))
    }

    /// `lambda * phi^T V^{-1} phi`.
    pub fn scaled_leverage(&self, phi: &DVector<f64>) -> Result<f64> {
        let chol = cholesky_with_jitter(self.design.clone())?;
        Ok(self.lambda * phi.dot(&chol.solve(phi)))
    }
}

fn exact_map(map: &FeatureMap) -> Result<Kernel> {
    map.paired_kernel()
}

/// Returns `(lambda phi(x)^T V^{-1} phi(x), sigma_t^2(x))`.
pub fn sigma_identity_check(
    map: &FeatureMap,
    data: &Dataset,
    lambda: f64,
    x: &[f64],
) -> Result<(f64, f64)> {
    let kernel = exact_map(map)?;
    let state = FeatureSpaceState::new(map, data.points(), lambda)?;
    let lhs = state.scaled_leverage(&map.map(x))?;
    let rhs = Posterior::fit(&kernel, lambda, data)?.variance(x);
    Ok((lhs, rhs))
}

/// Returns `(ln det(V~_t), ln det(I + K_t / lambda))`.
pub fn logdet_identity_check(map: &FeatureMap, data: &Dataset, lambda: f64) -> Result<(f64, f64)> {
    let kernel = exact_map(map)?;
    let state = FeatureSpaceState::new(map, data.points(), lambda)?;
    let lhs = state.logdet_normalized()?;
    let rhs = crate::linalg::logdet_regularized(&kernel.gram(data.points())?, lambda)?;
    Ok((lhs, rhs))
}

/// `(1 / lambda) sqrt(2 H (1 + lambda) gamma_H)`, the operator-norm bound
/// that also scales the drift term of the restart confidence bound.
pub fn drift_prefactor(lambda: f64, horizon: usize, gamma: f64) -> f64 {
    (2.0 * horizon as f64 * (1.0 + lambda) * gamma.max(0.0)).sqrt() / lambda
}

/// Returns `(|V^{-1} sum_{s < partial} phi(x_s) phi(x_s)^T|_2, bound)`.
///
/// `block` holds the feature vectors `phi(x_{t0}), ..., phi(x_{t-1})` that
/// make up `V_{t-1}`; the partial sum covers the first `partial` of them.
pub fn operator_norm_bound_check(
    block: &[DVector<f64>],
    lambda: f64,
    partial: usize,
    horizon: usize,
    gamma: f64,
) -> Result<(f64, f64)> {
    if partial > block.len() {
        return Err(Error::OutsideBlock {
            index: partial,
            len: block.len(),
        });
    }
    if block.len() > horizon {
        return Err(Error::invalid(
            "block",
            format!("block of {} points exceeds H = {horizon}", block.len()),
        ));
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::invalid("lambda", "must be > 0"));
    }
    let bound = drift_prefactor(lambda, horizon, gamma);
    if partial == 0 || block.is_empty() {
        return Ok((0.0, bound));
    }
    let d = block[0].len();
    let mut v = DMatrix::identity(d, d) * lambda;
    let mut partial_sum = DMatrix::zeros(d, d);
    for (s, phi) in block.iter().enumerate() {
        let outer = phi * phi.transpose();
        if s < partial {
            partial_sum += &outer;
        }
        v += outer;
    }
    let m = cholesky_with_jitter(v)?.solve(&partial_sum);
    Ok((spectral_norm(&m), bound))
}

/// Returns `(|sum_s eta_s phi(x_s)|_{V~^{-1}}, sqrt(2 R^2 lambda ln(det(V~)^{1/2} / delta)))`.
pub fn self_normalized_statistic(
    state: &FeatureSpaceState,
    noise_scale: f64,
    delta: f64,
) -> Result<(f64, f64)> {
    let s = state.phi.transpose() * &state.noise;
    let chol = cholesky_with_jitter(state.normalized_design())?;
    let stat = s.dot(&chol.solve(&s)).max(0.0).sqrt();
    let logdet = logdet_from_cholesky(&chol);
    Ok((
        stat,
        self_normalized_threshold(logdet, noise_scale, state.lambda, delta),
    ))
}

/// Kernel-space form of the same statistic:
/// `|S|^2_{V~^{-1}} = lambda * eta^T K (K + lambda I)^{-1} eta`, with
/// `det(V~) = det(I + K / lambda)`. This is the infinite-feature limit that
/// finite truncations approach.
pub fn self_normalized_statistic_kernel(
    kernel: &Kernel,
    points: &[Point],
    noise: &[f64],
    lambda: f64,
    noise_scale: f64,
    delta: f64,
) -> Result<(f64, f64)> {
    let n = points.len();
    if noise.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: noise.len(),
        });
    }
    let k = kernel.gram(points)?;
    let logdet = crate::linalg::logdet_regularized(&k, lambda)?;
    if n == 0 {
        return Ok((
            0.0,
            self_normalized_threshold(logdet, noise_scale, lambda, delta),
        ));
    }
    let eta = DVector::from_column_slice(noise);
    let reg = &k + DMatrix::identity(n, n) * lambda;
    let solved = cholesky_with_jitter(reg)?.solve(&eta);
    let stat = (lambda * (&k * solved).dot(&eta)).max(0.0).sqrt();
    Ok((
        stat,
        self_normalized_threshold(logdet, noise_scale, lambda, delta),
    ))
}

pub fn self_normalized_threshold(logdet: f64, noise_scale: f64, lambda: f64, delta: f64) -> f64 {
    let arg = 0.5 * logdet - delta.ln();
    (2.0 * noise_scale * noise_scale * lambda * arg.max(0.0)).sqrt()
}
