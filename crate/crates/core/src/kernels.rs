//! Kernels, Gram matrices and the finite candidate domain.
//!
//! Every kernel satisfies `k(x, x) <= 1` on its declared domain; the
//! confidence widths used by the policies depend on that bound. Stationary
//! kernels satisfy it by construction, the linear kernel relies on candidate
//! points living in the unit ball (see [`Domain::clamped_to_unit_ball`]) or on
//! [`Kernel::normalized`].

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaternNu {
    Half,
    ThreeHalves,
    FiveHalves,
}

impl MaternNu {
    pub fn from_value(nu: f64) -> Result<Self> {
        match nu {
            0.5 => Ok(MaternNu::Half),
            1.5 => Ok(MaternNu::ThreeHalves),
            2.5 => Ok(MaternNu::FiveHalves),
            other => Err(Error::invalid(
                "nu",
                format!("Matern smoothness must be 0.5, 1.5 or 2.5, got {other}"),
            )),
        }
    }

    pub fn value(self) -> f64 {
        match self {
            MaternNu::Half => 0.5,
            MaternNu::ThreeHalves => 1.5,
            MaternNu::FiveHalves => 2.5,
        }
    }
}

/// Shape of one explicit basis function; `|shape(x)| <= 1` for the bounded shapes.
#[derive(Debug, Clone, PartialEq)]
pub enum BasisShape {
    Constant,
    /// `x[i]`, bounded by the domain box.
    Coordinate(usize),
    /// `cos(frequency . x + phase)`.
    Cosine {
        frequency: Vec<f64>,
        phase: f64,
    },
}

/// One feature `weight * shape(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisFunction {
    pub weight: f64,
    pub shape: BasisShape,
}

impl BasisFunction {
    pub fn new(weight: f64, shape: BasisShape) -> Self {
        Self { weight, shape }
    }

    pub(crate) fn eval(&self, x: &[f64]) -> f64 {
        let s = match &self.shape {
            BasisShape::Constant => 1.0,
            BasisShape::Coordinate(i) => x[*i],
            BasisShape::Cosine { frequency, phase } => {
                let arg: f64 = frequency.iter().zip(x).map(|(w, xi)| w * xi).sum();
                (arg + phase).cos()
            }
        };
        self.weight * s
    }
}

/// An explicit finite feature list `phi_i(x) = weight_i * shape_i(x)` on `R^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteBasis {
    dim: usize,
    terms: Vec<BasisFunction>,
}

impl FiniteBasis {
    pub fn new(dim: usize, terms: Vec<BasisFunction>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::invalid("basis", "feature list is empty"));
        }
        for term in &terms {
            if !term.weight.is_finite() {
                return Err(Error::NonFinite);
            }
            match &term.shape {
                BasisShape::Coordinate(i) if *i >= dim => {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: i + 1,
                    })
                }
                BasisShape::Cosine { frequency, .. } if frequency.len() != dim => {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: frequency.len(),
                    })
                }
                _ => {}
            }
        }
        Ok(Self { dim, terms })
    }

    /// Cosine basis `sqrt(2 w_j) cos(j pi x)` on `[0, 1]` with weights decaying
    /// as `1 / j^2`, normalized so that `sum_j phi_j(x)^2 <= 1`; a truncated
    /// Mercer-style expansion.
    pub fn cosine_1d(terms: usize) -> Result<Self> {
        let raw: Vec<f64> = (1..=terms).map(|j| 1.0 / (j * j) as f64).collect();
        let total: f64 = raw.iter().map(|w| 2.0 * w).sum();
        let basis = raw
            .iter()
            .enumerate()
            .map(|(j, w)| {
                BasisFunction::new(
                    (2.0 * w / total).sqrt(),
                    BasisShape::Cosine {
                        frequency: vec![(j + 1) as f64 * std::f64::consts::PI],
                        phase: 0.0,
                    },
                )
            })
            .collect();
        Self::new(1, basis)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[BasisFunction] {
        &self.terms
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelKind {
    Linear,
    SquaredExponential { lengthscale: f64 },
    Matern { nu: MaternNu, lengthscale: f64 },
    FiniteFeature(Arc<FiniteBasis>),
}

/// A positive-definite kernel, optionally rescaled by an output factor.
///
/// Immutable once built; cloning is cheap.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    kind: KernelKind,
    scale: f64,
}

fn check_lengthscale(lengthscale: f64) -> Result<f64> {
    if lengthscale.is_finite() && lengthscale > 0.0 {
        Ok(lengthscale)
    } else {
        Err(Error::invalid(
            "lengthscale",
            format!("must be finite and > 0, got {lengthscale}"),
        ))
    }
}

impl Kernel {
    pub fn linear() -> Self {
        Self {
            kind: KernelKind::Linear,
            scale: 1.0,
        }
    }

    pub fn squared_exponential(lengthscale: f64) -> Result<Self> {
        Ok(Self {
            kind: KernelKind::SquaredExponential {
                lengthscale: check_lengthscale(lengthscale)?,
            },
            scale: 1.0,
        })
    }

    pub fn matern(nu: MaternNu, lengthscale: f64) -> Result<Self> {
        Ok(Self {
            kind: KernelKind::Matern {
                nu,
                lengthscale: check_lengthscale(lengthscale)?,
            },
            scale: 1.0,
        })
    }

    pub fn finite_feature(basis: FiniteBasis) -> Self {
        Self {
            kind: KernelKind::FiniteFeature(Arc::new(basis)),
            scale: 1.0,
        }
    }

    pub fn kind(&self) -> &KernelKind {
        &self.kind
    }

    /// Output scale multiplying the raw kernel.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn with_scale(mut self, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::invalid("scale", format!("must be > 0, got {scale}")));
        }
        self.scale = scale;
        Ok(self)
    }

    /// Rescales the output so that `sup k(x, x) = 1` on the domain.
    ///
    /// For the linear kernel the supremum over the box is attained at a
    /// corner; for explicit features it is taken over the candidate points.
    pub fn normalized(self, domain: &Domain) -> Result<Self> {
        let sup = match &self.kind {
            KernelKind::SquaredExponential { .. } | KernelKind::Matern { .. } => 1.0,
            KernelKind::Linear => domain
                .lower
                .iter()
                .zip(&domain.upper)
                .map(|(l, u)| l.abs().max(u.abs()).powi(2))
                .sum::<f64>(),
            KernelKind::FiniteFeature(_) => domain
                .points
                .iter()
                .map(|x| self.raw(x, x))
                .fold(0.0, f64::max),
        };
        if sup > 0.0 {
            self.with_scale(1.0 / sup)
        } else {
            Ok(self)
        }
    }

    /// Input dimension the kernel is tied to, if any.
    pub fn input_dim(&self) -> Option<usize> {
        match &self.kind {
            KernelKind::FiniteFeature(basis) => Some(basis.dim()),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            KernelKind::Linear => "linear",
            KernelKind::SquaredExponential { .. } => "se",
            KernelKind::Matern { .. } => "matern",
            KernelKind::FiniteFeature(_) => "finite_feature",
        }
    }

    fn raw(&self, x: &[f64], y: &[f64]) -> f64 {
        match &self.kind {
            KernelKind::Linear => x.iter().zip(y).map(|(a, b)| a * b).sum(),
            KernelKind::SquaredExponential { lengthscale } => {
                let r2 = squared_distance(x, y) / (lengthscale * lengthscale);
                (-0.5 * r2).exp()
            }
            KernelKind::Matern { nu, lengthscale } => {
                let r = squared_distance(x, y).sqrt() / lengthscale;
                match nu {
                    MaternNu::Half => (-r).exp(),
                    MaternNu::ThreeHalves => {
                        let s = 3f64.sqrt() * r;
                        (1.0 + s) * (-s).exp()
                    }
                    MaternNu::FiveHalves => {
                        let s = 5f64.sqrt() * r;
                        (1.0 + s + 5.0 * r * r / 3.0) * (-s).exp()
                    }
                }
            }
            KernelKind::FiniteFeature(basis) => basis
                .terms
                .iter()
                .map(|phi| phi.eval(x) * phi.eval(y))
                .sum(),
        }
    }

    /// Evaluates without validating the inputs.
    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        self.scale * self.raw(x, y)
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        if y.len() != x.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                got: y.len(),
            });
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(self.eval_unchecked(x, y))
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if let Some(d) = self.input_dim() {
            if x.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: x.len(),
                });
            }
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(())
    }

    fn check_points(&self, points: &[Point]) -> Result<()> {
        let Some(first) = points.first() else {
            return Ok(());
        };
        for p in points {
            if p.len() != first.len() {
                return Err(Error::DimensionMismatch {
                    expected: first.len(),
                    got: p.len(),
                });
            }
            self.check_point(p)?;
        }
        Ok(())
    }

    /// Gram matrix `[k(u, v)]` over `points`; an empty list gives a 0x0 matrix.
    pub fn gram(&self, points: &[Point]) -> Result<DMatrix<f64>> {
        self.check_points(points)?;
        let n = points.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = self.eval_unchecked(&points[i], &points[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        Ok(k)
    }

    /// Cross-covariance `[k(a_i, b_j)]`.
    pub fn cross(&self, a: &[Point], b: &[Point]) -> DMatrix<f64> {
        DMatrix::from_fn(a.len(), b.len(), |i, j| self.eval_unchecked(&a[i], &b[j]))
    }

    /// The vector `[k(x_1, x), ..., k(x_n, x)]`.
    pub fn column(&self, points: &[Point], x: &[f64]) -> Vec<f64> {
        points.iter().map(|p| self.eval_unchecked(p, x)).collect()
    }
}

fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Axis-aligned box with a finite candidate grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    lower: Vec<f64>,
    upper: Vec<f64>,
    points: Vec<Point>,
    unit_ball: bool,
}

impl Domain {
    fn check_bounds(lower: &[f64], upper: &[f64]) -> Result<()> {
        if lower.is_empty() {
            return Err(Error::invalid("domain", "dimension must be >= 1"));
        }
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (l, u) in lower.iter().zip(upper) {
            if !(l.is_finite() && u.is_finite()) {
                return Err(Error::NonFinite);
            }
            if l > u {
                return Err(Error::invalid(
                    "domain",
                    format!("lower bound {l} exceeds upper bound {u}"),
                ));
            }
        }
        Ok(())
    }

    /// Tensor grid with `resolution` points per axis (endpoints included).
    pub fn grid(lower: Vec<f64>, upper: Vec<f64>, resolution: usize) -> Result<Self> {
        Self::check_bounds(&lower, &upper)?;
        if resolution == 0 {
            return Err(Error::invalid("resolution", "must be >= 1"));
        }
        let d = lower.len();
        let total = resolution
            .checked_pow(d as u32)
            .filter(|n| *n <= 1_000_000)
            .ok_or_else(|| Error::invalid("resolution", "grid too large"))?;
        let axis = |k: usize, i: usize| {
            if resolution == 1 {
                0.5 * (lower[k] + upper[k])
            } else {
                lower[k] + (upper[k] - lower[k]) * i as f64 / (resolution - 1) as f64
            }
        };
        let mut points = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rem = flat;
            let mut p = vec![0.0; d];
            for k in (0..d).rev() {
                p[k] = axis(k, rem % resolution);
                rem /= resolution;
            }
            points.push(p);
        }
        Ok(Self {
            lower,
            upper,
            points,
            unit_ball: false,
        })
    }

    /// Domain with an explicit candidate list.
    pub fn with_points(lower: Vec<f64>, upper: Vec<f64>, points: Vec<Point>) -> Result<Self> {
        Self::check_bounds(&lower, &upper)?;
        if points.is_empty() {
            return Err(Error::EmptyGrid);
        }
        let domain = Self {
            lower,
            upper,
            points,
            unit_ball: false,
        };
        for p in &domain.points {
            if p.len() != domain.dim() {
                return Err(Error::DimensionMismatch {
                    expected: domain.dim(),
                    got: p.len(),
                });
            }
            if !domain.contains(p) {
                return Err(Error::invalid(
                    "points",
                    format!("candidate {p:?} lies outside the box"),
                ));
            }
        }
        Ok(domain)
    }

    /// Radially projects every candidate onto the closed unit ball.
    ///
    /// Required for the linear kernel so that `k(x, x) = |x|^2 <= 1`.
    pub fn clamped_to_unit_ball(mut self) -> Result<Self> {
        for p in &mut self.points {
            clamp_unit(p);
        }
        self.unit_ball = true;
        if let Some(p) = self.points.iter().find(|p| !self.contains(p)) {
            return Err(Error::invalid(
                "domain",
                format!("unit-ball projection {p:?} leaves the box"),
            ));
        }
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_unit_ball(&self) -> bool {
        self.unit_ball
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        const SLACK: f64 = 1e-12;
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= l - SLACK && *v <= u + SLACK)
            && (!self.unit_ball || norm(x) <= 1.0 + SLACK)
    }

    /// Uniform draw from the box, projected onto the unit ball when the domain is clamped.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let mut p: Point = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| if l < u { rng.random_range(*l..=*u) } else { *l })
            .collect();
        if self.unit_ball {
            clamp_unit(&mut p);
        }
        p
    }

    /// Checks `k(x, x) <= 1` on every candidate.
    pub fn check_kernel_bounded(&self, kernel: &Kernel) -> Result<()> {
        for p in &self.points {
            let d = kernel.eval(p, p)?;
            if d > 1.0 + 1e-12 {
                return Err(Error::invalid(
                    "kernel",
                    format!("k(x, x) = {d} > 1 at candidate {p:?}; normalize or clamp the domain"),
                ));
            }
        }
        Ok(())
    }
}

fn clamp_unit(p: &mut [f64]) {
    let n = norm(p);
    if n > 1.0 {
        p.iter_mut().for_each(|v| *v /= n);
    }
}

/// Candidate points together with their cached Gram matrix.
///
/// Shared (via `Arc`) by the policy, the oracle and the environment of an
/// experiment, so the argmax and the oracle maximum range over the same set.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    kernel: Kernel,
    points: Vec<Point>,
    gram: DMatrix<f64>,
}

impl CandidateSet {
    pub fn new(kernel: Kernel, points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyGrid);
        }
        let gram = kernel.gram(&points)?;
        Ok(Self {
            kernel,
            points,
            gram,
        })
    }

    pub fn from_domain(kernel: Kernel, domain: &Domain) -> Result<Self> {
        Self::new(kernel, domain.points().to_vec())
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    #[inline]
    pub fn k(&self, i: usize, j: usize) -> f64 {
        self.gram[(i, j)]
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Sub-Gram matrix over a multiset of candidate indices.
    pub fn sub_gram(&self, indices: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(indices.len(), indices.len(), |a, b| {
            self.gram[(indices[a], indices[b])]
        })
    }
}

/// Index of the maximum, lowest index on ties; `None` for an empty slice.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best
}
