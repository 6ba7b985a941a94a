//! Experiment files (TOML) for the `tvkb` binary.
//!
//! ```toml
//! [kernel]
//! name = "se"
//! lengthscale = 0.2
//!
//! [domain]
//! lower = [0.0]
//! upper = [1.0]
//! resolution = 50
//!
//! [environment]
//! schedule = "abrupt"
//! B = 1.0
//! P_T = 2.0
//! R = 0.1
//! centers = 20
//!
//! [policy]
//! variant = "restart"
//! H = "auto"
//!
//! [run]
//! T = 2000
//! seeds = 10
//! ```
//!
//! Unknown keys are rejected. Overrides use dotted paths, e.g.
//! `policy.H=64` or `environment.centers=[[0.1],[0.7]]`.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::environment::{NoiseLaw, NoiseModel};
use crate::harness::{
    CenterSpec, DriftMode, EnvSpec, Experiment, PolicySpec, ScheduleSpec, VariantSpec, WindowSpec,
};
use crate::kernels::{CandidateSet, Domain, Kernel, MaternNu, Point};
use crate::policies::{BetaForm, GammaMode};
use crate::seed;

/// A config problem tied to a key path such as `policy.delta`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.field.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.field, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelName {
    Linear,
    Se,
    Matern,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelBlock {
    pub name: KernelName,
    #[serde(default = "default_lengthscale")]
    pub lengthscale: f64,
    #[serde(default = "default_nu")]
    pub nu: f64,
    /// Rescale so that `max k(x, x) = 1` on the grid.
    #[serde(default)]
    pub normalize: bool,
}

fn default_lengthscale() -> f64 {
    0.2
}

fn default_nu() -> f64 {
    2.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainBlock {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    /// Explicit candidate points; replaces the tensor grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Point>>,
    /// Keep only grid points with Euclidean norm at most 1.
    #[serde(default)]
    pub unit_ball: bool,
}

fn default_resolution() -> usize {
    50
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleName {
    Stationary,
    Abrupt,
    Rotation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Centers {
    Count(usize),
    Points(Vec<Point>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentBlock {
    pub schedule: ScheduleName,
    #[serde(rename = "B", default = "one")]
    pub norm_bound: f64,
    #[serde(rename = "P_T", default)]
    pub budget: f64,
    #[serde(rename = "R", default = "default_noise")]
    pub noise_scale: f64,
    #[serde(default = "default_noise_law")]
    pub noise: NoiseLaw,
    #[serde(default = "default_centers")]
    pub centers: Centers,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switch_times: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switch_magnitude: Option<f64>,
    /// Rotation angle per step; by default the angle that spends `P_T`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation_step: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

fn default_noise() -> f64 {
    0.1
}

fn default_noise_law() -> NoiseLaw {
    NoiseLaw::Gaussian
}

fn default_centers() -> Centers {
    Centers::Count(20)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantName {
    Stationary,
    Restart,
    SlidingWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoKeyword {
    Auto,
}

/// A window length, either fixed or `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WindowSetting {
    Fixed(usize),
    Auto(AutoKeyword),
}

impl From<WindowSetting> for WindowSpec {
    fn from(w: WindowSetting) -> Self {
        match w {
            WindowSetting::Fixed(n) => WindowSpec::Fixed(n),
            WindowSetting::Auto(_) => WindowSpec::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyBlock {
    pub variant: VariantName,
    #[serde(rename = "H", default, skip_serializing_if = "Option::is_none")]
    pub restart_interval: Option<WindowSetting>,
    #[serde(rename = "w", default, skip_serializing_if = "Option::is_none")]
    pub window: Option<WindowSetting>,
    /// Defaults to `environment.B`.
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub norm_bound: Option<f64>,
    /// Defaults to `environment.R`.
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub noise_scale: Option<f64>,
    #[serde(default = "one")]
    pub lambda: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub gamma_mode: GammaMode,
    #[serde(default)]
    pub beta_form: BetaForm,
    /// Whether `auto` windows use `environment.P_T`.
    #[serde(default = "yes")]
    pub budget_known: bool,
}

fn default_delta() -> f64 {
    0.1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    #[serde(rename = "T")]
    pub horizon: usize,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_out")]
    pub out: String,
}

fn default_seeds() -> usize {
    1
}

fn default_out() -> String {
    "out".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateBlock {
    #[serde(default = "default_runs")]
    pub n_runs: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_drift_mode")]
    pub drift_mode: DriftMode,
}

impl Default for ValidateBlock {
    fn default() -> Self {
        Self {
            n_runs: default_runs(),
            delta: default_delta(),
            drift_mode: default_drift_mode(),
        }
    }
}

fn default_runs() -> usize {
    2000
}

fn default_drift_mode() -> DriftMode {
    DriftMode::None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kernel: KernelBlock,
    pub domain: DomainBlock,
    pub environment: EnvironmentBlock,
    pub policy: PolicyBlock,
    pub run: RunBlock,
    #[serde(default)]
    pub validate: ValidateBlock,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kernel: KernelBlock {
                name: KernelName::Se,
                lengthscale: default_lengthscale(),
                nu: default_nu(),
                normalize: false,
            },
            domain: DomainBlock {
                lower: vec![0.0],
                upper: vec![1.0],
                resolution: default_resolution(),
                points: None,
                unit_ball: false,
            },
            environment: EnvironmentBlock {
                schedule: ScheduleName::Stationary,
                norm_bound: 1.0,
                budget: 0.0,
                noise_scale: default_noise(),
                noise: NoiseLaw::Gaussian,
                centers: default_centers(),
                switch_times: None,
                switch_magnitude: None,
                rotation_step: None,
                seed: 0,
            },
            policy: PolicyBlock {
                variant: VariantName::Stationary,
                restart_interval: None,
                window: None,
                norm_bound: None,
                noise_scale: None,
                lambda: 1.0,
                delta: default_delta(),
                gamma_mode: GammaMode::Realized,
                beta_form: BetaForm::SelfNormalized,
                budget_known: true,
            },
            run: RunBlock {
                horizon: 200,
                seeds: 1,
                master_seed: 0,
                out: default_out(),
            },
            validate: ValidateBlock::default(),
        }
    }
}

/// Sets `path = value` inside a TOML table, creating intermediate tables.
/// `value` is read as a TOML value, falling back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| err(assignment, "override must look like KEY=VALUE"))?;
    let path = path.trim();
    let raw = raw.trim();
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(err(path, "empty key in dotted path"));
    }
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let (last, parents) = keys.split_last().expect("non-empty path");
    let mut cursor = table;
    for (depth, key) in parents.iter().enumerate() {
        let entry = cursor
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| err(&keys[..=depth].join("."), "is not a table"))?;
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    /// Parses TOML text, applies overrides and validates.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let config: Self = if overrides.is_empty() {
            toml::from_str(text).map_err(|e| err("", e.to_string()))?
        } else {
            let mut table: toml::Table = text
                .parse()
                .map_err(|e: toml::de::Error| err("", e.to_string()))?;
            for o in overrides {
                apply_override(&mut table, o)?;
            }
            toml::Value::Table(table)
                .try_into()
                .map_err(|e: toml::de::Error| err("", e.to_string()))?
        };
        let config = config.normalized();
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| err("", format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, overrides)
    }

    /// Fills values that default to other fields.
    pub fn normalized(mut self) -> Self {
        self.policy
            .norm_bound
            .get_or_insert(self.environment.norm_bound);
        self.policy
            .noise_scale
            .get_or_insert(self.environment.noise_scale);
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the normalized TOML form.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(
            self.clone().normalized().to_toml().as_bytes(),
        ))
    }

    pub fn episode_seeds(&self) -> Vec<u64> {
        seed::episode_seeds(self.run.master_seed, self.run.seeds)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let k = &self.kernel;
        if k.name != KernelName::Linear && !(k.lengthscale.is_finite() && k.lengthscale > 0.0) {
            return Err(err(
                "kernel.lengthscale",
                format!("must be > 0, got {}", k.lengthscale),
            ));
        }
        if k.name == KernelName::Matern && MaternNu::from_value(k.nu).is_err() {
            return Err(err(
                "kernel.nu",
                format!("must be 0.5, 1.5 or 2.5, got {}", k.nu),
            ));
        }

        let d = &self.domain;
        if d.lower.is_empty() || d.lower.len() != d.upper.len() {
            return Err(err(
                "domain.upper",
                "lower and upper must be non-empty and of equal length",
            ));
        }
        if d.lower
            .iter()
            .zip(&d.upper)
            .any(|(l, u)| !(l.is_finite() && u.is_finite() && l <= u))
        {
            return Err(err(
                "domain.upper",
                "each bound must satisfy lower <= upper",
            ));
        }
        if d.points.is_none() {
            if d.resolution == 0 {
                return Err(err("domain.resolution", "must be >= 1"));
            }
            let size = (d.resolution as f64).powi(d.lower.len() as i32);
            if size > 1e6 {
                return Err(err(
                    "domain.resolution",
                    format!("grid of {size} points is too large"),
                ));
            }
        }

        let e = &self.environment;
        if !(e.norm_bound.is_finite() && e.norm_bound > 0.0) {
            return Err(err(
                "environment.B",
                format!("must be > 0, got {}", e.norm_bound),
            ));
        }
        if !(e.budget.is_finite() && e.budget >= 0.0) {
            return Err(err(
                "environment.P_T",
                format!("must be >= 0, got {}", e.budget),
            ));
        }
        if !(e.noise_scale.is_finite() && e.noise_scale >= 0.0) {
            return Err(err(
                "environment.R",
                format!("must be >= 0, got {}", e.noise_scale),
            ));
        }
        match &e.centers {
            Centers::Count(0) => return Err(err("environment.centers", "must be >= 1")),
            Centers::Points(p) if p.is_empty() => {
                return Err(err("environment.centers", "must be non-empty"))
            }
            Centers::Points(p) if p.iter().any(|c| c.len() != d.lower.len()) => {
                return Err(err(
                    "environment.centers",
                    "every center must match the domain dimension",
                ))
            }
            _ => {}
        }
        if let Some(m) = e.switch_magnitude {
            if !(m.is_finite() && m >= 0.0 && m <= 2.0 * e.norm_bound) {
                return Err(err(
                    "environment.switch_magnitude",
                    format!("must be in [0, 2B], got {m}"),
                ));
            }
        }
        if let Some(a) = e.rotation_step {
            if !(a.is_finite() && a >= 0.0) {
                return Err(err(
                    "environment.rotation_step",
                    format!("must be >= 0, got {a}"),
                ));
            }
        }

        let p = &self.policy;
        let check_window = |field: &str, w: Option<WindowSetting>| match w {
            None => Err(err(field, "required for this variant")),
            Some(WindowSetting::Fixed(0)) => Err(err(field, "must be >= 1")),
            Some(_) => Ok(()),
        };
        match p.variant {
            VariantName::Stationary => {}
            VariantName::Restart => check_window("policy.H", p.restart_interval)?,
            VariantName::SlidingWindow => check_window("policy.w", p.window)?,
        }
        if let Some(b) = p.norm_bound {
            if !(b.is_finite() && b >= 0.0) {
                return Err(err("policy.B", format!("must be >= 0, got {b}")));
            }
        }
        if let Some(r) = p.noise_scale {
            if !(r.is_finite() && r >= 0.0) {
                return Err(err("policy.R", format!("must be >= 0, got {r}")));
            }
        }
        if !(p.lambda.is_finite() && p.lambda > 0.0) {
            return Err(err(
                "policy.lambda",
                format!("must be > 0, got {}", p.lambda),
            ));
        }
        if !(p.delta > 0.0 && p.delta < 1.0) {
            return Err(err(
                "policy.delta",
                format!("must be in (0, 1), got {}", p.delta),
            ));
        }

        if self.run.horizon == 0 {
            return Err(err("run.T", "must be >= 1"));
        }
        if self.run.seeds == 0 {
            return Err(err("run.seeds", "must be >= 1"));
        }
        if let Some(times) = &e.switch_times {
            if times.iter().any(|&t| t < 2 || t > self.run.horizon) {
                return Err(err(
                    "environment.switch_times",
                    format!("must lie in 2..={}", self.run.horizon),
                ));
            }
            if times.windows(2).any(|w| w[0] >= w[1]) {
                return Err(err(
                    "environment.switch_times",
                    "must be strictly increasing",
                ));
            }
        }

        let v = &self.validate;
        if v.n_runs < 100 {
            return Err(err(
                "validate.n_runs",
                format!("must be >= 100, got {}", v.n_runs),
            ));
        }
        if !(v.delta > 0.0 && v.delta < 1.0) {
            return Err(err(
                "validate.delta",
                format!("must be in (0, 1), got {}", v.delta),
            ));
        }

        self.to_experiment().map(|_| ())
    }

    pub fn build_kernel(&self) -> Result<Kernel, ConfigError> {
        let k = &self.kernel;
        let kernel = match k.name {
            KernelName::Linear => Ok(Kernel::linear()),
            KernelName::Se => Kernel::squared_exponential(k.lengthscale),
            KernelName::Matern => {
                MaternNu::from_value(k.nu).and_then(|nu| Kernel::matern(nu, k.lengthscale))
            }
        };
        kernel.map_err(|e| err("kernel", e.to_string()))
    }

    pub fn build_domain(&self) -> Result<Domain, ConfigError> {
        let d = &self.domain;
        let field = if d.points.is_some() {
            "domain.points"
        } else {
            "domain"
        };
        let domain = match &d.points {
            Some(points) => Domain::with_points(d.lower.clone(), d.upper.clone(), points.clone()),
            None => Domain::grid(d.lower.clone(), d.upper.clone(), d.resolution),
        }
        .map_err(|e| err(field, e.to_string()))?;
        if d.unit_ball {
            domain
                .clamped_to_unit_ball()
                .map_err(|e| err("domain.unit_ball", e.to_string()))
        } else {
            Ok(domain)
        }
    }

    /// The harness experiment described by this config.
    pub fn to_experiment(&self) -> Result<Experiment, ConfigError> {
        let domain = self.build_domain()?;
        let mut kernel = self.build_kernel()?;
        if self.kernel.normalize {
            kernel = kernel
                .normalized(&domain)
                .map_err(|e| err("kernel.normalize", e.to_string()))?;
        }
        domain.check_kernel_bounded(&kernel).map_err(|e| {
            err(
                "domain",
                format!("{e}; the linear kernel needs points in the unit ball (set domain.unit_ball = true)"),
            )
        })?;
        let candidates = Arc::new(
            CandidateSet::from_domain(kernel, &domain).map_err(|e| err("domain", e.to_string()))?,
        );

        let e = &self.environment;
        let schedule = match e.schedule {
            ScheduleName::Stationary => ScheduleSpec::Stationary,
            ScheduleName::Abrupt => ScheduleSpec::Abrupt {
                times: e.switch_times.clone(),
                magnitude: e.switch_magnitude,
            },
            ScheduleName::Rotation => ScheduleSpec::Rotation {
                step_angle: e.rotation_step,
            },
        };
        let centers = match &e.centers {
            Centers::Count(n) => CenterSpec::Sampled(*n),
            Centers::Points(p) => CenterSpec::Explicit(p.clone()),
        };
        let env = EnvSpec {
            schedule,
            norm_bound: e.norm_bound,
            budget: e.budget,
            centers,
            noise: NoiseModel {
                scale: e.noise_scale,
                law: e.noise,
            },
            seed: e.seed,
        };
        env.drift_schedule(self.run.horizon)
            .map_err(|x| err("environment", x.to_string()))?;

        let p = &self.policy;
        let variant = match p.variant {
            VariantName::Stationary => VariantSpec::Stationary,
            VariantName::Restart => {
                VariantSpec::Restart(p.restart_interval.map_or(WindowSpec::Auto, Into::into))
            }
            VariantName::SlidingWindow => {
                VariantSpec::SlidingWindow(p.window.map_or(WindowSpec::Auto, Into::into))
            }
        };
        let policy = PolicySpec {
            variant,
            norm_bound: p.norm_bound.unwrap_or(e.norm_bound),
            noise_scale: p.noise_scale.unwrap_or(e.noise_scale),
            lambda: p.lambda,
            delta: p.delta,
            gamma_mode: p.gamma_mode,
            beta_form: p.beta_form,
            budget_known: p.budget_known,
        };
        Ok(Experiment {
            candidates,
            domain,
            env,
            policy,
            horizon: self.run.horizon,
            fingerprint: Some(self.fingerprint()),
        })
    }
}
