//! Experiment configuration: a single JSON document, validated before any work starts.

use std::path::{Path, PathBuf};

use davie_core::field::{localize_drift, HolderField, LocallyHolderField};
use davie_core::kinetic::{holder_force_field, make_kinetic_problem, ForceSpec, KineticForce};
use davie_core::levy::SmallJumpStrategy;
use davie_core::sde::{Method, PicardOptions};
use davie_core::{GeneratingTriplet, LevyMeasure, MatrixIntegrand, SdeProblem};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

pub const CHECK_NAMES: [&str; 10] = [
    "simulate-levy",
    "integrate",
    "ibp-check",
    "solve",
    "davie-check",
    "flow-check",
    "holder-check",
    "lp-estimate",
    "tail-check",
    "kinetic-demo",
];

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("invalid config: {0}")]
    Model(#[from] davie_core::Error),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TripletSpec {
    pub dim: usize,
    /// Gaussian covariance; identity when absent.
    #[serde(default)]
    pub q: Option<Vec<Vec<f64>>>,
    #[serde(default = "no_measure")]
    pub measure: LevyMeasure,
    #[serde(default)]
    pub small_jumps: Option<SmallJumpStrategy>,
}

fn no_measure() -> LevyMeasure {
    LevyMeasure::None
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftSpec {
    Zero,
    Constant { value: Vec<f64> },
    Sine,
    /// `η_R(x) x` with a smooth cutoff between `radius` and `radius + margin`.
    LocalizedLinear { radius: f64, margin: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    Kinetic {
        d: usize,
        gamma: f64,
        beta_prime: f64,
        /// Custom ridge family; the built-in instance when absent.
        #[serde(default)]
        force: Option<ForceSpec>,
    },
    Linear {
        a: Vec<Vec<f64>>,
        sigma: Vec<Vec<f64>>,
        drift: DriftSpec,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Euler,
    Picard,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSpec {
    pub dt: f64,
    #[serde(default = "euler")]
    pub method: MethodName,
    #[serde(default)]
    pub picard: PicardOptions,
}

fn euler() -> MethodName {
    MethodName::Euler
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckParams {
    pub theta: f64,
    pub start_time: f64,
    /// Start point; the origin when absent.
    pub start_point: Option<Vec<f64>>,
    /// Norm of the perturbed Picard initial guess.
    pub perturbation: f64,
    pub flow_times: Vec<f64>,
    pub flow_points: usize,
    pub holder_m: Option<u32>,
    pub holder_scales: Vec<u32>,
    pub holder_pairs_per_scale: usize,
    pub lp_powers: Vec<f64>,
    pub lp_starts: Vec<f64>,
    pub lp_scales: Vec<u32>,
    pub lp_paths: Option<usize>,
    pub cadlag_start: f64,
    pub cadlag_ladder: Vec<u32>,
    pub tail_scales: Vec<u32>,
    pub char_fn_points: Vec<f64>,
}

impl Default for CheckParams {
    fn default() -> Self {
        Self {
            theta: 0.5,
            start_time: 0.0,
            start_point: None,
            perturbation: 1.0,
            flow_times: vec![0.0, 0.2, 0.4, 0.6, 0.8],
            flow_points: 4,
            holder_m: None,
            holder_scales: vec![2, 3, 4, 5, 6, 7, 8],
            holder_pairs_per_scale: 8,
            lp_powers: vec![2.0, 4.0],
            lp_starts: vec![0.0, 0.25, 0.5],
            lp_scales: vec![4, 6, 8],
            lp_paths: None,
            cadlag_start: 0.5,
            cadlag_ladder: vec![2, 3, 4, 5, 6, 7],
            tail_scales: (2..=10).collect(),
            char_fn_points: vec![0.25, 0.5, 1.0, 1.5, 2.0],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub n_paths: usize,
    pub horizon: f64,
    /// Base steps of every sampled driver; must resolve `dt/4`.
    pub n_steps: usize,
    #[serde(default)]
    pub triplet: Option<TripletSpec>,
    pub problem: ProblemSpec,
    pub scheme: SchemeSpec,
    #[serde(default)]
    pub checks: Vec<String>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub params: CheckParams,
}

/// Everything a check needs, built from a validated config.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub problem: SdeProblem,
    pub force: Option<KineticForce>,
}

impl Experiment {
    pub fn method(&self) -> Method {
        match self.config.scheme.method {
            MethodName::Euler => Method::Euler,
            MethodName::Picard => Method::Picard(self.config.scheme.picard.clone()),
        }
    }

    pub fn dt(&self) -> f64 {
        self.config.scheme.dt
    }

    pub fn start_point(&self) -> Vec<f64> {
        self.config.params.start_point.clone().unwrap_or_else(|| vec![0.0; self.problem.n()])
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, ConfigError> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(invalid(format!("{what} must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn build_triplet(spec: &TripletSpec) -> Result<GeneratingTriplet, ConfigError> {
    let q = match &spec.q {
        Some(rows) => matrix(rows, "triplet.q")?,
        None => DMatrix::identity(spec.dim, spec.dim),
    };
    if q.nrows() != spec.dim {
        return Err(invalid(format!("triplet.q has {} rows, dim is {}", q.nrows(), spec.dim)));
    }
    let t = GeneratingTriplet::new(q, spec.measure.clone())?;
    Ok(match spec.small_jumps {
        Some(s) => t.with_small_jumps(s)?,
        None => t,
    })
}

fn build_drift(spec: &DriftSpec, n: usize) -> Result<HolderField, ConfigError> {
    Ok(match spec {
        DriftSpec::Zero => HolderField::zero(n),
        DriftSpec::Constant { value } => {
            if value.len() != n {
                return Err(invalid(format!("constant drift has {} entries, problem dimension is {n}", value.len())));
            }
            HolderField::constant(value.clone())
        }
        DriftSpec::Sine => HolderField::sine(n),
        DriftSpec::LocalizedLinear { radius, margin } => localize_drift(&LocallyHolderField::linear(n), *radius, *margin)?,
    })
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Schema checks plus construction of the problem.
    pub fn build(self) -> Result<Experiment, ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(format!("schema_version {} (supported: {SCHEMA_VERSION})", self.schema_version)));
        }
        for c in &self.checks {
            if !CHECK_NAMES.contains(&c.as_str()) {
                return Err(invalid(format!("unknown check {c:?}; known checks: {}", CHECK_NAMES.join(", "))));
            }
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(invalid("horizon must be positive"));
        }
        if self.n_paths == 0 || self.n_steps == 0 {
            return Err(invalid("n_paths and n_steps must be positive"));
        }
        let dt = self.scheme.dt;
        let steps = self.horizon / dt;
        if dt.is_nan() || dt <= 0.0 || (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(invalid(format!("scheme.dt = {dt} does not divide horizon {}", self.horizon)));
        }
        let coarse = steps.round() as usize;
        if !self.n_steps.is_multiple_of(4 * coarse) {
            return Err(invalid(format!("n_steps = {} must be a multiple of 4 * horizon/dt = {}", self.n_steps, 4 * coarse)));
        }
        let p = &self.params;
        if !(p.theta > 0.0 && p.theta < 1.0) {
            return Err(invalid("params.theta must lie in (0, 1)"));
        }
        if p.lp_powers.iter().any(|q| *q < 2.0) {
            return Err(invalid("params.lp_powers must all be at least 2"));
        }
        let triplet = self.triplet.as_ref().map(build_triplet).transpose()?;
        let mut kinetic_force = None;
        let problem = match &self.problem {
            ProblemSpec::Kinetic { d, gamma, beta_prime, force } => {
                let spec = force.clone().unwrap_or_else(|| ForceSpec::standard(*d, *gamma, *beta_prime));
                if spec.d != *d || spec.gamma != *gamma || spec.beta_prime != *beta_prime {
                    return Err(invalid("problem.force disagrees with d / gamma / beta_prime"));
                }
                let f = holder_force_field(spec)?;
                let base = make_kinetic_problem(&f, self.horizon)?;
                kinetic_force = Some(f);
                match triplet {
                    Some(t) => SdeProblem::new(base.a().clone(), base.sigma().clone(), base.drift().clone(), self.horizon, t)?,
                    None => base,
                }
            }
            ProblemSpec::Linear { a, sigma, drift } => {
                let a = matrix(a, "problem.a")?;
                let sigma = matrix(sigma, "problem.sigma")?;
                let triplet = triplet.ok_or_else(|| invalid("a linear problem needs a triplet"))?;
                let drift = build_drift(drift, a.nrows())?;
                SdeProblem::new(a, MatrixIntegrand::Constant(sigma), drift, self.horizon, triplet)?
            }
        };
        if let Some(x) = &p.start_point {
            if x.len() != problem.n() {
                return Err(invalid(format!("params.start_point has {} entries, problem dimension is {}", x.len(), problem.n())));
            }
        }
        Ok(Experiment { config: self, problem, force: kinetic_force })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> serde_json::Value {
        serde_json::json!({
            "schema_version": 1,
            "seed": 7,
            "n_paths": 2,
            "horizon": 1.0,
            "n_steps": 400,
            "problem": {"kind": "kinetic", "d": 1, "gamma": 0.75, "beta_prime": 0.5},
            "scheme": {"dt": 0.01},
        })
    }

    fn parse(v: serde_json::Value) -> Result<Experiment, ConfigError> {
        serde_json::from_value::<ExperimentConfig>(v)?.build()
    }

    #[test]
    fn minimal_kinetic_config() {
        let e = parse(base()).unwrap();
        assert_eq!(e.problem.n(), 2);
        assert_eq!(e.start_point(), vec![0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_schema() {
        let mut v = base();
        v["schema_version"] = 2.into();
        assert!(parse(v).is_err());
        let mut v = base();
        v["checks"] = serde_json::json!(["no-such-check"]);
        assert!(parse(v).is_err());
        let mut v = base();
        v["scheme"]["dt"] = 0.3.into();
        assert!(parse(v).is_err());
        let mut v = base();
        v["n_steps"] = 100.into();
        assert!(parse(v).is_err());
        let mut v = base();
        v["surprise"] = 1.into();
        assert!(parse(v).is_err());
    }

    #[test]
    fn linear_problem_needs_triplet() {
        let mut v = base();
        v["problem"] = serde_json::json!({"kind": "linear", "a": [[1.0]], "sigma": [[1.0]], "drift": {"kind": "zero"}});
        assert!(parse(v.clone()).is_err());
        v["triplet"] = serde_json::json!({"dim": 1, "measure": {"type": "compound_poisson", "intensity": 2.0, "jumps": {"type": "point_mass", "atom": [3.0]}}});
        let e = parse(v).unwrap();
        assert_eq!(e.problem.n(), 1);
    }
}
