//! Experiment configuration: JSON parsing, defaults and validation.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::costing::QuadraticCost;
use crate::dynamics::{ControlSpec, SimulationParams, TimeGrid};
use crate::error::{Error, Result};
use crate::geometry::Domain;
use crate::projection::BinSpec;

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_PARTICLES: usize = 100_000;
pub const DEFAULT_SEED: u64 = 20_240_601;

/// Control families that can be described in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlConfig {
    Zero,
    /// Deterministic constant control.
    Constant {
        value: Vec<f64>,
    },
    /// Markovian `φ(t, x) = -gain · x` with declared bound.
    LinearFeedback {
        gain: f64,
        bound: f64,
    },
    /// `α_t = scale · ε · e_1`, `ε = ±1` drawn at time zero.
    CoinFlip {
        scale: f64,
    },
    /// `h(t, x, m) = -(x/|x|) · min(cap, m)` with `m` the running max of `|X|`.
    RunningMaxFeedback {
        #[serde(default = "one")]
        cap: f64,
    },
    /// Unbounded `α_t = theta · W_t`; only usable through truncation.
    BrownianFeedback {
        theta: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig::Zero
    }
}

impl ControlConfig {
    pub fn label(&self) -> String {
        match self {
            ControlConfig::Zero => "zero".into(),
            ControlConfig::Constant { .. } => "constant".into(),
            ControlConfig::LinearFeedback { gain, .. } => format!("linear_feedback(gain={gain})"),
            ControlConfig::CoinFlip { scale } => format!("coin_flip(c={scale})"),
            ControlConfig::RunningMaxFeedback { cap } => format!("running_max_feedback(cap={cap})"),
            ControlConfig::BrownianFeedback { theta } => {
                format!("brownian_feedback(theta={theta})")
            }
        }
    }

    fn validate(&self, key: &str, domain: &Domain) -> Result<()> {
        let dim = domain.dimension();
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(
                    format!("{key}.{name}"),
                    format!("must be positive, got {v}"),
                ))
            }
        };
        match self {
            ControlConfig::Zero => Ok(()),
            ControlConfig::Constant { value } => {
                if value.len() != dim {
                    return Err(Error::config(
                        format!("{key}.value"),
                        format!("expected {dim} components, got {}", value.len()),
                    ));
                }
                if value.iter().any(|v| !v.is_finite()) {
                    return Err(Error::config(format!("{key}.value"), "must be finite"));
                }
                Ok(())
            }
            ControlConfig::LinearFeedback { gain, bound } => {
                if !gain.is_finite() {
                    return Err(Error::config(format!("{key}.gain"), "must be finite"));
                }
                positive("bound", *bound)?;
                let reach = match domain {
                    Domain::Interval { a, b } => a.abs().max(b.abs()),
                    Domain::Ball { center, radius } => {
                        center.iter().map(|c| c * c).sum::<f64>().sqrt() + radius
                    }
                };
                if gain.abs() * reach > *bound {
                    return Err(Error::config(
                        format!("{key}.bound"),
                        format!(
                            "|gain| * sup |x| = {} over the domain exceeds the bound",
                            gain.abs() * reach
                        ),
                    ));
                }
                Ok(())
            }
            ControlConfig::CoinFlip { scale } => positive("scale", *scale),
            ControlConfig::RunningMaxFeedback { cap } => positive("cap", *cap),
            ControlConfig::BrownianFeedback { theta } => {
                if theta.is_finite() {
                    Ok(())
                } else {
                    Err(Error::config(format!("{key}.theta"), "must be finite"))
                }
            }
        }
    }

    pub fn build(&self) -> ControlSpec {
        match self {
            ControlConfig::Zero => ControlSpec::zero(),
            ControlConfig::Constant { value } => ControlSpec::constant(value.clone()),
            ControlConfig::LinearFeedback { gain, bound } => {
                ControlSpec::linear_feedback(*gain, *bound)
            }
            ControlConfig::CoinFlip { scale } => ControlSpec::coin_flip(*scale),
            ControlConfig::RunningMaxFeedback { cap } => ControlSpec::running_max_centering(*cap),
            ControlConfig::BrownianFeedback { theta } => ControlSpec::brownian_feedback(*theta),
        }
    }
}

/// Pass/fail thresholds of the experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Absolute W1 threshold; when absent the calibrated one is used.
    pub w1_tol: Option<f64>,
    /// Calibrated W1 threshold = factor × same-law 95th percentile.
    pub w1_factor: f64,
    pub survival_tol: f64,
    /// Jensen direction slack, in pooled standard errors.
    pub cost_sigma: f64,
    /// Monotonicity slack of the truncation curve, in standard errors.
    pub truncation_sigma: f64,
    /// Random splits used for the same-law W1 distribution.
    pub calibration_splits: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            w1_tol: None,
            w1_factor: 1.5,
            survival_tol: 0.01,
            cost_sigma: 3.0,
            truncation_sigma: 2.0,
            calibration_splits: 200,
        }
    }
}

/// Fully validated experiment configuration with all defaults filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub domain: Domain,
    pub horizon: f64,
    pub dt: f64,
    pub n_particles: usize,
    pub seed: u64,
    pub sigma: f64,
    pub bridge_correction: bool,
    pub x0: Vec<f64>,
    pub control: ControlConfig,
    pub extra_controls: Vec<ControlConfig>,
    pub cost: QuadraticCost,
    pub checkpoints: Vec<f64>,
    pub bins: BinSpec,
    pub tolerances: Tolerances,
    pub truncation_levels: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Point {
    Scalar(f64),
    Vector(Vec<f64>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    domain: Value,
    horizon: f64,
    dt: Option<f64>,
    n_particles: Option<usize>,
    seed: Option<u64>,
    sigma: Option<f64>,
    bridge_correction: Option<bool>,
    x0: Option<Point>,
    #[serde(default)]
    control: ControlConfig,
    #[serde(default)]
    extra_controls: Vec<ControlConfig>,
    #[serde(default)]
    cost: QuadraticCost,
    checkpoints: Option<Vec<f64>>,
    bins: Option<BinSpec>,
    #[serde(default)]
    tolerances: Tolerances,
    truncation_levels: Option<Vec<f64>>,
}

/// Parses and validates a JSON configuration; errors name the offending key.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        Error::config(
            if key == "." {
                "<root>".to_string()
            } else {
                key
            },
            e.inner().to_string(),
        )
    })?;
    ExperimentConfig::from_raw(raw)
}

impl ExperimentConfig {
    fn from_raw(raw: RawConfig) -> Result<Self> {
        let domain: Domain = serde_json::from_value(raw.domain)
            .map_err(|e| Error::config("domain", e.to_string()))?;
        let horizon = raw.horizon;
        let x0 = match raw.x0 {
            Some(Point::Scalar(x)) => vec![x],
            Some(Point::Vector(v)) => v,
            None => {
                let (lo, hi) = domain.bounding_box();
                lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect()
            }
        };
        let config = ExperimentConfig {
            bins: raw.bins.unwrap_or_else(|| BinSpec::default_for(&domain)),
            domain,
            horizon,
            dt: raw.dt.unwrap_or(DEFAULT_DT),
            n_particles: raw.n_particles.unwrap_or(DEFAULT_PARTICLES),
            seed: raw.seed.unwrap_or(DEFAULT_SEED),
            sigma: raw.sigma.unwrap_or(1.0),
            bridge_correction: raw.bridge_correction.unwrap_or(true),
            x0,
            control: raw.control,
            extra_controls: raw.extra_controls,
            cost: raw.cost,
            checkpoints: raw
                .checkpoints
                .unwrap_or_else(|| vec![0.25 * horizon, 0.5 * horizon, horizon]),
            tolerances: raw.tolerances,
            truncation_levels: raw
                .truncation_levels
                .unwrap_or_else(|| vec![1.0, 2.0, 3.0, 4.0, 5.0]),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.domain.dimension();
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::config("horizon", "must be positive"));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::config("dt", "must be positive"));
        }
        TimeGrid::new(self.horizon, self.dt).map_err(|e| match e {
            Error::InvalidGrid(msg) => Error::config("dt", msg),
            other => other,
        })?;
        if self.n_particles == 0 {
            return Err(Error::config("n_particles", "must be >= 1"));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::config("sigma", "must be positive"));
        }
        if self.x0.len() != dim {
            return Err(Error::config(
                "x0",
                format!("expected {dim} components, got {}", self.x0.len()),
            ));
        }
        if !self.domain.contains(&self.x0)? {
            return Err(Error::config(
                "x0",
                "initial state must lie inside the domain",
            ));
        }
        self.control.validate("control", &self.domain)?;
        for (i, c) in self.extra_controls.iter().enumerate() {
            c.validate(&format!("extra_controls[{i}]"), &self.domain)?;
        }
        self.cost.validate()?;
        if self
            .checkpoints
            .iter()
            .any(|t| !(t.is_finite() && *t >= 0.0 && *t <= self.horizon))
        {
            return Err(Error::config("checkpoints", "must lie in [0, horizon]"));
        }
        self.bins
            .validate(&self.domain)
            .map_err(|e| Error::config("bins", e.to_string()))?;
        let tol = &self.tolerances;
        let positive = [
            ("tolerances.w1_factor", tol.w1_factor),
            ("tolerances.survival_tol", tol.survival_tol),
            ("tolerances.cost_sigma", tol.cost_sigma),
            ("tolerances.truncation_sigma", tol.truncation_sigma),
            ("tolerances.w1_tol", tol.w1_tol.unwrap_or(1.0)),
        ];
        for (key, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if tol.calibration_splits == 0 {
            return Err(Error::config(
                "tolerances.calibration_splits",
                "must be >= 1",
            ));
        }
        if self
            .truncation_levels
            .iter()
            .any(|n| !(n.is_finite() && *n >= 0.0))
        {
            return Err(Error::config(
                "truncation_levels",
                "must be finite and >= 0",
            ));
        }
        Ok(())
    }

    pub fn grid(&self) -> TimeGrid {
        TimeGrid::new(self.horizon, self.dt).expect("validated")
    }

    pub fn simulation_params(&self) -> SimulationParams {
        SimulationParams {
            domain: self.domain.clone(),
            grid: self.grid(),
            x0: self.x0.clone(),
            n_particles: self.n_particles,
            seed: self.seed,
            sigma: self.sigma,
            bridge_correction: self.bridge_correction,
        }
    }

    /// Canonical JSON: every key explicit, objects sorted by key.
    pub fn to_canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        canonical_string(&value)
    }

    /// SHA-256 of the canonical JSON, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_canonical_json().as_bytes()))
    }
}

fn canonical_string(value: &Value) -> String {
    fn sorted(value: &Value) -> Value {
        match value {
            Value::Object(map) => {
                let mut keys: Vec<&String> = map.keys().collect();
                keys.sort();
                let mut out = serde_json::Map::new();
                for k in keys {
                    out.insert(k.clone(), sorted(&map[k]));
                }
                Value::Object(out)
            }
            Value::Array(items) => Value::Array(items.iter().map(sorted).collect()),
            other => other.clone(),
        }
    }
    serde_json::to_string(&sorted(value)).expect("json value serializes")
}

/// SHA-256 of arbitrary JSON text after key sorting; `None` if not JSON.
pub fn canonical_hash(text: &str) -> Option<String> {
    let value: Value = serde_json::from_str(text).ok()?;
    Some(hex::encode(Sha256::digest(
        canonical_string(&value).as_bytes(),
    )))
}
