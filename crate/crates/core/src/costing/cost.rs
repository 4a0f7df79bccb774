use std::fmt;
use std::sync::Arc;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::streams::derive_seed;
use crate::dynamics::ParticleEnsemble;
use crate::error::{Error, Result};

pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 200;
/// Below this many alive particles a slice average is flagged as unstable.
pub const LOW_ALIVE_WARNING: usize = 100;
/// Resampling units of the bootstrap; particles are grouped in contiguous
/// blocks when there are more of them.
const BOOTSTRAP_GROUPS: usize = 500;
const BOOTSTRAP_LABEL: u64 = 0xB007;

pub type RunningCost = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
pub type TerminalCost = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Running cost `f(x, a)`, convex in `a`, and terminal cost `g(x)` with a
/// declared growth constant `c`: `|f(x,a)| + |g(x)| <= c (1 + |x|² + |a|²)`.
#[derive(Clone)]
pub struct CostSpec {
    pub running: RunningCost,
    pub terminal: TerminalCost,
    pub growth: f64,
}

impl fmt::Debug for CostSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CostSpec")
            .field("growth", &self.growth)
            .finish_non_exhaustive()
    }
}

fn sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

impl CostSpec {
    pub fn new<F, G>(running: F, terminal: G, growth: f64) -> Self
    where
        F: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        CostSpec {
            running: Arc::new(running),
            terminal: Arc::new(terminal),
            growth,
        }
    }

    /// `f(x, a) = ½|a|² + f̃(x)` with a bounded state cost `f̃`.
    pub fn energy_plus<F>(state_cost: F, state_cost_bound: f64) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        CostSpec::new(
            move |x, a| 0.5 * sq(a) + state_cost(x),
            |_| 0.0,
            0.5f64.max(state_cost_bound),
        )
    }

    /// `f = ½|a|²`, `g = 0`.
    pub fn control_energy() -> Self {
        QuadraticCost::default().build()
    }

    /// Spot-checks the growth condition at the given `(x, a)` pairs.
    pub fn satisfies_growth(&self, points: &[(Vec<f64>, Vec<f64>)]) -> bool {
        points.iter().all(|(x, a)| {
            let lhs = (self.running)(x, a).abs() + (self.terminal)(x).abs();
            lhs <= self.growth * (1.0 + sq(x) + sq(a)) * (1.0 + 1e-12)
        })
    }

    /// Spot-checks midpoint convexity of `a ↦ f(x, a)` along random segments.
    pub fn is_convex_in_control(&self, dim: usize, trials: usize, seed: u64) -> bool {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..trials).all(|_| {
            let mut draw = |scale: f64| -> Vec<f64> {
                (0..dim).map(|_| rng.gen_range(-scale..scale)).collect()
            };
            let x = draw(1.0);
            let a = draw(5.0);
            let b = draw(5.0);
            let lambda: f64 = rng.gen();
            let mid: Vec<f64> = a
                .iter()
                .zip(&b)
                .map(|(p, q)| lambda * p + (1.0 - lambda) * q)
                .collect();
            let f = &self.running;
            let lhs = f(&x, &mid);
            let rhs = lambda * f(&x, &a) + (1.0 - lambda) * f(&x, &b);
            lhs <= rhs + 1e-9 * (1.0 + rhs.abs())
        })
    }
}

/// Quadratic costs `f(x,a) = w_a|a|² + w_x|x|² + c_f`, `g(x) = w_T|x|² + c_g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadraticCost {
    pub control_weight: f64,
    pub state_weight: f64,
    pub running_constant: f64,
    pub terminal_weight: f64,
    pub terminal_constant: f64,
}

impl Default for QuadraticCost {
    fn default() -> Self {
        QuadraticCost {
            control_weight: 0.5,
            state_weight: 0.0,
            running_constant: 0.0,
            terminal_weight: 0.0,
            terminal_constant: 0.0,
        }
    }
}

impl QuadraticCost {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("control_weight", self.control_weight),
            ("state_weight", self.state_weight),
            ("running_constant", self.running_constant),
            ("terminal_weight", self.terminal_weight),
            ("terminal_constant", self.terminal_constant),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::config(format!("cost.{name}"), "must be finite"));
            }
        }
        if self.control_weight < 0.0 {
            return Err(Error::config(
                "cost.control_weight",
                "must be >= 0 for a running cost convex in the control",
            ));
        }
        Ok(())
    }

    pub fn growth_constant(&self) -> f64 {
        self.control_weight
            .abs()
            .max(self.state_weight.abs() + self.terminal_weight.abs())
            .max(self.running_constant.abs() + self.terminal_constant.abs())
            .max(f64::MIN_POSITIVE)
    }

    pub fn build(&self) -> CostSpec {
        let q = self.clone();
        let t = self.clone();
        CostSpec::new(
            move |x, a| q.control_weight * sq(a) + q.state_weight * sq(x) + q.running_constant,
            move |x| t.terminal_weight * sq(x) + t.terminal_constant,
            self.growth_constant(),
        )
    }
}

/// Estimated conditional cost of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    /// `Σ_k Δt · mean_{alive at t_k} f(X_{t_k}, α_{t_k})`.
    #[serde(with = "extended_real")]
    pub running_term: f64,
    /// `mean_{alive at T} g(X_T)`.
    #[serde(with = "extended_real")]
    pub terminal_term: f64,
    /// `running + terminal`, `+inf` when some needed slice is empty.
    #[serde(with = "extended_real")]
    pub total: f64,
    pub survival_at_horizon: f64,
    pub stderr_total: f64,
    pub infinite: bool,
    pub min_alive: usize,
    pub low_alive_warning: bool,
    pub bootstrap_resamples: usize,
}

/// [`compute_cost_with`] using [`DEFAULT_BOOTSTRAP_RESAMPLES`].
pub fn compute_cost(ensemble: &ParticleEnsemble, cost: &CostSpec) -> Result<CostReport> {
    compute_cost_with(ensemble, cost, DEFAULT_BOOTSTRAP_RESAMPLES)
}

/// Conditional cost `J` as alive-averages on the simulation grid with a
/// left-endpoint Riemann sum in time.
///
/// The standard error comes from a bootstrap over particles (grouped into
/// at most 500 contiguous blocks for large ensembles), which keeps the
/// correlation between numerators and survival denominators.
pub fn compute_cost_with(
    ensemble: &ParticleEnsemble,
    cost: &CostSpec,
    resamples: usize,
) -> Result<CostReport> {
    if !ensemble.has_controls() {
        return Err(Error::MissingControls);
    }
    let n = ensemble.len();
    let steps = ensemble.grid().steps();
    let dt = ensemble.grid().dt();
    let groups = n.min(BOOTSTRAP_GROUPS);
    let stride = steps + 1;

    // per group: running sums and alive counts for slices 0..K, terminal at index K
    let mut sums = vec![0.0; groups * stride];
    let mut counts = vec![0u32; groups * stride];
    for i in 0..n {
        let g = i * groups / n;
        let row = g * stride;
        let alive_slices = ensemble.death_step(i).min(steps);
        for k in 0..alive_slices {
            let x = ensemble.state(i, k);
            let a = ensemble.control(i, k).expect("controls checked above");
            sums[row + k] += (cost.running)(x, a);
            counts[row + k] += 1;
        }
        if ensemble.is_alive(i, steps) {
            sums[row + steps] += (cost.terminal)(ensemble.state(i, steps));
            counts[row + steps] += 1;
        }
    }

    let unit = vec![1.0; groups];
    let point = evaluate_weighted(&sums, &counts, &unit, stride, dt);
    let alive = ensemble.alive_counts();
    let min_alive = *alive.iter().min().expect("grid has nodes");
    let survival_at_horizon = alive[steps] as f64 / n as f64;
    if min_alive < LOW_ALIVE_WARNING && min_alive > 0 {
        warn!("only {min_alive} particles alive at some slice; conditional averages are unstable");
    }

    let (running_term, terminal_term) = point;
    let infinite = min_alive == 0;
    let total = if infinite {
        f64::INFINITY
    } else {
        running_term + terminal_term
    };

    let stderr_total = if infinite || resamples == 0 {
        0.0
    } else {
        let seed = derive_seed(ensemble.seed(), BOOTSTRAP_LABEL);
        let replicates: Vec<f64> = (0..resamples)
            .into_par_iter()
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(r as u64);
                let mut weights = vec![0.0; groups];
                for _ in 0..groups {
                    weights[rng.gen_range(0..groups)] += 1.0;
                }
                let (run, term) = evaluate_weighted(&sums, &counts, &weights, stride, dt);
                run + term
            })
            .collect();
        let finite: Vec<f64> = replicates.into_iter().filter(|v| v.is_finite()).collect();
        std_dev(&finite)
    };

    Ok(CostReport {
        running_term,
        terminal_term,
        total,
        survival_at_horizon,
        stderr_total,
        infinite,
        min_alive,
        low_alive_warning: min_alive < LOW_ALIVE_WARNING,
        bootstrap_resamples: resamples,
    })
}

/// Running and terminal terms under group weights; a slice with zero
/// weighted alive mass makes the corresponding term infinite.
fn evaluate_weighted(
    sums: &[f64],
    counts: &[u32],
    weights: &[f64],
    stride: usize,
    dt: f64,
) -> (f64, f64) {
    let mut num = vec![0.0; stride];
    let mut den = vec![0.0; stride];
    for (g, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let row = g * stride;
        for k in 0..stride {
            num[k] += w * sums[row + k];
            den[k] += w * counts[row + k] as f64;
        }
    }
    let steps = stride - 1;
    let mut running = 0.0;
    for k in 0..steps {
        running += if den[k] > 0.0 {
            dt * (num[k] / den[k])
        } else {
            f64::INFINITY
        };
    }
    let terminal = if den[steps] > 0.0 {
        num[steps] / den[steps]
    } else {
        f64::INFINITY
    };
    (running, terminal)
}

fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostOrdering {
    /// `J_A < J_B` beyond two pooled standard errors.
    ALessOrEqual,
    /// `J_B < J_A` beyond two pooled standard errors.
    BLessOrEqual,
    Indistinguishable,
    /// At least one cost is `+inf`; no statistical ordering.
    Infinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostComparison {
    pub ordering: CostOrdering,
    /// `J_A - J_B`.
    #[serde(with = "extended_real")]
    pub difference: f64,
    pub pooled_stderr: f64,
    /// `difference / pooled_stderr` (infinite if the stderr vanishes).
    #[serde(with = "extended_real")]
    pub z_score: f64,
}

/// Orders two cost estimates at the two-sigma level of their pooled error.
pub fn compare_costs(a: &CostReport, b: &CostReport) -> CostComparison {
    let pooled = (a.stderr_total.powi(2) + b.stderr_total.powi(2)).sqrt();
    if a.infinite || b.infinite {
        return CostComparison {
            ordering: CostOrdering::Infinite,
            difference: f64::NAN,
            pooled_stderr: pooled,
            z_score: f64::NAN,
        };
    }
    let diff = a.total - b.total;
    let z = if pooled > 0.0 {
        diff / pooled
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    };
    let ordering = if z.abs() <= 2.0 {
        CostOrdering::Indistinguishable
    } else if diff < 0.0 {
        CostOrdering::ALessOrEqual
    } else {
        CostOrdering::BLessOrEqual
    };
    CostComparison {
        ordering,
        difference: diff,
        pooled_stderr: pooled,
        z_score: z,
    }
}

/// Serializes non-finite floats as the strings `"+inf"`, `"-inf"`, `"nan"`.
pub(crate) mod extended_real {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("+inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(s) => match s.as_str() {
                "+inf" | "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(de::Error::custom(format!("not an extended real: {other}"))),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{simulate_ensemble, ControlSpec, SimulationParams, TimeGrid};
    use crate::geometry::Domain;

    fn ensemble(control: &ControlSpec, n: usize) -> ParticleEnsemble {
        let p = SimulationParams::new(
            Domain::interval(-1.0, 1.0).unwrap(),
            TimeGrid::new(1.0, 0.01).unwrap(),
            vec![0.0],
            n,
            11,
        );
        simulate_ensemble(control, &p).unwrap()
    }

    fn report(total: f64, stderr: f64) -> CostReport {
        CostReport {
            running_term: total,
            terminal_term: 0.0,
            total,
            survival_at_horizon: 0.5,
            stderr_total: stderr,
            infinite: false,
            min_alive: 1000,
            low_alive_warning: false,
            bootstrap_resamples: 200,
        }
    }

    #[test]
    fn zero_control_energy_is_exactly_zero() {
        let r = compute_cost(
            &ensemble(&ControlSpec::zero(), 2000),
            &CostSpec::control_energy(),
        )
        .unwrap();
        assert_eq!(r.total, 0.0);
        assert!(!r.infinite);
        assert_eq!(r.stderr_total, 0.0);
    }

    #[test]
    fn conditional_expectation_of_a_constant() {
        let g_one = QuadraticCost {
            control_weight: 0.0,
            terminal_constant: 1.0,
            ..Default::default()
        };
        let r = compute_cost(&ensemble(&ControlSpec::zero(), 2000), &g_one.build()).unwrap();
        assert_eq!(r.total, 1.0);
        assert_eq!(r.running_term + r.terminal_term, r.total);
    }

    #[test]
    fn constant_running_cost_normalizes_to_horizon() {
        let f_const = QuadraticCost {
            control_weight: 0.0,
            running_constant: 2.5,
            ..Default::default()
        };
        let r = compute_cost(
            &ensemble(&ControlSpec::coin_flip(1.0), 2000),
            &f_const.build(),
        )
        .unwrap();
        assert!((r.running_term - 2.5).abs() < 1e-12, "{}", r.running_term);
    }

    #[test]
    fn everybody_dead_means_infinite_cost() {
        let r = compute_cost(
            &ensemble(&ControlSpec::constant(vec![60.0]), 100),
            &CostSpec::control_energy(),
        )
        .unwrap();
        assert!(r.infinite);
        assert_eq!(r.total, f64::INFINITY);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"total\":\"+inf\""), "{json}");
        let back: CostReport = serde_json::from_str(&json).unwrap();
        assert!(back.total.is_infinite());
    }

    #[test]
    fn bootstrap_error_is_positive_and_deterministic() {
        let ens = ensemble(&ControlSpec::running_max_centering(1.0), 3000);
        let a = compute_cost(&ens, &CostSpec::control_energy()).unwrap();
        let b = compute_cost(&ens, &CostSpec::control_energy()).unwrap();
        assert!(a.stderr_total > 0.0);
        assert_eq!(a, b);
    }

    #[test]
    fn comparisons() {
        let c = compare_costs(&report(1.0, 0.1), &report(1.0, 0.1));
        assert_eq!(c.ordering, CostOrdering::Indistinguishable);
        assert_eq!(
            compare_costs(&report(1.0, 0.001), &report(2.0, 0.001)).ordering,
            CostOrdering::ALessOrEqual
        );
        assert_eq!(
            compare_costs(&report(2.0, 0.001), &report(1.0, 0.001)).ordering,
            CostOrdering::BLessOrEqual
        );
        let mut inf = report(0.0, 0.0);
        inf.infinite = true;
        inf.total = f64::INFINITY;
        assert_eq!(
            compare_costs(&inf, &report(1.0, 0.1)).ordering,
            CostOrdering::Infinite
        );
        assert_eq!(
            compare_costs(&report(1.0, 0.0), &report(1.0, 0.0)).z_score,
            0.0
        );
    }

    #[test]
    fn growth_and_convexity_spot_checks() {
        let q = QuadraticCost {
            control_weight: 0.5,
            state_weight: 1.0,
            terminal_weight: 2.0,
            terminal_constant: 1.0,
            running_constant: -0.5,
        };
        let spec = q.build();
        let pts: Vec<(Vec<f64>, Vec<f64>)> = (0..50)
            .map(|i| (vec![i as f64 * 0.1 - 2.0], vec![3.0 - i as f64 * 0.2]))
            .collect();
        assert!(spec.satisfies_growth(&pts));
        assert!(spec.is_convex_in_control(1, 200, 1));
        let concave = CostSpec::new(|_, a| -sq(a), |_| 0.0, 1.0);
        assert!(!concave.is_convex_in_control(1, 200, 1));
        assert!(QuadraticCost {
            control_weight: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn original_form_cost() {
        let spec = CostSpec::energy_plus(|x| x[0].cos(), 1.0);
        assert_eq!((spec.running)(&[0.0], &[2.0]), 3.0);
        assert!(spec.is_convex_in_control(1, 100, 2));
    }
}
