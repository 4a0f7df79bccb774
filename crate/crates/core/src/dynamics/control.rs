//! Open-loop and Markovian control rules.
//!
//! A rule is only ever handed the information available at the current
//! grid time: the time, the particle's own path up to now, its Brownian
//! path value, and its time-zero randomness. Progressive measurability is
//! therefore a property of the API rather than of the caller.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Time-zero randomness of one particle, drawn before time stepping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialRandomness {
    pub uniforms: [f64; 4],
}

impl InitialRandomness {
    /// Fair ±1 coin derived from the first uniform.
    pub fn sign(&self) -> f64 {
        if self.uniforms[0] < 0.5 {
            1.0
        } else {
            -1.0
        }
    }
}

/// Everything a control may look at when evaluated at grid time `t_k`.
#[derive(Debug, Clone, Copy)]
pub struct ControlContext<'a> {
    pub t: f64,
    pub step: usize,
    /// Current state `X_{t_k}`.
    pub state: &'a [f64],
    /// States at nodes `0..=k`, row-major.
    pub history: &'a [f64],
    /// Brownian path value `W_{t_k}`.
    pub brownian: &'a [f64],
    /// `max_{j <= k} |X_{t_j}|`.
    pub running_max_norm: f64,
    pub initial: &'a InitialRandomness,
}

pub type MarkovianRule = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
pub type ScheduleRule = Arc<dyn Fn(f64, &mut [f64]) + Send + Sync>;
pub type RunningMaxRule = Arc<dyn Fn(f64, &[f64], f64, &mut [f64]) + Send + Sync>;
pub type PathRule = Arc<dyn Fn(&ControlContext<'_>, &mut [f64]) + Send + Sync>;

/// A control process together with a declared almost-sure bound on `|α_t|`.
///
/// The bound may be `f64::INFINITY` for square-integrable but unbounded
/// controls; those can only be simulated after [`truncate_control`].
#[derive(Clone)]
pub enum ControlSpec {
    Markovian {
        rule: MarkovianRule,
        bound: f64,
    },
    Deterministic {
        rule: ScheduleRule,
        bound: f64,
    },
    /// `α_t = c ε e_1` with `ε = ±1` drawn per particle at time zero.
    CoinFlip {
        scale: f64,
    },
    RunningMaxFeedback {
        rule: RunningMaxRule,
        bound: f64,
    },
    PathFunctional {
        rule: PathRule,
        bound: f64,
    },
    Truncated {
        inner: Box<ControlSpec>,
        radius: f64,
    },
}

impl fmt::Debug for ControlSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControlSpec::CoinFlip { scale } => write!(f, "CoinFlip({scale})"),
            ControlSpec::Truncated { inner, radius } => {
                write!(f, "Truncated({inner:?}, {radius})")
            }
            other => write!(f, "{}(bound={})", other.variant_name(), other.bound()),
        }
    }
}

impl ControlSpec {
    pub fn zero() -> Self {
        ControlSpec::Deterministic {
            rule: Arc::new(|_, out| out.fill(0.0)),
            bound: 1.0,
        }
    }

    /// Constant deterministic control `α_t = value`.
    pub fn constant(value: Vec<f64>) -> Self {
        let bound = norm(&value).max(f64::MIN_POSITIVE);
        ControlSpec::Deterministic {
            rule: Arc::new(move |_, out| out.copy_from_slice(&value)),
            bound,
        }
    }

    pub fn deterministic<F>(bound: f64, rule: F) -> Self
    where
        F: Fn(f64, &mut [f64]) + Send + Sync + 'static,
    {
        ControlSpec::Deterministic {
            rule: Arc::new(rule),
            bound,
        }
    }

    pub fn markovian<F>(bound: f64, rule: F) -> Self
    where
        F: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        ControlSpec::Markovian {
            rule: Arc::new(rule),
            bound,
        }
    }

    /// Linear feedback `φ(t, x) = -gain · x`.
    pub fn linear_feedback(gain: f64, bound: f64) -> Self {
        ControlSpec::markovian(bound, move |_, x, out| {
            for (o, xi) in out.iter_mut().zip(x) {
                *o = -gain * xi;
            }
        })
    }

    pub fn coin_flip(scale: f64) -> Self {
        ControlSpec::CoinFlip { scale }
    }

    pub fn running_max_feedback<F>(bound: f64, rule: F) -> Self
    where
        F: Fn(f64, &[f64], f64, &mut [f64]) + Send + Sync + 'static,
    {
        ControlSpec::RunningMaxFeedback {
            rule: Arc::new(rule),
            bound,
        }
    }

    /// `h(t, x, m) = -(x / |x|) · min(cap, m)`, pushing towards the origin
    /// with a strength set by the running maximum of `|X|`.
    pub fn running_max_centering(cap: f64) -> Self {
        ControlSpec::running_max_feedback(cap, move |_, x, m, out| {
            let r = norm(x);
            let strength = cap.min(m);
            if r == 0.0 {
                out.fill(0.0);
            } else {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = -strength * xi / r;
                }
            }
        })
    }

    pub fn path_functional<F>(bound: f64, rule: F) -> Self
    where
        F: Fn(&ControlContext<'_>, &mut [f64]) + Send + Sync + 'static,
    {
        ControlSpec::PathFunctional {
            rule: Arc::new(rule),
            bound,
        }
    }

    /// Unbounded open-loop control `α_t = θ W_t`.
    pub fn brownian_feedback(theta: f64) -> Self {
        ControlSpec::path_functional(f64::INFINITY, move |ctx, out| {
            for (o, w) in out.iter_mut().zip(ctx.brownian) {
                *o = theta * w;
            }
        })
    }

    pub fn bound(&self) -> f64 {
        match self {
            ControlSpec::Markovian { bound, .. }
            | ControlSpec::Deterministic { bound, .. }
            | ControlSpec::RunningMaxFeedback { bound, .. }
            | ControlSpec::PathFunctional { bound, .. } => *bound,
            ControlSpec::CoinFlip { scale } => scale.abs(),
            ControlSpec::Truncated { inner, radius } => inner.bound().min(*radius),
        }
    }

    pub fn is_markovian(&self) -> bool {
        match self {
            ControlSpec::Markovian { .. } | ControlSpec::Deterministic { .. } => true,
            ControlSpec::Truncated { inner, .. } => inner.is_markovian(),
            _ => false,
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            ControlSpec::Markovian { .. } => "markovian",
            ControlSpec::Deterministic { .. } => "deterministic",
            ControlSpec::CoinFlip { .. } => "coin_flip",
            ControlSpec::RunningMaxFeedback { .. } => "running_max_feedback",
            ControlSpec::PathFunctional { .. } => "custom_path_functional",
            ControlSpec::Truncated { .. } => "truncated",
        }
    }

    /// Writes `α_{t_k}` into `out` (length = state dimension).
    pub fn evaluate(&self, ctx: &ControlContext<'_>, out: &mut [f64]) {
        match self {
            ControlSpec::Markovian { rule, .. } => rule(ctx.t, ctx.state, out),
            ControlSpec::Deterministic { rule, .. } => rule(ctx.t, out),
            ControlSpec::CoinFlip { scale } => {
                out.fill(0.0);
                out[0] = scale * ctx.initial.sign();
            }
            ControlSpec::RunningMaxFeedback { rule, .. } => {
                rule(ctx.t, ctx.state, ctx.running_max_norm, out)
            }
            ControlSpec::PathFunctional { rule, .. } => rule(ctx, out),
            ControlSpec::Truncated { inner, radius } => {
                inner.evaluate(ctx, out);
                project_onto_ball(out, *radius);
            }
        }
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Radial projection `a ↦ a · min(1, radius / |a|)`, identity inside the ball.
pub fn project_onto_ball(a: &mut [f64], radius: f64) {
    let r = norm(a);
    if r <= radius {
        return;
    }
    if radius <= 0.0 {
        a.fill(0.0);
        return;
    }
    let scale = radius / r;
    for x in a.iter_mut() {
        *x *= scale;
    }
    // rounding can leave the result one ulp outside the ball
    while norm(a) > radius {
        for x in a.iter_mut() {
            *x *= 1.0 - f64::EPSILON;
        }
    }
}

/// Control whose value is the projection of `control` onto the centered
/// ball of radius `radius`; the declared bound becomes `min(B, radius)`.
///
/// `radius = 0` yields the zero control.
pub fn truncate_control(control: &ControlSpec, radius: f64) -> Result<ControlSpec> {
    if !(radius >= 0.0) {
        return Err(Error::InvalidArgument {
            name: "n",
            reason: format!("truncation radius must be >= 0, got {radius}"),
        });
    }
    Ok(ControlSpec::Truncated {
        inner: Box::new(control.clone()),
        radius,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx_at<'a>(
        t: f64,
        state: &'a [f64],
        w: &'a [f64],
        initial: &'a InitialRandomness,
    ) -> ControlContext<'a> {
        ControlContext {
            t,
            step: 0,
            state,
            history: state,
            brownian: w,
            running_max_norm: norm(state),
            initial,
        }
    }

    const HEADS: InitialRandomness = InitialRandomness {
        uniforms: [0.1, 0.5, 0.5, 0.5],
    };
    const TAILS: InitialRandomness = InitialRandomness {
        uniforms: [0.9, 0.5, 0.5, 0.5],
    };

    #[test]
    fn truncation_projects_radially() {
        let c = truncate_control(&ControlSpec::constant(vec![3.0, 4.0]), 1.0).unwrap();
        let mut out = [0.0; 2];
        c.evaluate(&ctx_at(0.0, &[0.0, 0.0], &[0.0, 0.0], &HEADS), &mut out);
        assert!((out[0] - 0.6).abs() < 1e-15 && (out[1] - 0.8).abs() < 1e-15);
        assert!(norm(&out) <= 1.0);
        assert_eq!(c.bound(), 1.0);
    }

    #[test]
    fn truncation_inside_ball_is_identity() {
        let base = ControlSpec::constant(vec![0.3, -0.4]);
        let c = truncate_control(&base, 2.0).unwrap();
        let mut out = [0.0; 2];
        c.evaluate(&ctx_at(0.0, &[0.0, 0.0], &[0.0, 0.0], &HEADS), &mut out);
        assert_eq!(out, [0.3, -0.4]);
        assert_eq!(c.bound(), base.bound());
    }

    #[test]
    fn truncation_at_zero_is_zero_control() {
        let c = truncate_control(&ControlSpec::coin_flip(5.0), 0.0).unwrap();
        let mut out = [7.0];
        c.evaluate(&ctx_at(0.0, &[0.0], &[0.0], &TAILS), &mut out);
        assert_eq!(out, [0.0]);
        assert!(truncate_control(&ControlSpec::coin_flip(5.0), -1.0).is_err());
        assert!(truncate_control(&ControlSpec::coin_flip(5.0), f64::NAN).is_err());
    }

    #[test]
    fn truncation_bounds_unbounded_controls() {
        let c = ControlSpec::brownian_feedback(2.0);
        assert_eq!(c.bound(), f64::INFINITY);
        let t = truncate_control(&c, 3.0).unwrap();
        assert_eq!(t.bound(), 3.0);
        let mut out = [0.0];
        t.evaluate(&ctx_at(0.5, &[0.0], &[10.0], &HEADS), &mut out);
        assert_eq!(out, [3.0]);
    }

    #[test]
    fn coin_flip_uses_initial_sign() {
        let c = ControlSpec::coin_flip(2.0);
        let mut out = [0.0, 0.0];
        c.evaluate(&ctx_at(0.0, &[0.0, 0.0], &[0.0, 0.0], &HEADS), &mut out);
        assert_eq!(out, [2.0, 0.0]);
        c.evaluate(&ctx_at(0.0, &[0.0, 0.0], &[0.0, 0.0], &TAILS), &mut out);
        assert_eq!(out, [-2.0, 0.0]);
        assert!(!c.is_markovian());
    }

    #[test]
    fn running_max_centering_points_inward() {
        let c = ControlSpec::running_max_centering(1.0);
        let mut out = [0.0];
        let mut ctx = ctx_at(0.0, &[0.5], &[0.0], &HEADS);
        ctx.running_max_norm = 0.7;
        c.evaluate(&ctx, &mut out);
        assert!((out[0] + 0.7).abs() < 1e-15);
        ctx.running_max_norm = 3.0;
        c.evaluate(&ctx, &mut out);
        assert_eq!(out, [-1.0]);
    }

    #[test]
    fn projection_never_exceeds_radius() {
        for &(x, y, r) in &[
            (1e10, 3.0, 0.1),
            (0.1, 0.2, 0.2),
            (1.0 / 3.0, 2.0 / 7.0, 0.3),
        ] {
            let mut a = [x, y];
            project_onto_ball(&mut a, r);
            assert!(norm(&a) <= r, "{a:?} {r}");
        }
    }
}
