//! Euler–Maruyama simulation of the controlled diffusion
//! `dX_t = α_t dt + σ dW_t`, killed at its first exit from the domain.

mod control;
mod ensemble;
pub mod streams;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use control::{
    project_onto_ball, truncate_control, ControlContext, ControlSpec, InitialRandomness,
    MarkovianRule, PathRule, RunningMaxRule, ScheduleRule,
};
pub use ensemble::{mean_sup_squared_distance, EnsembleSummary, ParticleEnsemble};

use crate::error::{Error, Result};
use crate::geometry::{interpolate_crossing, Domain};
use control::norm;
pub(crate) use control::norm as norm_of;
use streams::{particle_rng, StreamPurpose};

/// Relative slack allowed when checking `|α| <= B` in floating point.
const BOUND_SLACK: f64 = 1e-12;

/// Particles simulated per parallel work item.
const CHUNK: usize = 256;
/// Work items gathered before their buffers are appended to the ensemble.
const CHUNKS_PER_BATCH: usize = 64;

/// Uniform grid `t_k = k Δt`, `k = 0..=K`, with `K Δt = T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid")]
pub struct TimeGrid {
    horizon: f64,
    dt: f64,
    #[serde(skip)]
    steps: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    horizon: f64,
    dt: f64,
}

impl TryFrom<RawGrid> for TimeGrid {
    type Error = Error;
    fn try_from(raw: RawGrid) -> Result<Self> {
        TimeGrid::new(raw.horizon, raw.dt)
    }
}

impl TimeGrid {
    pub fn new(horizon: f64, dt: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidGrid(format!("dt must be positive, got {dt}")));
        }
        let ratio = horizon / dt;
        let steps = ratio.round();
        if steps < 1.0 || (steps - ratio).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidGrid("T/dt not integral".into()));
        }
        if steps > u32::MAX as f64 - 2.0 {
            return Err(Error::InvalidGrid("too many steps".into()));
        }
        Ok(TimeGrid {
            horizon,
            dt,
            steps: steps as usize,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of steps `K`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// `t_k`; the last node is exactly `T`.
    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        if k >= self.steps {
            self.horizon
        } else {
            k as f64 * self.dt
        }
    }

    /// Index of the grid node nearest to `t`.
    pub fn nearest_index(&self, t: f64) -> Result<usize> {
        if !(t >= 0.0 && t <= self.horizon * (1.0 + 1e-12)) {
            return Err(Error::TimeOutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        Ok(((t / self.dt).round() as usize).min(self.steps))
    }
}

/// Everything besides the control that determines an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationParams {
    pub domain: Domain,
    pub grid: TimeGrid,
    pub x0: Vec<f64>,
    pub n_particles: usize,
    pub seed: u64,
    pub sigma: f64,
    pub bridge_correction: bool,
}

impl SimulationParams {
    /// Unit volatility, bridge correction on.
    pub fn new(
        domain: Domain,
        grid: TimeGrid,
        x0: Vec<f64>,
        n_particles: usize,
        seed: u64,
    ) -> Self {
        SimulationParams {
            domain,
            grid,
            x0,
            n_particles,
            seed,
            sigma: 1.0,
            bridge_correction: true,
        }
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_bridge_correction(mut self, on: bool) -> Self {
        self.bridge_correction = on;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_particles(mut self, n: usize) -> Self {
        self.n_particles = n;
        self
    }

    fn validate(&self, control: &ControlSpec) -> Result<()> {
        if self.n_particles == 0 {
            return Err(Error::InvalidArgument {
                name: "n_particles",
                reason: "need at least one particle".into(),
            });
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidArgument {
                name: "sigma",
                reason: format!("must be positive, got {}", self.sigma),
            });
        }
        if !self.domain.contains(&self.x0)? {
            return Err(Error::InitialStateOutside {
                x0: self.x0.clone(),
            });
        }
        let bound = control.bound();
        if !(bound.is_finite() && bound >= 0.0) {
            return Err(Error::UnboundedControl(bound));
        }
        Ok(())
    }
}

struct ParticleOutcome {
    death_step: u32,
    exit_time: f64,
    on_boundary: bool,
}

/// Buffers of one work item: several consecutive particles.
#[derive(Default)]
struct ChunkBuffers {
    outcomes: Vec<ParticleOutcome>,
    rows: Vec<usize>,
    states: Vec<f64>,
    controls: Vec<f64>,
}

/// Simulates `n_particles` independent copies of the killed controlled SDE.
///
/// Each step applies `X_{k+1} = X_k + α_k Δt + σ √Δt ξ_k` to particles alive
/// at `t_k`. A particle dies at the first node outside the domain; with the
/// bridge correction it also dies with probability
/// `exp(-2 d_k d_{k+1} / (σ² Δt))` between two inside nodes at boundary
/// distances `d_k`, `d_{k+1}`. The result depends only on the parameters
/// and the control, never on the thread schedule.
pub fn simulate_ensemble(
    control: &ControlSpec,
    params: &SimulationParams,
) -> Result<ParticleEnsemble> {
    params.validate(control)?;
    let n = params.n_particles;
    let dim = params.x0.len();
    let steps = params.grid.steps();

    let mut death_step = Vec::with_capacity(n);
    let mut exit_times = Vec::with_capacity(n);
    let mut on_boundary = Vec::with_capacity(n);
    let mut offsets = Vec::with_capacity(n + 1);
    offsets.push(0usize);
    let mut states = Vec::new();
    let mut controls = Vec::new();

    let chunk_starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
    for batch in chunk_starts.chunks(CHUNKS_PER_BATCH) {
        let results: Vec<Result<ChunkBuffers>> = batch
            .par_iter()
            .map(|&start| simulate_chunk(control, params, start, (start + CHUNK).min(n)))
            .collect();
        for chunk in results {
            let chunk = chunk?;
            states.extend_from_slice(&chunk.states);
            controls.extend_from_slice(&chunk.controls);
            for (outcome, rows) in chunk.outcomes.into_iter().zip(chunk.rows) {
                death_step.push(outcome.death_step);
                exit_times.push(outcome.exit_time);
                on_boundary.push(outcome.on_boundary);
                offsets.push(offsets.last().unwrap() + rows);
            }
        }
    }
    states.shrink_to_fit();
    controls.shrink_to_fit();
    debug_assert_eq!(states.len(), offsets[n] * dim);
    debug_assert_eq!(controls.len(), (offsets[n] - n) * dim);
    debug_assert!(death_step.iter().all(|&s| s as usize <= steps + 1));

    Ok(ParticleEnsemble {
        domain: params.domain.clone(),
        grid: params.grid,
        x0: params.x0.clone(),
        sigma: params.sigma,
        seed: params.seed,
        bridge_correction: params.bridge_correction,
        control_bound: control.bound(),
        death_step,
        exit_times,
        on_boundary,
        offsets,
        states,
        controls: Some(controls),
        zeros: vec![0.0; dim],
    })
}

/// Re-runs the recursion of `ensemble` under another control, reusing the
/// identical per-particle noise streams (common random numbers).
pub fn resimulate_with_common_noise(
    ensemble: &ParticleEnsemble,
    control: &ControlSpec,
) -> Result<ParticleEnsemble> {
    let params = SimulationParams {
        domain: ensemble.domain.clone(),
        grid: ensemble.grid,
        x0: ensemble.x0.clone(),
        n_particles: ensemble.len(),
        seed: ensemble.seed,
        sigma: ensemble.sigma,
        bridge_correction: ensemble.bridge_correction,
    };
    simulate_ensemble(control, &params)
}

fn simulate_chunk(
    control: &ControlSpec,
    params: &SimulationParams,
    start: usize,
    end: usize,
) -> Result<ChunkBuffers> {
    let mut buf = ChunkBuffers::default();
    for i in start..end {
        let before = buf.states.len();
        let outcome = simulate_particle(control, params, i, &mut buf.states, &mut buf.controls)?;
        buf.rows.push((buf.states.len() - before) / params.x0.len());
        buf.outcomes.push(outcome);
    }
    Ok(buf)
}

/// Appends the particle's stored nodes to `states` and its controls to `controls`.
fn simulate_particle(
    control: &ControlSpec,
    params: &SimulationParams,
    particle: usize,
    states: &mut Vec<f64>,
    controls: &mut Vec<f64>,
) -> Result<ParticleOutcome> {
    let domain = &params.domain;
    let grid = &params.grid;
    let dim = params.x0.len();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let sigma = params.sigma;
    let bridge_scale = 2.0 / (sigma * sigma * dt);
    let bound = control.bound();
    let bound_check = bound * (1.0 + BOUND_SLACK);

    let mut noise = particle_rng(params.seed, particle, StreamPurpose::Noise);
    let mut bridge = particle_rng(params.seed, particle, StreamPurpose::Bridge);
    let initial = {
        let mut rng = particle_rng(params.seed, particle, StreamPurpose::Initial);
        InitialRandomness {
            uniforms: [rng.gen(), rng.gen(), rng.gen(), rng.gen()],
        }
    };

    let base = states.len();
    states.extend_from_slice(&params.x0);
    let mut brownian = vec![0.0; dim];
    let mut alpha = vec![0.0; dim];
    let mut next = vec![0.0; dim];
    let mut running_max = norm(&params.x0);
    let mut dist = domain.signed_distance_unchecked(&params.x0);

    for k in 0..grid.steps() {
        let t = grid.time(k);
        {
            let history = &states[base..];
            let ctx = ControlContext {
                t,
                step: k,
                state: &history[k * dim..(k + 1) * dim],
                history,
                brownian: &brownian,
                running_max_norm: running_max,
                initial: &initial,
            };
            control.evaluate(&ctx, &mut alpha);
        }
        if alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFiniteControl { t });
        }
        let a_norm = norm(&alpha);
        if a_norm > bound_check {
            return Err(Error::BoundViolation {
                norm: a_norm,
                bound,
                t,
            });
        }
        controls.extend_from_slice(&alpha);

        let current = &states[base + k * dim..base + (k + 1) * dim];
        for j in 0..dim {
            let xi: f64 = noise.sample(StandardNormal);
            brownian[j] += sqrt_dt * xi;
            next[j] = current[j] + alpha[j] * dt + sigma * sqrt_dt * xi;
        }
        let u: f64 = bridge.gen();
        states.extend_from_slice(&next);

        let next_dist = domain.signed_distance_unchecked(&next);
        let t_next = grid.time(k + 1);
        if next_dist >= 0.0 {
            let tau = interpolate_crossing(t, t_next, dist, next_dist);
            return Ok(ParticleOutcome {
                death_step: (k + 1) as u32,
                exit_time: after(tau, t),
                on_boundary: false,
            });
        }
        if params.bridge_correction && bridge_kill(u, bridge_scale * dist * next_dist) {
            return Ok(ParticleOutcome {
                death_step: (k + 1) as u32,
                exit_time: after(t + 0.5 * dt, t),
                on_boundary: true,
            });
        }
        dist = next_dist;
        running_max = running_max.max(norm(&next));
    }

    Ok(ParticleOutcome {
        death_step: (grid.steps() + 1) as u32,
        exit_time: f64::INFINITY,
        on_boundary: false,
    })
}

/// `u < exp(-exponent)` for a uniform `u` on the 2^-53 lattice of `[0, 1)`.
#[inline]
fn bridge_kill(u: f64, exponent: f64) -> bool {
    // exp(-37) < 2^-53: only u == 0 can fall below it
    if exponent > 37.0 {
        u == 0.0 && exponent < 745.0
    } else {
        u < (-exponent).exp()
    }
}

/// Keeps `τ > t_k` for a particle alive at node `k`.
fn after(tau: f64, t: f64) -> f64 {
    if tau > t {
        tau
    } else {
        t + f64::EPSILON * t.abs().max(1.0)
    }
}
