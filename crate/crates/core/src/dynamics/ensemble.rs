use serde::Serialize;

use crate::dynamics::streams::{stream_id, StreamPurpose};
use crate::dynamics::TimeGrid;
use crate::geometry::{DiscretePath, Domain};

/// `N` simulated particles of the stopped dynamics on a common time grid.
///
/// Paths are stored up to and including the node at which each particle was
/// killed; later nodes read back the frozen state, so `state(i, k)` is the
/// stopped process `X_{t_k ∧ τ}` for every `k`. A particle is alive at node
/// `k` iff `τ > t_k`.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    pub(crate) domain: Domain,
    pub(crate) grid: TimeGrid,
    pub(crate) x0: Vec<f64>,
    pub(crate) sigma: f64,
    pub(crate) seed: u64,
    pub(crate) bridge_correction: bool,
    pub(crate) control_bound: f64,
    /// First node index at which the particle is dead (`steps + 1` if it survives).
    pub(crate) death_step: Vec<u32>,
    pub(crate) exit_times: Vec<f64>,
    pub(crate) on_boundary: Vec<bool>,
    /// Row offsets into `states`; length `N + 1`.
    pub(crate) offsets: Vec<usize>,
    pub(crate) states: Vec<f64>,
    /// Row `r` of particle `i` lives at `offsets[i] - i + r`.
    pub(crate) controls: Option<Vec<f64>>,
    pub(crate) zeros: Vec<f64>,
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.death_step.len()
    }

    pub fn is_empty(&self) -> bool {
        self.death_step.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.x0.len()
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn bridge_correction(&self) -> bool {
        self.bridge_correction
    }

    /// Declared bound of the control that produced the ensemble.
    pub fn control_bound(&self) -> f64 {
        self.control_bound
    }

    pub fn has_controls(&self) -> bool {
        self.controls.is_some()
    }

    /// Discards recorded control values to save memory.
    pub fn drop_controls(mut self) -> Self {
        self.controls = None;
        self
    }

    /// RNG stream id of the particle's Brownian increments.
    pub fn noise_seed(&self, i: usize) -> u64 {
        stream_id(i, StreamPurpose::Noise)
    }

    /// Exit time, `f64::INFINITY` if the particle survived the horizon.
    pub fn exit_time(&self, i: usize) -> f64 {
        self.exit_times[i]
    }

    pub fn exit_times(&self) -> &[f64] {
        &self.exit_times
    }

    /// Killed by the bridge test while its last node was still inside the domain.
    pub fn killed_on_boundary(&self, i: usize) -> bool {
        self.on_boundary[i]
    }

    pub fn death_step(&self, i: usize) -> usize {
        self.death_step[i] as usize
    }

    #[inline]
    pub fn is_alive(&self, i: usize, k: usize) -> bool {
        k < self.death_step[i] as usize
    }

    /// Number of stored nodes for particle `i`.
    #[inline]
    pub fn stored_nodes(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    /// Stopped state `X_{t_k ∧ τ}`.
    #[inline]
    pub fn state(&self, i: usize, k: usize) -> &[f64] {
        let d = self.dimension();
        let row = self.offsets[i] + k.min(self.stored_nodes(i) - 1);
        &self.states[row * d..(row + 1) * d]
    }

    /// Control `α_{t_k}` realized by particle `i`, zero once it is dead.
    /// `None` when controls were not recorded.
    #[inline]
    pub fn control(&self, i: usize, k: usize) -> Option<&[f64]> {
        let controls = self.controls.as_ref()?;
        if k + 1 >= self.stored_nodes(i) || k >= self.grid.steps() {
            return Some(&self.zeros);
        }
        let d = self.dimension();
        let row = self.offsets[i] - i + k;
        Some(&controls[row * d..(row + 1) * d])
    }

    pub fn alive_count(&self, k: usize) -> usize {
        self.death_step.iter().filter(|&&s| k < s as usize).count()
    }

    /// Alive counts at every node `0..=steps`, in one pass.
    pub fn alive_counts(&self) -> Vec<usize> {
        let nodes = self.grid.steps() + 1;
        let mut deaths = vec![0usize; nodes + 1];
        for &s in &self.death_step {
            deaths[(s as usize).min(nodes)] += 1;
        }
        let mut alive = self.len();
        let mut counts = Vec::with_capacity(nodes);
        for k in 0..nodes {
            alive -= deaths[k];
            counts.push(alive);
        }
        counts
    }

    /// Stopped path of particle `i` over the full grid.
    pub fn path(&self, i: usize) -> DiscretePath {
        let nodes = self.grid.steps() + 1;
        let times = (0..nodes).map(|k| self.grid.time(k)).collect();
        let mut points = Vec::with_capacity(nodes * self.dimension());
        for k in 0..nodes {
            points.extend_from_slice(self.state(i, k));
        }
        DiscretePath::new(self.dimension(), times, points).expect("grid times are valid")
    }

    pub fn summary(&self) -> EnsembleSummary {
        let counts = self.alive_counts();
        let n = self.len();
        let exited: Vec<f64> = self
            .exit_times
            .iter()
            .copied()
            .filter(|t| t.is_finite())
            .collect();
        EnsembleSummary {
            n_particles: n,
            dimension: self.dimension(),
            horizon: self.grid.horizon(),
            dt: self.grid.dt(),
            seed: self.seed,
            sigma: self.sigma,
            bridge_correction: self.bridge_correction,
            control_bound: self.control_bound,
            survival_at_horizon: *counts.last().unwrap() as f64 / n as f64,
            n_exited: exited.len(),
            n_bridge_kills: self.on_boundary.iter().filter(|b| **b).count(),
            mean_exit_time_of_exited: if exited.is_empty() {
                None
            } else {
                Some(exited.iter().sum::<f64>() / exited.len() as f64)
            },
        }
    }
}

/// Compact JSON description of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleSummary {
    pub n_particles: usize,
    pub dimension: usize,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
    pub sigma: f64,
    pub bridge_correction: bool,
    pub control_bound: f64,
    pub survival_at_horizon: f64,
    pub n_exited: usize,
    pub n_bridge_kills: usize,
    pub mean_exit_time_of_exited: Option<f64>,
}

/// `E[sup_k |X_k - X'_k|^2]` over particles of two ensembles on the same grid.
pub fn mean_sup_squared_distance(a: &ParticleEnsemble, b: &ParticleEnsemble) -> f64 {
    assert_eq!(a.len(), b.len(), "ensembles must have the same size");
    assert_eq!(a.grid, b.grid, "ensembles must share the grid");
    let nodes = a.grid.steps() + 1;
    let total: f64 = (0..a.len())
        .map(|i| {
            (0..nodes)
                .map(|k| {
                    a.state(i, k)
                        .iter()
                        .zip(b.state(i, k))
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum::<f64>()
                })
                .fold(0.0, f64::max)
        })
        .sum();
    total / a.len() as f64
}
