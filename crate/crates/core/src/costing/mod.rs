//! Conditional laws, survival curves and the conditional cost `J`.

mod cost;
mod wasserstein;

pub(crate) use cost::extended_real;

use serde::{Deserialize, Serialize};

pub use cost::{
    compare_costs, compute_cost, compute_cost_with, CostComparison, CostOrdering, CostReport,
    CostSpec, QuadraticCost, DEFAULT_BOOTSTRAP_RESAMPLES, LOW_ALIVE_WARNING,
};
pub use wasserstein::{ks_statistic, wasserstein1, wasserstein1_1d, SLICED_DIRECTIONS};

use crate::dynamics::ParticleEnsemble;
use crate::error::{Error, Result};

/// One point of the survival curve `t ↦ P[τ > t]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalPoint {
    pub t: f64,
    pub survival: f64,
    /// Binomial standard error `sqrt(p (1 - p) / N)`.
    pub stderr: f64,
}

/// Fraction of alive particles at every grid node.
pub fn survival_curve(ensemble: &ParticleEnsemble) -> Vec<SurvivalPoint> {
    let n = ensemble.len() as f64;
    ensemble
        .alive_counts()
        .into_iter()
        .enumerate()
        .map(|(k, alive)| {
            let p = alive as f64 / n;
            SurvivalPoint {
                t: ensemble.grid().time(k),
                survival: p,
                stderr: (p * (1.0 - p) / n).sqrt(),
            }
        })
        .collect()
}

/// `sup_k |S_a(t_k) - S_b(t_k)|` for curves on the same grid.
pub fn survival_gap(a: &[SurvivalPoint], b: &[SurvivalPoint]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p.survival - q.survival).abs())
        .fold(0.0, f64::max)
}

/// Empirical conditional law `L(X_t | τ > t)`: positions of alive particles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalMarginal {
    pub t: f64,
    dim: usize,
    samples: Vec<f64>,
}

impl ConditionalMarginal {
    /// `samples` is row-major with `dim` coordinates per particle.
    pub fn from_samples(t: f64, dim: usize, samples: Vec<f64>) -> Self {
        assert!(
            dim > 0 && samples.len().is_multiple_of(dim),
            "ragged samples"
        );
        ConditionalMarginal { t, dim, samples }
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn n_alive(&self) -> usize {
        self.samples.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.chunks(self.dim)
    }

    /// Coordinate-wise sample mean.
    pub fn mean(&self) -> Vec<f64> {
        let n = self.n_alive() as f64;
        let mut m = vec![0.0; self.dim];
        for p in self.points() {
            for (mi, x) in m.iter_mut().zip(p) {
                *mi += x / n;
            }
        }
        m
    }
}

/// Positions at the grid node nearest to `t` of the particles alive there.
pub fn conditional_marginal(ensemble: &ParticleEnsemble, t: f64) -> Result<ConditionalMarginal> {
    let k = ensemble.grid().nearest_index(t)?;
    let mut samples = Vec::new();
    for i in 0..ensemble.len() {
        if ensemble.is_alive(i, k) {
            samples.extend_from_slice(ensemble.state(i, k));
        }
    }
    if samples.is_empty() {
        return Err(Error::AllDead {
            t: ensemble.grid().time(k),
        });
    }
    Ok(ConditionalMarginal::from_samples(
        ensemble.grid().time(k),
        ensemble.dimension(),
        samples,
    ))
}
