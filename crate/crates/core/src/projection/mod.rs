//! Conditional Markovian projection of an open-loop control.
//!
//! Given an ensemble driven by `α`, the projected drift
//! `ᾱ(t, x) = 1_D(x) E[α_t | X_{t∧τ} = x]` is estimated slice by slice as the
//! average of the recorded controls of the alive particles falling in each
//! spatial bin. Fed back as a Markovian control, it reproduces the
//! conditional time-marginals `L(X_t | τ > t)` of the original process.

mod bins;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use bins::{BinSpec, MAX_BINS};

use crate::dynamics::{project_onto_ball, ControlSpec, ParticleEnsemble, TimeGrid};
use crate::error::{Error, Result};
use crate::geometry::Domain;
use bins::BinGrid;

/// Relative slack accepted on `|value| <= bound` when loading a field.
const LOAD_SLACK: f64 = 1e-12;

/// Piecewise-constant-in-time, binned-in-space estimate of `ᾱ`.
///
/// Slice `k` holds the drift used on `[t_k, t_{k+1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawField")]
pub struct DriftField {
    domain: Domain,
    grid: TimeGrid,
    bins: BinSpec,
    bound: f64,
    /// `slices × n_bins × dim`, row-major.
    values: Vec<f64>,
    /// `slices × n_bins`.
    counts: Vec<u64>,
    #[serde(skip)]
    layout: Option<BinGrid>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawField {
    domain: Domain,
    grid: TimeGrid,
    bins: BinSpec,
    bound: f64,
    values: Vec<f64>,
    counts: Vec<u64>,
}

impl TryFrom<RawField> for DriftField {
    type Error = Error;

    fn try_from(raw: RawField) -> Result<Self> {
        DriftField::from_parts(
            raw.domain, raw.grid, raw.bins, raw.bound, raw.values, raw.counts,
        )
    }
}

impl DriftField {
    /// Builds a field from raw arrays, validating shapes and the bound.
    pub fn from_parts(
        domain: Domain,
        grid: TimeGrid,
        bins: BinSpec,
        bound: f64,
        values: Vec<f64>,
        counts: Vec<u64>,
    ) -> Result<Self> {
        let layout = BinGrid::new(&bins, &domain)?;
        if !(bound.is_finite() && bound > 0.0) {
            return Err(Error::InvalidField(format!(
                "bound must be positive, got {bound}"
            )));
        }
        let dim = domain.dimension();
        let cells = grid
            .steps()
            .checked_mul(layout.n_bins())
            .ok_or_else(|| Error::InvalidField("field too large".into()))?;
        if counts.len() != cells {
            return Err(Error::InvalidField(format!(
                "expected {cells} counts, got {}",
                counts.len()
            )));
        }
        if cells.checked_mul(dim) != Some(values.len()) {
            return Err(Error::InvalidField(format!(
                "expected {} values, got {}",
                cells.saturating_mul(dim),
                values.len()
            )));
        }
        for v in values.chunks(dim) {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidField("non-finite value".into()));
            }
            if crate::dynamics::norm_of(v) > bound * (1.0 + LOAD_SLACK) {
                return Err(Error::InvalidField(
                    "value exceeds the declared bound".into(),
                ));
            }
        }
        let mut field = DriftField {
            domain,
            grid,
            bins,
            bound,
            values,
            counts,
            layout: Some(layout),
        };
        // snap loaded values exactly inside the ball
        for v in field.values.chunks_mut(dim) {
            project_onto_ball(v, bound);
        }
        Ok(field)
    }

    /// Field equal to `value` everywhere in `D` (for tests and baselines).
    pub fn constant(domain: Domain, grid: TimeGrid, bins: BinSpec, value: &[f64]) -> Result<Self> {
        if value.len() != domain.dimension() {
            return Err(Error::DimensionMismatch {
                expected: domain.dimension(),
                got: value.len(),
            });
        }
        let n_bins = bins.n_bins();
        let cells = grid.steps() * n_bins;
        let values = value
            .iter()
            .copied()
            .cycle()
            .take(cells * value.len())
            .collect();
        let bound = crate::dynamics::norm_of(value).max(f64::MIN_POSITIVE);
        DriftField::from_parts(domain, grid, bins, bound, values, vec![0; cells])
    }

    fn layout(&self) -> &BinGrid {
        self.layout
            .as_ref()
            .expect("layout is built on construction")
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn bins(&self) -> &BinSpec {
        &self.bins
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn dimension(&self) -> usize {
        self.domain.dimension()
    }

    pub fn n_slices(&self) -> usize {
        self.grid.steps()
    }

    pub fn n_bins(&self) -> usize {
        self.layout().n_bins()
    }

    pub fn value(&self, slice: usize, bin: usize) -> &[f64] {
        let d = self.dimension();
        let row = slice * self.n_bins() + bin;
        &self.values[row * d..(row + 1) * d]
    }

    pub fn count(&self, slice: usize, bin: usize) -> u64 {
        self.counts[slice * self.n_bins() + bin]
    }

    pub fn bin_center(&self, bin: usize) -> Vec<f64> {
        self.layout().center(bin)
    }

    /// Bin containing `x` (points outside the bounding box are clamped).
    pub fn locate(&self, x: &[f64]) -> usize {
        self.layout().locate(x)
    }

    /// Largest bin diameter.
    pub fn bin_diameter(&self) -> f64 {
        self.layout().diameter()
    }

    /// Writes `ᾱ(t, x)` into `out` without validating `t` (clamped to the grid).
    pub fn evaluate_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        if !self.domain.contains_unchecked(x) {
            return;
        }
        let slices = self.n_slices();
        let slice = ((t.max(0.0) / self.grid.dt()).round() as usize).min(slices - 1);
        let layout = self.layout();
        let d = self.dimension();
        let stencils: Vec<(usize, usize, f64)> =
            (0..d).map(|j| layout.interpolation_stencil(x, j)).collect();
        let base = slice * layout.n_bins();
        for corner in 0..(1usize << d) {
            let mut weight = 1.0;
            let mut bin = 0;
            for (j, &(lo, hi, w)) in stencils.iter().enumerate() {
                if corner >> j & 1 == 1 {
                    weight *= w;
                    bin += hi * layout.strides[j];
                } else {
                    weight *= 1.0 - w;
                    bin += lo * layout.strides[j];
                }
            }
            if weight == 0.0 {
                continue;
            }
            let row = (base + bin) * d;
            for (o, v) in out.iter_mut().zip(&self.values[row..row + d]) {
                *o += weight * v;
            }
        }
        project_onto_ball(out, self.bound);
    }
}

/// `ᾱ(t, x)`: nearest time slice, multilinear interpolation between bin
/// centers, exactly zero outside `D`, norm at most the field bound.
pub fn evaluate_drift(field: &DriftField, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    let horizon = field.grid.horizon();
    if !(t >= 0.0 && t <= horizon * (1.0 + 1e-12)) {
        return Err(Error::TimeOutOfRange { t, horizon });
    }
    if x.len() != field.dimension() {
        return Err(Error::DimensionMismatch {
            expected: field.dimension(),
            got: x.len(),
        });
    }
    let mut out = vec![0.0; x.len()];
    field.evaluate_into(t, x, &mut out);
    Ok(out)
}

/// Packages the field as a Markovian control with the field's bound.
pub fn as_markovian_control(field: DriftField) -> ControlSpec {
    let bound = field.bound;
    let field = Arc::new(field);
    ControlSpec::Markovian {
        rule: Arc::new(move |t, x, out| field.evaluate_into(t, x, out)),
        bound,
    }
}

/// Estimates `ᾱ` from the recorded controls of `ensemble`.
///
/// For each slice `k < K` and bin `c`, the value is the mean of `α_{t_k}`
/// over particles alive at `t_k` with `X_{t_k}` in `c`. Empty bins take the
/// value of the nearest non-empty bin of the same slice; slices with no
/// alive particle are zero.
pub fn estimate_projection(ensemble: &ParticleEnsemble, bins: &BinSpec) -> Result<DriftField> {
    if !ensemble.has_controls() {
        return Err(Error::MissingControls);
    }
    let domain = ensemble.domain().clone();
    let layout = BinGrid::new(bins, &domain)?;
    let grid = *ensemble.grid();
    let d = ensemble.dimension();
    let n_bins = layout.n_bins();
    let slices = grid.steps();

    let mut sums = vec![0.0; slices * n_bins * d];
    let mut counts = vec![0u64; slices * n_bins];
    for i in 0..ensemble.len() {
        let alive_slices = ensemble.death_step(i).min(slices);
        for k in 0..alive_slices {
            let cell = k * n_bins + layout.locate(ensemble.state(i, k));
            counts[cell] += 1;
            let a = ensemble.control(i, k).expect("controls checked above");
            for (s, v) in sums[cell * d..(cell + 1) * d].iter_mut().zip(a) {
                *s += v;
            }
        }
    }

    let bound = ensemble.control_bound();
    let mut values = sums;
    for (cell, &n) in counts.iter().enumerate() {
        if n > 0 {
            let v = &mut values[cell * d..(cell + 1) * d];
            for x in v.iter_mut() {
                *x /= n as f64;
            }
            project_onto_ball(v, bound);
        }
    }

    let centers: Vec<Vec<f64>> = (0..n_bins).map(|c| layout.center(c)).collect();
    for k in 0..slices {
        let slice_counts = &counts[k * n_bins..(k + 1) * n_bins];
        let occupied: Vec<usize> = (0..n_bins).filter(|&c| slice_counts[c] > 0).collect();
        if occupied.is_empty() {
            continue;
        }
        for c in 0..n_bins {
            if slice_counts[c] > 0 {
                continue;
            }
            let nearest = nearest_bin(&centers, c, &occupied);
            let (dst, src) = ((k * n_bins + c) * d, (k * n_bins + nearest) * d);
            values.copy_within(src..src + d, dst);
        }
    }

    Ok(DriftField {
        domain,
        grid,
        bins: bins.clone(),
        bound,
        values,
        counts,
        layout: Some(layout),
    })
}

/// Closest occupied bin by center distance; ties go to the lowest index.
fn nearest_bin(centers: &[Vec<f64>], target: usize, occupied: &[usize]) -> usize {
    let dist2 = |c: usize| -> f64 {
        centers[c]
            .iter()
            .zip(&centers[target])
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    };
    let mut best = occupied[0];
    let mut best_d = dist2(best);
    for &c in &occupied[1..] {
        let dc = dist2(c);
        if dc < best_d {
            best = c;
            best_d = dc;
        }
    }
    best
}
