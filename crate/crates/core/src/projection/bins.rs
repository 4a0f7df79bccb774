use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Domain;

/// Upper limit on the number of spatial cells of a bin specification.
pub const MAX_BINS: usize = 1 << 20;

/// Uniform boxes over the bounding box of the domain, `per_axis[j]` cells
/// along axis `j`. For an interval this is a uniform partition of `(a, b)`;
/// for a ball, boxes are implicitly clipped to `D` (cells outside `D` never
/// receive samples).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinSpec {
    pub per_axis: Vec<usize>,
}

impl BinSpec {
    pub fn uniform(per_axis: Vec<usize>) -> Self {
        BinSpec { per_axis }
    }

    /// 50 bins in one dimension, 32×16 boxes in the plane, 8 per axis above.
    pub fn default_for(domain: &Domain) -> Self {
        let per_axis = match domain.dimension() {
            1 => vec![50],
            2 => vec![32, 16],
            d => vec![8; d],
        };
        BinSpec { per_axis }
    }

    pub fn validate(&self, domain: &Domain) -> Result<()> {
        if self.per_axis.len() != domain.dimension() {
            return Err(Error::DimensionMismatch {
                expected: domain.dimension(),
                got: self.per_axis.len(),
            });
        }
        if self.per_axis.contains(&0) {
            return Err(Error::InvalidArgument {
                name: "bins",
                reason: "every axis needs at least one bin".into(),
            });
        }
        let total = self
            .per_axis
            .iter()
            .try_fold(1usize, |acc, &n| acc.checked_mul(n))
            .filter(|&t| t <= MAX_BINS);
        if total.is_none() {
            return Err(Error::InvalidArgument {
                name: "bins",
                reason: format!("more than {MAX_BINS} cells"),
            });
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.per_axis.iter().product()
    }
}

/// Resolved bin geometry over a concrete domain.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BinGrid {
    pub lower: Vec<f64>,
    pub width: Vec<f64>,
    pub per_axis: Vec<usize>,
    /// Row-major strides, last axis fastest.
    pub strides: Vec<usize>,
}

impl BinGrid {
    pub fn new(spec: &BinSpec, domain: &Domain) -> Result<Self> {
        spec.validate(domain)?;
        let (lower, upper) = domain.bounding_box();
        let width = lower
            .iter()
            .zip(&upper)
            .zip(&spec.per_axis)
            .map(|((lo, hi), &n)| (hi - lo) / n as f64)
            .collect();
        let d = spec.per_axis.len();
        let mut strides = vec![1; d];
        for j in (0..d.saturating_sub(1)).rev() {
            strides[j] = strides[j + 1] * spec.per_axis[j + 1];
        }
        Ok(BinGrid {
            lower,
            width,
            per_axis: spec.per_axis.clone(),
            strides,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.per_axis.iter().product()
    }

    /// Cell containing `x`; points on the upper faces go to the last cell.
    pub fn locate(&self, x: &[f64]) -> usize {
        let mut index = 0;
        for j in 0..x.len() {
            let u = (x[j] - self.lower[j]) / self.width[j];
            let cell = if u <= 0.0 {
                0
            } else {
                (u as usize).min(self.per_axis[j] - 1)
            };
            index += cell * self.strides[j];
        }
        index
    }

    pub fn center(&self, bin: usize) -> Vec<f64> {
        let mut rest = bin;
        (0..self.per_axis.len())
            .map(|j| {
                let cell = rest / self.strides[j];
                rest %= self.strides[j];
                self.lower[j] + (cell as f64 + 0.5) * self.width[j]
            })
            .collect()
    }

    /// Largest cell diameter.
    pub fn diameter(&self) -> f64 {
        self.width.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    /// For each axis, the lower neighbouring center index and the weight of
    /// the upper one, for multilinear interpolation between centers.
    pub fn interpolation_stencil(&self, x: &[f64], axis: usize) -> (usize, usize, f64) {
        let n = self.per_axis[axis];
        if n == 1 {
            return (0, 0, 0.0);
        }
        let u = (x[axis] - self.lower[axis]) / self.width[axis] - 0.5;
        if u <= 0.0 {
            return (0, 0, 0.0);
        }
        let i0 = u.floor() as usize;
        if i0 >= n - 1 {
            return (n - 1, n - 1, 0.0);
        }
        (i0, i0 + 1, u - i0 as f64)
    }
}
