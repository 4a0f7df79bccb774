//! Model domains and exit times of discretized paths.
//!
//! Only domains with a smooth boundary are representable: open intervals in
//! one dimension and open Euclidean balls in any dimension. Signed distances
//! are negative inside the domain, zero on the boundary and positive outside.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance under which a node counts as touching the boundary.
pub const DEFAULT_BOUNDARY_TOL: f64 = 1e-9;

/// An open, bounded, nonempty domain with smooth boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", try_from = "RawDomain")]
pub enum Domain {
    Interval { a: f64, b: f64 },
    Ball { center: Vec<f64>, radius: f64 },
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RawDomain {
    Interval { a: f64, b: f64 },
    Ball { center: Vec<f64>, radius: f64 },
}

impl TryFrom<RawDomain> for Domain {
    type Error = Error;

    fn try_from(raw: RawDomain) -> Result<Self> {
        match raw {
            RawDomain::Interval { a, b } => Domain::interval(a, b),
            RawDomain::Ball { center, radius } => Domain::ball(center, radius),
        }
    }
}

impl Domain {
    pub fn interval(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::InvalidDomain(format!(
                "interval requires finite a < b, got ({a}, {b})"
            )));
        }
        Ok(Domain::Interval { a, b })
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.is_empty() {
            return Err(Error::InvalidDomain(
                "ball center must have dimension >= 1".into(),
            ));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidDomain("ball center must be finite".into()));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidDomain(format!(
                "ball radius must be positive, got {radius}"
            )));
        }
        Ok(Domain::Ball { center, radius })
    }

    /// Unit ball centered at the origin of `R^dim`.
    pub fn unit_ball(dim: usize) -> Result<Self> {
        Domain::ball(vec![0.0; dim], 1.0)
    }

    pub fn dimension(&self) -> usize {
        match self {
            Domain::Interval { .. } => 1,
            Domain::Ball { center, .. } => center.len(),
        }
    }

    /// Axis-aligned bounding box as `(lower, upper)` corners.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Domain::Interval { a, b } => (vec![*a], vec![*b]),
            Domain::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        let expected = self.dimension();
        if x.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Signed distance without the dimension check; callers guarantee `x.len() == dimension()`.
    #[inline]
    pub(crate) fn signed_distance_unchecked(&self, x: &[f64]) -> f64 {
        match self {
            Domain::Interval { a, b } => (a - x[0]).max(x[0] - b),
            Domain::Ball { center, radius } => {
                let sq: f64 = x
                    .iter()
                    .zip(center)
                    .map(|(xi, ci)| (xi - ci) * (xi - ci))
                    .sum();
                sq.sqrt() - radius
            }
        }
    }

    #[inline]
    pub(crate) fn contains_unchecked(&self, x: &[f64]) -> bool {
        self.signed_distance_unchecked(x) < 0.0
    }

    pub fn signed_distance(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.signed_distance_unchecked(x))
    }

    /// Indicator of the open domain.
    pub fn contains(&self, x: &[f64]) -> Result<bool> {
        self.check_dim(x)?;
        Ok(self.contains_unchecked(x))
    }
}

/// Free-function form of [`Domain::signed_distance`].
pub fn signed_distance(x: &[f64], domain: &Domain) -> Result<f64> {
    domain.signed_distance(x)
}

/// Free-function form of [`Domain::contains`].
pub fn contains(x: &[f64], domain: &Domain) -> Result<bool> {
    domain.contains(x)
}

/// A continuous path sampled on a strictly increasing time grid starting at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePath {
    dim: usize,
    times: Vec<f64>,
    points: Vec<f64>,
}

impl DiscretePath {
    /// `points` is row-major: `times.len()` rows of `dim` coordinates.
    pub fn new(dim: usize, times: Vec<f64>, points: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidPath("dimension must be >= 1".into()));
        }
        if times.is_empty() {
            return Err(Error::InvalidPath("path needs at least one node".into()));
        }
        if points.len() != times.len() * dim {
            return Err(Error::InvalidPath(format!(
                "{} times but {} coordinates for dimension {dim}",
                times.len(),
                points.len()
            )));
        }
        if times[0] != 0.0 {
            return Err(Error::InvalidPath("time grid must start at 0".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidPath(
                "times must be strictly increasing".into(),
            ));
        }
        Ok(DiscretePath { dim, times, points })
    }

    /// Samples `f` on the uniform grid `0, step, 2 step, ..., horizon`.
    pub fn sample<F>(dim: usize, horizon: f64, step: f64, mut f: F) -> Result<Self>
    where
        F: FnMut(f64) -> Vec<f64>,
    {
        if !(step > 0.0 && horizon >= 0.0) {
            return Err(Error::InvalidPath("need step > 0 and horizon >= 0".into()));
        }
        let n = (horizon / step).round() as usize;
        let mut times = Vec::with_capacity(n + 1);
        let mut points = Vec::with_capacity((n + 1) * dim);
        for k in 0..=n {
            let t = k as f64 * step;
            let x = f(t);
            if x.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: x.len(),
                });
            }
            times.push(t);
            points.extend_from_slice(&x);
        }
        DiscretePath::new(dim, times, points)
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k * self.dim..(k + 1) * self.dim]
    }

    fn check_domain(&self, domain: &Domain) -> Result<()> {
        if domain.dimension() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: domain.dimension(),
                got: self.dim,
            });
        }
        Ok(())
    }

    fn signed_distances(&self, domain: &Domain) -> Vec<f64> {
        (0..self.len())
            .map(|k| domain.signed_distance_unchecked(self.point(k)))
            .collect()
    }
}

/// Crossing instant of the segment `[t0, t1]` obtained by linear
/// interpolation of the signed distances `s0 < 0 <= s1`.
#[inline]
pub(crate) fn interpolate_crossing(t0: f64, t1: f64, s0: f64, s1: f64) -> f64 {
    let theta = (-s0) / (s1 - s0);
    t0 + (t1 - t0) * theta.clamp(0.0, 1.0)
}

/// First exit time of the path from `domain`, or `f64::INFINITY` when the
/// path stays inside on its whole time range.
///
/// The crossing instant is located by linear interpolation of the signed
/// distance between the last inside node and the first outside node. A
/// path starting on the boundary or outside exits at time 0.
pub fn exit_time(path: &DiscretePath, domain: &Domain) -> Result<f64> {
    path.check_domain(domain)?;
    let s = path.signed_distances(domain);
    if s[0] >= 0.0 {
        return Ok(0.0);
    }
    for k in 0..s.len() - 1 {
        if s[k + 1] >= 0.0 {
            return Ok(interpolate_crossing(
                path.times[k],
                path.times[k + 1],
                s[k],
                s[k + 1],
            ));
        }
    }
    Ok(f64::INFINITY)
}

/// [`grazing_check_with_tol`] with [`DEFAULT_BOUNDARY_TOL`].
pub fn grazing_check(path: &DiscretePath, domain: &Domain) -> Result<bool> {
    grazing_check_with_tol(path, domain, DEFAULT_BOUNDARY_TOL)
}

/// Returns `true` iff no grazing point is detected at grid resolution.
///
/// A grazing point is a time `t > 0` with `x_t` on the boundary and the path
/// staying in the closed domain right after `t`. At grid resolution this is
/// either a node within `tol` of the boundary whose successor is not
/// strictly outside, or a segment that enters the domain from strictly
/// outside (the interpolated path hits the boundary and then lies inside).
pub fn grazing_check_with_tol(path: &DiscretePath, domain: &Domain, tol: f64) -> Result<bool> {
    path.check_domain(domain)?;
    let s = path.signed_distances(domain);
    for k in 0..s.len().saturating_sub(1) {
        let (here, next) = (s[k], s[k + 1]);
        let touching = k > 0 && here.abs() <= tol && next <= tol;
        let entering = here > tol && next < -tol;
        if touching || entering {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_interval() -> Domain {
        Domain::interval(-1.0, 1.0).unwrap()
    }

    #[test]
    fn signed_distance_examples() {
        let ball = Domain::unit_ball(2).unwrap();
        assert_eq!(ball.signed_distance(&[0.0, 0.0]).unwrap(), -1.0);
        assert_eq!(ball.signed_distance(&[2.0, 0.0]).unwrap(), 1.0);
        assert_eq!(unit_interval().signed_distance(&[0.5]).unwrap(), -0.5);
        assert_eq!(
            Domain::unit_ball(1)
                .unwrap()
                .signed_distance(&[0.0])
                .unwrap(),
            -1.0
        );
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let ball = Domain::unit_ball(2).unwrap();
        assert!(matches!(
            ball.signed_distance(&[0.0]),
            Err(Error::DimensionMismatch {
                expected: 2,
                got: 1
            })
        ));
        assert!(unit_interval().contains(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn contains_examples() {
        let d = unit_interval();
        assert!(d.contains(&[0.0]).unwrap());
        assert!(!d.contains(&[1.0]).unwrap());
        assert!(!d.contains(&[-1.0]).unwrap());
        assert!(Domain::unit_ball(2)
            .unwrap()
            .contains(&[0.99, 0.0])
            .unwrap());
    }

    #[test]
    fn invalid_domains_rejected() {
        assert!(Domain::interval(1.0, 1.0).is_err());
        assert!(Domain::interval(2.0, 1.0).is_err());
        assert!(Domain::interval(f64::NAN, 1.0).is_err());
        assert!(Domain::ball(vec![0.0], 0.0).is_err());
        assert!(Domain::ball(vec![], 1.0).is_err());
    }

    #[test]
    fn domain_json_forms() {
        let d: Domain = serde_json::from_str(r#"{"kind":"interval","a":-1,"b":1}"#).unwrap();
        assert_eq!(d, unit_interval());
        let b: Domain =
            serde_json::from_str(r#"{"kind":"ball","center":[0,0],"radius":2}"#).unwrap();
        assert_eq!(b, Domain::ball(vec![0.0, 0.0], 2.0).unwrap());
        assert!(serde_json::from_str::<Domain>(r#"{"kind":"interval","a":1,"b":-1}"#).is_err());
        assert!(serde_json::from_str::<Domain>(r#"{"kind":"box","a":1}"#).is_err());
        let back: Domain = serde_json::from_str(&serde_json::to_string(&b).unwrap()).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn path_validation() {
        assert!(DiscretePath::new(1, vec![], vec![]).is_err());
        assert!(DiscretePath::new(1, vec![0.0, 0.0], vec![0.0, 0.0]).is_err());
        assert!(DiscretePath::new(1, vec![0.1], vec![0.0]).is_err());
        assert!(DiscretePath::new(2, vec![0.0], vec![0.0]).is_err());
        assert!(DiscretePath::new(1, vec![0.0], vec![0.0]).is_ok());
    }

    #[test]
    fn exit_time_linear_crossing() {
        let p = DiscretePath::new(1, vec![0.0, 1.0], vec![0.0, 2.0]).unwrap();
        assert_eq!(exit_time(&p, &unit_interval()).unwrap(), 0.5);
        // same path on a fine grid
        let p = DiscretePath::sample(1, 1.0, 1e-3, |t| vec![2.0 * t]).unwrap();
        assert!((exit_time(&p, &unit_interval()).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn exit_time_constant_path_never_exits() {
        let p = DiscretePath::sample(1, 1.0, 1e-2, |_| vec![0.0]).unwrap();
        assert_eq!(exit_time(&p, &unit_interval()).unwrap(), f64::INFINITY);
    }

    #[test]
    fn exit_time_start_outside_or_on_boundary() {
        let d = unit_interval();
        let outside = DiscretePath::new(1, vec![0.0, 1.0], vec![3.0, 0.0]).unwrap();
        assert_eq!(exit_time(&outside, &d).unwrap(), 0.0);
        let on_boundary = DiscretePath::new(1, vec![0.0, 1.0], vec![1.0, 0.0]).unwrap();
        assert_eq!(exit_time(&on_boundary, &d).unwrap(), 0.0);
    }

    #[test]
    fn exit_time_in_a_ball() {
        let d = Domain::unit_ball(2).unwrap();
        let p = DiscretePath::sample(2, 1.0, 1e-3, |t| vec![0.6 * 2.0 * t, 0.8 * 2.0 * t]).unwrap();
        assert!((exit_time(&p, &d).unwrap() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn grazing_examples() {
        let d = unit_interval();
        let linear = DiscretePath::sample(1, 1.0, 1e-3, |t| vec![2.0 * t]).unwrap();
        assert!(grazing_check(&linear, &d).unwrap());
        let parabola =
            DiscretePath::sample(1, 1.0, 1e-3, |t| vec![1.0 - (t - 0.5) * (t - 0.5)]).unwrap();
        assert!(!grazing_check(&parabola, &d).unwrap());
        let constant = DiscretePath::sample(1, 1.0, 1e-3, |_| vec![0.0]).unwrap();
        assert!(grazing_check(&constant, &d).unwrap());
    }

    #[test]
    fn grazing_detects_reentry() {
        let d = unit_interval();
        let p = DiscretePath::new(1, vec![0.0, 1.0, 2.0], vec![0.0, 1.5, 0.5]).unwrap();
        assert!(!grazing_check(&p, &d).unwrap());
    }

    proptest! {
        #[test]
        fn signed_distance_is_one_lipschitz(
            x in prop::collection::vec(-3.0f64..3.0, 3),
            y in prop::collection::vec(-3.0f64..3.0, 3),
            r in 0.1f64..2.0,
        ) {
            let d = Domain::ball(vec![0.2, -0.1, 0.3], r).unwrap();
            let gap = (d.signed_distance(&x).unwrap() - d.signed_distance(&y).unwrap()).abs();
            let dist: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            prop_assert!(gap <= dist + 1e-12);
        }

        #[test]
        fn interval_signed_distance_is_one_lipschitz(x in -4.0f64..4.0, y in -4.0f64..4.0) {
            let d = Domain::interval(-1.0, 2.5).unwrap();
            let gap = (d.signed_distance(&[x]).unwrap() - d.signed_distance(&[y]).unwrap()).abs();
            prop_assert!(gap <= (x - y).abs() + 1e-12);
        }

        #[test]
        fn exit_time_monotone_under_inclusion(
            steps in prop::collection::vec(-0.3f64..0.3, 1..200),
            shrink in 0.05f64..0.95,
        ) {
            let mut x = 0.0;
            let mut points = vec![0.0];
            for s in &steps {
                x += s;
                points.push(x);
            }
            let times: Vec<f64> = (0..points.len()).map(|k| k as f64 * 0.01).collect();
            let path = DiscretePath::new(1, times, points).unwrap();
            let big = Domain::interval(-1.0, 1.0).unwrap();
            let small = Domain::interval(-shrink, shrink).unwrap();
            prop_assert!(exit_time(&path, &small).unwrap() <= exit_time(&path, &big).unwrap());
        }
    }
}
