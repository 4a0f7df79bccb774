use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::costing::ConditionalMarginal;
use crate::error::{Error, Result};

/// Number of random directions of the sliced distance in dimension >= 2.
pub const SLICED_DIRECTIONS: usize = 64;
const SLICED_SEED: u64 = 0x5EED_51CE;

/// First Wasserstein distance between two empirical laws.
///
/// Exact in one dimension; in higher dimension the sliced distance over
/// [`SLICED_DIRECTIONS`] fixed random directions.
pub fn wasserstein1(a: &ConditionalMarginal, b: &ConditionalMarginal) -> Result<f64> {
    if a.dimension() != b.dimension() {
        return Err(Error::DimensionMismatch {
            expected: a.dimension(),
            got: b.dimension(),
        });
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySamples);
    }
    let d = a.dimension();
    if d == 1 {
        return Ok(wasserstein1_1d(a.samples().to_vec(), b.samples().to_vec()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(SLICED_SEED);
    let mut total = 0.0;
    for _ in 0..SLICED_DIRECTIONS {
        let mut dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|x| *x /= n);
        let project = |m: &ConditionalMarginal| -> Vec<f64> {
            m.samples()
                .chunks(d)
                .map(|p| p.iter().zip(&dir).map(|(x, u)| x * u).sum())
                .collect()
        };
        total += wasserstein1_1d(project(a), project(b));
    }
    Ok(total / SLICED_DIRECTIONS as f64)
}

/// `∫ |F_x - F_y|` for two nonempty samples on the real line.
pub fn wasserstein1_1d(mut x: Vec<f64>, mut y: Vec<f64>) -> f64 {
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let scale = (n as f64) * (m as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = x[0].min(y[0]);
    let mut total = 0.0;
    while i < n || j < m {
        let take_x = j == m || (i < n && x[i] <= y[j]);
        let next = if take_x { x[i] } else { y[j] };
        let gap = (i as f64 * m as f64 - j as f64 * n as f64).abs() / scale;
        total += gap * (next - prev);
        prev = next;
        if take_x {
            i += 1;
        } else {
            j += 1;
        }
    }
    total
}

/// Kolmogorov–Smirnov statistic `sup_x |F_n(x) - F(x)|` of a 1D sample.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}
