//! Reference values computed independently of the library.
#![allow(dead_code)]

use std::f64::consts::PI;

/// `P[τ > t]` for `σW` started at `x0` in `(a, b)`, by the sine series of
/// the Dirichlet heat kernel.
pub fn survival_series(t: f64, a: f64, b: f64, x0: f64, sigma: f64) -> f64 {
    let l = b - a;
    let mut total = 0.0;
    for n in (1..400).step_by(2) {
        let k = n as f64 * PI / l;
        total +=
            4.0 / (n as f64 * PI) * (k * (x0 - a)).sin() * (-0.5 * sigma * sigma * k * k * t).exp();
    }
    total
}

/// Sub-density of the killed Brownian motion from 0 in (-1, 1) at time `t`.
pub fn killed_density(t: f64, x: f64) -> f64 {
    let mut total = 0.0;
    for n in 1..400 {
        let k = n as f64 * PI / 2.0;
        total += (k * 1.0).sin() * (k * (x + 1.0)).sin() * (-0.5 * k * k * t).exp();
    }
    total
}

/// CDF of `L(W_t | τ > t)` on (-1, 1) by trapezoidal integration of the
/// full series density, tabulated on `m` cells.
pub fn conditional_cdf_table(t: f64, m: usize) -> Vec<(f64, f64)> {
    let h = 2.0 / m as f64;
    let xs: Vec<f64> = (0..=m).map(|i| -1.0 + i as f64 * h).collect();
    let dens: Vec<f64> = xs.iter().map(|&x| killed_density(t, x)).collect();
    let mut cum = vec![0.0; m + 1];
    for i in 1..=m {
        cum[i] = cum[i - 1] + 0.5 * h * (dens[i - 1] + dens[i]);
    }
    let total = cum[m];
    xs.into_iter()
        .zip(cum.into_iter().map(|c| c / total))
        .collect()
}

pub fn interpolate_table(table: &[(f64, f64)], x: f64) -> f64 {
    if x <= table[0].0 {
        return 0.0;
    }
    let i = table
        .partition_point(|&(xi, _)| xi < x)
        .min(table.len() - 1);
    let (x0, y0) = table[i - 1];
    let (x1, y1) = table[i];
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Normalized first-eigenfunction CDF on (-1, 1).
pub fn cos_cdf(x: f64) -> f64 {
    (1.0 + (PI * x / 2.0).sin()) / 2.0
}

/// First root of `f` in `[lo, hi]` after a sign change found by scanning.
pub fn first_crossing<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, scan: usize) -> f64 {
    let step = (hi - lo) / scan as f64;
    let mut a = lo;
    for i in 1..=scan {
        let b = lo + i as f64 * step;
        if f(b) >= 0.0 {
            let (mut l, mut r) = (a, b);
            for _ in 0..200 {
                let m = 0.5 * (l + r);
                if f(m) >= 0.0 {
                    r = m;
                } else {
                    l = m;
                }
            }
            return r;
        }
        a = b;
    }
    f64::INFINITY
}

/// Binomial standard error of a survival fraction.
pub fn binomial_stderr(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}
