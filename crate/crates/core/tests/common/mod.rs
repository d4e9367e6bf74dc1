//! Shared test oracles, written independently of the library internals they
//! check.

#![allow(dead_code)]

use ufts_core::data::{Dataset, ObsRecord};
use ufts_core::splines::BSplineBasis;

/// Naive recursive Cox-de Boor evaluation, straight from the textbook
/// definition. Intentionally independent of the library's iterative
/// implementation.
pub fn naive_bspline(knots: &[f64], degree: usize, i: usize, x: f64, hi: f64) -> f64 {
    if degree == 0 {
        // closed final interval so the right endpoint belongs to the last span
        let right_closed = knots[i + 1] >= hi && x == hi;
        if (knots[i] <= x && x < knots[i + 1]) || (right_closed && knots[i] < knots[i + 1]) {
            return 1.0;
        }
        return 0.0;
    }
    let mut value = 0.0;
    let d1 = knots[i + degree] - knots[i];
    if d1 > 0.0 {
        value += (x - knots[i]) / d1 * naive_bspline(knots, degree - 1, i, x, hi);
    }
    let d2 = knots[i + degree + 1] - knots[i + 1];
    if d2 > 0.0 {
        value += (knots[i + degree + 1] - x) / d2 * naive_bspline(knots, degree - 1, i + 1, x, hi);
    }
    value
}

/// Evaluate the whole naive basis at x.
pub fn naive_basis_row(basis: &BSplineBasis, x: f64) -> Vec<f64> {
    let knots = basis.knots();
    let hi = basis.domain().1;
    (0..basis.n_basis())
        .map(|i| naive_bspline(knots, basis.degree(), i, x, hi))
        .collect()
}

/// Build a dataset from (run, window, time, bin, count) tuples.
pub fn dataset_from(rows: &[(u32, i64, i32, i64, f64)]) -> Dataset {
    let records: Vec<ObsRecord> = rows
        .iter()
        .map(|&(run, window, time, size_bin, count)| ObsRecord {
            run,
            window,
            time,
            size_bin,
            count,
        })
        .collect();
    Dataset::from_records(&records).expect("test dataset must be valid")
}

/// A dense dataset on a regular grid with a count function of (run, s, t).
pub fn grid_dataset(
    runs: &[(u32, i64)],
    times: &[i32],
    n_bins: usize,
    count: impl Fn(u32, usize, i32) -> f64,
) -> Dataset {
    let mut rows = Vec::new();
    for &(run, window) in runs {
        for &t in times {
            for s in 1..=n_bins {
                rows.push((run, window, t, s as i64, count(run, s, t)));
            }
        }
    }
    dataset_from(&rows)
}

/// Sample mean.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Effective sample size from the initial positive autocorrelation sum.
pub fn ess(chain: &[f64]) -> f64 {
    let n = chain.len();
    if n < 10 {
        return n as f64;
    }
    let m = mean(chain);
    let var = chain.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
    if var <= 1e-300 {
        return n as f64;
    }
    let mut rho_sum = 0.0;
    for lag in 1..(n / 2).min(1000) {
        let cov: f64 = (0..n - lag)
            .map(|i| (chain[i] - m) * (chain[i + lag] - m))
            .sum::<f64>()
            / (n - lag) as f64;
        let rho = cov / var;
        if rho < 0.02 {
            break;
        }
        rho_sum += rho;
    }
    n as f64 / (1.0 + 2.0 * rho_sum)
}

/// Two-sample z statistic with ESS-adjusted standard errors.
pub fn geweke_z(independent: &[f64], chain: &[f64]) -> f64 {
    let m1 = mean(independent);
    let m2 = mean(chain);
    let v1 = variance(independent) / independent.len() as f64;
    let v2 = variance(chain) / ess(chain);
    (m1 - m2) / (v1 + v2).sqrt()
}

/// Lag-1 sample autocorrelation.
pub fn lag1_autocorr(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let var: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    let cov: f64 = (0..xs.len() - 1)
        .map(|i| (xs[i] - m) * (xs[i + 1] - m))
        .sum();
    cov / var
}
