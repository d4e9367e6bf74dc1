//! Small dense linear-algebra helpers shared by the sampler and the
//! synthetic-data generator.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

/// Force exact symmetry by averaging with the transpose.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone())
}

/// Inverse of an SPD matrix through its Cholesky factor.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = cholesky(m)?;
    let n = m.nrows();
    let mut inv = DMatrix::zeros(n, n);
    let mut e = DVector::zeros(n);
    for j in 0..n {
        e.fill(0.0);
        e[j] = 1.0;
        let col = chol.solve(&e);
        for i in 0..n {
            inv[(i, j)] = col[i];
        }
    }
    symmetrize(&mut inv);
    Some(inv)
}

/// Draw from N(P^{-1} b, P^{-1}) given the precision matrix P and the
/// unnormalized mean b. Returns `None` when P is not positive definite.
pub fn sample_gaussian_from_precision<R: Rng + ?Sized>(
    precision: &DMatrix<f64>,
    b: &DVector<f64>,
    rng: &mut R,
) -> Option<DVector<f64>> {
    let chol = cholesky(precision)?;
    let mean = chol.solve(b);
    let n = b.len();
    let z = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)));
    // P = L L^T, so x = mean + L^{-T} z has covariance P^{-1}
    let l = chol.l();
    let noise = l.transpose().solve_upper_triangular(&z)?;
    Some(mean + noise)
}

/// Draw from N(0, C) via the Cholesky factor of the covariance C.
pub fn sample_gaussian_from_covariance<R: Rng + ?Sized>(
    cov: &DMatrix<f64>,
    rng: &mut R,
) -> Option<DVector<f64>> {
    let chol = cholesky(cov)?;
    let n = cov.nrows();
    let z = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)));
    Some(chol.l() * z)
}

/// Draw from the inverse-Wishart distribution with `df` degrees of freedom
/// and SPD scale matrix `scale` (density proportional to
/// `|X|^{-(df+p+1)/2} exp(-tr(scale X^{-1})/2)`).
///
/// Uses the Bartlett decomposition: with scale = L L^T and A the Bartlett
/// lower-triangular factor of a Wishart(df, scale^{-1}) draw, the result is
/// M^T M for M = A^{-1} L^T, which is SPD by construction.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(
    df: f64,
    scale: &DMatrix<f64>,
    rng: &mut R,
) -> Option<DMatrix<f64>> {
    let p = scale.nrows();
    if p == 0 {
        return Some(DMatrix::zeros(0, 0));
    }
    if df <= p as f64 - 1.0 {
        return None;
    }
    let chol = cholesky(scale)?;
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new(df - i as f64).ok()?;
        a[(i, i)] = crate::math::sqrt(chi.sample(rng).max(1e-300));
        for j in 0..i {
            a[(i, j)] = StandardNormal.sample(rng);
        }
    }
    // M = A^{-1} L^T by forward substitution on each column
    let lt = chol.l().transpose();
    let m = a.solve_lower_triangular(&lt)?;
    let mut draw = m.transpose() * m;
    symmetrize(&mut draw);
    Some(draw)
}

/// Least-squares projection of `targets` onto the column span of `design`,
/// solving the normal equations with a small ridge for safety.
pub fn lsq_project(design: &DMatrix<f64>, targets: &DVector<f64>) -> Option<DVector<f64>> {
    let xtx = design.transpose() * design;
    let xty = design.transpose() * targets;
    let n = xtx.nrows();
    let ridged = xtx + DMatrix::identity(n, n) * 1e-10;
    Some(cholesky(&ridged)?.solve(&xty))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    #[test]
    fn precision_sampler_matches_moments() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(7);
        let precision = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = DVector::from_row_slice(&[2.0, -1.0]);
        let cov = spd_inverse(&precision).unwrap();
        let mean = &cov * &b;
        let n = 200_000;
        let mut sums = [0.0f64; 2];
        let mut sq = [0.0f64; 2];
        for _ in 0..n {
            let x = sample_gaussian_from_precision(&precision, &b, &mut rng).unwrap();
            for i in 0..2 {
                sums[i] += x[i];
                sq[i] += x[i] * x[i];
            }
        }
        for i in 0..2 {
            let m = sums[i] / n as f64;
            let v = sq[i] / n as f64 - m * m;
            assert!((m - mean[i]).abs() < 0.01, "mean[{i}] = {m} vs {}", mean[i]);
            assert!(
                (v - cov[(i, i)]).abs() / cov[(i, i)] < 0.03,
                "var[{i}] = {v} vs {}",
                cov[(i, i)]
            );
        }
    }

    #[test]
    fn inverse_wishart_scalar_case_matches_inverse_gamma() {
        // For p = 1, InvWishart(df, s) is InverseGamma(df/2, s/2) with mean
        // s / (df - 2).
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
        let df = 9.0;
        let s = 3.0;
        let scale = DMatrix::from_element(1, 1, s);
        let n = 200_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += sample_inverse_wishart(df, &scale, &mut rng).unwrap()[(0, 0)];
        }
        let mean = sum / n as f64;
        let expect = s / (df - 2.0);
        assert!(
            (mean - expect).abs() / expect < 0.02,
            "mean {mean} vs {expect}"
        );
    }

    #[test]
    fn inverse_wishart_mean_matches_formula() {
        // E[X] = scale / (df - p - 1) for df > p + 1
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(13);
        let scale = DMatrix::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 1.0]);
        let df = 8.0;
        let n = 100_000;
        let mut acc = DMatrix::zeros(2, 2);
        for _ in 0..n {
            acc += sample_inverse_wishart(df, &scale, &mut rng).unwrap();
        }
        acc /= n as f64;
        let expect = &scale / (df - 3.0);
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (acc[(i, j)] - expect[(i, j)]).abs() < 0.02,
                    "[{i},{j}] {} vs {}",
                    acc[(i, j)],
                    expect[(i, j)]
                );
            }
        }
    }

    #[test]
    fn lsq_recovers_exact_fit() {
        let design = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let targets = DVector::from_row_slice(&[1.0, 3.0, 5.0]);
        let sol = lsq_project(&design, &targets).unwrap();
        assert!((sol[0] - 1.0).abs() < 1e-6);
        assert!((sol[1] - 2.0).abs() < 1e-6);
    }
}
