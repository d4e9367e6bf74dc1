//! B-spline bases over the size-bin index.
//!
//! Two bases drive the model: a cubic basis for the mean curves and a
//! quadratic one for the log residual variance. Both use clamped (open) knot
//! vectors, so the boundary knots repeat `degree + 1` times and the basis is
//! a partition of unity on the closed domain.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SplineError {
    #[error("unsupported spline degree {0}; the model uses degree 2 or 3")]
    InvalidDegree(usize),
    #[error("degenerate domain [{lo}, {hi}]")]
    DegenerateDomain { lo: f64, hi: f64 },
    #[error("x = {x} outside the basis domain [{lo}, {hi}]")]
    OutOfDomain { x: f64, lo: f64, hi: f64 },
    #[error("invalid knot vector: {0}")]
    BadKnots(String),
}

/// A clamped B-spline basis on a closed interval.
///
/// `n_basis` equals `interior knots + degree + 1`. Evaluation uses the
/// Cox-de Boor recursion with the right-limit convention at the upper
/// endpoint, so `eval(hi)` ends in `(0, ..., 0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BSplineBasis {
    degree: usize,
    knots: Vec<f64>,
    n_basis: usize,
    domain: (f64, f64),
}

impl BSplineBasis {
    /// Build a basis with `n_interior` equally spaced interior knots.
    ///
    /// Degree must be 2 (variance basis) or 3 (mean basis); use
    /// [`BSplineBasis::with_interior_knots`] for other degrees or custom knot
    /// placements.
    pub fn make_basis(
        degree: usize,
        domain: (f64, f64),
        n_interior: usize,
    ) -> Result<Self, SplineError> {
        if !(degree == 2 || degree == 3) {
            return Err(SplineError::InvalidDegree(degree));
        }
        let interior = equally_spaced_interior(domain, n_interior)?;
        Self::with_interior_knots(degree, domain, &interior)
    }

    /// Build a clamped basis from an explicit list of interior knots.
    pub fn with_interior_knots(
        degree: usize,
        domain: (f64, f64),
        interior: &[f64],
    ) -> Result<Self, SplineError> {
        if degree == 0 {
            return Err(SplineError::InvalidDegree(0));
        }
        let (lo, hi) = domain;
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(SplineError::DegenerateDomain { lo, hi });
        }
        let mut prev = lo;
        for &k in interior {
            if k <= lo || k >= hi {
                return Err(SplineError::BadKnots(format!(
                    "interior knot {k} outside open domain ({lo}, {hi})"
                )));
            }
            if k < prev {
                return Err(SplineError::BadKnots(format!(
                    "interior knots must be non-decreasing, found {k} after {prev}"
                )));
            }
            prev = k;
        }
        let mut knots = Vec::with_capacity(interior.len() + 2 * (degree + 1));
        knots.extend(core::iter::repeat(lo).take(degree + 1));
        knots.extend_from_slice(interior);
        knots.extend(core::iter::repeat(hi).take(degree + 1));
        Ok(Self {
            degree,
            n_basis: interior.len() + degree + 1,
            knots,
            domain,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    /// Evaluate all basis functions at `x`.
    ///
    /// The result has length `n_basis`, is nonnegative, sums to one, and has
    /// at most `degree + 1` nonzero entries. Points outside the closed domain
    /// are a domain error; there is no extrapolation.
    pub fn eval(&self, x: f64) -> Result<Vec<f64>, SplineError> {
        let mut out = vec![0.0; self.n_basis];
        self.eval_into(x, &mut out)?;
        Ok(out)
    }

    /// Evaluate into a caller-provided buffer of length `n_basis`.
    pub fn eval_into(&self, x: f64, out: &mut [f64]) -> Result<(), SplineError> {
        let (lo, hi) = self.domain;
        if !(x >= lo && x <= hi) {
            return Err(SplineError::OutOfDomain { x, lo, hi });
        }
        assert_eq!(out.len(), self.n_basis);
        out.fill(0.0);
        let span = self.find_span(x);
        let p = self.degree;
        // Cox-de Boor in the compact "basis funs" form: values[j] holds
        // N_{span-d+j, d} at the end of round d.
        let mut values = [0.0f64; 8];
        let mut left = [0.0f64; 8];
        let mut right = [0.0f64; 8];
        assert!(p < 8, "degree bounded by construction");
        values[0] = 1.0;
        for d in 1..=p {
            left[d] = x - self.knots[span + 1 - d];
            right[d] = self.knots[span + d] - x;
            let mut saved = 0.0;
            for j in 0..d {
                let denom = right[j + 1] + left[d - j];
                let term = if denom == 0.0 { 0.0 } else { values[j] / denom };
                values[j] = saved + right[j + 1] * term;
                saved = left[d - j] * term;
            }
            values[d] = saved;
        }
        for (j, &v) in values.iter().take(p + 1).enumerate() {
            out[span - p + j] = v;
        }
        Ok(())
    }

    /// Design matrix with one row of basis values per evaluation point.
    pub fn matrix(&self, points: &[f64]) -> Result<DMatrix<f64>, SplineError> {
        let mut m = DMatrix::zeros(points.len(), self.n_basis);
        let mut row = vec![0.0; self.n_basis];
        for (r, &x) in points.iter().enumerate() {
            self.eval_into(x, &mut row)?;
            for (c, &v) in row.iter().enumerate() {
                m[(r, c)] = v;
            }
        }
        Ok(m)
    }

    /// Knot span index `mu` with `knots[mu] <= x < knots[mu+1]`, clamped so
    /// the upper endpoint lands in the last non-empty span.
    fn find_span(&self, x: f64) -> usize {
        let p = self.degree;
        let last = self.knots.len() - p - 2; // last valid span start
        if x >= self.knots[last] {
            return last;
        }
        let mut lo = p;
        let mut hi = last;
        while lo < hi {
            let mid = (lo + hi + 1) / 2;
            if self.knots[mid] <= x {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        lo
    }
}

fn equally_spaced_interior(domain: (f64, f64), n_interior: usize) -> Result<Vec<f64>, SplineError> {
    let (lo, hi) = domain;
    if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
        return Err(SplineError::DegenerateDomain { lo, hi });
    }
    let step = (hi - lo) / (n_interior as f64 + 1.0);
    Ok((1..=n_interior).map(|i| lo + step * i as f64).collect())
}
