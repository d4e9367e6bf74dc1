//! Univariate slice sampler (Neal 2003), stepping out plus shrinkage.
//!
//! Rejection-free and tuning-light: the only knob is the initial bracket
//! width, and the shrinkage phase always terminates with an accepted point.

use rand::{Rng, RngExt};

use crate::math;

/// One slice-sampling transition for the log-density `log_f`, starting from
/// `x0` with initial bracket width `width`.
pub fn slice_sample<R: Rng + ?Sized>(
    x0: f64,
    width: f64,
    mut log_f: impl FnMut(f64) -> f64,
    rng: &mut R,
) -> f64 {
    let f0 = log_f(x0);
    let u: f64 = rng.random::<f64>().max(1e-300);
    let level = math::ln(u) + f0;
    // stepping out
    let mut left = x0 - width * rng.random::<f64>();
    let mut right = left + width;
    while level < log_f(left) {
        left -= width;
    }
    while level < log_f(right) {
        right += width;
    }
    // shrinkage
    loop {
        let x1 = left + (right - left) * rng.random::<f64>();
        if level < log_f(x1) {
            return x1;
        }
        if x1 < x0 {
            left = x1;
        } else {
            right = x1;
        }
    }
}
