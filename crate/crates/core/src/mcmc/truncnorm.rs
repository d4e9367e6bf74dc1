//! Truncated-normal sampling by CDF inversion.

use rand::{Rng, RngExt};

use crate::math;

/// Draw from N(mean, sd^2) truncated to the open interval (lo, hi).
///
/// Inverts the normal CDF on the truncated probability interval, working in
/// whichever tail keeps the interval probabilities well away from 1 so far
/// truncation regions stay accurate. The returned draw is nudged inside the
/// open interval to guard against rounding onto a bound.
pub fn sample_truncated_normal<R: Rng + ?Sized>(
    mean: f64,
    sd: f64,
    lo: f64,
    hi: f64,
    rng: &mut R,
) -> f64 {
    debug_assert!(sd > 0.0 && lo < hi);
    let a = (lo - mean) / sd;
    let b = (hi - mean) / sd;
    let u: f64 = rng.random::<f64>().clamp(f64::MIN_POSITIVE, 1.0 - 1e-16);
    // Work in the lower tail when the interval sits left of the mean and in
    // the upper tail otherwise; both branches are algebraically identical
    // but keep the CDF values small where precision lives.
    let z = if a + b <= 0.0 {
        let fa = math::norm_cdf(a);
        let fb = math::norm_cdf(b);
        let p = fa + u * (fb - fa);
        if p <= 0.0 {
            // interval mass underflowed; fall back to the nearer bound side
            a.max(b.min(0.0))
        } else {
            math::norm_inv_cdf(p.min(1.0 - 1e-16))
        }
    } else {
        let sa = math::norm_sf(a);
        let sb = math::norm_sf(b);
        let p = sb + (1.0 - u) * (sa - sb);
        if p <= 0.0 {
            b.min(a.max(0.0))
        } else {
            -math::norm_inv_cdf(p.min(1.0 - 1e-16))
        }
    };
    let draw = mean + sd * z;
    // keep strictly inside the open interval
    let eps = (hi - lo) * 1e-12;
    draw.clamp(lo + eps, hi - eps)
}
