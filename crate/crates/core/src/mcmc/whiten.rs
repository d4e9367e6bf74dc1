//! AR(1) whitening of a residual series into independent innovations.

use alloc::vec::Vec;

use crate::mcmc::McmcError;
use crate::model::FirstObs;

/// One whitened innovation.
///
/// `weight` is the scale applied to the original observation row: segment
/// firsts carry sqrt(1 - theta^2) under the stationary rule, lag pairs carry
/// weight 1. Every innovation has variance sigma_s^2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Innovation {
    /// Index of the observation the innovation is anchored at.
    pub index: usize,
    pub value: f64,
    pub weight: f64,
    /// True for the first observation of a contiguous segment.
    pub is_first: bool,
}

/// Whiten one residual series with gaps.
///
/// `values[k]` is the residual at time index `k` and `present[k]` its mask;
/// masked gaps restart the first-observation rule at the next observed time.
/// Under [`FirstObs::Stationary`] each segment contributes
/// `sqrt(1-theta^2) * u_first` plus the lag differences `u_k - theta u_{k-1}`;
/// under [`FirstObs::Conditioned`] the firsts are dropped.
pub fn whiten(
    values: &[f64],
    present: &[bool],
    theta: f64,
    rule: FirstObs,
) -> Result<Vec<Innovation>, McmcError> {
    assert_eq!(values.len(), present.len());
    if theta.abs() >= 1.0 {
        return Err(McmcError::ThetaOutOfRange(theta));
    }
    let c = crate::math::sqrt(1.0 - theta * theta);
    let mut out = Vec::new();
    let mut prev: Option<usize> = None;
    for (k, (&v, &p)) in values.iter().zip(present).enumerate() {
        if !p {
            prev = None;
            continue;
        }
        match prev {
            None => {
                if rule == FirstObs::Stationary {
                    out.push(Innovation {
                        index: k,
                        value: c * v,
                        weight: c,
                        is_first: true,
                    });
                }
            }
            Some(pk) => {
                out.push(Innovation {
                    index: k,
                    value: v - theta * values[pk],
                    weight: 1.0,
                    is_first: false,
                });
            }
        }
        prev = Some(k);
    }
    Ok(out)
}
