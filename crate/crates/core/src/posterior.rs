//! Derived posterior estimates: predictive mean curves, marginal variances,
//! count-scale predictions, mode trajectories, residuals and DIC.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::{Dataset, Window};
use crate::math;
use crate::mcmc::{self, ChainState, McmcError};
use crate::model::{ModelError, ModelSpec};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PosteriorError {
    #[error("no stored draws")]
    EmptyDraws,
    #[error("draw and deviance counts differ: {states} vs {deviances}")]
    LengthMismatch { states: usize, deviances: usize },
    #[error("autoregressive parameter {0} outside (-1, 1)")]
    ThetaOutOfRange(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mcmc(#[from] McmcError),
    #[error(transparent)]
    Spline(#[from] crate::splines::SplineError),
}

/// Empirical quantile with linear interpolation on the sorted sample.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = math::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

fn sorted_quantiles(mut values: Vec<f64>, qs: &[f64]) -> Vec<f64> {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite draws"));
    qs.iter().map(|&q| quantile(&values, q)).collect()
}

/// Fixed-effect predicted mean log count
/// `psi_st = alpha'B(s) + f(t)' Delta_z B(s)`; window-independent for t < 0.
pub fn psi_at(
    spec: &ModelSpec,
    state: &ChainState,
    s: usize,
    t: i32,
    window: Window,
) -> Result<f64, PosteriorError> {
    let b = spec.mean_basis.eval(s as f64)?;
    let mut psi = 0.0;
    for (a, &bv) in b.iter().enumerate() {
        psi += state.alpha[a] * bv;
    }
    let f = spec.trend.time_basis(t);
    let delta = &state.delta[window.index()];
    for (jj, &fj) in f.iter().enumerate() {
        if fj != 0.0 {
            let mut row = 0.0;
            for (a, &bv) in b.iter().enumerate() {
                row += delta[(jj, a)] * bv;
            }
            psi += fj * row;
        }
    }
    Ok(psi)
}

/// Marginal variance pieces for one draw and bin:
/// `lambda_s^2 = sigma_s^2 / (1 - theta^2)`, the random-curve variance
/// `rho_s = B(s)' (D [+ W]) B(s)` (W only enters models with a random trend),
/// and their sum `zeta_s^2`.
pub fn marginal_variance(
    spec: &ModelSpec,
    state: &ChainState,
    s: usize,
) -> Result<(f64, f64, f64), PosteriorError> {
    if state.theta.abs() >= 1.0 {
        return Err(PosteriorError::ThetaOutOfRange(state.theta));
    }
    let lambda_sq = state.sigma_sq[s - 1] / (1.0 - state.theta * state.theta);
    let b = spec.mean_basis.eval(s as f64)?;
    let k = b.len();
    let mut rho = 0.0;
    if spec.baseline_random {
        for a in 0..k {
            for c in 0..k {
                rho += b[a] * state.d_cov[(a, c)] * b[c];
            }
        }
    }
    if spec.g_dim() > 0 {
        // G = 1: W is K x K in the basis coordinates
        for a in 0..k {
            for c in 0..k {
                rho += b[a] * state.w_cov[(a, c)] * b[c];
            }
        }
    }
    Ok((lambda_sq, rho, rho + lambda_sq))
}

/// Per-draw back-transformed predictive mean
/// `mu_st = exp(psi_st + zeta_s^2 / 2)` on the count scale.
pub fn mu_draws(
    spec: &ModelSpec,
    states: &[ChainState],
    s: usize,
    t: i32,
    window: Window,
) -> Result<Vec<f64>, PosteriorError> {
    if states.is_empty() {
        return Err(PosteriorError::EmptyDraws);
    }
    let mut out = Vec::with_capacity(states.len());
    for state in states {
        let psi = psi_at(spec, state, s, t, window)?;
        let (_, _, zeta_sq) = marginal_variance(spec, state, s)?;
        out.push(math::exp(psi + 0.5 * zeta_sq));
    }
    Ok(out)
}

/// One summarized predictive row: count-scale quantiles of mu at a bin.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveRow {
    pub s: usize,
    pub values: Vec<f64>,
}

/// Count-scale predictive curve over all bins at one time and window.
pub fn predictive_curve(
    spec: &ModelSpec,
    states: &[ChainState],
    window: Window,
    t: i32,
    quantiles: &[f64],
) -> Result<Vec<PredictiveRow>, PosteriorError> {
    let mut rows = Vec::with_capacity(spec.n_bins());
    for s in 1..=spec.n_bins() {
        let draws = mu_draws(spec, states, s, t, window)?;
        rows.push(PredictiveRow {
            s,
            values: sorted_quantiles(draws, quantiles),
        });
    }
    Ok(rows)
}

/// Per-draw fixed-trend component curves at one bin:
/// element j holds draws of `f_j(t) * Delta_zj' B(s)`, so the components sum
/// to `psi_st - alpha'B(s)` draw by draw.
pub fn trend_component_draws(
    spec: &ModelSpec,
    states: &[ChainState],
    window: Window,
    t: i32,
    s: usize,
) -> Result<Vec<Vec<f64>>, PosteriorError> {
    if states.is_empty() {
        return Err(PosteriorError::EmptyDraws);
    }
    let b = spec.mean_basis.eval(s as f64)?;
    let f = spec.trend.time_basis(t);
    let mut out = vec![Vec::with_capacity(states.len()); spec.j()];
    for state in states {
        let delta = &state.delta[window.index()];
        for (jj, &fj) in f.iter().enumerate() {
            let mut row = 0.0;
            for (a, &bv) in b.iter().enumerate() {
                row += delta[(jj, a)] * bv;
            }
            out[jj].push(fj * row);
        }
    }
    Ok(out)
}

/// Posterior mode trajectory: per time, the bin with the largest predictive
/// count mean (ties go to the smallest bin) and its height.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeTrajectory {
    pub window: Window,
    pub times: Vec<i32>,
    pub s_median: Vec<f64>,
    pub s_lo: Vec<f64>,
    pub s_hi: Vec<f64>,
    pub h_median: Vec<f64>,
    pub h_lo: Vec<f64>,
    pub h_hi: Vec<f64>,
}

pub fn mode_trajectory(
    spec: &ModelSpec,
    states: &[ChainState],
    window: Window,
    times: &[i32],
) -> Result<ModeTrajectory, PosteriorError> {
    if states.is_empty() {
        return Err(PosteriorError::EmptyDraws);
    }
    let s_bins = spec.n_bins();
    let points: Vec<f64> = (1..=s_bins).map(|s| s as f64).collect();
    let basis = spec.mean_basis.matrix(&points)?;
    let k = spec.k();
    let mut traj = ModeTrajectory {
        window,
        times: times.to_vec(),
        s_median: Vec::new(),
        s_lo: Vec::new(),
        s_hi: Vec::new(),
        h_median: Vec::new(),
        h_lo: Vec::new(),
        h_hi: Vec::new(),
    };
    // zeta is time-constant; precompute per draw and bin
    let mut zeta_sq = vec![0.0f64; states.len() * s_bins];
    for (di, state) in states.iter().enumerate() {
        for s in 1..=s_bins {
            let (_, _, z) = marginal_variance(spec, state, s)?;
            zeta_sq[di * s_bins + s - 1] = z;
        }
    }
    for &t in times {
        let f = spec.trend.time_basis(t);
        let mut s_draws = Vec::with_capacity(states.len());
        let mut h_draws = Vec::with_capacity(states.len());
        for (di, state) in states.iter().enumerate() {
            let delta = &state.delta[window.index()];
            let mut best_s = 1usize;
            let mut best_mu = f64::NEG_INFINITY;
            for s0 in 0..s_bins {
                let mut psi = 0.0;
                for a in 0..k {
                    psi += state.alpha[a] * basis[(s0, a)];
                }
                for (jj, &fj) in f.iter().enumerate() {
                    if fj != 0.0 {
                        let mut row = 0.0;
                        for a in 0..k {
                            row += delta[(jj, a)] * basis[(s0, a)];
                        }
                        psi += fj * row;
                    }
                }
                let mu = math::exp(psi + 0.5 * zeta_sq[di * s_bins + s0]);
                if mu > best_mu {
                    best_mu = mu;
                    best_s = s0 + 1;
                }
            }
            s_draws.push(best_s as f64);
            h_draws.push(best_mu);
        }
        let sq = sorted_quantiles(s_draws, &[0.025, 0.5, 0.975]);
        let hq = sorted_quantiles(h_draws, &[0.025, 0.5, 0.975]);
        traj.s_lo.push(sq[0]);
        traj.s_median.push(sq[1]);
        traj.s_hi.push(sq[2]);
        traj.h_lo.push(hq[0]);
        traj.h_median.push(hq[1]);
        traj.h_hi.push(hq[2]);
    }
    Ok(traj)
}

/// Posterior-mean residual grid for one run; masked cells stay `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResiduals {
    pub id: u32,
    pub window: Window,
    pub times: Vec<i32>,
    pub n_bins: usize,
    /// bins x times, row-major over bins
    pub e: Vec<Option<f64>>,
}

/// Posterior-mean residuals `e_ist = E[y - (fixed + random effects) | Y]`,
/// with the autoregressive structure deliberately left in.
pub fn residuals(
    spec: &ModelSpec,
    data: &Dataset,
    states: &[ChainState],
) -> Result<Vec<RunResiduals>, PosteriorError> {
    if states.is_empty() {
        return Err(PosteriorError::EmptyDraws);
    }
    let s_bins = data.n_bins();
    let points: Vec<f64> = (1..=s_bins).map(|s| s as f64).collect();
    let basis = spec.mean_basis.matrix(&points)?;
    let k = spec.k();
    let g_dim = spec.g_dim();
    let mut out = Vec::with_capacity(data.n_runs());
    for (ri, run) in data.runs().iter().enumerate() {
        let n_t = run.n_times();
        let mut fitted_sum = vec![0.0f64; s_bins * n_t];
        let f_rows: Vec<Vec<f64>> = run
            .times()
            .iter()
            .map(|&t| spec.trend.time_basis(t))
            .collect();
        let g_rows: Vec<Vec<f64>> = run
            .times()
            .iter()
            .map(|&t| spec.random_trend.time_basis(t))
            .collect();
        for state in states {
            let delta = &state.delta[run.window.index()];
            let ups = &state.upsilon[ri];
            for s0 in 0..s_bins {
                let mut base = 0.0;
                for a in 0..k {
                    base += (state.alpha[a] + state.gamma[ri][a]) * basis[(s0, a)];
                }
                let mut v = [0.0f64; 8];
                for jj in 0..spec.j() {
                    let mut acc = 0.0;
                    for a in 0..k {
                        acc += delta[(jj, a)] * basis[(s0, a)];
                    }
                    v[jj] = acc;
                }
                let mut u = [0.0f64; 4];
                for gg in 0..g_dim {
                    let mut acc = 0.0;
                    for a in 0..k {
                        acc += ups[(gg, a)] * basis[(s0, a)];
                    }
                    u[gg] = acc;
                }
                for (kk, (f, g)) in f_rows.iter().zip(&g_rows).enumerate() {
                    let mut m = base;
                    for (jj, &fj) in f.iter().enumerate() {
                        m += fj * v[jj];
                    }
                    for (gg, &gv) in g.iter().enumerate() {
                        m += gv * u[gg];
                    }
                    fitted_sum[s0 * n_t + kk] += m;
                }
            }
        }
        let n_draws = states.len() as f64;
        let mut e = vec![None; s_bins * n_t];
        for s0 in 0..s_bins {
            for kk in 0..n_t {
                if let Some(y) = run.y_at(s0 + 1, kk) {
                    e[s0 * n_t + kk] = Some(y - fitted_sum[s0 * n_t + kk] / n_draws);
                }
            }
        }
        out.push(RunResiduals {
            id: run.id,
            window: run.window,
            times: run.times().to_vec(),
            n_bins: s_bins,
            e,
        });
    }
    Ok(out)
}

/// Deviance information criterion report; `dic = d_bar + p_d` by definition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DicReport {
    pub dic: f64,
    pub d_bar: f64,
    pub p_d: f64,
}

/// Elementwise posterior mean of all parameters. The plug-in sigma_sq is the
/// mean of the sigma_sq draws themselves (not the variance curve implied by
/// the averaged eta and w).
pub fn posterior_mean_state(states: &[ChainState]) -> Result<ChainState, PosteriorError> {
    let first = states.first().ok_or(PosteriorError::EmptyDraws)?;
    let mut mean = first.clone();
    let scale = 1.0 / states.len() as f64;
    mean.alpha.fill(0.0);
    mean.delta[0].fill(0.0);
    mean.delta[1].fill(0.0);
    for g in &mut mean.gamma {
        g.fill(0.0);
    }
    for u in &mut mean.upsilon {
        u.fill(0.0);
    }
    mean.theta = 0.0;
    mean.d_cov.fill(0.0);
    mean.w_cov.fill(0.0);
    mean.eta.fill(0.0);
    mean.w_resid.fill(0.0);
    mean.sigma_sq.fill(0.0);
    for state in states {
        mean.alpha.axpy(scale, &state.alpha, 1.0);
        mean.delta[0] += &state.delta[0] * scale;
        mean.delta[1] += &state.delta[1] * scale;
        for (m, g) in mean.gamma.iter_mut().zip(&state.gamma) {
            m.axpy(scale, g, 1.0);
        }
        for (m, u) in mean.upsilon.iter_mut().zip(&state.upsilon) {
            *m += u * scale;
        }
        mean.theta += scale * state.theta;
        mean.d_cov += &state.d_cov * scale;
        mean.w_cov += &state.w_cov * scale;
        mean.eta.axpy(scale, &state.eta, 1.0);
        mean.w_resid.axpy(scale, &state.w_resid, 1.0);
        mean.sigma_sq.axpy(scale, &state.sigma_sq, 1.0);
    }
    Ok(mean)
}

/// DIC with the deviance conditional on random effects: `d_bar` is the mean
/// stored deviance, the plug-in deviance is evaluated at the posterior mean
/// of every parameter, `p_d = d_bar - D(mean)` and `dic = d_bar + p_d`.
pub fn dic(
    spec: &ModelSpec,
    data: &Dataset,
    states: &[ChainState],
    deviances: &[f64],
) -> Result<DicReport, PosteriorError> {
    if states.is_empty() || deviances.is_empty() {
        return Err(PosteriorError::EmptyDraws);
    }
    if states.len() != deviances.len() {
        return Err(PosteriorError::LengthMismatch {
            states: states.len(),
            deviances: deviances.len(),
        });
    }
    let d_bar = deviances.iter().sum::<f64>() / deviances.len() as f64;
    let mean_state = posterior_mean_state(states)?;
    let d_hat = mcmc::deviance(spec, data, &mean_state)?;
    let p_d = d_bar - d_hat;
    Ok(DicReport {
        dic: d_bar + p_d,
        d_bar,
        p_d,
    })
}

/// Quantiles of the per-bin innovation variance sigma_s^2.
pub fn variance_curve(
    states: &[ChainState],
    quantiles: &[f64],
) -> Result<Vec<PredictiveRow>, PosteriorError> {
    let first = states.first().ok_or(PosteriorError::EmptyDraws)?;
    let s_bins = first.sigma_sq.len();
    let mut rows = Vec::with_capacity(s_bins);
    for s0 in 0..s_bins {
        let draws: Vec<f64> = states.iter().map(|st| st.sigma_sq[s0]).collect();
        rows.push(PredictiveRow {
            s: s0 + 1,
            values: sorted_quantiles(draws, quantiles),
        });
    }
    Ok(rows)
}

/// Quantiles of theta across draws.
pub fn theta_quantiles(states: &[ChainState], qs: &[f64]) -> Result<Vec<f64>, PosteriorError> {
    if states.is_empty() {
        return Err(PosteriorError::EmptyDraws);
    }
    Ok(sorted_quantiles(
        states.iter().map(|s| s.theta).collect(),
        qs,
    ))
}
