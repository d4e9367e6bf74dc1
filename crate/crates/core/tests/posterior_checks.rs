//! Checks for the derived posterior quantities.

mod common;

use nalgebra::DMatrix;
use ufts_core::data::Window;
use ufts_core::mcmc::{self, ChainState, Sampler};
use ufts_core::model::{ModelSpec, RandomTrend, Trend};
use ufts_core::posterior::{self, quantile};
use ufts_core::splines::BSplineBasis;
use ufts_core::synthetic::{self, TruthConfig};

use common::*;

fn small_spec(random_trend: RandomTrend) -> ModelSpec {
    let mean = BSplineBasis::with_interior_knots(3, (1.0, 8.0), &[4.5]).unwrap();
    let var = BSplineBasis::with_interior_knots(2, (1.0, 8.0), &[4.5]).unwrap();
    ModelSpec::with_bases(Trend::JumpQuadratic, random_trend, mean, var).unwrap()
}

/// Same model but with tame prior scales so prior draws keep exp() finite.
fn small_spec_tight(random_trend: RandomTrend) -> ModelSpec {
    let mut spec = small_spec(random_trend);
    spec.priors.tau_alpha_sq = 0.5;
    spec.priors.tau_delta_sq = 0.02;
    spec.priors.d_df = spec.k() as f64 + 30.0;
    spec.priors.d_scale *= 0.2;
    if spec.g_dim() > 0 {
        spec.priors.w_df = (spec.g_dim() * spec.k()) as f64 + 30.0;
    }
    spec
}

#[test]
fn marginal_variance_formula_and_oracle() {
    let spec = small_spec(RandomTrend::RandomJump);
    let mut state = ChainState::zeros(&spec, 1);

    // theta = 0 and zero random-effect covariances: zeta^2 = lambda^2 = sigma^2
    state.d_cov.fill(0.0);
    state.w_cov.fill(0.0);
    state.refresh_sigma_sq(&spec); // sigma^2 = 1 everywhere
    let (lambda, rho, zeta) = posterior::marginal_variance(&spec, &state, 3).unwrap();
    assert!((lambda - 1.0).abs() < 1e-15);
    assert_eq!(rho, 0.0);
    assert!((zeta - 1.0).abs() < 1e-15);

    // theta = 0.5, sigma^2 = 0.75 gives lambda^2 = 1
    state.theta = 0.5;
    state.eta.fill(0.75f64.ln()); // basis rows sum to one
    state.refresh_sigma_sq(&spec);
    let (lambda, _, _) = posterior::marginal_variance(&spec, &state, 5).unwrap();
    assert!((lambda - 1.0).abs() < 1e-12, "lambda^2 = {lambda}");

    // random SPD D and W: rho matches an explicit triple loop
    let data = grid_dataset(&[(1, 0)], &[-2, 0, 2], 8, |_, s, t| {
        30.0 + s as f64 + t as f64
    });
    let mut sampler = Sampler::new(&spec, &data, 30, None).unwrap();
    sampler.draw_from_prior().unwrap();
    let state = sampler.state().clone();
    for s in [1usize, 4, 8] {
        let (_, rho, zeta) = posterior::marginal_variance(&spec, &state, s).unwrap();
        let b = naive_basis_row(&spec.mean_basis, s as f64);
        let mut expect = 0.0;
        for a in 0..spec.k() {
            for c in 0..spec.k() {
                expect += b[a] * (state.d_cov[(a, c)] + state.w_cov[(a, c)]) * b[c];
            }
        }
        assert!(
            (rho - expect).abs() < 1e-12,
            "rho at s={s}: {rho} vs {expect}"
        );
        assert!(zeta >= rho, "zeta must add the AR variance");
        assert!(rho >= 0.0);
        let (lambda, _, _) = posterior::marginal_variance(&spec, &state, s).unwrap();
        assert!(
            lambda >= state.sigma_sq[s - 1],
            "stationary variance cannot fall below the innovation variance"
        );
    }
}

#[test]
fn predict_mu_unit_and_window_invariance() {
    let spec = small_spec(RandomTrend::RandomJump);
    let mut state = ChainState::zeros(&spec, 1);
    state.d_cov.fill(0.0);
    state.w_cov.fill(0.0);
    state.eta.fill(-80.0); // sigma^2 ~ 0
    state.refresh_sigma_sq(&spec);
    // psi = 0 and zeta ~ 0 gives mu = 1
    let mu = posterior::mu_draws(&spec, &[state.clone()], 4, 5, Window::Open).unwrap();
    assert!((mu[0] - 1.0).abs() < 1e-12, "mu = {}", mu[0]);

    // pre-engine-on predictions ignore the window entirely, draw by draw
    let spec = small_spec_tight(RandomTrend::RandomJump);
    let data = grid_dataset(&[(1, 0)], &[-2, 0, 2], 8, |_, s, t| {
        30.0 + s as f64 + t as f64
    });
    let mut sampler = Sampler::new(&spec, &data, 31, None).unwrap();
    let mut states = Vec::new();
    for _ in 0..20 {
        sampler.draw_from_prior().unwrap();
        states.push(sampler.state().clone());
    }
    for s in [1usize, 5] {
        let closed = posterior::mu_draws(&spec, &states, s, -4, Window::Closed).unwrap();
        let open = posterior::mu_draws(&spec, &states, s, -4, Window::Open).unwrap();
        assert_eq!(closed, open);
    }

    // monotone in psi and zeta draw by draw
    let base = posterior::mu_draws(&spec, &states, 3, 6, Window::Open).unwrap();
    let mut bumped_states = states.clone();
    for st in &mut bumped_states {
        st.alpha[0] += 0.3;
        st.alpha[1] += 0.3;
        st.alpha[2] += 0.3;
        st.alpha[3] += 0.3;
        st.alpha[4] += 0.3;
    }
    let bumped = posterior::mu_draws(&spec, &bumped_states, 3, 6, Window::Open).unwrap();
    for (b, a) in bumped.iter().zip(&base) {
        assert!(b > a, "raising psi must raise mu");
    }
}

#[test]
fn mode_trajectory_argmax_and_ties() {
    let spec = small_spec(RandomTrend::None);
    let mut state = ChainState::zeros(&spec, 1);
    state.d_cov.fill(0.0);
    state.eta.fill(-80.0);
    state.refresh_sigma_sq(&spec);
    // flat mu over s: tie broken at the smallest bin
    let flat =
        posterior::mode_trajectory(&spec, &[state.clone()], Window::Closed, &[-2, 0, 4]).unwrap();
    assert!(flat.s_median.iter().all(|&s| s == 1.0));
    assert!(flat.times == vec![-2, 0, 4]);

    // unimodal curve peaking at an interior bin
    let target = |s: f64| 4.0 + 2.0 * (-((s - 5.0) / 1.8) * ((s - 5.0) / 1.8)).exp();
    let alpha = synthetic::project_curve(&spec.mean_basis, target).unwrap();
    state.alpha = alpha;
    let traj = posterior::mode_trajectory(&spec, &[state.clone()], Window::Closed, &[-2]).unwrap();
    let mut best_s = 0usize;
    let mut best = f64::NEG_INFINITY;
    for s in 1..=8 {
        let b = naive_basis_row(&spec.mean_basis, s as f64);
        let v: f64 = b.iter().zip(state.alpha.iter()).map(|(x, a)| x * a).sum();
        if v > best {
            best = v;
            best_s = s;
        }
    }
    assert_eq!(traj.s_median[0], best_s as f64);
    assert!((traj.h_median[0] - best.exp()).abs() / best.exp() < 1e-9);
}

#[test]
fn residuals_zero_fit_masking_and_autocorrelation() {
    // build data equal to a known mean surface: residuals vanish
    let spec = small_spec(RandomTrend::None);
    let truth_alpha = synthetic::project_curve(&spec.mean_basis, |s| 5.0 + 0.2 * s).unwrap();
    let mut state = ChainState::zeros(&spec, 1);
    state.alpha = truth_alpha;
    state.refresh_sigma_sq(&spec);
    let basis = spec
        .mean_basis
        .matrix(&(1..=8).map(|s| s as f64).collect::<Vec<_>>())
        .unwrap();
    let mut rows = Vec::new();
    for s in 1..=8usize {
        let mut m = 0.0;
        for a in 0..spec.k() {
            m += basis[(s - 1, a)] * state.alpha[a];
        }
        for t in [-2, 0, 2] {
            if s == 4 && t == 0 {
                continue; // leave one masked cell
            }
            rows.push((1u32, 0i64, t, s as i64, (m.exp() - 10.0f64).max(0.0)));
        }
    }
    let data = dataset_from(&rows);
    let grids = posterior::residuals(&spec, &data, &[state.clone()]).unwrap();
    let run = &grids[0];
    let n_t = run.times.len();
    for s0 in 0..8 {
        for k in 0..n_t {
            let e = run.e[s0 * n_t + k];
            if s0 == 3 && run.times[k] == 0 {
                assert!(e.is_none(), "masked cell must stay masked");
            } else {
                assert!(e.unwrap().abs() < 1e-9, "residual {e:?} at ({s0},{k})");
            }
        }
    }

    // residuals keep the AR structure: positive lag-1 autocorrelation
    let truth = TruthConfig::desk_scale(Trend::JumpQuadratic, RandomTrend::None, 77).unwrap();
    let mut truth = truth;
    truth.theta = 0.5;
    let (data, latent) = synthetic::simulate_dataset(&truth).unwrap();
    let grids = posterior::residuals(&truth.spec, &data, &[latent.state.clone()]).unwrap();
    let mut acs = Vec::new();
    for run in &grids {
        let n_t = run.times.len();
        for s0 in 0..run.n_bins {
            let series: Vec<f64> = (0..n_t).filter_map(|k| run.e[s0 * n_t + k]).collect();
            if series.len() == n_t {
                acs.push(lag1_autocorr(&series));
            }
        }
    }
    let mean_ac = mean(&acs);
    assert!(
        mean_ac > 0.2,
        "average lag-1 autocorrelation {mean_ac} should reflect theta = 0.5"
    );
}

#[test]
fn dic_identity_and_single_draw_degeneracy() {
    let truth = TruthConfig::desk_scale(Trend::JumpQuadratic, RandomTrend::None, 5).unwrap();
    let (data, latent) = synthetic::simulate_dataset(&truth).unwrap();
    let dev = mcmc::deviance(&truth.spec, &data, &latent.state).unwrap();
    let report = posterior::dic(&truth.spec, &data, &[latent.state.clone()], &[dev]).unwrap();
    assert!((report.p_d).abs() < 1e-9, "single draw has p_d = 0");
    assert!((report.dic - report.d_bar).abs() < 1e-9);
    assert!((report.dic - (report.d_bar + report.p_d)).abs() < 1e-12);

    // mismatched lengths rejected
    assert!(posterior::dic(&truth.spec, &data, &[latent.state.clone()], &[]).is_err());
}

#[test]
fn trend_components_sum_to_psi_minus_baseline() {
    let spec = small_spec_tight(RandomTrend::RandomJump);
    let data = grid_dataset(&[(1, 0), (2, 1)], &[-2, 0, 2, 4], 8, |_, s, t| {
        25.0 + s as f64 + t as f64
    });
    let mut sampler = Sampler::new(&spec, &data, 44, None).unwrap();
    let mut states = Vec::new();
    for _ in 0..15 {
        sampler.draw_from_prior().unwrap();
        states.push(sampler.state().clone());
    }
    for &t in &[0, 3, 15] {
        for s in [2usize, 7] {
            let comps =
                posterior::trend_component_draws(&spec, &states, Window::Open, t, s).unwrap();
            assert_eq!(comps.len(), spec.j());
            for (di, state) in states.iter().enumerate() {
                let sum: f64 = comps.iter().map(|c| c[di]).sum();
                let psi = posterior::psi_at(&spec, state, s, t, Window::Open).unwrap();
                let b = naive_basis_row(&spec.mean_basis, s as f64);
                let base: f64 = b.iter().zip(state.alpha.iter()).map(|(x, a)| x * a).sum();
                assert!(
                    (sum - (psi - base)).abs() < 1e-12 * (1.0 + (psi - base).abs()),
                    "additivity at t={t}, s={s}, draw {di}"
                );
            }
        }
    }
}

#[test]
fn quantile_convention() {
    let xs = [1.0, 2.0, 3.0, 4.0];
    assert_eq!(quantile(&xs, 0.0), 1.0);
    assert_eq!(quantile(&xs, 1.0), 4.0);
    assert_eq!(quantile(&xs, 0.5), 2.5);
    assert_eq!(quantile(&[7.0], 0.3), 7.0);

    let spec = small_spec(RandomTrend::None);
    let data = grid_dataset(&[(1, 0)], &[-2, 0], 8, |_, s, _| 20.0 + s as f64);
    let mut sampler = Sampler::new(&spec, &data, 45, None).unwrap();
    let mut states = Vec::new();
    for _ in 0..40 {
        sampler.draw_from_prior().unwrap();
        states.push(sampler.state().clone());
    }
    let rows = posterior::variance_curve(&states, &[0.05, 0.5, 0.95]).unwrap();
    for row in rows {
        assert!(row.values[0] <= row.values[1] && row.values[1] <= row.values[2]);
    }
    let thetas = posterior::theta_quantiles(&states, &[0.05, 0.5, 0.95]).unwrap();
    assert!(thetas[0] <= thetas[1] && thetas[1] <= thetas[2]);
}

#[test]
fn posterior_mean_state_averages_components() {
    let spec = small_spec(RandomTrend::RandomJump);
    let mut a = ChainState::zeros(&spec, 2);
    let mut b = ChainState::zeros(&spec, 2);
    a.theta = 0.2;
    b.theta = 0.6;
    a.alpha[0] = 1.0;
    b.alpha[0] = 3.0;
    a.d_cov = DMatrix::identity(spec.k(), spec.k()) * 2.0;
    b.d_cov = DMatrix::identity(spec.k(), spec.k()) * 4.0;
    a.refresh_sigma_sq(&spec);
    b.eta.fill(1.0);
    b.refresh_sigma_sq(&spec);
    let m = posterior::posterior_mean_state(&[a.clone(), b.clone()]).unwrap();
    assert!((m.theta - 0.4).abs() < 1e-15);
    assert!((m.alpha[0] - 2.0).abs() < 1e-15);
    assert!((m.d_cov[(0, 0)] - 3.0).abs() < 1e-15);
    // plug-in sigma_sq is the mean of draws, not the curve at averaged eta
    let expect = 0.5 * (a.sigma_sq[0] + b.sigma_sq[0]);
    assert!((m.sigma_sq[0] - expect).abs() < 1e-15);
}
