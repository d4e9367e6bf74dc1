//! A fit at realistic scale: 21 runs, 102 size bins, runs on odd or even
//! minute grids with a couple of short runs and masked cells.

mod common;

use nalgebra::DMatrix;
use ufts_core::data::{Dataset, ObsRecord, Window};
use ufts_core::mcmc::{self, SamplerSettings};
use ufts_core::model::{ModelSpec, RandomTrend, Trend};
use ufts_core::posterior;
use ufts_core::synthetic::{self, project_curve, RunLayout, TruthConfig};

use common::mean;

fn full_scale_truth(seed: u64) -> TruthConfig {
    let s_bins = 102usize;
    let spec = ModelSpec::new(Trend::JumpQuadratic, RandomTrend::RandomJump, s_bins).unwrap();
    let k = spec.k();
    let alpha = project_curve(&spec.mean_basis, |s| {
        5.5 + 2.5 * (-((s - 30.0) / 22.0) * ((s - 30.0) / 22.0)).exp()
    })
    .unwrap();
    let bump = |center: f64, width: f64, scale: f64| {
        move |s: f64| scale * (-((s - center) / width) * ((s - center) / width)).exp()
    };
    let mut delta = [DMatrix::zeros(spec.j(), k), DMatrix::zeros(spec.j(), k)];
    for (z, rows) in [
        (
            0usize,
            [
                bump(40.0, 26.0, 0.2),
                bump(45.0, 30.0, 0.025),
                bump(45.0, 30.0, -0.0005),
            ],
        ),
        (
            1usize,
            [
                bump(32.0, 22.0, 0.7),
                bump(36.0, 25.0, 0.06),
                bump(36.0, 25.0, -0.0014),
            ],
        ),
    ] {
        for (j, row) in rows.iter().enumerate() {
            let coef = project_curve(&spec.mean_basis, row).unwrap();
            for a in 0..k {
                delta[z][(j, a)] = coef[a];
            }
        }
    }
    let eta = project_curve(&spec.var_basis, |s| {
        let frac = (s - 1.0) / (s_bins as f64 - 1.0);
        0.55f64.ln() + frac * (0.1f64.ln() - 0.55f64.ln())
    })
    .unwrap();
    let ar1 = |dim: usize, rho: f64, var: f64| {
        DMatrix::from_fn(dim, dim, |i, j| var * rho.powi(i.abs_diff(j) as i32))
    };
    // 21 runs: 9 windows-closed, 12 windows-open; odd-minute grids for the
    // even-numbered runs and two short runs
    let mut runs = Vec::new();
    for i in 0..21u32 {
        let window = if i < 9 { Window::Closed } else { Window::Open };
        let (start, end) = match i {
            4 => (-9, 13),  // short run
            15 => (-15, 9), // short run
            _ => {
                if i % 2 == 0 {
                    (-14, 20)
                } else {
                    (-15, 19)
                }
            }
        };
        let times: Vec<i32> = (start..=end).step_by(2).collect();
        runs.push(RunLayout {
            id: i + 1,
            window,
            times,
        });
    }
    TruthConfig {
        spec,
        alpha,
        delta,
        theta: 0.45,
        eta,
        w: None,
        d_cov: ar1(k, 0.6, 0.5 * 0.5),
        w_cov: ar1(k, 0.5, 0.4 * 0.4),
        runs,
        seed,
    }
}

#[test]
fn full_scale_fit_runs_and_recovers_the_population_curve() {
    let truth = full_scale_truth(7001);
    let (data, latent) = synthetic::simulate_dataset(&truth).unwrap();
    assert_eq!(data.n_runs(), 21);
    assert_eq!(data.n_bins(), 102);

    // knock out a few interior cells to exercise the masked-gap path
    let mut records = Vec::new();
    for run in data.runs() {
        for s in 1..=data.n_bins() {
            for (k, &t) in run.times().iter().enumerate() {
                if run.id == 4 && s % 7 == 0 && t == 1 {
                    continue;
                }
                if let Some(y) = run.y_at(s, k) {
                    records.push(ObsRecord {
                        run: run.id,
                        window: i64::from(run.window.label()),
                        time: t,
                        size_bin: s as i64,
                        count: (y.exp() - 10.0).max(0.0),
                    });
                }
            }
        }
    }
    let data = Dataset::from_records(&records).unwrap();
    let report = data.validate();
    assert!(report.is_clean(), "{report}");
    assert!(report.runs.iter().any(|r| r.missing_fraction > 0.0));
    assert!(report.runs.iter().any(|r| r.t_min == -15));
    assert!(report.runs.iter().any(|r| r.t_min == -14));

    let settings = SamplerSettings {
        iterations: 400,
        burn_in: 150,
        thin: 5,
        seed: 7002,
    };
    let draws = mcmc::run_chain(&truth.spec, &data, settings, None).unwrap();
    assert_eq!(draws.states.len(), 50);
    let dic = posterior::dic(&truth.spec, &data, &draws.states, &draws.deviance).unwrap();
    assert!(dic.dic.is_finite() && dic.p_d > 0.0);

    // the fitted population curve tracks the truth closely at this scale
    let points: Vec<f64> = (1..=102).map(|s| s as f64).collect();
    let basis = truth.spec.mean_basis.matrix(&points).unwrap();
    let mut gaps = Vec::new();
    for s0 in 0..102 {
        let curve_true: f64 = (0..truth.spec.k())
            .map(|a| latent.state.alpha[a] * basis[(s0, a)])
            .sum();
        let curve_fit = mean(
            &draws
                .states
                .iter()
                .map(|st| {
                    (0..truth.spec.k())
                        .map(|a| st.alpha[a] * basis[(s0, a)])
                        .sum::<f64>()
                })
                .collect::<Vec<_>>(),
        );
        gaps.push((curve_fit - curve_true).abs());
    }
    let mean_gap = mean(&gaps);
    assert!(
        mean_gap < 0.45,
        "population curve should be recovered, mean abs gap {mean_gap}"
    );
    let thetas: Vec<f64> = draws.states.iter().map(|s| s.theta).collect();
    let theta_mean = mean(&thetas);
    assert!(
        (theta_mean - truth.theta).abs() < 0.1,
        "theta mean {theta_mean} vs truth {}",
        truth.theta
    );
}
