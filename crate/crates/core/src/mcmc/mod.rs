//! Block Gibbs sampler for the full model.
//!
//! One scan updates, in order: alpha; Delta_0; Delta_1; each gamma_i; each
//! Upsilon_i; theta; D; W; and the log-variance spline (eta, w). Linear
//! coefficient blocks are exact draws from their Gaussian full conditionals
//! on the whitened AR(1) likelihood, theta comes from a truncated-normal
//! conditional, D and W from conjugate inverse-Wishart updates, and (eta, w)
//! from componentwise slice sampling.

mod engine;
mod slice;
mod truncnorm;
mod whiten;

pub use engine::{LinearBlock, Sampler};
pub use slice::slice_sample;
pub use truncnorm::sample_truncated_normal;
pub use whiten::{whiten, Innovation};

pub use crate::model::{FirstObs, PriorConfig};

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::math;
use crate::model::{ModelError, ModelSpec, RandomTrend};
use crate::splines::SplineError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum McmcError {
    #[error("invalid sampler settings: {0}")]
    InvalidSettings(String),
    #[error(
        "conditional precision for block {block} is not positive definite at iteration {iteration}"
    )]
    NonSpd {
        block: &'static str,
        iteration: usize,
    },
    #[error("autoregressive parameter {0} outside (-1, 1)")]
    ThetaOutOfRange(f64),
    #[error("state does not match the model: {0}")]
    StateMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Spline(#[from] SplineError),
}

/// Sampler run settings. The stored draw count is exactly
/// `(iterations - burn_in) / thin`, which must divide evenly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerSettings {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl SamplerSettings {
    pub fn validate(&self) -> Result<(), McmcError> {
        if self.iterations == 0 || self.iterations <= self.burn_in {
            return Err(McmcError::InvalidSettings(alloc::format!(
                "iterations ({}) must exceed burn_in ({})",
                self.iterations,
                self.burn_in
            )));
        }
        if self.thin == 0 || (self.iterations - self.burn_in) % self.thin != 0 {
            return Err(McmcError::InvalidSettings(alloc::format!(
                "thin ({}) must divide iterations - burn_in ({})",
                self.thin,
                self.iterations - self.burn_in
            )));
        }
        Ok(())
    }

    pub fn n_stored(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// One full parameter state of the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    /// Population size-curve coefficients (K).
    pub alpha: DVector<f64>,
    /// Per-window trend coefficient matrices, J x K, indexed by window.
    pub delta: [DMatrix<f64>; 2],
    /// Run-level baseline curve coefficients, one K-vector per run.
    pub gamma: Vec<DVector<f64>>,
    /// Run-level random trend coefficients, one G x K matrix per run.
    pub upsilon: Vec<DMatrix<f64>>,
    /// AR(1) coefficient of the residual process.
    pub theta: f64,
    /// Covariance of the gamma_i (K x K).
    pub d_cov: DMatrix<f64>,
    /// Covariance of vec(Upsilon_i) ((G K) x (G K)).
    pub w_cov: DMatrix<f64>,
    /// Log-variance spline coefficients (L).
    pub eta: DVector<f64>,
    /// Per-bin log-variance residuals w_s (S).
    pub w_resid: DVector<f64>,
    /// Per-bin innovation variances, always exp(eta'B_err(s) + w_s) (S).
    pub sigma_sq: DVector<f64>,
}

impl ChainState {
    /// All-zero coefficients with prior-scale covariances and the variance
    /// curve implied by eta = w = 0.
    pub fn zeros(spec: &ModelSpec, n_runs: usize) -> Self {
        let k = spec.k();
        let (j, g, l, s) = (spec.j(), spec.g_dim(), spec.l(), spec.n_bins());
        let mut state = ChainState {
            alpha: DVector::zeros(k),
            delta: [DMatrix::zeros(j, k), DMatrix::zeros(j, k)],
            gamma: (0..n_runs).map(|_| DVector::zeros(k)).collect(),
            upsilon: (0..n_runs).map(|_| DMatrix::zeros(g, k)).collect(),
            theta: 0.0,
            d_cov: spec.priors.d_scale.clone(),
            w_cov: spec.priors.w_scale.clone(),
            eta: DVector::zeros(l),
            w_resid: DVector::zeros(s),
            sigma_sq: DVector::zeros(s),
        };
        state.refresh_sigma_sq(spec);
        state
    }

    /// Data-driven starting point: alpha is the least-squares projection of
    /// per-bin pre-engine means onto the mean basis, eta the projection of
    /// the constant log(0.4), everything else at a neutral value.
    pub fn init(spec: &ModelSpec, data: &Dataset) -> Result<Self, McmcError> {
        let s_bins = spec.n_bins();
        let k = spec.k();
        let mut sums = alloc::vec![0.0f64; s_bins];
        let mut counts = alloc::vec![0usize; s_bins];
        for run in data.runs() {
            let pre: Vec<usize> = (0..run.n_times())
                .filter(|&kk| run.times()[kk] < 0)
                .collect();
            for s in 1..=s_bins {
                for &kk in &pre {
                    if let Some(y) = run.y_at(s, kk) {
                        sums[s - 1] += y;
                        counts[s - 1] += 1;
                    }
                }
            }
        }
        let grand = {
            let tot: f64 = sums.iter().sum();
            let n: usize = counts.iter().sum();
            if n > 0 {
                tot / n as f64
            } else {
                0.0
            }
        };
        let targets: Vec<f64> = (0..s_bins)
            .map(|i| {
                if counts[i] > 0 {
                    sums[i] / counts[i] as f64
                } else {
                    grand
                }
            })
            .collect();
        let points: Vec<f64> = (1..=s_bins).map(|s| s as f64).collect();
        let design = spec.mean_basis.matrix(&points)?;
        let alpha = crate::linalg::lsq_project(&design, &DVector::from_vec(targets)).ok_or(
            McmcError::NonSpd {
                block: "alpha-init",
                iteration: 0,
            },
        )?;
        let var_design = spec.var_basis.matrix(&points)?;
        let eta_target = DVector::from_element(s_bins, math::ln(0.4));
        let eta =
            crate::linalg::lsq_project(&var_design, &eta_target).ok_or(McmcError::NonSpd {
                block: "eta-init",
                iteration: 0,
            })?;
        let mut state = Self::zeros(spec, data.n_runs());
        debug_assert_eq!(alpha.len(), k);
        state.alpha = alpha;
        state.eta = eta;
        state.refresh_sigma_sq(spec);
        Ok(state)
    }

    /// Recompute sigma_sq from eta and w exactly.
    pub fn refresh_sigma_sq(&mut self, spec: &ModelSpec) {
        let s_bins = spec.n_bins();
        let mut row = alloc::vec![0.0f64; spec.l()];
        for s0 in 0..s_bins {
            spec.var_basis
                .eval_into((s0 + 1) as f64, &mut row)
                .expect("bin index inside domain");
            let mut v = self.w_resid[s0];
            for (l, &b) in row.iter().enumerate() {
                v += self.eta[l] * b;
            }
            self.sigma_sq[s0] = math::exp(v);
        }
    }

    /// Largest deviation between stored sigma_sq and its defining formula.
    pub fn sigma_consistency_error(&self, spec: &ModelSpec) -> f64 {
        let mut clone = self.clone();
        clone.refresh_sigma_sq(spec);
        self.sigma_sq
            .iter()
            .zip(clone.sigma_sq.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn check_dims(
        &self,
        spec: &ModelSpec,
        n_runs: usize,
        n_bins: usize,
    ) -> Result<(), McmcError> {
        let fail = |msg: String| Err(McmcError::StateMismatch(msg));
        let (k, j, g, l) = (spec.k(), spec.j(), spec.g_dim(), spec.l());
        if self.alpha.len() != k {
            return fail(alloc::format!("alpha length {} != K {k}", self.alpha.len()));
        }
        for d in &self.delta {
            if d.nrows() != j || d.ncols() != k {
                return fail(alloc::format!("Delta is {} x {}", d.nrows(), d.ncols()));
            }
        }
        if self.gamma.len() != n_runs || self.upsilon.len() != n_runs {
            return fail(alloc::format!(
                "{} gamma / {} upsilon blocks for {n_runs} runs",
                self.gamma.len(),
                self.upsilon.len()
            ));
        }
        if self.gamma.iter().any(|v| v.len() != k) {
            return fail(String::from("gamma length mismatch"));
        }
        if self
            .upsilon
            .iter()
            .any(|m| m.nrows() != g || m.ncols() != k)
        {
            return fail(String::from("upsilon shape mismatch"));
        }
        if self.d_cov.nrows() != k || self.d_cov.ncols() != k {
            return fail(String::from("D shape mismatch"));
        }
        if self.w_cov.nrows() != g * k || self.w_cov.ncols() != g * k {
            return fail(String::from("W shape mismatch"));
        }
        if self.eta.len() != l {
            return fail(alloc::format!("eta length {} != L {l}", self.eta.len()));
        }
        if self.w_resid.len() != n_bins || self.sigma_sq.len() != n_bins {
            return fail(String::from("per-bin vector length mismatch"));
        }
        if self.theta.abs() >= 1.0 {
            return Err(McmcError::ThetaOutOfRange(self.theta));
        }
        Ok(())
    }
}

/// Thinned draws from one chain plus the per-draw conditional deviance.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainDraws {
    pub settings: SamplerSettings,
    pub states: Vec<ChainState>,
    pub deviance: Vec<f64>,
}

/// Run one chain: systematic-scan Gibbs with thinned storage. Deterministic
/// for a fixed seed.
pub fn run_chain(
    spec: &ModelSpec,
    data: &Dataset,
    settings: SamplerSettings,
    init: Option<ChainState>,
) -> Result<ChainDraws, McmcError> {
    settings.validate()?;
    let mut sampler = Sampler::new(spec, data, settings.seed, init)?;
    let mut states = Vec::with_capacity(settings.n_stored());
    let mut deviance = Vec::with_capacity(settings.n_stored());
    for it in 1..=settings.iterations {
        sampler.scan().map_err(|e| at_iteration(e, it))?;
        if it > settings.burn_in && (it - settings.burn_in) % settings.thin == 0 {
            states.push(sampler.state().clone());
            deviance.push(sampler.deviance());
        }
    }
    Ok(ChainDraws {
        settings,
        states,
        deviance,
    })
}

fn at_iteration(e: McmcError, it: usize) -> McmcError {
    match e {
        McmcError::NonSpd { block, .. } => McmcError::NonSpd {
            block,
            iteration: it,
        },
        other => other,
    }
}

/// Conditional deviance of `state`: -2 times the Gaussian log-likelihood of
/// the whitened innovations given all coefficients, theta and sigma_s^2.
pub fn deviance(spec: &ModelSpec, data: &Dataset, state: &ChainState) -> Result<f64, McmcError> {
    let sampler = Sampler::new(spec, data, 0, Some(state.clone()))?;
    Ok(sampler.deviance())
}

/// Independent RNG stream seed for chain `chain` derived from a master seed
/// (SplitMix64 mixing).
pub fn chain_seed(seed: u64, chain: u64) -> u64 {
    let mut z = seed.wrapping_add(chain.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// True when the model includes the run-level random trend.
pub fn has_random_trend(spec: &ModelSpec) -> bool {
    spec.random_trend != RandomTrend::None
}
