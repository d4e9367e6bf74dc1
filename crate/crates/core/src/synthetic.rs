//! Forward simulation from the generative model and brute-force oracles for
//! validating the sampler.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::data::{DataError, Dataset, ObsRecord, Window};
use crate::linalg;
use crate::math;
use crate::mcmc::{ChainState, McmcError};
use crate::model::{ModelError, ModelSpec, RandomTrend, Trend};
use crate::splines::BSplineBasis;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SyntheticError {
    #[error("grid oracle supports at most 3 free dimensions, got {0}")]
    DimensionTooLarge(usize),
    #[error("bad quadrature grid: {0}")]
    BadGrid(String),
    #[error("invalid truth configuration: {0}")]
    InvalidTruth(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mcmc(#[from] McmcError),
    #[error(transparent)]
    Spline(#[from] crate::splines::SplineError),
}

/// Layout of one simulated run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLayout {
    pub id: u32,
    pub window: Window,
    pub times: Vec<i32>,
}

/// Ground-truth parameters for simulate-then-recover experiments.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthConfig {
    pub spec: ModelSpec,
    pub alpha: DVector<f64>,
    pub delta: [DMatrix<f64>; 2],
    pub theta: f64,
    pub eta: DVector<f64>,
    /// Fixed w_s; drawn from N(0, tau_eta_sq) when absent.
    pub w: Option<DVector<f64>>,
    pub d_cov: DMatrix<f64>,
    pub w_cov: DMatrix<f64>,
    pub runs: Vec<RunLayout>,
    pub seed: u64,
}

/// All latent quantities realized during a simulation, packaged as a
/// [`ChainState`] so recovery scoring can reuse the posterior machinery.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentRecord {
    pub state: ChainState,
}

impl TruthConfig {
    pub fn validate(&self) -> Result<(), SyntheticError> {
        let k = self.spec.k();
        let (lo, hi) = self.spec.priors.theta_bounds;
        if self.theta <= lo || self.theta >= hi {
            return Err(SyntheticError::InvalidTruth(alloc::format!(
                "theta = {} outside ({lo}, {hi})",
                self.theta
            )));
        }
        if self.alpha.len() != k || self.eta.len() != self.spec.l() {
            return Err(SyntheticError::InvalidTruth(String::from(
                "coefficient lengths do not match the bases",
            )));
        }
        for d in &self.delta {
            if d.nrows() != self.spec.j() || d.ncols() != k {
                return Err(SyntheticError::InvalidTruth(String::from(
                    "Delta shape mismatch",
                )));
            }
        }
        if self.d_cov.nrows() != k {
            return Err(SyntheticError::InvalidTruth(String::from(
                "D shape mismatch",
            )));
        }
        let gk = self.spec.g_dim() * k;
        if self.w_cov.nrows() != gk {
            return Err(SyntheticError::InvalidTruth(String::from(
                "W shape mismatch",
            )));
        }
        if let Some(w) = &self.w {
            if w.len() != self.spec.n_bins() {
                return Err(SyntheticError::InvalidTruth(String::from(
                    "w length mismatch",
                )));
            }
        }
        if self.runs.is_empty() {
            return Err(SyntheticError::InvalidTruth(String::from("no runs")));
        }
        Ok(())
    }

    /// Desk-scale truth: 6 runs (3 per window position), 40 bins, times
    /// -10..14 by 2 minutes, K = 5, L = 4, theta = 0.4 and a variance curve
    /// decreasing from about 0.5 at the smallest bins to 0.12 at the largest.
    pub fn desk_scale(
        trend: Trend,
        random_trend: RandomTrend,
        seed: u64,
    ) -> Result<Self, SyntheticError> {
        let s_bins = 40usize;
        let domain = (1.0, s_bins as f64);
        let mean_basis = BSplineBasis::with_interior_knots(3, domain, &[20.5])?;
        let var_basis = BSplineBasis::with_interior_knots(2, domain, &[20.5])?;
        let spec = ModelSpec::with_bases(trend, random_trend, mean_basis, var_basis)?;
        let k = spec.k();
        let j = spec.j();

        let alpha = project_curve(&spec.mean_basis, |s| {
            5.0 + 2.5 * math::exp(-((s - 14.0) / 9.0) * ((s - 14.0) / 9.0))
        })?;
        // per-window trend component curves over size
        let bump = |center: f64, width: f64, scale: f64| {
            move |s: f64| scale * math::exp(-((s - center) / width) * ((s - center) / width))
        };
        let jump = [bump(16.0, 10.0, 0.25), bump(14.0, 9.0, 0.8)];
        let slope = [bump(18.0, 12.0, 0.03), bump(15.0, 10.0, 0.07)];
        let curve = [bump(18.0, 12.0, -0.0006), bump(15.0, 10.0, -0.0016)];
        let mut delta = [DMatrix::zeros(j, k), DMatrix::zeros(j, k)];
        for z in 0..2 {
            let rows: Vec<DVector<f64>> = match trend {
                Trend::Quadratic | Trend::BentLine { .. } => vec![
                    project_curve(&spec.mean_basis, &slope[z])?,
                    project_curve(&spec.mean_basis, &curve[z])?,
                ],
                Trend::JumpQuadratic | Trend::JumpBentLine { .. } => vec![
                    project_curve(&spec.mean_basis, &jump[z])?,
                    project_curve(&spec.mean_basis, &slope[z])?,
                    project_curve(&spec.mean_basis, &curve[z])?,
                ],
            };
            for (jj, row) in rows.iter().enumerate() {
                for a in 0..k {
                    delta[z][(jj, a)] = row[a];
                }
            }
        }

        let eta = project_curve(&spec.var_basis, |s| {
            let frac = (s - 1.0) / (s_bins as f64 - 1.0);
            math::ln(0.5) + frac * (math::ln(0.12) - math::ln(0.5))
        })?;

        let d_cov = ar1_covariance(k, 0.6, 0.6 * 0.6);
        let w_cov = if spec.g_dim() > 0 {
            ar1_covariance(spec.g_dim() * k, 0.5, 0.5 * 0.5)
        } else {
            DMatrix::zeros(0, 0)
        };

        let times: Vec<i32> = (-5..=7).map(|m| 2 * m).collect();
        let runs = (0..6)
            .map(|i| RunLayout {
                id: i as u32 + 1,
                window: if i < 3 { Window::Closed } else { Window::Open },
                times: times.clone(),
            })
            .collect();

        let truth = TruthConfig {
            spec,
            alpha,
            delta,
            theta: 0.4,
            eta,
            w: None,
            d_cov,
            w_cov,
            runs,
            seed,
        };
        truth.validate()?;
        Ok(truth)
    }
}

/// Least-squares projection of a smooth size curve onto a basis.
pub fn project_curve(
    basis: &BSplineBasis,
    f: impl Fn(f64) -> f64,
) -> Result<DVector<f64>, SyntheticError> {
    let (lo, hi) = basis.domain();
    let n = (hi - lo) as usize + 1;
    let points: Vec<f64> = (0..n).map(|i| lo + i as f64).collect();
    let design = basis.matrix(&points)?;
    let targets = DVector::from_iterator(n, points.iter().map(|&x| f(x)));
    linalg::lsq_project(&design, &targets)
        .ok_or_else(|| SyntheticError::BadGrid(String::from("projection design is singular")))
}

fn ar1_covariance(dim: usize, rho: f64, variance: f64) -> DMatrix<f64> {
    DMatrix::from_fn(dim, dim, |i, j| {
        variance * math::powi(rho, i.abs_diff(j) as u32)
    })
}

/// Stationary AR(1) path: `u_0 ~ N(0, sigma^2/(1-theta^2))`,
/// `u_k = theta u_{k-1} + N(0, sigma^2)`.
pub fn ar1_path<R: Rng + ?Sized>(theta: f64, sigma_sq: f64, n: usize, rng: &mut R) -> Vec<f64> {
    debug_assert!(theta.abs() < 1.0);
    let sd = math::sqrt(sigma_sq);
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    let z0: f64 = StandardNormal.sample(rng);
    let mut u = math::sqrt(sigma_sq / (1.0 - theta * theta)) * z0;
    out.push(u);
    for _ in 1..n {
        let z: f64 = StandardNormal.sample(rng);
        u = theta * u + sd * z;
        out.push(u);
    }
    out
}

/// Simulate a dataset from the generative model at the given truth.
///
/// Counts are back-transformed as `max(0, exp(y) - 10)` so the emitted CSV
/// reproduces y exactly wherever the count is positive; log outcomes below
/// ln(10) cannot arise from real counts and clamp to it.
pub fn simulate_dataset(truth: &TruthConfig) -> Result<(Dataset, LatentRecord), SyntheticError> {
    truth.validate()?;
    let spec = &truth.spec;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(truth.seed);
    let s_bins = spec.n_bins();
    let k = spec.k();
    let g_dim = spec.g_dim();
    let n_runs = truth.runs.len();

    let mut state = ChainState::zeros(spec, n_runs);
    state.alpha = truth.alpha.clone();
    state.delta = truth.delta.clone();
    state.theta = truth.theta;
    state.eta = truth.eta.clone();
    state.d_cov = truth.d_cov.clone();
    state.w_cov = truth.w_cov.clone();
    match &truth.w {
        Some(w) => state.w_resid = w.clone(),
        None => {
            let sd = math::sqrt(spec.priors.tau_eta_sq);
            for s0 in 0..s_bins {
                let z: f64 = StandardNormal.sample(&mut rng);
                state.w_resid[s0] = sd * z;
            }
        }
    }
    state.refresh_sigma_sq(spec);

    if spec.baseline_random {
        for i in 0..n_runs {
            state.gamma[i] = linalg::sample_gaussian_from_covariance(&truth.d_cov, &mut rng)
                .ok_or_else(|| SyntheticError::InvalidTruth(String::from("D not SPD")))?;
        }
    }
    if g_dim > 0 {
        for i in 0..n_runs {
            let v = linalg::sample_gaussian_from_covariance(&truth.w_cov, &mut rng)
                .ok_or_else(|| SyntheticError::InvalidTruth(String::from("W not SPD")))?;
            for gg in 0..g_dim {
                for a in 0..k {
                    state.upsilon[i][(gg, a)] = v[gg * k + a];
                }
            }
        }
    }

    let points: Vec<f64> = (1..=s_bins).map(|s| s as f64).collect();
    let basis = spec.mean_basis.matrix(&points)?;
    let mut records = Vec::new();
    for (ri, layout) in truth.runs.iter().enumerate() {
        let f_rows: Vec<Vec<f64>> = layout
            .times
            .iter()
            .map(|&t| spec.trend.time_basis(t))
            .collect();
        let g_rows: Vec<Vec<f64>> = layout
            .times
            .iter()
            .map(|&t| spec.random_trend.time_basis(t))
            .collect();
        let delta = &state.delta[layout.window.index()];
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
            let mut uu = [0.0f64; 4];
            for gg in 0..g_dim {
                let mut acc = 0.0;
                for a in 0..k {
                    acc += state.upsilon[ri][(gg, a)] * basis[(s0, a)];
                }
                uu[gg] = acc;
            }
            let noise = ar1_path(
                truth.theta,
                state.sigma_sq[s0],
                layout.times.len(),
                &mut rng,
            );
            for (kk, &t) in layout.times.iter().enumerate() {
                let mut m = base;
                for (jj, &fj) in f_rows[kk].iter().enumerate() {
                    m += fj * v[jj];
                }
                for (gg, &gv) in g_rows[kk].iter().enumerate() {
                    m += gv * uu[gg];
                }
                let y = m + noise[kk];
                let count = (math::exp(y) - 10.0).max(0.0);
                records.push(ObsRecord {
                    run: layout.id,
                    window: layout.window.label() as i64,
                    time: t,
                    size_bin: (s0 + 1) as i64,
                    count,
                });
            }
        }
    }
    let dataset = Dataset::from_records(&records)?;
    Ok((dataset, LatentRecord { state }))
}

/// One quadrature dimension of the grid oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridDim {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

/// Posterior moments from dense trapezoid quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMoments {
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
}

/// Brute-force posterior moments for a log-density over at most 3 free
/// dimensions, by trapezoid quadrature on a dense product grid.
pub fn grid_posterior_moments(
    dims: &[GridDim],
    log_density: impl Fn(&[f64]) -> f64,
) -> Result<GridMoments, SyntheticError> {
    let d = dims.len();
    if d == 0 || d > 3 {
        return Err(SyntheticError::DimensionTooLarge(d));
    }
    let mut total: usize = 1;
    for dim in dims {
        if dim.n < 2 || !(dim.lo < dim.hi) {
            return Err(SyntheticError::BadGrid(alloc::format!(
                "dimension [{}, {}] with {} points",
                dim.lo,
                dim.hi,
                dim.n
            )));
        }
        total = total.saturating_mul(dim.n);
    }
    if total > 200_000_000 {
        return Err(SyntheticError::BadGrid(alloc::format!(
            "{total} grid points is too many"
        )));
    }
    let steps: Vec<f64> = dims
        .iter()
        .map(|g| (g.hi - g.lo) / (g.n - 1) as f64)
        .collect();
    let point = |idx: &[usize], out: &mut [f64]| {
        for (i, g) in dims.iter().enumerate() {
            out[i] = g.lo + steps[i] * idx[i] as f64;
        }
    };
    let weight = |idx: &[usize]| -> f64 {
        let mut w = 1.0;
        for (i, g) in dims.iter().enumerate() {
            if idx[i] == 0 || idx[i] == g.n - 1 {
                w *= 0.5;
            }
        }
        w
    };
    let mut indices = vec![0usize; d];
    let mut x = vec![0.0f64; d];
    // first pass: max log-density for stable exponentiation
    let mut max_log = f64::NEG_INFINITY;
    loop {
        point(&indices, &mut x);
        let l = log_density(&x);
        if l > max_log {
            max_log = l;
        }
        if !advance(&mut indices, dims) {
            break;
        }
    }
    if !max_log.is_finite() {
        return Err(SyntheticError::BadGrid(String::from(
            "log-density is -inf on the whole grid",
        )));
    }
    let mut mass = 0.0;
    let mut mean = vec![0.0f64; d];
    let mut second = DMatrix::zeros(d, d);
    loop {
        point(&indices, &mut x);
        let w = weight(&indices) * math::exp(log_density(&x) - max_log);
        mass += w;
        for i in 0..d {
            mean[i] += w * x[i];
            for jj in 0..d {
                second[(i, jj)] += w * x[i] * x[jj];
            }
        }
        if !advance(&mut indices, dims) {
            break;
        }
    }
    if mass <= 0.0 {
        return Err(SyntheticError::BadGrid(String::from("zero posterior mass")));
    }
    for m in &mut mean {
        *m /= mass;
    }
    let mut cov = second / mass;
    for i in 0..d {
        for jj in 0..d {
            cov[(i, jj)] -= mean[i] * mean[jj];
        }
    }
    Ok(GridMoments { mean, cov })
}

fn advance(indices: &mut [usize], dims: &[GridDim]) -> bool {
    for i in (0..indices.len()).rev() {
        indices[i] += 1;
        if indices[i] < dims[i].n {
            return true;
        }
        indices[i] = 0;
    }
    false
}
