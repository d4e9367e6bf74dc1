//! Model specification: engine-on time trends, spline bases and priors.
//!
//! The mean of `y[i,s,t]` is
//! `alpha'B(s) + gamma_i'B(s) + f(t)' Delta_z B(s) + g(t)' Upsilon_i B(s)`
//! where `f(t)` is one of four parametric trends (all identically zero before
//! engine-on) and `g(t)` an optional run-level random jump indicator.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::data::{Dataset, Window};
use crate::math;
use crate::mcmc::ChainState;
use crate::splines::{BSplineBasis, SplineError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("trend knot t={knot} must lie strictly inside (0, {limit})")]
    KnotOutOfRange { knot: i32, limit: i32 },
    #[error("basis domain {found:?} does not match size-bin range [1, {expected}]")]
    DomainMismatch { found: (f64, f64), expected: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("prior configuration invalid: {0}")]
    BadPrior(String),
    #[error(transparent)]
    Spline(#[from] SplineError),
}

/// Parametric engine-on time trend `f(t)`; zero for t < 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trend {
    /// m(t) = (t, t^2)
    Quadratic,
    /// m(t) = (t, max(0, t - knot)); slope change at the knot
    BentLine { knot: i32 },
    /// m(t) = (1, t, t^2); instantaneous jump at engine-on
    JumpQuadratic,
    /// m(t) = (1, t, max(0, t - knot))
    JumpBentLine { knot: i32 },
}

impl Trend {
    /// Number of trend components J.
    pub fn j(&self) -> usize {
        match self {
            Trend::Quadratic | Trend::BentLine { .. } => 2,
            Trend::JumpQuadratic | Trend::JumpBentLine { .. } => 3,
        }
    }

    pub fn knot(&self) -> Option<i32> {
        match *self {
            Trend::BentLine { knot } | Trend::JumpBentLine { knot } => Some(knot),
            _ => None,
        }
    }

    pub fn has_jump(&self) -> bool {
        matches!(self, Trend::JumpQuadratic | Trend::JumpBentLine { .. })
    }

    /// Evaluate f(t) into `out` (length J). Zero vector for t < 0; the t = 0
    /// measurement uses the engine-on branch, so jumps apply from t = 0.
    pub fn time_basis_into(&self, t: i32, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.j());
        if t < 0 {
            out.fill(0.0);
            return;
        }
        let tf = t as f64;
        match *self {
            Trend::Quadratic => {
                out[0] = tf;
                out[1] = tf * tf;
            }
            Trend::BentLine { knot } => {
                out[0] = tf;
                out[1] = (tf - knot as f64).max(0.0);
            }
            Trend::JumpQuadratic => {
                out[0] = 1.0;
                out[1] = tf;
                out[2] = tf * tf;
            }
            Trend::JumpBentLine { knot } => {
                out[0] = 1.0;
                out[1] = tf;
                out[2] = (tf - knot as f64).max(0.0);
            }
        }
    }

    pub fn time_basis(&self, t: i32) -> Vec<f64> {
        let mut out = vec![0.0; self.j()];
        self.time_basis_into(t, &mut out);
        out
    }
}

/// Run-level random time trend `g(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RandomTrend {
    None,
    /// g(t) = 1 for t >= 0; one random jump curve per run.
    RandomJump,
}

impl RandomTrend {
    /// Number of random trend components G.
    pub fn g_dim(&self) -> usize {
        match self {
            RandomTrend::None => 0,
            RandomTrend::RandomJump => 1,
        }
    }

    pub fn time_basis_into(&self, t: i32, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.g_dim());
        if let RandomTrend::RandomJump = self {
            out[0] = if t < 0 { 0.0 } else { 1.0 };
        }
    }

    pub fn time_basis(&self, t: i32) -> Vec<f64> {
        let mut out = vec![0.0; self.g_dim()];
        self.time_basis_into(t, &mut out);
        out
    }
}

/// Treatment of the first observation of each contiguous series segment in
/// the AR(1) residual likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FirstObs {
    /// Scale the first residual by sqrt(1 - theta^2) so its innovation has
    /// variance sigma_s^2 (stationary initialization).
    #[default]
    Stationary,
    /// Condition on the first observation: it contributes no likelihood term
    /// of its own and only enters through the following lag pair.
    Conditioned,
}

/// Prior hyperparameters. All priors are proper.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorConfig {
    /// Variance of the N(0, tau^2 I) prior on alpha.
    pub tau_alpha_sq: f64,
    /// Variance of the N(0, tau^2 I) prior on each row of Delta_z.
    pub tau_delta_sq: f64,
    /// Mean of the truncated-normal prior on theta.
    pub mu_theta: f64,
    /// Variance of the truncated-normal prior on theta.
    pub sigma_theta_sq: f64,
    /// Truncation interval for theta; the upper bound guards against a
    /// near-singular likelihood.
    pub theta_bounds: (f64, f64),
    /// Degrees of freedom n_D of the inverse-Wishart prior on D.
    pub d_df: f64,
    /// K x K scale matrix M; the prior on D is InvWishart(n_D, (n_D-K-1) M)
    /// so its mean is M whenever n_D > K + 1.
    pub d_scale: DMatrix<f64>,
    /// Degrees of freedom of the inverse-Wishart prior on W.
    pub w_df: f64,
    /// (G K) x (G K) scale matrix of the prior on W.
    pub w_scale: DMatrix<f64>,
    /// Mean of the normal prior on each eta component, log(0.4).
    pub eta_mean: f64,
    /// Standard deviation g of the eta prior.
    pub eta_sd: f64,
    /// Known variance of the w_s residuals in the log-variance model.
    pub tau_eta_sq: f64,
}

impl PriorConfig {
    /// Defaults for a mean basis of size `k` and `g_dim` random trend
    /// components: diffuse normal priors on the fixed effects, theta prior
    /// N(0,1) truncated to (-1, 0.9), D ~ InvWishart(K+2, M = I),
    /// W ~ InvWishart(GK+1, I), and the eta prior centered at log(0.4) with
    /// `g` solved so that 95% of prior mass on each sigma_s^2 lies in
    /// (0.2, 0.7).
    pub fn default_for(k: usize, g_dim: usize) -> Self {
        let gk = g_dim * k;
        PriorConfig {
            tau_alpha_sq: 1e4,
            tau_delta_sq: 1e4,
            mu_theta: 0.0,
            sigma_theta_sq: 1.0,
            theta_bounds: (-1.0, 0.9),
            d_df: k as f64 + 2.0,
            d_scale: DMatrix::identity(k, k),
            w_df: (g_dim * k) as f64 + 1.0,
            w_scale: DMatrix::identity(gk, gk),
            eta_mean: math::ln(0.4),
            eta_sd: solve_eta_sd(0.2, 0.7, 0.4, 0.95),
            tau_eta_sq: 0.01,
        }
    }

    pub fn validate(&self, k: usize, g_dim: usize) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::BadPrior(msg));
        if self.tau_alpha_sq <= 0.0 || self.tau_delta_sq <= 0.0 {
            return bad(format!(
                "tau_alpha_sq = {}, tau_delta_sq = {} must be positive",
                self.tau_alpha_sq, self.tau_delta_sq
            ));
        }
        if self.sigma_theta_sq <= 0.0 || self.tau_eta_sq <= 0.0 || self.eta_sd <= 0.0 {
            return bad(String::from("variance hyperparameters must be positive"));
        }
        let (lo, hi) = self.theta_bounds;
        if !(-1.0..1.0).contains(&lo) || hi <= lo || hi > 1.0 {
            return bad(format!("theta bounds ({lo}, {hi}) invalid"));
        }
        if self.d_scale.nrows() != k || self.d_scale.ncols() != k {
            return bad(format!("d_scale must be {k} x {k}"));
        }
        if self.d_df <= k as f64 + 1.0 {
            return bad(format!(
                "d_df = {} must exceed K + 1 = {} so the prior mean of D exists",
                self.d_df,
                k + 1
            ));
        }
        if g_dim > 0 {
            let gk = g_dim * k;
            if self.w_scale.nrows() != gk || self.w_scale.ncols() != gk {
                return bad(format!("w_scale must be {gk} x {gk}"));
            }
            if self.w_df <= gk as f64 - 1.0 {
                return bad(format!("w_df = {} too small for dimension {gk}", self.w_df));
            }
        }
        Ok(())
    }
}

/// Solve for the lognormal scale `g` putting `mass` prior probability on
/// sigma^2 between `lo` and `hi` when the log-variance prior is centered at
/// log(center). Monotone in g, solved by bisection.
pub fn solve_eta_sd(lo: f64, hi: f64, center: f64, mass: f64) -> f64 {
    let upper = math::ln(hi / center);
    let lower = math::ln(lo / center);
    let coverage = |g: f64| math::norm_cdf(upper / g) - math::norm_cdf(lower / g);
    let (mut a, mut b) = (1e-6, 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if coverage(mid) > mass {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// Full model specification.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub trend: Trend,
    pub random_trend: RandomTrend,
    pub mean_basis: BSplineBasis,
    pub var_basis: BSplineBasis,
    pub priors: PriorConfig,
    /// Include run-level baseline random curves gamma_i (and D). Disabling
    /// them gives the fixed-effects-only fit used in AR-attenuation
    /// comparisons.
    pub baseline_random: bool,
    pub first_obs: FirstObs,
}

impl ModelSpec {
    /// Spec with the default bases: cubic K = 7 mean basis and quadratic
    /// L = 6 variance basis over bins `[1, n_bins]`.
    pub fn new(trend: Trend, random_trend: RandomTrend, n_bins: usize) -> Result<Self, ModelError> {
        let domain = (1.0, n_bins as f64);
        let mean_basis = BSplineBasis::make_basis(3, domain, 3)?;
        let var_basis = BSplineBasis::make_basis(2, domain, 3)?;
        Self::with_bases(trend, random_trend, mean_basis, var_basis)
    }

    /// Spec with explicit bases (both must share the `[1, S]` domain).
    pub fn with_bases(
        trend: Trend,
        random_trend: RandomTrend,
        mean_basis: BSplineBasis,
        var_basis: BSplineBasis,
    ) -> Result<Self, ModelError> {
        if mean_basis.domain() != var_basis.domain() {
            return Err(ModelError::DimensionMismatch(format!(
                "mean basis domain {:?} != variance basis domain {:?}",
                mean_basis.domain(),
                var_basis.domain()
            )));
        }
        if let Some(knot) = trend.knot() {
            if knot <= 0 {
                return Err(ModelError::KnotOutOfRange {
                    knot,
                    limit: i32::MAX,
                });
            }
        }
        let priors = PriorConfig::default_for(mean_basis.n_basis(), random_trend.g_dim());
        Ok(ModelSpec {
            trend,
            random_trend,
            mean_basis,
            var_basis,
            priors,
            baseline_random: true,
            first_obs: FirstObs::Stationary,
        })
    }

    pub fn k(&self) -> usize {
        self.mean_basis.n_basis()
    }

    pub fn l(&self) -> usize {
        self.var_basis.n_basis()
    }

    pub fn j(&self) -> usize {
        self.trend.j()
    }

    pub fn g_dim(&self) -> usize {
        self.random_trend.g_dim()
    }

    pub fn n_bins(&self) -> usize {
        self.mean_basis.domain().1 as usize
    }

    /// Canonical name, e.g. `jump-quadratic` or `random-jump-bent10`.
    ///
    /// A `random-jump-*` name always pairs the random jump with the matching
    /// fixed-jump trend, as in the model family the name comes from; the
    /// unconventional combination of a non-jump trend with a random jump is
    /// spelled with a `+random-jump` suffix instead.
    pub fn variant_name(&self) -> String {
        let base = match self.trend {
            Trend::Quadratic => String::from("quadratic"),
            Trend::BentLine { knot } => format!("bent{knot}"),
            Trend::JumpQuadratic => String::from("jump-quadratic"),
            Trend::JumpBentLine { knot } => format!("jump-bent{knot}"),
        };
        match self.random_trend {
            RandomTrend::None => base,
            RandomTrend::RandomJump if self.trend.has_jump() => {
                format!("random-{base}")
            }
            RandomTrend::RandomJump => format!("{base}+random-jump"),
        }
    }

    /// Data-dependent checks: priors well-formed, bases span `[1, S]`, and
    /// any trend knot falls before the shortest run ends.
    pub fn validate_against(&self, data: &Dataset) -> Result<(), ModelError> {
        self.priors.validate(self.k(), self.g_dim())?;
        let expected = data.n_bins();
        let found = self.mean_basis.domain();
        if found != (1.0, expected as f64) {
            return Err(ModelError::DomainMismatch { found, expected });
        }
        if let Some(knot) = self.trend.knot() {
            let limit = data.min_t_max();
            if knot <= 0 || knot >= limit {
                return Err(ModelError::KnotOutOfRange { knot, limit });
            }
        }
        Ok(())
    }

    /// Mean of y for run index `i` (0-based), 1-based bin `s`, time `t` and
    /// window `z` under the coefficients in `state`:
    /// `alpha'B(s) + gamma_i'B(s) + f(t)' Delta_z B(s) + g(t)' Upsilon_i B(s)`.
    pub fn mean_at(
        &self,
        state: &ChainState,
        run_index: usize,
        s: usize,
        t: i32,
        window: Window,
    ) -> Result<f64, ModelError> {
        let k = self.k();
        if state.alpha.len() != k {
            return Err(ModelError::DimensionMismatch(format!(
                "alpha has {} entries, basis has {k}",
                state.alpha.len()
            )));
        }
        let delta = &state.delta[window.index()];
        if delta.nrows() != self.j() || delta.ncols() != k {
            return Err(ModelError::DimensionMismatch(format!(
                "Delta is {} x {}, expected {} x {k}",
                delta.nrows(),
                delta.ncols(),
                self.j()
            )));
        }
        let gamma = state
            .gamma
            .get(run_index)
            .ok_or_else(|| ModelError::DimensionMismatch(format!("no run {run_index} in state")))?;
        let b = self.mean_basis.eval(s as f64)?;
        let mut mean = 0.0;
        for a in 0..k {
            mean += (state.alpha[a] + gamma[a]) * b[a];
        }
        let f = self.trend.time_basis(t);
        for (jj, &fj) in f.iter().enumerate() {
            if fj != 0.0 {
                let mut row = 0.0;
                for a in 0..k {
                    row += delta[(jj, a)] * b[a];
                }
                mean += fj * row;
            }
        }
        if self.g_dim() > 0 {
            let ups = &state.upsilon[run_index];
            let g = self.random_trend.time_basis(t);
            for (gg, &gv) in g.iter().enumerate() {
                if gv != 0.0 {
                    let mut row = 0.0;
                    for a in 0..k {
                        row += ups[(gg, a)] * b[a];
                    }
                    mean += gv * row;
                }
            }
        }
        Ok(mean)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ObsRecord;

    #[test]
    fn quadratic_is_zero_before_engine_on() {
        assert_eq!(Trend::Quadratic.time_basis(-3), vec![0.0, 0.0]);
        assert_eq!(Trend::Quadratic.time_basis(4), vec![4.0, 16.0]);
    }

    #[test]
    fn jump_bent_line_values() {
        assert_eq!(
            Trend::JumpBentLine { knot: 8 }.time_basis(10),
            vec![1.0, 10.0, 2.0]
        );
        assert_eq!(
            Trend::JumpBentLine { knot: 8 }.time_basis(0),
            vec![1.0, 0.0, 0.0]
        );
    }

    #[test]
    fn bent_line_knot_boundary() {
        assert_eq!(Trend::BentLine { knot: 10 }.time_basis(10), vec![10.0, 0.0]);
        assert_eq!(Trend::BentLine { knot: 10 }.time_basis(12), vec![12.0, 2.0]);
    }

    #[test]
    fn all_variants_zero_for_negative_t() {
        let variants = [
            Trend::Quadratic,
            Trend::BentLine { knot: 8 },
            Trend::JumpQuadratic,
            Trend::JumpBentLine { knot: 12 },
        ];
        for v in variants {
            for t in [-15, -2, -1] {
                assert!(v.time_basis(t).iter().all(|&x| x == 0.0), "{v:?} at {t}");
            }
        }
    }

    #[test]
    fn bent_components_continuous_at_knot() {
        for trend in [
            Trend::BentLine { knot: 10 },
            Trend::JumpBentLine { knot: 10 },
        ] {
            let before = trend.time_basis(9);
            let at = trend.time_basis(10);
            let after = trend.time_basis(11);
            let last = trend.j() - 1;
            // the kink component is 0 up to the knot and grows by 1 per minute after
            assert_eq!(before[last], 0.0);
            assert_eq!(at[last], 0.0);
            assert_eq!(after[last], 1.0);
        }
    }

    #[test]
    fn random_jump_basis() {
        assert_eq!(RandomTrend::RandomJump.time_basis(-1), vec![0.0]);
        assert_eq!(RandomTrend::RandomJump.time_basis(0), vec![1.0]);
        assert!(RandomTrend::None.time_basis(5).is_empty());
    }

    #[test]
    fn eta_sd_covers_requested_mass() {
        let g = solve_eta_sd(0.2, 0.7, 0.4, 0.95);
        let cover =
            math::norm_cdf(math::ln(0.7 / 0.4) / g) - math::norm_cdf(math::ln(0.2 / 0.4) / g);
        assert!((cover - 0.95).abs() < 1e-10, "g = {g} covers {cover}");
        assert!(g > 0.2 && g < 0.5);
    }

    #[test]
    fn default_spec_dimensions() {
        let spec = ModelSpec::new(Trend::JumpQuadratic, RandomTrend::RandomJump, 102).unwrap();
        assert_eq!(spec.k(), 7);
        assert_eq!(spec.l(), 6);
        assert_eq!(spec.j(), 3);
        assert_eq!(spec.g_dim(), 1);
        assert_eq!(spec.variant_name(), "random-jump-quadratic");
        let spec = ModelSpec::new(Trend::BentLine { knot: 10 }, RandomTrend::None, 102).unwrap();
        assert_eq!(spec.variant_name(), "bent10");
        let spec = ModelSpec::new(
            Trend::JumpBentLine { knot: 8 },
            RandomTrend::RandomJump,
            102,
        )
        .unwrap();
        assert_eq!(spec.variant_name(), "random-jump-bent8");
        let spec = ModelSpec::new(Trend::Quadratic, RandomTrend::RandomJump, 102).unwrap();
        assert_eq!(spec.variant_name(), "quadratic+random-jump");
        spec.priors.validate(spec.k(), spec.g_dim()).unwrap();
    }

    #[test]
    fn knot_checked_against_data() {
        let mut records = Vec::new();
        for t in [-2, 0, 2, 4, 6, 8, 10, 12, 14] {
            for s in 1..=4 {
                records.push(ObsRecord {
                    run: 1,
                    window: 0,
                    time: t,
                    size_bin: s,
                    count: 1.0,
                });
            }
        }
        let data = Dataset::from_records(&records).unwrap();
        let spec = ModelSpec::new(Trend::BentLine { knot: 30 }, RandomTrend::None, 4).unwrap();
        assert!(matches!(
            spec.validate_against(&data),
            Err(ModelError::KnotOutOfRange {
                knot: 30,
                limit: 14
            })
        ));
        let spec = ModelSpec::new(Trend::BentLine { knot: 10 }, RandomTrend::None, 4).unwrap();
        spec.validate_against(&data).unwrap();
    }
}
