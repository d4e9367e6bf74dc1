//! The Gibbs sampling engine: prepared designs, block updates, deviance.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::data::Dataset;
use crate::linalg;
use crate::math;
use crate::mcmc::{sample_truncated_normal, slice_sample, ChainState, FirstObs, McmcError};
use crate::model::ModelSpec;

/// Coefficient blocks with Gaussian full conditionals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearBlock {
    Alpha,
    /// Trend coefficients for one window position (0 closed, 1 open).
    Delta(usize),
    /// Baseline random curve of one run (by run index).
    Gamma(usize),
    /// Random trend coefficients of one run (by run index).
    Upsilon(usize),
}

impl LinearBlock {
    fn name(self) -> &'static str {
        match self {
            LinearBlock::Alpha => "alpha",
            LinearBlock::Delta(_) => "delta",
            LinearBlock::Gamma(_) => "gamma",
            LinearBlock::Upsilon(_) => "upsilon",
        }
    }
}

struct RunDesign {
    window: usize,
    n_t: usize,
    /// time-trend rows f(t), n_t x J row-major
    f: Vec<f64>,
    /// random-trend rows g(t), n_t x G
    g: Vec<f64>,
    /// outcomes, S x n_t
    y: Vec<f64>,
    /// per-bin contiguous observed segments (start, len)
    segs: Vec<Vec<(usize, usize)>>,
}

/// A prepared sampler over one dataset and model specification.
///
/// Owns a working copy of the outcome grid, the current [`ChainState`] and a
/// deterministic RNG stream. [`Sampler::scan`] performs one full Gibbs sweep;
/// the individual block updates are public for diagnostics and tests.
pub struct Sampler<'a> {
    spec: &'a ModelSpec,
    s_bins: usize,
    k: usize,
    j: usize,
    g_dim: usize,
    l: usize,
    /// basis values, S x K row-major
    b_mean: Vec<f64>,
    /// variance-basis values, S x L row-major
    b_var: Vec<f64>,
    runs: Vec<RunDesign>,
    window_runs: [Vec<usize>; 2],
    state: ChainState,
    /// fitted-mean components: population curve by bin
    comp_alpha: Vec<f64>,
    /// run baseline curves by bin
    comp_gamma: Vec<Vec<f64>>,
    /// fixed-trend contribution per run, S x n_t
    comp_delta: Vec<Vec<f64>>,
    /// random-trend contribution per run, S x n_t
    comp_ups: Vec<Vec<f64>>,
    d_inv: DMatrix<f64>,
    w_inv: DMatrix<f64>,
    rng: Xoshiro256PlusPlus,
}

impl<'a> Sampler<'a> {
    pub fn new(
        spec: &'a ModelSpec,
        data: &Dataset,
        seed: u64,
        init: Option<ChainState>,
    ) -> Result<Self, McmcError> {
        spec.validate_against(data)?;
        let s_bins = data.n_bins();
        let (k, j, g_dim, l) = (spec.k(), spec.j(), spec.g_dim(), spec.l());

        let mut b_mean = vec![0.0; s_bins * k];
        let mut b_var = vec![0.0; s_bins * l];
        for s0 in 0..s_bins {
            let x = (s0 + 1) as f64;
            spec.mean_basis
                .eval_into(x, &mut b_mean[s0 * k..(s0 + 1) * k])?;
            spec.var_basis
                .eval_into(x, &mut b_var[s0 * l..(s0 + 1) * l])?;
        }

        let mut runs = Vec::with_capacity(data.n_runs());
        let mut window_runs = [Vec::new(), Vec::new()];
        for (ri, run) in data.runs().iter().enumerate() {
            let n_t = run.n_times();
            let mut f = vec![0.0; n_t * j];
            let mut g = vec![0.0; n_t * g_dim];
            for (kk, &t) in run.times().iter().enumerate() {
                spec.trend.time_basis_into(t, &mut f[kk * j..(kk + 1) * j]);
                spec.random_trend
                    .time_basis_into(t, &mut g[kk * g_dim..(kk + 1) * g_dim]);
            }
            let (y_src, present) = run.grids();
            let mut segs = Vec::with_capacity(s_bins);
            for s0 in 0..s_bins {
                let row = &present[s0 * n_t..(s0 + 1) * n_t];
                let mut bin_segs = Vec::new();
                let mut kk = 0;
                while kk < n_t {
                    if row[kk] {
                        let start = kk;
                        while kk < n_t && row[kk] {
                            kk += 1;
                        }
                        bin_segs.push((start, kk - start));
                    } else {
                        kk += 1;
                    }
                }
                segs.push(bin_segs);
            }
            let w = run.window.index();
            window_runs[w].push(ri);
            runs.push(RunDesign {
                window: w,
                n_t,
                f,
                g,
                y: y_src.to_vec(),
                segs,
            });
        }

        let state = match init {
            Some(s) => s,
            None => ChainState::init(spec, data)?,
        };
        state.check_dims(spec, data.n_runs(), s_bins)?;

        let comp_gamma = (0..runs.len()).map(|_| vec![0.0; s_bins]).collect();
        let comp_delta = runs.iter().map(|r| vec![0.0; s_bins * r.n_t]).collect();
        let comp_ups = runs.iter().map(|r| vec![0.0; s_bins * r.n_t]).collect();
        let mut sampler = Sampler {
            spec,
            s_bins,
            k,
            j,
            g_dim,
            l,
            b_mean,
            b_var,
            runs,
            window_runs,
            state,
            comp_alpha: vec![0.0; s_bins],
            comp_gamma,
            comp_delta,
            comp_ups,
            d_inv: DMatrix::identity(k, k),
            w_inv: DMatrix::identity(g_dim * k, g_dim * k),
            rng: Xoshiro256PlusPlus::seed_from_u64(seed),
        };
        sampler.refresh_all()?;
        Ok(sampler)
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn spec(&self) -> &ModelSpec {
        self.spec
    }

    /// Replace the chain state (dimension-checked) and rebuild caches.
    pub fn set_state(&mut self, state: ChainState) -> Result<(), McmcError> {
        state.check_dims(self.spec, self.runs.len(), self.s_bins)?;
        self.state = state;
        self.refresh_all()
    }

    fn refresh_all(&mut self) -> Result<(), McmcError> {
        self.refresh_comp_alpha();
        for i in 0..self.runs.len() {
            self.refresh_comp_gamma(i);
            self.refresh_comp_delta(i);
            self.refresh_comp_ups(i);
        }
        self.refresh_d_inv()?;
        self.refresh_w_inv()?;
        Ok(())
    }

    fn refresh_comp_alpha(&mut self) {
        for s0 in 0..self.s_bins {
            let b = &self.b_mean[s0 * self.k..(s0 + 1) * self.k];
            self.comp_alpha[s0] = b
                .iter()
                .zip(self.state.alpha.iter())
                .map(|(x, a)| x * a)
                .sum();
        }
    }

    fn refresh_comp_gamma(&mut self, i: usize) {
        let gamma = &self.state.gamma[i];
        for s0 in 0..self.s_bins {
            let b = &self.b_mean[s0 * self.k..(s0 + 1) * self.k];
            self.comp_gamma[i][s0] = b.iter().zip(gamma.iter()).map(|(x, a)| x * a).sum();
        }
    }

    fn refresh_comp_delta(&mut self, i: usize) {
        let run = &self.runs[i];
        let delta = &self.state.delta[run.window];
        let (j, k) = (self.j, self.k);
        for s0 in 0..self.s_bins {
            let b = &self.b_mean[s0 * k..(s0 + 1) * k];
            // v_j = (Delta B(s))_j
            let mut v = [0.0f64; 8];
            for jj in 0..j {
                let mut acc = 0.0;
                for a in 0..k {
                    acc += delta[(jj, a)] * b[a];
                }
                v[jj] = acc;
            }
            for kk in 0..run.n_t {
                let f = &run.f[kk * j..(kk + 1) * j];
                let mut acc = 0.0;
                for jj in 0..j {
                    acc += f[jj] * v[jj];
                }
                self.comp_delta[i][s0 * run.n_t + kk] = acc;
            }
        }
    }

    fn refresh_comp_ups(&mut self, i: usize) {
        let run = &self.runs[i];
        let g_dim = self.g_dim;
        if g_dim == 0 {
            return;
        }
        let ups = &self.state.upsilon[i];
        let k = self.k;
        for s0 in 0..self.s_bins {
            let b = &self.b_mean[s0 * k..(s0 + 1) * k];
            let mut v = [0.0f64; 4];
            for gg in 0..g_dim {
                let mut acc = 0.0;
                for a in 0..k {
                    acc += ups[(gg, a)] * b[a];
                }
                v[gg] = acc;
            }
            for kk in 0..run.n_t {
                let g = &run.g[kk * g_dim..(kk + 1) * g_dim];
                let mut acc = 0.0;
                for gg in 0..g_dim {
                    acc += g[gg] * v[gg];
                }
                self.comp_ups[i][s0 * run.n_t + kk] = acc;
            }
        }
    }

    fn refresh_d_inv(&mut self) -> Result<(), McmcError> {
        if self.spec.baseline_random {
            self.d_inv = linalg::spd_inverse(&self.state.d_cov).ok_or(McmcError::NonSpd {
                block: "D",
                iteration: 0,
            })?;
        }
        Ok(())
    }

    fn refresh_w_inv(&mut self) -> Result<(), McmcError> {
        if self.g_dim > 0 {
            self.w_inv = linalg::spd_inverse(&self.state.w_cov).ok_or(McmcError::NonSpd {
                block: "W",
                iteration: 0,
            })?;
        }
        Ok(())
    }

    #[inline(always)]
    fn mean(&self, i: usize, s0: usize, kk: usize) -> f64 {
        let idx = s0 * self.runs[i].n_t + kk;
        self.comp_alpha[s0]
            + self.comp_gamma[i][s0]
            + self.comp_delta[i][idx]
            + self.comp_ups[i][idx]
    }

    #[inline(always)]
    fn resid(&self, i: usize, s0: usize, kk: usize) -> f64 {
        self.runs[i].y[s0 * self.runs[i].n_t + kk] - self.mean(i, s0, kk)
    }

    fn block_dim(&self, block: LinearBlock) -> usize {
        match block {
            LinearBlock::Alpha | LinearBlock::Gamma(_) => self.k,
            LinearBlock::Delta(_) => self.j * self.k,
            LinearBlock::Upsilon(_) => self.g_dim * self.k,
        }
    }

    fn prior_precision(&self, block: LinearBlock) -> DMatrix<f64> {
        let dim = self.block_dim(block);
        match block {
            LinearBlock::Alpha => DMatrix::identity(dim, dim) / self.spec.priors.tau_alpha_sq,
            LinearBlock::Delta(_) => DMatrix::identity(dim, dim) / self.spec.priors.tau_delta_sq,
            LinearBlock::Gamma(_) => self.d_inv.clone(),
            LinearBlock::Upsilon(_) => self.w_inv.clone(),
        }
    }

    /// Precision and unnormalized mean of the Gaussian full conditional:
    /// prior precision plus whitened-design cross products.
    fn conditional_system(&self, block: LinearBlock) -> (DMatrix<f64>, DVector<f64>) {
        let dim = self.block_dim(block);
        let mut prec = self.prior_precision(block);
        let mut rhs = DVector::zeros(dim);
        match block {
            LinearBlock::Alpha => {
                let run_ids: Vec<usize> = (0..self.runs.len()).collect();
                self.accumulate_size_block(&run_ids, BlockComp::Alpha, &mut prec, &mut rhs);
            }
            LinearBlock::Gamma(i) => {
                self.accumulate_size_block(&[i], BlockComp::Gamma, &mut prec, &mut rhs);
            }
            LinearBlock::Delta(z) => {
                let runs = self.window_runs[z].clone();
                self.accumulate_kron_block(&runs, TimeDesign::Fixed, &mut prec, &mut rhs);
            }
            LinearBlock::Upsilon(i) => {
                self.accumulate_kron_block(&[i], TimeDesign::Random, &mut prec, &mut rhs);
            }
        }
        (prec, rhs)
    }

    /// Exact mean and covariance of the block's full conditional.
    pub fn conditional_moments(
        &self,
        block: LinearBlock,
    ) -> Result<(DVector<f64>, DMatrix<f64>), McmcError> {
        let (prec, rhs) = self.conditional_system(block);
        let chol = linalg::cholesky(&prec).ok_or(McmcError::NonSpd {
            block: block.name(),
            iteration: 0,
        })?;
        let mean = chol.solve(&rhs);
        let cov = linalg::spd_inverse(&prec).ok_or(McmcError::NonSpd {
            block: block.name(),
            iteration: 0,
        })?;
        Ok((mean, cov))
    }

    /// Blocks whose design is B(s) for every observation: alpha and gamma_i.
    fn accumulate_size_block(
        &self,
        run_ids: &[usize],
        comp: BlockComp,
        prec: &mut DMatrix<f64>,
        rhs: &mut DVector<f64>,
    ) {
        let theta = self.state.theta;
        let c2 = 1.0 - theta * theta;
        let om = 1.0 - theta;
        let stationary = self.spec.first_obs == FirstObs::Stationary;
        let k = self.k;
        let mut a_s = vec![0.0f64; self.s_bins];
        let mut b_s = vec![0.0f64; self.s_bins];
        for &ri in run_ids {
            let run = &self.runs[ri];
            for s0 in 0..self.s_bins {
                let own = match comp {
                    BlockComp::Alpha => self.comp_alpha[s0],
                    BlockComp::Gamma => self.comp_gamma[ri][s0],
                };
                let mut a_acc = 0.0;
                let mut b_acc = 0.0;
                for &(start, len) in &run.segs[s0] {
                    let mut r_prev = self.resid(ri, s0, start) + own;
                    if stationary {
                        a_acc += c2;
                        b_acc += c2 * r_prev;
                    }
                    for kk in (start + 1)..(start + len) {
                        let r_cur = self.resid(ri, s0, kk) + own;
                        a_acc += om * om;
                        b_acc += om * (r_cur - theta * r_prev);
                        r_prev = r_cur;
                    }
                }
                a_s[s0] += a_acc;
                b_s[s0] += b_acc;
            }
        }
        for s0 in 0..self.s_bins {
            if a_s[s0] == 0.0 && b_s[s0] == 0.0 {
                continue;
            }
            let sig_inv = 1.0 / self.state.sigma_sq[s0];
            let b = &self.b_mean[s0 * k..(s0 + 1) * k];
            let wa = a_s[s0] * sig_inv;
            let wb = b_s[s0] * sig_inv;
            for a in 0..k {
                rhs[a] += wb * b[a];
                for bb in 0..k {
                    prec[(a, bb)] += wa * b[a] * b[bb];
                }
            }
        }
    }

    /// Blocks whose design is a time vector Kronecker the size basis:
    /// Delta_z (f(t)) and Upsilon_i (g(t)).
    fn accumulate_kron_block(
        &self,
        run_ids: &[usize],
        which: TimeDesign,
        prec: &mut DMatrix<f64>,
        rhs: &mut DVector<f64>,
    ) {
        let theta = self.state.theta;
        let c2 = 1.0 - theta * theta;
        let stationary = self.spec.first_obs == FirstObs::Stationary;
        let k = self.k;
        let tdim = match which {
            TimeDesign::Fixed => self.j,
            TimeDesign::Random => self.g_dim,
        };
        if tdim == 0 {
            return;
        }
        // per-bin J x J cross products and J-vector residual products
        let mut e_s = vec![0.0f64; self.s_bins * tdim * tdim];
        let mut u_s = vec![0.0f64; self.s_bins * tdim];
        let mut ft = [0.0f64; 8];
        for &ri in run_ids {
            let run = &self.runs[ri];
            let rows = match which {
                TimeDesign::Fixed => &run.f,
                TimeDesign::Random => &run.g,
            };
            for s0 in 0..self.s_bins {
                let own = |kk: usize| match which {
                    TimeDesign::Fixed => self.comp_delta[ri][s0 * run.n_t + kk],
                    TimeDesign::Random => self.comp_ups[ri][s0 * run.n_t + kk],
                };
                let e = &mut e_s[s0 * tdim * tdim..(s0 + 1) * tdim * tdim];
                let u = &mut u_s[s0 * tdim..(s0 + 1) * tdim];
                for &(start, len) in &run.segs[s0] {
                    let mut r_prev = self.resid(ri, s0, start) + own(start);
                    let mut row_prev = start;
                    if stationary {
                        let f_first = &rows[start * tdim..(start + 1) * tdim];
                        if f_first.iter().any(|&x| x != 0.0) {
                            for a in 0..tdim {
                                u[a] += c2 * r_prev * f_first[a];
                                for bb in 0..tdim {
                                    e[a * tdim + bb] += c2 * f_first[a] * f_first[bb];
                                }
                            }
                        }
                    }
                    for kk in (start + 1)..(start + len) {
                        let r_cur = self.resid(ri, s0, kk) + own(kk);
                        let f_cur = &rows[kk * tdim..(kk + 1) * tdim];
                        let f_prev = &rows[row_prev * tdim..(row_prev + 1) * tdim];
                        let mut any = false;
                        for a in 0..tdim {
                            ft[a] = f_cur[a] - theta * f_prev[a];
                            any |= ft[a] != 0.0;
                        }
                        if any {
                            let rt = r_cur - theta * r_prev;
                            for a in 0..tdim {
                                u[a] += rt * ft[a];
                                for bb in 0..tdim {
                                    e[a * tdim + bb] += ft[a] * ft[bb];
                                }
                            }
                        }
                        r_prev = r_cur;
                        row_prev = kk;
                    }
                }
            }
        }
        for s0 in 0..self.s_bins {
            let sig_inv = 1.0 / self.state.sigma_sq[s0];
            let e = &e_s[s0 * tdim * tdim..(s0 + 1) * tdim * tdim];
            let u = &u_s[s0 * tdim..(s0 + 1) * tdim];
            if e.iter().all(|&x| x == 0.0) && u.iter().all(|&x| x == 0.0) {
                continue;
            }
            let b = &self.b_mean[s0 * k..(s0 + 1) * k];
            for j1 in 0..tdim {
                for a in 0..k {
                    let row = j1 * k + a;
                    rhs[row] += sig_inv * u[j1] * b[a];
                    for j2 in 0..tdim {
                        let ev = e[j1 * tdim + j2] * sig_inv;
                        if ev == 0.0 {
                            continue;
                        }
                        for bb in 0..k {
                            prec[(row, j2 * k + bb)] += ev * b[a] * b[bb];
                        }
                    }
                }
            }
        }
    }

    /// Draw a coefficient block from its Gaussian full conditional.
    pub fn update_linear_block(&mut self, block: LinearBlock) -> Result<(), McmcError> {
        if self.block_dim(block) == 0 {
            return Ok(());
        }
        let (prec, rhs) = self.conditional_system(block);
        let draw = linalg::sample_gaussian_from_precision(&prec, &rhs, &mut self.rng).ok_or(
            McmcError::NonSpd {
                block: block.name(),
                iteration: 0,
            },
        )?;
        match block {
            LinearBlock::Alpha => {
                self.state.alpha = draw;
                self.refresh_comp_alpha();
            }
            LinearBlock::Gamma(i) => {
                self.state.gamma[i] = draw;
                self.refresh_comp_gamma(i);
            }
            LinearBlock::Delta(z) => {
                let k = self.k;
                for jj in 0..self.j {
                    for a in 0..k {
                        self.state.delta[z][(jj, a)] = draw[jj * k + a];
                    }
                }
                for ri in self.window_runs[z].clone() {
                    self.refresh_comp_delta(ri);
                }
            }
            LinearBlock::Upsilon(i) => {
                let k = self.k;
                for gg in 0..self.g_dim {
                    for a in 0..k {
                        self.state.upsilon[i][(gg, a)] = draw[gg * k + a];
                    }
                }
                self.refresh_comp_ups(i);
            }
        }
        Ok(())
    }

    /// Truncated-normal draw of theta from its conditional given all means
    /// and variances, summing over consecutive observed pairs.
    pub fn update_theta(&mut self) {
        let priors = &self.spec.priors;
        let mut prec = 1.0 / priors.sigma_theta_sq;
        let mut rhs = priors.mu_theta / priors.sigma_theta_sq;
        for ri in 0..self.runs.len() {
            for s0 in 0..self.s_bins {
                let sig_inv = 1.0 / self.state.sigma_sq[s0];
                for &(start, len) in &self.runs[ri].segs[s0] {
                    let mut u_prev = self.resid(ri, s0, start);
                    for kk in (start + 1)..(start + len) {
                        let u_cur = self.resid(ri, s0, kk);
                        prec += u_prev * u_prev * sig_inv;
                        rhs += u_prev * u_cur * sig_inv;
                        u_prev = u_cur;
                    }
                }
            }
        }
        let mean = rhs / prec;
        let sd = math::sqrt(1.0 / prec);
        let (lo, hi) = priors.theta_bounds;
        self.state.theta = sample_truncated_normal(mean, sd, lo, hi, &mut self.rng);
    }

    /// Conjugate inverse-Wishart update of D from the gamma_i.
    pub fn update_covariance_d(&mut self) -> Result<(), McmcError> {
        if !self.spec.baseline_random {
            return Ok(());
        }
        let k = self.k;
        let priors = &self.spec.priors;
        let mut scale = priors.d_scale.clone() * (priors.d_df - k as f64 - 1.0);
        for gamma in &self.state.gamma {
            for a in 0..k {
                for b in 0..k {
                    scale[(a, b)] += gamma[a] * gamma[b];
                }
            }
        }
        let df = priors.d_df + self.runs.len() as f64;
        self.state.d_cov = draw_inverse_wishart_checked(df, scale, "D", &mut self.rng)?;
        self.refresh_d_inv()
    }

    /// Conjugate inverse-Wishart update of W from the vectorized Upsilon_i.
    pub fn update_covariance_w(&mut self) -> Result<(), McmcError> {
        if self.g_dim == 0 {
            return Ok(());
        }
        let gk = self.g_dim * self.k;
        let mut scale = self.spec.priors.w_scale.clone();
        for ups in &self.state.upsilon {
            // row-major vec(Upsilon): index g*K + a
            for g1 in 0..self.g_dim {
                for a in 0..self.k {
                    let va = ups[(g1, a)];
                    let ia = g1 * self.k + a;
                    for g2 in 0..self.g_dim {
                        for b in 0..self.k {
                            scale[(ia, g2 * self.k + b)] += va * ups[(g2, b)];
                        }
                    }
                }
            }
        }
        debug_assert_eq!(scale.nrows(), gk);
        let df = self.spec.priors.w_df + self.runs.len() as f64;
        self.state.w_cov = draw_inverse_wishart_checked(df, scale, "W", &mut self.rng)?;
        self.refresh_w_inv()
    }

    /// Innovation counts and sums of squares per bin under the current theta
    /// and first-observation rule.
    pub fn innovation_stats(&self) -> (Vec<usize>, Vec<f64>) {
        let theta = self.state.theta;
        let c2 = 1.0 - theta * theta;
        let stationary = self.spec.first_obs == FirstObs::Stationary;
        let mut n_s = vec![0usize; self.s_bins];
        let mut sse_s = vec![0.0f64; self.s_bins];
        for ri in 0..self.runs.len() {
            for s0 in 0..self.s_bins {
                for &(start, len) in &self.runs[ri].segs[s0] {
                    let mut u_prev = self.resid(ri, s0, start);
                    if stationary {
                        n_s[s0] += 1;
                        sse_s[s0] += c2 * u_prev * u_prev;
                    }
                    for kk in (start + 1)..(start + len) {
                        let u_cur = self.resid(ri, s0, kk);
                        let eps = u_cur - theta * u_prev;
                        n_s[s0] += 1;
                        sse_s[s0] += eps * eps;
                        u_prev = u_cur;
                    }
                }
            }
        }
        (n_s, sse_s)
    }

    /// Slice-sampling update of the log-variance spline (eta, w), then an
    /// exact refresh of sigma_sq.
    pub fn update_log_variance(&mut self) {
        let (n_s, sse_s) = self.innovation_stats();
        let priors = &self.spec.priors;
        let (eta_mean, g_sq) = (priors.eta_mean, priors.eta_sd * priors.eta_sd);
        let tau_sq = priors.tau_eta_sq;
        let l = self.l;
        let s_bins = self.s_bins;

        // eta components, one slice update each
        for li in 0..l {
            // per-bin log-variance with eta[li] zeroed out
            let mut base = vec![0.0f64; s_bins];
            for s0 in 0..s_bins {
                let mut v = self.state.w_resid[s0];
                for l2 in 0..l {
                    if l2 != li {
                        v += self.b_var[s0 * l + l2] * self.state.eta[l2];
                    }
                }
                base[s0] = v;
            }
            let b_col: Vec<f64> = (0..s_bins).map(|s0| self.b_var[s0 * l + li]).collect();
            let n_ref = &n_s;
            let sse_ref = &sse_s;
            let log_f = |x: f64| {
                let mut lp = -(x - eta_mean) * (x - eta_mean) / (2.0 * g_sq);
                for s0 in 0..s_bins {
                    if n_ref[s0] == 0 {
                        continue;
                    }
                    let v = base[s0] + b_col[s0] * x;
                    lp += -0.5 * n_ref[s0] as f64 * v - sse_ref[s0] / (2.0 * math::exp(v));
                }
                lp
            };
            let x0 = self.state.eta[li];
            self.state.eta[li] = slice_sample(x0, 1.0, log_f, &mut self.rng);
        }

        // w components: single-bin conditionals
        for s0 in 0..s_bins {
            let mut c_s = 0.0;
            for l2 in 0..l {
                c_s += self.b_var[s0 * l + l2] * self.state.eta[l2];
            }
            let (n0, sse0) = (n_s[s0] as f64, sse_s[s0]);
            let log_f = |x: f64| {
                let mut lp = -x * x / (2.0 * tau_sq);
                if n0 > 0.0 {
                    let v = c_s + x;
                    lp += -0.5 * n0 * v - sse0 / (2.0 * math::exp(v));
                }
                lp
            };
            let x0 = self.state.w_resid[s0];
            self.state.w_resid[s0] = slice_sample(x0, 0.5, log_f, &mut self.rng);
        }
        self.state.refresh_sigma_sq(self.spec);
    }

    /// One systematic Gibbs sweep over all blocks.
    pub fn scan(&mut self) -> Result<(), McmcError> {
        self.update_linear_block(LinearBlock::Alpha)?;
        self.update_linear_block(LinearBlock::Delta(0))?;
        self.update_linear_block(LinearBlock::Delta(1))?;
        if self.spec.baseline_random {
            for i in 0..self.runs.len() {
                self.update_linear_block(LinearBlock::Gamma(i))?;
            }
        }
        if self.g_dim > 0 {
            for i in 0..self.runs.len() {
                self.update_linear_block(LinearBlock::Upsilon(i))?;
            }
        }
        self.update_theta();
        self.update_covariance_d()?;
        self.update_covariance_w()?;
        self.update_log_variance();
        Ok(())
    }

    /// Conditional deviance of the current state: -2 log N of the whitened
    /// innovations, with the stationary-rule Jacobian term per segment first.
    pub fn deviance(&self) -> f64 {
        let theta = self.state.theta;
        let c2 = 1.0 - theta * theta;
        let stationary = self.spec.first_obs == FirstObs::Stationary;
        let ln_c2 = math::ln(c2);
        let mut dev = 0.0;
        for ri in 0..self.runs.len() {
            for s0 in 0..self.s_bins {
                let sig_sq = self.state.sigma_sq[s0];
                let ln_sig = math::ln(sig_sq);
                for &(start, len) in &self.runs[ri].segs[s0] {
                    let mut u_prev = self.resid(ri, s0, start);
                    if stationary {
                        dev += math::LN_2PI + ln_sig + c2 * u_prev * u_prev / sig_sq - ln_c2;
                    }
                    for kk in (start + 1)..(start + len) {
                        let u_cur = self.resid(ri, s0, kk);
                        let eps = u_cur - theta * u_prev;
                        dev += math::LN_2PI + ln_sig + eps * eps / sig_sq;
                        u_prev = u_cur;
                    }
                }
            }
        }
        dev
    }

    /// Replace the whole state by a draw from the prior.
    pub fn draw_from_prior(&mut self) -> Result<(), McmcError> {
        let priors = &self.spec.priors;
        let k = self.k;
        let tau_a = math::sqrt(priors.tau_alpha_sq);
        for a in 0..k {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            self.state.alpha[a] = tau_a * z;
        }
        let tau_d = math::sqrt(priors.tau_delta_sq);
        for z in 0..2 {
            for jj in 0..self.j {
                for a in 0..k {
                    let n: f64 = StandardNormal.sample(&mut self.rng);
                    self.state.delta[z][(jj, a)] = tau_d * n;
                }
            }
        }
        let (lo, hi) = priors.theta_bounds;
        self.state.theta = sample_truncated_normal(
            priors.mu_theta,
            math::sqrt(priors.sigma_theta_sq),
            lo,
            hi,
            &mut self.rng,
        );
        if self.spec.baseline_random {
            let d_scale = priors.d_scale.clone() * (priors.d_df - k as f64 - 1.0);
            self.state.d_cov =
                draw_inverse_wishart_checked(priors.d_df, d_scale, "D", &mut self.rng)?;
            for i in 0..self.runs.len() {
                self.state.gamma[i] =
                    linalg::sample_gaussian_from_covariance(&self.state.d_cov, &mut self.rng)
                        .ok_or(McmcError::NonSpd {
                            block: "D",
                            iteration: 0,
                        })?;
            }
        }
        if self.g_dim > 0 {
            self.state.w_cov = draw_inverse_wishart_checked(
                priors.w_df,
                priors.w_scale.clone(),
                "W",
                &mut self.rng,
            )?;
            for i in 0..self.runs.len() {
                let v = linalg::sample_gaussian_from_covariance(&self.state.w_cov, &mut self.rng)
                    .ok_or(McmcError::NonSpd {
                    block: "W",
                    iteration: 0,
                })?;
                for gg in 0..self.g_dim {
                    for a in 0..k {
                        self.state.upsilon[i][(gg, a)] = v[gg * k + a];
                    }
                }
            }
        }
        for li in 0..self.l {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            self.state.eta[li] = priors.eta_mean + priors.eta_sd * z;
        }
        let tau_eta = math::sqrt(priors.tau_eta_sq);
        for s0 in 0..self.s_bins {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            self.state.w_resid[s0] = tau_eta * z;
        }
        self.state.refresh_sigma_sq(self.spec);
        self.refresh_all()
    }

    /// Redraw the outcome grid from the model given the current parameters.
    ///
    /// Under the stationary rule each segment restarts from the stationary
    /// distribution; under exact conditioning the first observation of every
    /// segment is held fixed and only later observations are redrawn. Used by
    /// simulation-based sampler checks.
    pub fn resample_outcomes(&mut self) {
        let theta = self.state.theta;
        let stationary = self.spec.first_obs == FirstObs::Stationary;
        for ri in 0..self.runs.len() {
            let n_t = self.runs[ri].n_t;
            for s0 in 0..self.s_bins {
                let sd = math::sqrt(self.state.sigma_sq[s0]);
                let marg_sd = sd / math::sqrt(1.0 - theta * theta);
                let segs = self.runs[ri].segs[s0].clone();
                for (start, len) in segs {
                    let mut u = if stationary {
                        let z: f64 = StandardNormal.sample(&mut self.rng);
                        let u0 = marg_sd * z;
                        let m = self.mean(ri, s0, start);
                        self.runs[ri].y[s0 * n_t + start] = m + u0;
                        u0
                    } else {
                        self.resid(ri, s0, start)
                    };
                    for kk in (start + 1)..(start + len) {
                        let z: f64 = StandardNormal.sample(&mut self.rng);
                        u = theta * u + sd * z;
                        let m = self.mean(ri, s0, kk);
                        self.runs[ri].y[s0 * n_t + kk] = m + u;
                    }
                }
            }
        }
    }

    /// Working copy of one run's outcome grid (bins x times, row-major).
    pub fn outcome_grid(&self, run_index: usize) -> &[f64] {
        &self.runs[run_index].y
    }
}

enum BlockComp {
    Alpha,
    Gamma,
}

enum TimeDesign {
    Fixed,
    Random,
}

/// Inverse-Wishart draw with the symmetrize-then-check repair on the scale
/// matrix: exact symmetrization always, a hard error if the symmetrized sum
/// has an eigenvalue below -1e-8, and a tiny jitter otherwise.
fn draw_inverse_wishart_checked<R: rand::Rng + ?Sized>(
    df: f64,
    mut scale: DMatrix<f64>,
    name: &'static str,
    rng: &mut R,
) -> Result<DMatrix<f64>, McmcError> {
    linalg::symmetrize(&mut scale);
    if linalg::cholesky(&scale).is_none() {
        let eig = scale.clone().symmetric_eigen();
        let min_eig = eig
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -1e-8 {
            return Err(McmcError::NonSpd {
                block: name,
                iteration: 0,
            });
        }
        let n = scale.nrows();
        scale += DMatrix::identity(n, n) * (min_eig.abs() + 1e-10);
    }
    linalg::sample_inverse_wishart(df, &scale, rng).ok_or(McmcError::NonSpd {
        block: name,
        iteration: 0,
    })
}
