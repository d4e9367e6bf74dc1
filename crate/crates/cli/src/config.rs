//! Run configuration: a human-editable `key = value` file.
//!
//! Unknown keys are errors so typos surface immediately. All model and prior
//! defaults are baked in; a minimal fit configuration names only `data` and
//! (optionally) `variant`.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ufts_core::mcmc::SamplerSettings;
use ufts_core::model::{FirstObs, ModelSpec, RandomTrend, Trend};
use ufts_core::splines::BSplineBasis;

/// CSV column names for the observation table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMap {
    pub run: String,
    pub window: String,
    pub time: String,
    pub size_bin: String,
    pub count: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            run: "run".into(),
            window: "window".into(),
            time: "time".into(),
            size_bin: "size_bin".into(),
            count: "count".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub variant: String,
    pub knot: Option<i32>,
    pub k: usize,
    pub l: usize,
    pub mean_knots: Option<Vec<f64>>,
    pub var_knots: Option<Vec<f64>>,
    pub baseline_random: bool,
    pub first_obs: FirstObs,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    pub seed: u64,
    pub predict_times: Vec<i32>,
    pub quantiles: Vec<f64>,
    pub trend_time: i32,
    pub profile_bins: Option<Vec<usize>>,
    pub columns: ColumnMap,
    // prior overrides; None keeps the built-in default
    pub tau_alpha_sq: Option<f64>,
    pub tau_delta_sq: Option<f64>,
    pub mu_theta: Option<f64>,
    pub sigma_theta_sq: Option<f64>,
    pub n_d: Option<f64>,
    pub d_scale: Option<f64>,
    pub w_df: Option<f64>,
    pub w_scale: Option<f64>,
    pub eta_center: Option<f64>,
    pub eta_sd: Option<f64>,
    pub tau_eta_sq: Option<f64>,
    pub theta_lo: Option<f64>,
    pub theta_hi: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            out: PathBuf::from("out"),
            variant: "jump-quadratic".into(),
            knot: None,
            k: 7,
            l: 6,
            mean_knots: None,
            var_knots: None,
            baseline_random: true,
            first_obs: FirstObs::Stationary,
            iterations: 5000,
            burn_in: 1000,
            thin: 4,
            chains: 3,
            seed: 17,
            predict_times: vec![5, 10, 15, 20],
            quantiles: vec![0.05, 0.5, 0.95],
            trend_time: 15,
            profile_bins: None,
            columns: ColumnMap::default(),
            tau_alpha_sq: None,
            tau_delta_sq: None,
            mu_theta: None,
            sigma_theta_sq: None,
            n_d: None,
            d_scale: None,
            w_df: None,
            w_scale: None,
            eta_center: None,
            eta_sd: None,
            tau_eta_sq: None,
            theta_lo: None,
            theta_hi: None,
        }
    }
}

fn parse_list<T: std::str::FromStr>(value: &str) -> Result<Vec<T>>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    value
        .split(',')
        .map(|p| p.trim().parse::<T>().map_err(|e| anyhow!("{e}: `{p}`")))
        .collect()
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg =
            Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))?;
        // relative paths resolve against the config file's directory
        if let Some(dir) = path.parent() {
            if let Some(data) = &cfg.data {
                if data.is_relative() {
                    cfg.data = Some(dir.join(data));
                }
            }
            if cfg.out.is_relative() {
                cfg.out = dir.join(&cfg.out);
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`", lineno + 1))?;
            let key = key.trim().to_ascii_lowercase();
            let value = value.trim();
            if !seen.insert(key.clone()) {
                bail!("line {}: duplicate key `{key}`", lineno + 1);
            }
            let ctx = |e: anyhow::Error| anyhow!("line {}: key `{key}`: {e}", lineno + 1);
            match key.as_str() {
                "data" => cfg.data = Some(PathBuf::from(value)),
                "out" => cfg.out = PathBuf::from(value),
                "variant" => cfg.variant = value.to_string(),
                "knot" => cfg.knot = Some(value.parse().map_err(|e| ctx(anyhow!("{e}")))?),
                "k" => cfg.k = value.parse().map_err(|e| ctx(anyhow!("{e}")))?,
                "l" => cfg.l = value.parse().map_err(|e| ctx(anyhow!("{e}")))?,
                "mean_knots" => cfg.mean_knots = Some(parse_list(value).map_err(ctx)?),
                "var_knots" => cfg.var_knots = Some(parse_list(value).map_err(ctx)?),
                "baseline_random" => {
                    cfg.baseline_random = value.parse().map_err(|e| ctx(anyhow!("{e}")))?
                }
                "first_obs" => {
                    cfg.first_obs = match value {
                        "stationary" => FirstObs::Stationary,
                        "conditioned" => FirstObs::Conditioned,
                        other => bail!(
                            "line {}: first_obs `{other}` is not `stationary` or `conditioned`",
                            lineno + 1
                        ),
                    }
                }
                "iterations" => cfg.iterations = value.parse().map_err(|e| ctx(anyhow!("{e}")))?,
                "burn_in" => cfg.burn_in = value.parse().map_err(|e| ctx(anyhow!("{e}")))?,
                "thin" => cfg.thin = value.parse().map_err(|e| ctx(anyhow!("{e}")))?,
                "chains" => cfg.chains = value.parse().map_err(|e| ctx(anyhow!("{e}")))?,
                "seed" => cfg.seed = value.parse().map_err(|e| ctx(anyhow!("{e}")))?,
                "predict_times" => cfg.predict_times = parse_list(value).map_err(ctx)?,
                "quantiles" => cfg.quantiles = parse_list(value).map_err(ctx)?,
                "trend_time" => cfg.trend_time = value.parse().map_err(|e| ctx(anyhow!("{e}")))?,
                "profile_bins" => cfg.profile_bins = Some(parse_list(value).map_err(ctx)?),
                "col_run" => cfg.columns.run = value.to_string(),
                "col_window" => cfg.columns.window = value.to_string(),
                "col_time" => cfg.columns.time = value.to_string(),
                "col_size_bin" => cfg.columns.size_bin = value.to_string(),
                "col_count" => cfg.columns.count = value.to_string(),
                "tau_alpha_sq" => {
                    cfg.tau_alpha_sq = Some(value.parse().map_err(|e| ctx(anyhow!("{e}")))?)
                }
                "tau_delta_sq" => {
                    cfg.tau_delta_sq = Some(value.parse().map_err(|e| ctx(anyhow!("{e}")))?)
                }
                "mu_theta" => cfg.mu_theta = Some(value.parse().map_err(|e| ctx(anyhow!("{e}")))?),
                "sigma_theta_sq" => {
                    cfg.sigma_theta_sq = Some(value.parse().map_err(|e| ctx(anyhow!("{e}")))?)
                }
                "n_d" => cfg.n_d = Some(value.parse().map_err(|e| ctx(anyhow!("{e}")))?),
                "d_scale" => cfg.d_scale = Some(value.parse().map_err(|e| ctx(anyhow!("{e}")))?),
                "w_df" => cfg.w_df = Some(value.parse().map_err(|e| ctx(anyhow!("{e}")))?),
                "w_scale" => cfg.w_scale = Some(value.parse().map_err(|e| ctx(anyhow!("{e}")))?),
                "eta_center" => {
                    cfg.eta_center = Some(value.parse().map_err(|e| ctx(anyhow!("{e}")))?)
                }
                "eta_sd" => cfg.eta_sd = Some(value.parse().map_err(|e| ctx(anyhow!("{e}")))?),
                "tau_eta_sq" => {
                    cfg.tau_eta_sq = Some(value.parse().map_err(|e| ctx(anyhow!("{e}")))?)
                }
                "theta_lo" => cfg.theta_lo = Some(value.parse().map_err(|e| ctx(anyhow!("{e}")))?),
                "theta_hi" => cfg.theta_hi = Some(value.parse().map_err(|e| ctx(anyhow!("{e}")))?),
                other => bail!("line {}: unknown key `{other}`", lineno + 1),
            }
        }
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        if self.k < 4 {
            bail!("k = {} too small for a cubic basis (need k >= 4)", self.k);
        }
        if self.l < 3 {
            bail!(
                "l = {} too small for a quadratic basis (need l >= 3)",
                self.l
            );
        }
        if self.chains == 0 {
            bail!("chains must be positive");
        }
        for &q in &self.quantiles {
            if !(0.0..=1.0).contains(&q) {
                bail!("quantile {q} outside [0, 1]");
            }
        }
        Ok(())
    }

    /// Resolve the trend variant name plus any knot override.
    pub fn parse_variant(&self) -> Result<(Trend, RandomTrend)> {
        parse_variant_name(&self.variant, self.knot)
    }

    /// Build the model specification for a dataset with `n_bins` size bins.
    pub fn build_spec(&self, n_bins: usize) -> Result<ModelSpec> {
        let (trend, random_trend) = self.parse_variant()?;
        let domain = (1.0, n_bins as f64);
        let mean_basis = match &self.mean_knots {
            Some(knots) => BSplineBasis::with_interior_knots(3, domain, knots)?,
            None => BSplineBasis::make_basis(3, domain, self.k - 4)?,
        };
        let var_basis = match &self.var_knots {
            Some(knots) => BSplineBasis::with_interior_knots(2, domain, knots)?,
            None => BSplineBasis::make_basis(2, domain, self.l - 3)?,
        };
        let mut spec = ModelSpec::with_bases(trend, random_trend, mean_basis, var_basis)?;
        spec.baseline_random = self.baseline_random;
        spec.first_obs = self.first_obs;
        let p = &mut spec.priors;
        if let Some(v) = self.tau_alpha_sq {
            p.tau_alpha_sq = v;
        }
        if let Some(v) = self.tau_delta_sq {
            p.tau_delta_sq = v;
        }
        if let Some(v) = self.mu_theta {
            p.mu_theta = v;
        }
        if let Some(v) = self.sigma_theta_sq {
            p.sigma_theta_sq = v;
        }
        if let Some(v) = self.n_d {
            p.d_df = v;
        }
        if let Some(v) = self.d_scale {
            p.d_scale *= v;
        }
        if let Some(v) = self.w_df {
            p.w_df = v;
        }
        if let Some(v) = self.w_scale {
            p.w_scale *= v;
        }
        if let Some(v) = self.eta_center {
            if v <= 0.0 {
                bail!("eta_center must be a positive variance level");
            }
            p.eta_mean = v.ln();
        }
        if let Some(v) = self.eta_sd {
            p.eta_sd = v;
        }
        if let Some(v) = self.tau_eta_sq {
            p.tau_eta_sq = v;
        }
        if let Some(v) = self.theta_lo {
            p.theta_bounds.0 = v;
        }
        if let Some(v) = self.theta_hi {
            p.theta_bounds.1 = v;
        }
        spec.priors.validate(spec.k(), spec.g_dim())?;
        Ok(spec)
    }

    pub fn settings_for_chain(&self, chain: u64) -> Result<SamplerSettings> {
        let settings = SamplerSettings {
            iterations: self.iterations,
            burn_in: self.burn_in,
            thin: self.thin,
            seed: ufts_core::mcmc::chain_seed(self.seed, chain),
        };
        settings.validate()?;
        Ok(settings)
    }
}

/// Parse a variant name, optionally overriding the bent-line knot.
///
/// `random-jump-quadratic` and `random-jump-bentN` pair the run-level random
/// jump with the matching fixed-jump trend; `NAME+random-jump` adds the
/// random jump to any other trend.
pub fn parse_variant_name(name: &str, knot_override: Option<i32>) -> Result<(Trend, RandomTrend)> {
    let lower = name.trim().to_ascii_lowercase();
    let (base, mut random_jump) = match lower.strip_suffix("+random-jump") {
        Some(stripped) => (stripped.to_string(), true),
        None => (lower.clone(), false),
    };
    let base = if let Some(rest) = base.strip_prefix("random-jump-") {
        random_jump = true;
        // random-jump variants keep the fixed jump in the trend
        if rest == "quadratic" || rest.starts_with("bent") {
            format!("jump-{rest}")
        } else {
            rest.to_string()
        }
    } else {
        base
    };
    let knot_from = |tail: &str, jump: bool| -> Result<Trend> {
        let knot = if tail.is_empty() {
            knot_override.ok_or_else(|| {
                anyhow!("variant `{name}` needs a knot (e.g. bent10 or --knot 10)")
            })?
        } else {
            let parsed: i32 = tail.parse().map_err(|_| anyhow!("bad knot in `{name}`"))?;
            knot_override.unwrap_or(parsed)
        };
        Ok(if jump {
            Trend::JumpBentLine { knot }
        } else {
            Trend::BentLine { knot }
        })
    };
    let trend = match base.as_str() {
        "quadratic" => Trend::Quadratic,
        "jump-quadratic" => Trend::JumpQuadratic,
        other => {
            if let Some(tail) = other.strip_prefix("jump-bent") {
                knot_from(tail, true)?
            } else if let Some(tail) = other.strip_prefix("bent") {
                knot_from(tail, false)?
            } else {
                bail!(
                    "unknown variant `{name}`; expected quadratic, bentN, jump-quadratic, \
                     jump-bentN, random-jump-quadratic, random-jump-bentN or NAME+random-jump"
                );
            }
        }
    };
    let random_trend = if random_jump {
        RandomTrend::RandomJump
    } else {
        RandomTrend::None
    };
    Ok((trend, random_trend))
}

/// The standard twelve-model sweep: four non-jump trends, four jump trends,
/// and the four jump trends with the run-level random jump added.
pub fn sweep_variants() -> Vec<String> {
    let mut names = vec![
        "quadratic".to_string(),
        "bent8".to_string(),
        "bent10".to_string(),
        "bent12".to_string(),
        "jump-quadratic".to_string(),
        "jump-bent8".to_string(),
        "jump-bent10".to_string(),
        "jump-bent12".to_string(),
    ];
    for n in [
        "random-jump-quadratic",
        "random-jump-bent8",
        "random-jump-bent10",
        "random-jump-bent12",
    ] {
        names.push(n.to_string());
    }
    names
}
