//! The five subcommands: simulate, fit, summarize, dic, diagnose.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{anyhow, bail, Context, Result};
use ufts_core::data::{Dataset, Window};
use ufts_core::mcmc::{self, ChainDraws, ChainState};
use ufts_core::model::{ModelSpec, Trend};
use ufts_core::posterior;
use ufts_core::splines::BSplineBasis;
use ufts_core::synthetic::{self, TruthConfig};

use crate::config::{parse_variant_name, sweep_variants, RunConfig};
use crate::csvio::{
    self, data_hash, find_chain_files, interior_knots, read_draws_csv, read_meta, spec_hash,
    write_atomic, write_data_csv, write_draws_csv, write_meta, ChainMeta, DrawDims,
};

pub struct SimulateArgs {
    pub out: PathBuf,
    pub seed: u64,
    pub variant: String,
    pub knot: Option<i32>,
}

/// Simulate a desk-scale dataset and write it with its latent-truth sidecar.
pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let (trend, random_trend) = parse_variant_name(&args.variant, args.knot)?;
    let truth = TruthConfig::desk_scale(trend, random_trend, args.seed)?;
    let (data, latent) = synthetic::simulate_dataset(&truth)?;
    let data_path = args.out.join("data.csv");
    write_data_csv(&data_path, &data)?;
    let truth_path = args.out.join("truth.txt");
    write_atomic(&truth_path, truth_sidecar(&truth, &latent.state).as_bytes())?;
    println!(
        "simulated {} runs x {} bins ({} observations) from {}",
        data.n_runs(),
        data.n_bins(),
        data.n_observed(),
        truth.spec.variant_name()
    );
    println!("wrote {}", data_path.display());
    println!("wrote {}", truth_path.display());
    Ok(())
}

fn truth_sidecar(truth: &TruthConfig, state: &ChainState) -> String {
    let mut s = String::from("# latent truth used by the simulator\n");
    let _ = writeln!(s, "variant = {}", truth.spec.variant_name());
    let _ = writeln!(s, "seed = {}", truth.seed);
    let _ = writeln!(s, "theta = {}", state.theta);
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x}"))
            .collect::<Vec<_>>()
            .join(",")
    };
    let _ = writeln!(s, "alpha = {}", fmt(state.alpha.as_slice()));
    let _ = writeln!(s, "eta = {}", fmt(state.eta.as_slice()));
    let _ = writeln!(s, "w = {}", fmt(state.w_resid.as_slice()));
    let _ = writeln!(s, "sigma_sq = {}", fmt(state.sigma_sq.as_slice()));
    for z in 0..2 {
        for j in 0..truth.spec.j() {
            let row: Vec<f64> = (0..truth.spec.k())
                .map(|a| state.delta[z][(j, a)])
                .collect();
            let _ = writeln!(s, "Delta[{z}][{}] = {}", j + 1, fmt(&row));
        }
    }
    for (i, g) in state.gamma.iter().enumerate() {
        let _ = writeln!(s, "gamma[{}] = {}", i + 1, fmt(g.as_slice()));
    }
    for (i, u) in state.upsilon.iter().enumerate() {
        for g in 0..truth.spec.g_dim() {
            let row: Vec<f64> = (0..truth.spec.k()).map(|a| u[(g, a)]).collect();
            let _ = writeln!(s, "Upsilon[{}][{}] = {}", i + 1, g + 1, fmt(&row));
        }
    }
    let _ = writeln!(s, "D = {}", fmt(state.d_cov.as_slice()));
    let _ = writeln!(s, "W = {}", fmt(state.w_cov.as_slice()));
    s
}

pub struct FitArgs {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub chains: Option<usize>,
    pub out: Option<PathBuf>,
    pub variant: Option<String>,
    pub knot: Option<i32>,
    pub sweep: bool,
}

fn apply_fit_overrides(cfg: &mut RunConfig, args: &FitArgs) {
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(chains) = args.chains {
        cfg.chains = chains;
    }
    if let Some(out) = &args.out {
        cfg.out = out.clone();
    }
    if let Some(variant) = &args.variant {
        cfg.variant = variant.clone();
    }
    if let Some(knot) = args.knot {
        cfg.knot = Some(knot);
    }
}

fn load_data(cfg: &RunConfig) -> Result<(Dataset, csvio::IngestReport)> {
    let path = cfg
        .data
        .as_ref()
        .ok_or_else(|| anyhow!("config needs `data = <csv path>`"))?;
    csvio::load_dataset(path, &cfg.columns)
}

struct FitOutcome {
    variant: String,
    dic: posterior::DicReport,
    theta: Vec<f64>,
    chain_theta_medians: Vec<(u64, f64)>,
    n_pooled: usize,
    files: Vec<PathBuf>,
}

/// Fit one model spec: run the chains in parallel, write draw files and
/// metadata, and compute pooled summaries.
fn fit_spec(
    spec: &ModelSpec,
    data: &Dataset,
    cfg: &RunConfig,
    out_dir: &Path,
) -> Result<FitOutcome> {
    spec.validate_against(data)?;
    let chain_ids: Vec<u64> = (0..cfg.chains as u64).collect();
    let results: Mutex<Vec<(u64, ChainDraws)>> = Mutex::new(Vec::new());
    let next = std::sync::atomic::AtomicUsize::new(0);
    let failure: Mutex<Option<anyhow::Error>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..2.min(cfg.chains) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= chain_ids.len() || failure.lock().unwrap().is_some() {
                    break;
                }
                let chain = chain_ids[i];
                let run = cfg.settings_for_chain(chain).and_then(|settings| {
                    mcmc::run_chain(spec, data, settings, None).map_err(anyhow::Error::from)
                });
                match run {
                    Ok(draws) => results.lock().unwrap().push((chain, draws)),
                    Err(e) => {
                        *failure.lock().unwrap() = Some(e);
                        break;
                    }
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e).context(format!("fitting {}", spec.variant_name()));
    }
    let mut chains = results.into_inner().unwrap();
    chains.sort_by_key(|(c, _)| *c);

    let dims = DrawDims::of(spec, data.n_runs());
    let shash = spec_hash(spec);
    let dhash = data_hash(data);
    let mut files = Vec::new();
    let mut pooled_states = Vec::new();
    let mut pooled_dev = Vec::new();
    let mut chain_theta_medians = Vec::new();
    for (chain, draws) in &chains {
        let csv_path = out_dir.join(format!("chain-{chain}.csv"));
        write_draws_csv(&csv_path, draws, &dims)?;
        let meta_path = out_dir.join(format!("chain-{chain}.meta.txt"));
        write_meta(
            &meta_path,
            &ChainMeta {
                variant: spec.variant_name(),
                first_obs: spec.first_obs,
                baseline_random: spec.baseline_random,
                mean_interior_knots: interior_knots(&spec.mean_basis),
                var_interior_knots: interior_knots(&spec.var_basis),
                dims,
                settings: draws.settings,
                chain: *chain,
                spec_hash: shash,
                data_hash: dhash,
            },
        )?;
        files.push(csv_path);
        files.push(meta_path);
        let med = posterior::theta_quantiles(&draws.states, &[0.5])?;
        chain_theta_medians.push((*chain, med[0]));
        pooled_states.extend(draws.states.iter().cloned());
        pooled_dev.extend(draws.deviance.iter().copied());
    }
    let dic = posterior::dic(spec, data, &pooled_states, &pooled_dev)?;
    let theta = posterior::theta_quantiles(&pooled_states, &[0.025, 0.5, 0.975])?;
    Ok(FitOutcome {
        variant: spec.variant_name(),
        dic,
        theta,
        chain_theta_medians,
        n_pooled: pooled_states.len(),
        files,
    })
}

/// Fit the configured model (or the full 12-variant sweep) and write a
/// one-page report.
pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    let mut cfg = RunConfig::from_file(&args.config)?;
    apply_fit_overrides(&mut cfg, args);
    let (data, ingest) = load_data(&cfg)?;
    let out_dir = cfg.out.clone();

    let mut report = String::new();
    let _ = writeln!(report, "ufts fit report");
    let _ = writeln!(report, "===============");
    let _ = writeln!(
        report,
        "data: {} ({} runs, {} bins, {} observations)",
        cfg.data.as_ref().unwrap().display(),
        data.n_runs(),
        data.n_bins(),
        data.n_observed()
    );
    let _ = writeln!(report, "{ingest}");
    let _ = writeln!(
        report,
        "validation: {}",
        if ingest.validation.is_clean() {
            "PASS"
        } else {
            "violations found (see above)"
        }
    );
    let _ = writeln!(
        report,
        "sampler: chains = {}, iterations = {}, burn_in = {}, thin = {}, seed = {}",
        cfg.chains, cfg.iterations, cfg.burn_in, cfg.thin, cfg.seed
    );

    let mut all_outcomes = Vec::new();
    if args.sweep {
        for name in sweep_variants() {
            let mut variant_cfg = cfg.clone();
            variant_cfg.variant = name.clone();
            variant_cfg.knot = None;
            let spec = variant_cfg.build_spec(data.n_bins())?;
            let sub_dir = out_dir.join(&name);
            let outcome = fit_spec(&spec, &data, &variant_cfg, &sub_dir)?;
            let _ = writeln!(
                report,
                "{:<26} DIC = {:>12.1}  Dbar = {:>12.1}  pD = {:>8.1}  theta median {:.3}",
                outcome.variant,
                outcome.dic.dic,
                outcome.dic.d_bar,
                outcome.dic.p_d,
                outcome.theta[1]
            );
            all_outcomes.push(outcome);
        }
        let table = dic_table(
            all_outcomes
                .iter()
                .map(|o| (o.variant.clone(), o.dic))
                .collect::<Vec<_>>()
                .as_slice(),
        );
        let table_path = out_dir.join("dic-table.csv");
        write_atomic(&table_path, table.as_bytes())?;
        let _ = writeln!(report, "dic table: {}", table_path.display());
    } else {
        let spec = cfg.build_spec(data.n_bins())?;
        let outcome = fit_spec(&spec, &data, &cfg, &out_dir)?;
        let _ = writeln!(
            report,
            "model: {} (K = {}, L = {})",
            outcome.variant,
            spec.k(),
            spec.l()
        );
        let _ = writeln!(report, "stored draws: {} pooled", outcome.n_pooled);
        let _ = writeln!(
            report,
            "theta: posterior median {:.3}, 95% interval ({:.3}, {:.3})",
            outcome.theta[1], outcome.theta[0], outcome.theta[2]
        );
        for (chain, med) in &outcome.chain_theta_medians {
            let _ = writeln!(report, "  chain {chain}: theta median {med:.3}");
        }
        let _ = writeln!(
            report,
            "DIC = {:.1}, Dbar = {:.1}, pD = {:.1}",
            outcome.dic.dic, outcome.dic.d_bar, outcome.dic.p_d
        );
        for f in &outcome.files {
            let _ = writeln!(report, "wrote {}", f.display());
        }
        all_outcomes.push(outcome);
    }
    let report_path = out_dir.join("fit-report.txt");
    write_atomic(&report_path, report.as_bytes())?;
    print!("{report}");
    println!("wrote {}", report_path.display());
    Ok(())
}

fn dic_table(rows: &[(String, posterior::DicReport)]) -> String {
    let mut s = String::from("model,dic,d_bar,p_d\n");
    for (name, dic) in rows {
        let _ = writeln!(s, "{name},{},{},{}", dic.dic, dic.d_bar, dic.p_d);
    }
    s
}

/// Pool all chains under a draws directory, checking fingerprint consistency.
fn pool_chains(
    dir: &Path,
    expected_spec: Option<u64>,
    expected_data: Option<u64>,
) -> Result<(ChainMeta, Vec<ChainState>, Vec<f64>)> {
    let files = find_chain_files(dir)?;
    let mut first_meta: Option<ChainMeta> = None;
    let mut states = Vec::new();
    let mut deviances = Vec::new();
    for (csv_path, meta_path) in files {
        let meta = read_meta(&meta_path)?;
        if let Some(expect) = expected_spec {
            if meta.spec_hash != expect {
                bail!(
                    "{}: spec hash {:016x} does not match the requested model {:016x}; \
                     refusing to summarize draws from a different specification",
                    meta_path.display(),
                    meta.spec_hash,
                    expect
                );
            }
        }
        if let Some(expect) = expected_data {
            if meta.data_hash != expect {
                bail!(
                    "{}: data hash mismatch; these draws were fitted to a different dataset",
                    meta_path.display()
                );
            }
        }
        if let Some(first) = &first_meta {
            if first.spec_hash != meta.spec_hash {
                bail!(
                    "{}: chains in {} mix specifications",
                    meta_path.display(),
                    dir.display()
                );
            }
        }
        let (s, d) = read_draws_csv(&csv_path, &meta.dims)?;
        states.extend(s);
        deviances.extend(d);
        first_meta.get_or_insert(meta);
    }
    Ok((first_meta.unwrap(), states, deviances))
}

/// Rebuild the model specification recorded in a draws metadata file.
fn spec_from_meta(meta: &ChainMeta) -> Result<ModelSpec> {
    let (trend, random_trend) = parse_variant_name(&meta.variant, None)?;
    let domain = (1.0, meta.dims.n_bins as f64);
    let mean_basis = BSplineBasis::with_interior_knots(3, domain, &meta.mean_interior_knots)?;
    let var_basis = BSplineBasis::with_interior_knots(2, domain, &meta.var_interior_knots)?;
    let mut spec = ModelSpec::with_bases(trend, random_trend, mean_basis, var_basis)?;
    spec.first_obs = meta.first_obs;
    spec.baseline_random = meta.baseline_random;
    Ok(spec)
}

fn q_col_names(quantiles: &[f64]) -> Vec<String> {
    quantiles
        .iter()
        .map(|q| {
            let pct = q * 100.0;
            if (pct - pct.round()).abs() < 1e-9 {
                format!("q{:02}", pct.round() as i64)
            } else {
                format!("q{pct}")
            }
        })
        .collect()
}

fn component_names(trend: Trend) -> Vec<&'static str> {
    match trend {
        Trend::Quadratic => vec!["linear", "quadratic"],
        Trend::BentLine { .. } => vec!["linear", "kink"],
        Trend::JumpQuadratic => vec!["jump", "linear", "quadratic"],
        Trend::JumpBentLine { .. } => vec!["jump", "linear", "kink"],
    }
}

pub struct SummarizeArgs {
    pub config: PathBuf,
    pub draws: PathBuf,
    pub out: Option<PathBuf>,
    pub times: Option<Vec<i32>>,
}

/// Emit the tidy posterior summaries from stored draws.
pub fn cmd_summarize(args: &SummarizeArgs) -> Result<()> {
    let cfg = RunConfig::from_file(&args.config)?;
    let (data, _) = load_data(&cfg)?;
    let spec = cfg.build_spec(data.n_bins())?;
    spec.validate_against(&data)?;
    let (_, states, _) = pool_chains(&args.draws, Some(spec_hash(&spec)), Some(data_hash(&data)))?;
    if states.is_empty() {
        bail!("no stored draws in {}", args.draws.display());
    }
    let out_dir = args.out.clone().unwrap_or_else(|| args.draws.clone());
    let times = args
        .times
        .clone()
        .unwrap_or_else(|| cfg.predict_times.clone());
    let qnames = q_col_names(&cfg.quantiles);
    let mut written = Vec::new();

    // count-scale predictive curves
    let mut text = format!("z,t,s,{}\n", qnames.join(","));
    for window in [Window::Closed, Window::Open] {
        for &t in &times {
            let curve = posterior::predictive_curve(&spec, &states, window, t, &cfg.quantiles)?;
            for row in curve {
                let vals = row
                    .values
                    .iter()
                    .map(|v| format!("{v}"))
                    .collect::<Vec<_>>()
                    .join(",");
                let _ = writeln!(text, "{},{t},{},{vals}", window.label(), row.s);
            }
        }
    }
    let path = out_dir.join("predictive-curves.csv");
    write_atomic(&path, text.as_bytes())?;
    written.push(path);

    // fixed-trend component curves at the requested decomposition time
    let names = component_names(spec.trend);
    let mut text = format!("z,t,component,s,{}\n", qnames.join(","));
    for window in [Window::Closed, Window::Open] {
        for s in 1..=spec.n_bins() {
            let comps =
                posterior::trend_component_draws(&spec, &states, window, cfg.trend_time, s)?;
            for (j, draws) in comps.into_iter().enumerate() {
                let mut sorted = draws;
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let vals = cfg
                    .quantiles
                    .iter()
                    .map(|&q| format!("{}", posterior::quantile(&sorted, q)))
                    .collect::<Vec<_>>()
                    .join(",");
                let _ = writeln!(
                    text,
                    "{},{},{},{s},{vals}",
                    window.label(),
                    cfg.trend_time,
                    names[j]
                );
            }
        }
    }
    let path = out_dir.join("trend-components.csv");
    write_atomic(&path, text.as_bytes())?;
    written.push(path);

    // mode trajectories over the union of observed times
    let mut all_times: Vec<i32> = data
        .runs()
        .iter()
        .flat_map(|r| r.times().iter().copied())
        .collect();
    all_times.sort_unstable();
    all_times.dedup();
    let mut text = String::from("z,t,s_med,s_lo,s_hi,h_med,h_lo,h_hi\n");
    for window in [Window::Closed, Window::Open] {
        let traj = posterior::mode_trajectory(&spec, &states, window, &all_times)?;
        for (i, &t) in traj.times.iter().enumerate() {
            let _ = writeln!(
                text,
                "{},{t},{},{},{},{},{},{}",
                window.label(),
                traj.s_median[i],
                traj.s_lo[i],
                traj.s_hi[i],
                traj.h_median[i],
                traj.h_lo[i],
                traj.h_hi[i]
            );
        }
    }
    let path = out_dir.join("mode-trajectory.csv");
    write_atomic(&path, text.as_bytes())?;
    written.push(path);

    // innovation-variance curve with 95% intervals
    let rows = posterior::variance_curve(&states, &[0.5, 0.025, 0.975])?;
    let mut text = String::from("s,sigma_sq_med,sigma_sq_lo,sigma_sq_hi\n");
    for row in rows {
        let _ = writeln!(
            text,
            "{},{},{},{}",
            row.s, row.values[0], row.values[1], row.values[2]
        );
    }
    let path = out_dir.join("variance-curve.csv");
    write_atomic(&path, text.as_bytes())?;
    written.push(path);

    // posterior-mean residual grids in both orderings
    let grids = posterior::residuals(&spec, &data, &states)?;
    let mut cells = Vec::new();
    for run in &grids {
        let n_t = run.times.len();
        for s0 in 0..run.n_bins {
            for (kk, &t) in run.times.iter().enumerate() {
                if let Some(e) = run.e[s0 * n_t + kk] {
                    cells.push((run.id, s0 + 1, t, e));
                }
            }
        }
    }
    let mut by_time = cells.clone();
    by_time.sort_by_key(|&(i, s, t, _)| (t, s, i));
    let mut text = String::from("i,s,t,e_bar\n");
    for (i, s, t, e) in &by_time {
        let _ = writeln!(text, "{i},{s},{t},{e}");
    }
    let path = out_dir.join("residuals-by-time.csv");
    write_atomic(&path, text.as_bytes())?;
    written.push(path);

    let mut by_size = cells;
    by_size.sort_by_key(|&(i, s, t, _)| (s, t, i));
    let mut text = String::from("i,s,t,e_bar\n");
    for (i, s, t, e) in &by_size {
        let _ = writeln!(text, "{i},{s},{t},{e}");
    }
    let path = out_dir.join("residuals-by-size.csv");
    write_atomic(&path, text.as_bytes())?;
    written.push(path);

    for f in &written {
        println!("wrote {}", f.display());
    }
    Ok(())
}

pub struct DicArgs {
    pub config: PathBuf,
    pub draws: Vec<PathBuf>,
    pub out: Option<PathBuf>,
}

/// DIC comparison table across one or more fitted draws directories.
pub fn cmd_dic(args: &DicArgs) -> Result<()> {
    let cfg = RunConfig::from_file(&args.config)?;
    let (data, _) = load_data(&cfg)?;
    let dhash = data_hash(&data);
    let mut rows = Vec::new();
    for dir in &args.draws {
        let (meta, states, deviances) = pool_chains(dir, None, Some(dhash))?;
        let spec = spec_from_meta(&meta)?;
        spec.validate_against(&data)?;
        let report = posterior::dic(&spec, &data, &states, &deviances)?;
        println!(
            "{:<26} DIC = {:>12.1}  Dbar = {:>12.1}  pD = {:>8.1}",
            meta.variant, report.dic, report.d_bar, report.p_d
        );
        rows.push((meta.variant.clone(), report));
    }
    rows.sort_by(|a, b| a.1.dic.partial_cmp(&b.1.dic).unwrap());
    let out_dir = args.out.clone().unwrap_or_else(|| args.draws[0].clone());
    let path = out_dir.join("dic-table.csv");
    write_atomic(&path, dic_table(&rows).as_bytes())?;
    println!("wrote {}", path.display());
    Ok(())
}

pub struct DiagnoseArgs {
    pub config: PathBuf,
    pub draws: PathBuf,
    pub out: Option<PathBuf>,
    pub bins: Option<Vec<usize>>,
}

/// Residual profile data per size bin, for lack-of-fit inspection.
pub fn cmd_diagnose(args: &DiagnoseArgs) -> Result<()> {
    let cfg = RunConfig::from_file(&args.config)?;
    let (data, ingest) = load_data(&cfg)?;
    let spec = cfg.build_spec(data.n_bins())?;
    spec.validate_against(&data)?;
    let (_, states, _) = pool_chains(&args.draws, Some(spec_hash(&spec)), Some(data_hash(&data)))?;
    let out_dir = args.out.clone().unwrap_or_else(|| args.draws.clone());
    let bins = args
        .bins
        .clone()
        .or_else(|| cfg.profile_bins.clone())
        .unwrap_or_else(|| (1..=data.n_bins() / 10).map(|i| i * 10).collect());
    for &bin in &bins {
        if bin == 0 || bin > data.n_bins() {
            bail!("profile bin {bin} outside 1..={}", data.n_bins());
        }
    }
    println!("{ingest}");
    let grids = posterior::residuals(&spec, &data, &states)?;
    let mut written = Vec::new();
    for &bin in &bins {
        let mut text = String::from("i,t,e_bar\n");
        for run in &grids {
            let n_t = run.times.len();
            for (kk, &t) in run.times.iter().enumerate() {
                if let Some(e) = run.e[(bin - 1) * n_t + kk] {
                    let _ = writeln!(text, "{},{t},{e}", run.id);
                }
            }
        }
        let path = out_dir.join(format!("residual-profile-s{bin}.csv"));
        write_atomic(&path, text.as_bytes())?;
        written.push(path);
    }
    for f in &written {
        println!("wrote {}", f.display());
    }
    Ok(())
}
