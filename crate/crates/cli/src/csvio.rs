//! File formats: observation CSV ingestion, chain-draw CSV plus metadata
//! sidecars, and the tidy summary emissions. All writes go through a
//! write-temp-then-rename helper so artifacts appear atomically.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use ufts_core::data::{Dataset, ObsRecord};
use ufts_core::mcmc::{ChainDraws, ChainState, SamplerSettings};
use ufts_core::model::{FirstObs, ModelSpec};

use crate::config::ColumnMap;

/// What the loader saw: row counts and the per-run structural report.
#[derive(Debug, Clone)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_rejected: usize,
    pub validation: ufts_core::data::ValidationReport,
}

impl std::fmt::Display for IngestReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "rows read: {}, rows rejected: {}",
            self.rows_read, self.rows_rejected
        )?;
        write!(f, "{}", self.validation)
    }
}

/// Load an observation CSV (UTF-8, header row required). Malformed rows are
/// hard errors reported with their line numbers.
pub fn load_dataset(path: &Path, columns: &ColumnMap) -> Result<(Dataset, IngestReport)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(false)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| {
                anyhow!(
                    "column `{name}` missing from header [{}]",
                    headers.iter().collect::<Vec<_>>().join(", ")
                )
            })
    };
    let (c_run, c_window, c_time, c_bin, c_count) = (
        col(&columns.run)?,
        col(&columns.window)?,
        col(&columns.time)?,
        col(&columns.size_bin)?,
        col(&columns.count)?,
    );
    let mut records = Vec::new();
    let mut problems: Vec<String> = Vec::new();
    let mut rows_read = 0usize;
    for result in reader.records() {
        let record = result?;
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(rows_read + 2);
        rows_read += 1;
        let run = parse_field::<u32>(&record, c_run, "run", line, &mut problems);
        let window = parse_field::<i64>(&record, c_window, "window", line, &mut problems);
        let time = parse_field::<i32>(&record, c_time, "time", line, &mut problems);
        let size_bin = parse_field::<i64>(&record, c_bin, "size_bin", line, &mut problems);
        let count = parse_field::<f64>(&record, c_count, "count", line, &mut problems);
        if let (Some(run), Some(window), Some(time), Some(size_bin), Some(count)) =
            (run, window, time, size_bin, count)
        {
            records.push(ObsRecord {
                run,
                window,
                time,
                size_bin,
                count,
            });
        }
    }
    if !problems.is_empty() {
        let shown = problems.iter().take(8).cloned().collect::<Vec<_>>();
        bail!(
            "{} malformed rows in {}:\n  {}",
            problems.len(),
            path.display(),
            shown.join("\n  ")
        );
    }
    let dataset = Dataset::from_records(&records)
        .with_context(|| format!("inconsistent data in {}", path.display()))?;
    let validation = dataset.validate();
    Ok((
        dataset,
        IngestReport {
            rows_read,
            rows_rejected: 0,
            validation,
        },
    ))
}

fn parse_field<T: std::str::FromStr>(
    record: &csv::StringRecord,
    idx: usize,
    what: &str,
    line: usize,
    problems: &mut Vec<String>,
) -> Option<T>
where
    T::Err: std::fmt::Display,
{
    match record.get(idx) {
        Some(v) if !v.is_empty() => match v.parse::<T>() {
            Ok(x) => Some(x),
            Err(e) => {
                problems.push(format!("line {line}: {what} `{v}`: {e}"));
                None
            }
        },
        _ => {
            problems.push(format!("line {line}: empty {what}"));
            None
        }
    }
}

/// Write an observation CSV in the loader's schema.
pub fn write_data_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut text = String::from("run,window,time,size_bin,count\n");
    for run in data.runs() {
        for s in 1..=data.n_bins() {
            for (k, &t) in run.times().iter().enumerate() {
                if let Some(y) = run.y_at(s, k) {
                    let count = ufts_core::data::inverse_transform(y).max(0.0);
                    writeln!(
                        text,
                        "{},{},{},{},{}",
                        run.id,
                        run.window.label(),
                        t,
                        s,
                        count
                    )
                    .unwrap();
                }
            }
        }
    }
    write_atomic(path, text.as_bytes())
}

/// Write bytes to `path` via a temporary file plus rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .with_context(|| format!("cannot create {}", parent.display()))?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f =
            fs::File::create(&tmp).with_context(|| format!("cannot create {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all().ok();
    }
    fs::rename(&tmp, path).with_context(|| format!("cannot move {} into place", path.display()))?;
    Ok(())
}

/// FNV-1a 64-bit hash, used for the model and data fingerprints.
pub fn fnv1a64(text: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.as_bytes() {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn join_floats(values: impl Iterator<Item = f64>) -> String {
    values.map(|v| format!("{v}")).collect::<Vec<_>>().join(",")
}

/// Fingerprint of the model specification (trend, bases, priors, likelihood
/// conventions). Draw files carry it so later commands can refuse mismatched
/// requests.
pub fn spec_hash(spec: &ModelSpec) -> u64 {
    let p = &spec.priors;
    let mut s = String::new();
    let _ = write!(
        s,
        "{}|{:?}|{}|{}|{}|{}|{}|mk:{}|vk:{}|{} {} {} {} {:?} {} {} {} {} {}|dm:{}|wm:{}",
        spec.variant_name(),
        spec.first_obs,
        spec.baseline_random,
        spec.k(),
        spec.l(),
        spec.j(),
        spec.g_dim(),
        join_floats(spec.mean_basis.knots().iter().copied()),
        join_floats(spec.var_basis.knots().iter().copied()),
        p.tau_alpha_sq,
        p.tau_delta_sq,
        p.mu_theta,
        p.sigma_theta_sq,
        p.theta_bounds,
        p.d_df,
        p.w_df,
        p.eta_mean,
        p.eta_sd,
        p.tau_eta_sq,
        join_floats(p.d_scale.iter().copied()),
        join_floats(p.w_scale.iter().copied()),
    );
    fnv1a64(&s)
}

/// Fingerprint of a dataset: runs, windows, time grids, masks and outcomes.
pub fn data_hash(data: &Dataset) -> u64 {
    let mut s = String::new();
    let _ = write!(s, "bins:{}", data.n_bins());
    for run in data.runs() {
        let _ = write!(s, "|run:{} w:{} t:", run.id, run.window.label());
        for t in run.times() {
            let _ = write!(s, "{t},");
        }
        for bin in 1..=data.n_bins() {
            for k in 0..run.n_times() {
                match run.y_at(bin, k) {
                    Some(y) => {
                        let _ = write!(s, "{y};");
                    }
                    None => s.push('_'),
                }
            }
        }
    }
    fnv1a64(&s)
}

/// Dimensions needed to lay out a draw row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DrawDims {
    pub k: usize,
    pub j: usize,
    pub g: usize,
    pub l: usize,
    pub n_bins: usize,
    pub n_runs: usize,
}

impl DrawDims {
    pub fn of(spec: &ModelSpec, n_runs: usize) -> Self {
        DrawDims {
            k: spec.k(),
            j: spec.j(),
            g: spec.g_dim(),
            l: spec.l(),
            n_bins: spec.n_bins(),
            n_runs,
        }
    }
}

/// Column names of the draw CSV, in order: documented and stable.
pub fn draw_columns(dims: &DrawDims) -> Vec<String> {
    let mut cols = vec!["iter".to_string(), "deviance".to_string()];
    for a in 1..=dims.k {
        cols.push(format!("alpha[{a}]"));
    }
    for z in 0..2 {
        for j in 1..=dims.j {
            for a in 1..=dims.k {
                cols.push(format!("Delta[{z}][{j}][{a}]"));
            }
        }
    }
    for i in 1..=dims.n_runs {
        for a in 1..=dims.k {
            cols.push(format!("gamma[{i}][{a}]"));
        }
    }
    for i in 1..=dims.n_runs {
        for g in 1..=dims.g {
            for a in 1..=dims.k {
                cols.push(format!("Upsilon[{i}][{g}][{a}]"));
            }
        }
    }
    cols.push("theta".to_string());
    for r in 1..=dims.k {
        for c in 1..=dims.k {
            cols.push(format!("D[{r}][{c}]"));
        }
    }
    for r in 1..=(dims.g * dims.k) {
        for c in 1..=(dims.g * dims.k) {
            cols.push(format!("W[{r}][{c}]"));
        }
    }
    for l in 1..=dims.l {
        cols.push(format!("eta[{l}]"));
    }
    for s in 1..=dims.n_bins {
        cols.push(format!("w[{s}]"));
    }
    for s in 1..=dims.n_bins {
        cols.push(format!("sigma_sq[{s}]"));
    }
    cols
}

fn push_state(row: &mut Vec<f64>, state: &ChainState, dims: &DrawDims) {
    row.extend(state.alpha.iter());
    for z in 0..2 {
        for j in 0..dims.j {
            for a in 0..dims.k {
                row.push(state.delta[z][(j, a)]);
            }
        }
    }
    for g in &state.gamma {
        row.extend(g.iter());
    }
    for u in &state.upsilon {
        for g in 0..dims.g {
            for a in 0..dims.k {
                row.push(u[(g, a)]);
            }
        }
    }
    row.push(state.theta);
    row.extend(
        state
            .d_cov
            .row_iter()
            .flat_map(|r| r.iter().copied().collect::<Vec<_>>()),
    );
    row.extend(
        state
            .w_cov
            .row_iter()
            .flat_map(|r| r.iter().copied().collect::<Vec<_>>()),
    );
    row.extend(state.eta.iter());
    row.extend(state.w_resid.iter());
    row.extend(state.sigma_sq.iter());
}

/// Write one chain's draws as CSV (one row per stored draw).
pub fn write_draws_csv(path: &Path, draws: &ChainDraws, dims: &DrawDims) -> Result<()> {
    let cols = draw_columns(dims);
    let mut text = String::with_capacity(draws.states.len() * cols.len() * 20);
    text.push_str(&cols.join(","));
    text.push('\n');
    for (n, state) in draws.states.iter().enumerate() {
        let iter = draws.settings.burn_in + draws.settings.thin * (n + 1);
        let mut row: Vec<f64> = Vec::with_capacity(cols.len());
        row.push(iter as f64);
        row.push(draws.deviance[n]);
        push_state(&mut row, state, dims);
        debug_assert_eq!(row.len(), cols.len());
        let mut first = true;
        for v in row {
            if !first {
                text.push(',');
            }
            let _ = write!(text, "{v}");
            first = false;
        }
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

/// Sidecar metadata for one chain.
#[derive(Debug, Clone)]
pub struct ChainMeta {
    pub variant: String,
    pub first_obs: FirstObs,
    pub baseline_random: bool,
    pub mean_interior_knots: Vec<f64>,
    pub var_interior_knots: Vec<f64>,
    pub dims: DrawDims,
    pub settings: SamplerSettings,
    pub chain: u64,
    pub spec_hash: u64,
    pub data_hash: u64,
}

pub fn write_meta(path: &Path, meta: &ChainMeta) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "format = ufts-draws-v1");
    let _ = writeln!(s, "variant = {}", meta.variant);
    let _ = writeln!(
        s,
        "first_obs = {}",
        match meta.first_obs {
            FirstObs::Stationary => "stationary",
            FirstObs::Conditioned => "conditioned",
        }
    );
    let _ = writeln!(s, "baseline_random = {}", meta.baseline_random);
    let _ = writeln!(
        s,
        "mean_interior_knots = {}",
        join_floats(meta.mean_interior_knots.iter().copied())
    );
    let _ = writeln!(
        s,
        "var_interior_knots = {}",
        join_floats(meta.var_interior_knots.iter().copied())
    );
    let d = &meta.dims;
    let _ = writeln!(s, "k = {}\nl = {}\nj = {}\ng = {}", d.k, d.l, d.j, d.g);
    let _ = writeln!(s, "n_bins = {}\nn_runs = {}", d.n_bins, d.n_runs);
    let st = &meta.settings;
    let _ = writeln!(
        s,
        "iterations = {}\nburn_in = {}\nthin = {}\nseed = {}\nchain = {}",
        st.iterations, st.burn_in, st.thin, st.seed, meta.chain
    );
    let _ = writeln!(s, "spec_hash = {:016x}", meta.spec_hash);
    let _ = writeln!(s, "data_hash = {:016x}", meta.data_hash);
    write_atomic(path, s.as_bytes())
}

pub fn read_meta(path: &Path) -> Result<ChainMeta> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read metadata {}", path.display()))?;
    let mut kv = std::collections::BTreeMap::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let get = |k: &str| -> Result<&String> {
        kv.get(k)
            .ok_or_else(|| anyhow!("{}: missing key `{k}`", path.display()))
    };
    if get("format")? != "ufts-draws-v1" {
        bail!("{}: unsupported format {}", path.display(), get("format")?);
    }
    let floats = |k: &str| -> Result<Vec<f64>> {
        let raw = get(k)?;
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| anyhow!("{k}: {e}")))
            .collect()
    };
    let parse = |k: &str| -> Result<usize> { Ok(get(k)?.parse::<usize>()?) };
    Ok(ChainMeta {
        variant: get("variant")?.clone(),
        first_obs: match get("first_obs")?.as_str() {
            "stationary" => FirstObs::Stationary,
            "conditioned" => FirstObs::Conditioned,
            other => bail!("unknown first_obs `{other}`"),
        },
        baseline_random: get("baseline_random")?.parse()?,
        mean_interior_knots: floats("mean_interior_knots")?,
        var_interior_knots: floats("var_interior_knots")?,
        dims: DrawDims {
            k: parse("k")?,
            l: parse("l")?,
            j: parse("j")?,
            g: parse("g")?,
            n_bins: parse("n_bins")?,
            n_runs: parse("n_runs")?,
        },
        settings: SamplerSettings {
            iterations: parse("iterations")?,
            burn_in: parse("burn_in")?,
            thin: parse("thin")?,
            seed: get("seed")?.parse()?,
        },
        chain: get("chain")?.parse()?,
        spec_hash: u64::from_str_radix(get("spec_hash")?, 16)?,
        data_hash: u64::from_str_radix(get("data_hash")?, 16)?,
    })
}

/// Read one chain's draws back from CSV, validating the header layout.
pub fn read_draws_csv(path: &Path, dims: &DrawDims) -> Result<(Vec<ChainState>, Vec<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .from_path(path)
        .with_context(|| format!("cannot open draws {}", path.display()))?;
    let expect = draw_columns(dims);
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();
    if headers != expect {
        bail!(
            "{}: column layout does not match the metadata dimensions",
            path.display()
        );
    }
    let mut states = Vec::new();
    let mut deviances = Vec::new();
    for record in reader.records() {
        let record = record?;
        let values: Vec<f64> = record
            .iter()
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|e| anyhow!("bad value `{v}`: {e}"))
            })
            .collect::<Result<_>>()?;
        if values.len() != expect.len() {
            bail!("{}: row with {} fields", path.display(), values.len());
        }
        let mut pos = 1usize; // skip iter
        let deviance = values[pos];
        pos += 1;
        let take = |pos: &mut usize, n: usize| -> &[f64] {
            let out = &values[*pos..*pos + n];
            *pos += n;
            out
        };
        let alpha = DVector::from_row_slice(take(&mut pos, dims.k));
        let mut delta = [
            DMatrix::zeros(dims.j, dims.k),
            DMatrix::zeros(dims.j, dims.k),
        ];
        for d in delta.iter_mut() {
            for j in 0..dims.j {
                for a in 0..dims.k {
                    d[(j, a)] = values[pos];
                    pos += 1;
                }
            }
        }
        let mut gamma = Vec::with_capacity(dims.n_runs);
        for _ in 0..dims.n_runs {
            gamma.push(DVector::from_row_slice(take(&mut pos, dims.k)));
        }
        let mut upsilon = Vec::with_capacity(dims.n_runs);
        for _ in 0..dims.n_runs {
            let mut u = DMatrix::zeros(dims.g, dims.k);
            for g in 0..dims.g {
                for a in 0..dims.k {
                    u[(g, a)] = values[pos];
                    pos += 1;
                }
            }
            upsilon.push(u);
        }
        let theta = values[pos];
        pos += 1;
        let mut d_cov = DMatrix::zeros(dims.k, dims.k);
        for r in 0..dims.k {
            for c in 0..dims.k {
                d_cov[(r, c)] = values[pos];
                pos += 1;
            }
        }
        let gk = dims.g * dims.k;
        let mut w_cov = DMatrix::zeros(gk, gk);
        for r in 0..gk {
            for c in 0..gk {
                w_cov[(r, c)] = values[pos];
                pos += 1;
            }
        }
        let eta = DVector::from_row_slice(take(&mut pos, dims.l));
        let w_resid = DVector::from_row_slice(take(&mut pos, dims.n_bins));
        let sigma_sq = DVector::from_row_slice(take(&mut pos, dims.n_bins));
        debug_assert_eq!(pos, values.len());
        states.push(ChainState {
            alpha,
            delta,
            gamma,
            upsilon,
            theta,
            d_cov,
            w_cov,
            eta,
            w_resid,
            sigma_sq,
        });
        deviances.push(deviance);
    }
    Ok((states, deviances))
}

/// Extract the interior knots (between the clamped boundary blocks).
pub fn interior_knots(basis: &ufts_core::splines::BSplineBasis) -> Vec<f64> {
    let degree = basis.degree();
    let knots = basis.knots();
    knots[degree + 1..knots.len() - degree - 1].to_vec()
}

/// Find `chain-*.csv` files under a draws directory, sorted by chain index.
pub fn find_chain_files(dir: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("cannot list {}", dir.display()))? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(stem) = name.strip_suffix(".csv") {
            if stem.starts_with("chain-") {
                let meta = dir.join(format!("{stem}.meta.txt"));
                if meta.exists() {
                    out.push((path, meta));
                }
            }
        }
    }
    if out.is_empty() {
        bail!("no chain-*.csv with metadata found in {}", dir.display());
    }
    out.sort();
    Ok(out)
}
