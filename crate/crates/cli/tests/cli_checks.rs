//! End-to-end checks of the command surface and file formats.

use std::fs;
use std::path::Path;

use ufts_cli::commands::{
    cmd_diagnose, cmd_dic, cmd_fit, cmd_simulate, cmd_summarize, DiagnoseArgs, DicArgs, FitArgs,
    SimulateArgs, SummarizeArgs,
};
use ufts_cli::config::{ColumnMap, RunConfig};
use ufts_cli::csvio::{find_chain_files, load_dataset, read_draws_csv, read_meta};

fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn simulate_into(dir: &Path, seed: u64, variant: &str) -> std::path::PathBuf {
    cmd_simulate(&SimulateArgs {
        out: dir.to_path_buf(),
        seed,
        variant: variant.to_string(),
        knot: None,
    })
    .unwrap();
    dir.join("data.csv")
}

const SMALL_SAMPLER: &str =
    "iterations = 300\nburn_in = 100\nthin = 2\nchains = 2\nseed = 5\nk = 5\nl = 4\n";

#[test]
fn simulated_csv_round_trips_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let data_path = simulate_into(tmp.path(), 9, "random-jump-quadratic");
    let (first, report) = load_dataset(&data_path, &ColumnMap::default()).unwrap();
    assert!(report.validation.is_clean());
    assert_eq!(report.rows_read, 6 * 40 * 13);

    // re-emit and re-ingest: field-by-field identical dataset
    let second_path = tmp.path().join("copy.csv");
    ufts_cli::csvio::write_data_csv(&second_path, &first).unwrap();
    let (second, _) = load_dataset(&second_path, &ColumnMap::default()).unwrap();
    assert_eq!(first, second);

    // and the in-memory simulated dataset itself survives serialize + ingest
    use ufts_core::model::{RandomTrend, Trend};
    let truth = ufts_core::synthetic::TruthConfig::desk_scale(
        Trend::JumpQuadratic,
        RandomTrend::RandomJump,
        31,
    )
    .unwrap();
    let (simulated, _) = ufts_core::synthetic::simulate_dataset(&truth).unwrap();
    let direct_path = tmp.path().join("direct.csv");
    ufts_cli::csvio::write_data_csv(&direct_path, &simulated).unwrap();
    let (reloaded, _) = load_dataset(&direct_path, &ColumnMap::default()).unwrap();
    assert_eq!(simulated, reloaded);
}

#[test]
fn fit_is_deterministic_across_reruns() {
    let tmp = tempfile::tempdir().unwrap();
    simulate_into(tmp.path(), 11, "jump-quadratic");
    let config = write_config(
        tmp.path(),
        "fit.conf",
        &format!("data = data.csv\nvariant = jump-quadratic\n{SMALL_SAMPLER}"),
    );
    for out in ["a", "b"] {
        cmd_fit(&FitArgs {
            config: config.clone(),
            seed: None,
            chains: None,
            out: Some(tmp.path().join(out)),
            variant: None,
            knot: None,
            sweep: false,
        })
        .unwrap();
    }
    for chain in 0..2 {
        let a = fs::read(tmp.path().join(format!("a/chain-{chain}.csv"))).unwrap();
        let b = fs::read(tmp.path().join(format!("b/chain-{chain}.csv"))).unwrap();
        assert_eq!(a, b, "chain {chain} artifacts must be byte-identical");
    }
}

#[test]
fn invalid_knot_fails_before_sampling() {
    let tmp = tempfile::tempdir().unwrap();
    simulate_into(tmp.path(), 12, "jump-quadratic");
    // desk-scale data ends at t = 14, so a knot at 30 is out of range
    let config = write_config(
        tmp.path(),
        "fit.conf",
        &format!("data = data.csv\nvariant = bent\nknot = 30\n{SMALL_SAMPLER}"),
    );
    let out = tmp.path().join("out");
    let err = cmd_fit(&FitArgs {
        config,
        seed: None,
        chains: None,
        out: Some(out.clone()),
        variant: None,
        knot: None,
        sweep: false,
    })
    .unwrap_err();
    assert!(
        format!("{err:#}").contains("knot"),
        "error should name the knot: {err:#}"
    );
    assert!(
        !out.join("chain-0.csv").exists(),
        "no draws may be written when the config is invalid"
    );
}

#[test]
fn sweep_writes_twelve_dic_rows() {
    let tmp = tempfile::tempdir().unwrap();
    simulate_into(tmp.path(), 13, "random-jump-quadratic");
    let config = write_config(
        tmp.path(),
        "fit.conf",
        "data = data.csv\niterations = 60\nburn_in = 20\nthin = 2\nchains = 1\nseed = 3\nk = 5\nl = 4\n",
    );
    let out = tmp.path().join("sweep");
    cmd_fit(&FitArgs {
        config,
        seed: None,
        chains: None,
        out: Some(out.clone()),
        variant: None,
        knot: None,
        sweep: true,
    })
    .unwrap();
    let table = fs::read_to_string(out.join("dic-table.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "model,dic,d_bar,p_d");
    assert_eq!(lines.len(), 13, "header plus twelve model rows");
    for name in ["quadratic", "bent8", "jump-bent12", "random-jump-quadratic"] {
        assert!(table.contains(name), "{name} missing from the table");
    }
    // every per-variant directory holds a readable chain
    let files = find_chain_files(&out.join("random-jump-bent10")).unwrap();
    let meta = read_meta(&files[0].1).unwrap();
    let (states, deviances) = read_draws_csv(&files[0].0, &meta.dims).unwrap();
    assert_eq!(states.len(), 20);
    assert_eq!(deviances.len(), 20);
}

#[test]
fn summarize_emits_schema_stable_reparseable_files() {
    let tmp = tempfile::tempdir().unwrap();
    simulate_into(tmp.path(), 14, "random-jump-quadratic");
    let config = write_config(
        tmp.path(),
        "fit.conf",
        &format!(
            "data = data.csv\nvariant = random-jump-quadratic\npredict_times = -4,-2,5,10\n{SMALL_SAMPLER}"
        ),
    );
    let out = tmp.path().join("out");
    cmd_fit(&FitArgs {
        config: config.clone(),
        seed: None,
        chains: None,
        out: Some(out.clone()),
        variant: None,
        knot: None,
        sweep: false,
    })
    .unwrap();
    cmd_summarize(&SummarizeArgs {
        config: config.clone(),
        draws: out.clone(),
        out: None,
        times: None,
    })
    .unwrap();

    // pre-engine predictive rows are identical across windows except z
    let curves = fs::read_to_string(out.join("predictive-curves.csv")).unwrap();
    let mut closed = Vec::new();
    let mut open = Vec::new();
    for line in curves.lines().skip(1) {
        let (z, rest) = line.split_once(',').unwrap();
        let t: i32 = rest.split(',').next().unwrap().parse().unwrap();
        if t < 0 {
            if z == "0" {
                closed.push(rest.to_string());
            } else {
                open.push(rest.to_string());
            }
        }
    }
    assert!(!closed.is_empty());
    assert_eq!(closed, open, "t < 0 curves must not depend on the window");

    // mode trajectory: monotone times, lo <= med <= hi
    let modes = fs::read_to_string(out.join("mode-trajectory.csv")).unwrap();
    let mut last_t: Option<(i32, i32)> = None;
    for line in modes.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let (z, t): (i32, i32) = (f[0].parse().unwrap(), f[1].parse().unwrap());
        if let Some((lz, lt)) = last_t {
            if lz == z {
                assert!(t > lt, "time column must increase within a window");
            }
        }
        last_t = Some((z, t));
        let s: Vec<f64> = f[2..8].iter().map(|v| v.parse().unwrap()).collect();
        assert!(s[1] <= s[0] && s[0] <= s[2], "s_lo <= s_med <= s_hi");
        assert!(s[4] <= s[3] && s[3] <= s[5], "h_lo <= h_med <= h_hi");
    }

    // trend components: jump, linear and quadratic rows exist for both z
    let comps = fs::read_to_string(out.join("trend-components.csv")).unwrap();
    for name in ["jump", "linear", "quadratic"] {
        assert!(comps.contains(name));
    }

    // the tool re-parses its own draw files
    let files = find_chain_files(&out).unwrap();
    for (csv_path, meta_path) in files {
        let meta = read_meta(&meta_path).unwrap();
        let (states, _) = read_draws_csv(&csv_path, &meta.dims).unwrap();
        assert_eq!(states.len(), 100);
    }

    // residual grids include both orderings with identical cell sets
    let by_time = fs::read_to_string(out.join("residuals-by-time.csv")).unwrap();
    let by_size = fs::read_to_string(out.join("residuals-by-size.csv")).unwrap();
    assert_eq!(by_time.lines().count(), by_size.lines().count());
}

#[test]
fn summarize_rejects_mismatched_spec_hash() {
    let tmp = tempfile::tempdir().unwrap();
    simulate_into(tmp.path(), 15, "jump-quadratic");
    let fit_config = write_config(
        tmp.path(),
        "fit.conf",
        &format!("data = data.csv\nvariant = jump-quadratic\n{SMALL_SAMPLER}"),
    );
    let out = tmp.path().join("out");
    cmd_fit(&FitArgs {
        config: fit_config,
        seed: None,
        chains: None,
        out: Some(out.clone()),
        variant: None,
        knot: None,
        sweep: false,
    })
    .unwrap();
    // different variant in the summarize request
    let other = write_config(
        tmp.path(),
        "other.conf",
        &format!("data = data.csv\nvariant = quadratic\n{SMALL_SAMPLER}"),
    );
    let err = cmd_summarize(&SummarizeArgs {
        config: other,
        draws: out,
        out: None,
        times: None,
    })
    .unwrap_err();
    assert!(
        format!("{err:#}").contains("spec hash"),
        "should refuse mismatched draws: {err:#}"
    );
}

#[test]
fn dic_command_reconstructs_models_from_metadata() {
    let tmp = tempfile::tempdir().unwrap();
    simulate_into(tmp.path(), 16, "jump-quadratic");
    let config = write_config(
        tmp.path(),
        "fit.conf",
        &format!("data = data.csv\n{SMALL_SAMPLER}"),
    );
    let mut dirs = Vec::new();
    for variant in ["quadratic", "jump-quadratic"] {
        let out = tmp.path().join(variant);
        cmd_fit(&FitArgs {
            config: config.clone(),
            seed: None,
            chains: None,
            out: Some(out.clone()),
            variant: Some(variant.to_string()),
            knot: None,
            sweep: false,
        })
        .unwrap();
        dirs.push(out);
    }
    cmd_dic(&DicArgs {
        config,
        draws: dirs.clone(),
        out: Some(tmp.path().to_path_buf()),
    })
    .unwrap();
    let table = fs::read_to_string(tmp.path().join("dic-table.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    // rows are sorted by DIC; the jump model fits jump-simulated data better
    let first_row = table.lines().nth(1).unwrap();
    assert!(
        first_row.starts_with("jump-quadratic,"),
        "expected the jump fit first, table:\n{table}"
    );
}

#[test]
fn diagnose_writes_profiles_and_respects_bins() {
    let tmp = tempfile::tempdir().unwrap();
    simulate_into(tmp.path(), 17, "jump-quadratic");
    let config = write_config(
        tmp.path(),
        "fit.conf",
        &format!("data = data.csv\nvariant = jump-quadratic\n{SMALL_SAMPLER}"),
    );
    let out = tmp.path().join("out");
    cmd_fit(&FitArgs {
        config: config.clone(),
        seed: None,
        chains: None,
        out: Some(out.clone()),
        variant: None,
        knot: None,
        sweep: false,
    })
    .unwrap();
    cmd_diagnose(&DiagnoseArgs {
        config: config.clone(),
        draws: out.clone(),
        out: None,
        bins: Some(vec![10, 25]),
    })
    .unwrap();
    for bin in [10, 25] {
        let text = fs::read_to_string(out.join(format!("residual-profile-s{bin}.csv"))).unwrap();
        assert_eq!(text.lines().next().unwrap(), "i,t,e_bar");
        assert_eq!(text.lines().count(), 1 + 6 * 13, "one row per run-time");
    }
    let err = cmd_diagnose(&DiagnoseArgs {
        config,
        draws: out,
        out: None,
        bins: Some(vec![99]),
    })
    .unwrap_err();
    assert!(format!("{err:#}").contains("outside"));
}

#[test]
fn malformed_rows_are_reported_with_line_numbers() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.csv");
    fs::write(
        &path,
        "run,window,time,size_bin,count\n1,0,-2,1,5.0\n1,zero,0,1,5.0\n1,0,2,oops,5.0\n",
    )
    .unwrap();
    let err = load_dataset(&path, &ColumnMap::default()).unwrap_err();
    let msg = format!("{err:#}");
    assert!(msg.contains("line 3"), "missing line number: {msg}");
    assert!(msg.contains("line 4"), "missing line number: {msg}");

    // duplicate cells surface from assembly
    fs::write(
        &path,
        "run,window,time,size_bin,count\n1,0,-2,1,5.0\n1,0,0,1,5.0\n1,0,0,1,6.0\n",
    )
    .unwrap();
    let err = load_dataset(&path, &ColumnMap::default()).unwrap_err();
    assert!(format!("{err:#}").contains("duplicate cell"));
}

#[test]
fn config_paths_resolve_relative_to_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let sub = tmp.path().join("nested");
    fs::create_dir_all(&sub).unwrap();
    simulate_into(&sub, 18, "jump-quadratic");
    let config = write_config(&sub, "fit.conf", "data = data.csv\nout = results\n");
    let cfg = RunConfig::from_file(&config).unwrap();
    assert_eq!(cfg.data.unwrap(), sub.join("data.csv"));
    assert_eq!(cfg.out, sub.join("results"));
}
