//! Run / size-bin / time particle-count data on the modeling grid.
//!
//! A dataset is a collection of runs. Each run carries a window-position
//! label, a strictly increasing vector of observation times (minutes,
//! engine-on at t = 0) and a dense size-bin-by-time grid of log-transformed
//! counts with an explicit missing mask. The outcome is always
//! `y = ln(count + 10)`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataError {
    #[error("count {value} for run {run}, bin {size_bin}, t={time} is negative or not finite")]
    BadCount {
        run: u32,
        size_bin: u32,
        time: i32,
        value: f64,
    },
    #[error("negative or non-finite count {0}")]
    BadRawCount(f64),
    #[error("duplicate cell: run {run}, bin {size_bin}, t={time}")]
    DuplicateCell { run: u32, size_bin: u32, time: i32 },
    #[error("window label {label} for run {run} is not 0 or 1")]
    BadWindowLabel { run: u32, label: i64 },
    #[error("run {run} appears with both window labels")]
    InconsistentWindow { run: u32 },
    #[error("size bin {0} is not a positive index")]
    BadSizeBin(i64),
    #[error("run {run} has no pre-engine-on (t < 0) observation")]
    NoPreEngineData { run: u32 },
    #[error("run {run} has no engine-on (t >= 0) observation")]
    NoPostEngineData { run: u32 },
    #[error("dataset has no observations")]
    Empty,
}

/// Window position during a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Closed,
    Open,
}

impl Window {
    pub fn from_label(label: i64) -> Option<Self> {
        match label {
            0 => Some(Window::Closed),
            1 => Some(Window::Open),
            _ => None,
        }
    }

    /// 0 for windows-closed, 1 for windows-open.
    pub fn index(self) -> usize {
        match self {
            Window::Closed => 0,
            Window::Open => 1,
        }
    }

    pub fn label(self) -> u8 {
        self.index() as u8
    }
}

/// One ingested observation row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObsRecord {
    pub run: u32,
    pub window: i64,
    pub time: i32,
    pub size_bin: i64,
    pub count: f64,
}

/// Outcome transform: natural log of count plus 10.
pub fn transform_outcome(raw_count: f64) -> Result<f64, DataError> {
    if !raw_count.is_finite() || raw_count < 0.0 {
        return Err(DataError::BadRawCount(raw_count));
    }
    Ok(math::ln(raw_count + 10.0))
}

/// Inverse of [`transform_outcome`].
pub fn inverse_transform(y: f64) -> f64 {
    math::exp(y) - 10.0
}

/// One run's dense (size bin x time) grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RunData {
    pub id: u32,
    pub window: Window,
    times: Vec<i32>,
    n_bins: usize,
    y: Vec<f64>,
    present: Vec<bool>,
}

impl RunData {
    pub fn times(&self) -> &[i32] {
        &self.times
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn t_min(&self) -> i32 {
        self.times[0]
    }

    pub fn t_max(&self) -> i32 {
        *self.times.last().unwrap()
    }

    /// Log outcome at 1-based bin `s` and time index `k`, if observed.
    pub fn y_at(&self, s: usize, k: usize) -> Option<f64> {
        let idx = (s - 1) * self.times.len() + k;
        self.present[idx].then(|| self.y[idx])
    }

    pub(crate) fn grids(&self) -> (&[f64], &[bool]) {
        (&self.y, &self.present)
    }

    pub fn n_missing(&self) -> usize {
        self.present.iter().filter(|&&p| !p).count()
    }
}

/// Validated collection of runs sharing a common bin count.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    runs: Vec<RunData>,
    n_bins: usize,
}

impl Dataset {
    /// Assemble a dataset from raw observation rows.
    ///
    /// The bin count is the largest size-bin index seen anywhere; every run
    /// gets a dense grid over bins `1..=S` and its own observed times, with
    /// absent cells masked. Rows may arrive in any order.
    pub fn from_records(records: &[ObsRecord]) -> Result<Self, DataError> {
        if records.is_empty() {
            return Err(DataError::Empty);
        }
        let mut n_bins: usize = 0;
        for r in records {
            if r.size_bin < 1 {
                return Err(DataError::BadSizeBin(r.size_bin));
            }
            n_bins = n_bins.max(r.size_bin as usize);
        }

        struct Accum {
            window: Window,
            times: BTreeSet<i32>,
            cells: BTreeMap<(u32, i32), f64>,
        }
        let mut by_run: BTreeMap<u32, Accum> = BTreeMap::new();
        for r in records {
            let window = Window::from_label(r.window).ok_or(DataError::BadWindowLabel {
                run: r.run,
                label: r.window,
            })?;
            let acc = by_run.entry(r.run).or_insert_with(|| Accum {
                window,
                times: BTreeSet::new(),
                cells: BTreeMap::new(),
            });
            if acc.window != window {
                return Err(DataError::InconsistentWindow { run: r.run });
            }
            let s = r.size_bin as u32;
            if acc.cells.contains_key(&(s, r.time)) {
                return Err(DataError::DuplicateCell {
                    run: r.run,
                    size_bin: s,
                    time: r.time,
                });
            }
            let y = transform_outcome(r.count).map_err(|_| DataError::BadCount {
                run: r.run,
                size_bin: s,
                time: r.time,
                value: r.count,
            })?;
            acc.times.insert(r.time);
            acc.cells.insert((s, r.time), y);
        }

        let mut runs = Vec::with_capacity(by_run.len());
        for (id, acc) in by_run {
            let times: Vec<i32> = acc.times.into_iter().collect();
            if !times.iter().any(|&t| t < 0) {
                return Err(DataError::NoPreEngineData { run: id });
            }
            if !times.iter().any(|&t| t >= 0) {
                return Err(DataError::NoPostEngineData { run: id });
            }
            let n_t = times.len();
            let mut y = vec![0.0; n_bins * n_t];
            let mut present = vec![false; n_bins * n_t];
            for ((s, t), val) in acc.cells {
                let k = times.binary_search(&t).expect("time recorded above");
                let idx = (s as usize - 1) * n_t + k;
                y[idx] = val;
                present[idx] = true;
            }
            runs.push(RunData {
                id,
                window: acc.window,
                times,
                n_bins,
                y,
                present,
            });
        }
        Ok(Dataset { runs, n_bins })
    }

    pub fn runs(&self) -> &[RunData] {
        &self.runs
    }

    pub fn n_runs(&self) -> usize {
        self.runs.len()
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn n_observed(&self) -> usize {
        self.runs
            .iter()
            .map(|r| r.present.iter().filter(|&&p| p).count())
            .sum()
    }

    /// Smallest engine-on end time over runs; trend knots must fall below it.
    pub fn min_t_max(&self) -> i32 {
        self.runs.iter().map(|r| r.t_max()).min().unwrap_or(0)
    }

    /// Structural report on spans, spacing and missingness. Pure; never fails.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport {
            n_bins: self.n_bins,
            runs: Vec::with_capacity(self.runs.len()),
            violations: Vec::new(),
        };
        for run in &self.runs {
            let diffs: Vec<i32> = run.times.windows(2).map(|w| w[1] - w[0]).collect();
            let step = match diffs.first() {
                Some(&d) if diffs.iter().all(|&e| e == d) => Some(d),
                Some(_) => None,
                None => None,
            };
            if step.is_none() && !diffs.is_empty() {
                report.violations.push(alloc::format!(
                    "run {}: non-constant time spacing {:?}",
                    run.id,
                    run.times
                ));
            }
            let total = run.y.len();
            let missing = run.n_missing();
            report.runs.push(RunSummary {
                id: run.id,
                window: run.window,
                t_min: run.t_min(),
                t_max: run.t_max(),
                n_times: run.n_times(),
                step,
                missing_fraction: missing as f64 / total as f64,
            });
        }
        report
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub id: u32,
    pub window: Window,
    pub t_min: i32,
    pub t_max: i32,
    pub n_times: usize,
    pub step: Option<i32>,
    pub missing_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub n_bins: usize,
    pub runs: Vec<RunSummary>,
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

impl core::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        writeln!(f, "bins: {}", self.n_bins)?;
        for r in &self.runs {
            writeln!(
                f,
                "run {:>3}  window {}  t in [{}, {}]  {} times  step {}  missing {:.3}",
                r.id,
                r.window.label(),
                r.t_min,
                r.t_max,
                r.n_times,
                match r.step {
                    Some(s) => alloc::format!("{s}"),
                    None => String::from("irregular"),
                },
                r.missing_fraction
            )?;
        }
        if self.violations.is_empty() {
            writeln!(f, "no violations")?;
        } else {
            for v in &self.violations {
                writeln!(f, "violation: {v}")?;
            }
        }
        Ok(())
    }
}
