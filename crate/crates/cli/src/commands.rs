use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use deepmso::plant::manipulator_matrices;
use deepmso::trace::write_csv;
use deepmso::{run_episode, Estimator, RunLog, SimConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::override_key;
use crate::error::{CliError, CliResult, ErrorKind};
use crate::summary::RunSummary;

/// Largest on/off rms ratio accepted by `compare` and `check`.
pub const MAX_RMS_RATIO: f64 = 0.25;
/// Largest per-joint rms accepted by `check`, in radians.
pub const MAX_JOINT_RMS: f64 = 0.05;
/// Largest fraction of Lyapunov violations accepted by `check`.
pub const MAX_VIOLATION_FRACTION: f64 = 0.01;

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value).map_err(|e| CliError::io(path, e))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn simulate(cfg: &SimConfig) -> CliResult<(RunLog, RunSummary)> {
    let log = run_episode(cfg)?;
    let summary = RunSummary::from_log(cfg, &log);
    Ok((log, summary))
}

fn write_run(dir: &Path, log: &RunLog, summary: &RunSummary) -> CliResult<()> {
    create_dir(dir)?;
    let trace = dir.join("trace.csv");
    let file = File::create(&trace).map_err(|e| CliError::io(&trace, e))?;
    write_csv(log, BufWriter::new(file)).map_err(|e| CliError::io(&trace, e))?;
    write_json(&dir.join("summary.json"), summary)
}

fn aborted(summary: &RunSummary) -> CliError {
    CliError::new(
        ErrorKind::Aborted,
        format!(
            "run aborted after {} records: {}",
            summary.records,
            summary.abort.as_deref().unwrap_or("unknown reason")
        ),
    )
}

fn pool(jobs: Option<usize>) -> CliResult<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        if j == 0 {
            return Err(CliError::config("--jobs must be at least 1"));
        }
        b = b.num_threads(j);
    }
    b.build().map_err(|e| CliError::new(ErrorKind::Io, e.to_string()))
}

/// Single episode into `<out>/trace.csv` and `<out>/summary.json`. Partial
/// results are still written when the run aborts.
pub fn run(cfg: &SimConfig, out: &Path) -> CliResult<RunSummary> {
    let (log, summary) = simulate(cfg)?;
    write_run(out, &log, &summary)?;
    if !summary.complete {
        return Err(aborted(&summary));
    }
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub rms_on: Option<f64>,
    pub rms_off: Option<f64>,
    /// `rms_on / rms_off` over the evaluation window.
    pub rms_ratio: Option<f64>,
    pub joint_rms_on: Option<[f64; 2]>,
    pub joint_rms_off: Option<[f64; 2]>,
    pub max_ratio: f64,
    pub pass: bool,
    pub window_start: f64,
}

/// NN-on and NN-off episodes into `<out>/on` and `<out>/off`, plus a ratio
/// report in `<out>/summary.json`.
pub fn compare(cfg: &SimConfig, out: &Path, jobs: Option<usize>) -> CliResult<CompareReport> {
    let variant = |nn| {
        let mut c = cfg.clone();
        c.sim.nn = nn;
        c
    };
    let (on_cfg, off_cfg) = (variant(Estimator::On), variant(Estimator::Off));
    let (on, off) = pool(jobs)?.install(|| rayon::join(|| simulate(&on_cfg), || simulate(&off_cfg)));
    let (on_log, on) = on?;
    let (off_log, off) = off?;
    write_run(&out.join("on"), &on_log, &on)?;
    write_run(&out.join("off"), &off_log, &off)?;
    let rms_ratio = match (on.rms(), off.rms()) {
        (Some(a), Some(b)) if on.complete && off.complete && b > 0.0 => Some(a / b),
        _ => None,
    };
    let report = CompareReport {
        rms_on: on.rms(),
        rms_off: off.rms(),
        rms_ratio,
        joint_rms_on: on.metrics.map(|m| m.joint_rms()),
        joint_rms_off: off.metrics.map(|m| m.joint_rms()),
        max_ratio: MAX_RMS_RATIO,
        pass: rms_ratio.is_some_and(|r| r <= MAX_RMS_RATIO),
        window_start: on.window_start,
    };
    write_json(&out.join("summary.json"), &report)?;
    if !on.complete {
        return Err(aborted(&on));
    }
    if !off.complete {
        return Err(aborted(&off));
    }
    Ok(report)
}

/// One sweep axis, parsed from `key=v1,v2,...`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub key: String,
    pub values: Vec<String>,
}

impl std::str::FromStr for SweepAxis {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        let (key, rest) = s
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("sweep axis `{s}` is not of the form key=v1,v2")))?;
        let values = split_values(rest);
        if key.trim().is_empty() || values.is_empty() {
            return Err(CliError::config(format!("sweep axis `{s}` has no key or no values")));
        }
        Ok(Self {
            key: key.trim().to_string(),
            values,
        })
    }
}

/// Splits on commas that are not inside brackets, so array values such as
/// `hidden=[10,10],[20,20]` survive.
fn split_values(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for c in s.chars() {
        match c {
            '[' => depth += 1,
            ']' => depth -= 1,
            ',' if depth == 0 => {
                out.push(std::mem::take(&mut cur));
                continue;
            }
            _ => {}
        }
        cur.push(c);
    }
    out.push(cur);
    out.into_iter()
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepCell {
    pub dir: String,
    pub overrides: Vec<(String, String)>,
    pub complete: bool,
    pub abort: Option<String>,
    pub rms_e_r: Option<f64>,
    pub lyapunov_violation_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepIndex {
    pub axes: Vec<String>,
    pub cells: Vec<SweepCell>,
}

fn cell_name(overrides: &[(String, String)]) -> String {
    overrides
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join("_")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "=._-".contains(c) { c } else { '-' })
        .collect()
}

/// Cartesian grid over `axes`, one subdirectory per cell, cells executed in
/// parallel. Writes `<out>/index.json`.
pub fn sweep(cfg: &SimConfig, axes: &[SweepAxis], out: &Path, jobs: Option<usize>) -> CliResult<SweepIndex> {
    if axes.is_empty() {
        return Err(CliError::config("sweep needs at least one key=v1,v2 axis"));
    }
    let mut grid: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for axis in axes {
        grid = grid
            .into_iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |v| {
                    let mut cell = prefix.clone();
                    cell.push((axis.key.clone(), v.clone()));
                    cell
                })
            })
            .collect();
    }
    // resolve every override before running anything
    let cells: Vec<(Vec<(String, String)>, SimConfig)> = grid
        .into_iter()
        .map(|ov| {
            let c = ov.iter().try_fold(cfg.clone(), |c, (k, v)| override_key(&c, k, v))?;
            Ok((ov, c))
        })
        .collect::<CliResult<_>>()?;
    create_dir(out)?;
    let results: Vec<CliResult<SweepCell>> = pool(jobs)?.install(|| {
        cells
            .par_iter()
            .map(|(ov, c)| {
                let dir = cell_name(ov);
                let (log, summary) = simulate(c)?;
                write_run(&out.join(&dir), &log, &summary)?;
                Ok(SweepCell {
                    dir,
                    overrides: ov.clone(),
                    complete: summary.complete,
                    abort: summary.abort.clone(),
                    rms_e_r: summary.rms(),
                    lyapunov_violation_fraction: summary.lyapunov.violation_fraction(),
                })
            })
            .collect()
    });
    let index = SweepIndex {
        axes: axes.iter().map(|a| a.key.clone()).collect(),
        cells: results.into_iter().collect::<CliResult<_>>()?,
    };
    write_json(&out.join("index.json"), &index)?;
    if let Some(bad) = index.cells.iter().find(|c| !c.complete) {
        return Err(CliError::new(
            ErrorKind::Aborted,
            format!("cell {} aborted: {}", bad.dir, bad.abort.as_deref().unwrap_or("")),
        ));
    }
    Ok(index)
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckItem {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub pass: bool,
    pub checks: Vec<CheckItem>,
}

fn item(name: &str, pass: bool, detail: String) -> CheckItem {
    CheckItem {
        name: name.into(),
        pass,
        detail,
    }
}

/// Invariants and diagnostics on one configuration: run completeness, error
/// identity, parameter bound, inertia along the trajectory, tracking contrast
/// against the estimator switched off, and the Lyapunov diagnostic.
pub fn check(cfg: &SimConfig, out: Option<&Path>, jobs: Option<usize>) -> CliResult<CheckReport> {
    let mut on_cfg = cfg.clone();
    on_cfg.sim.nn = Estimator::On;
    let mut off_cfg = cfg.clone();
    off_cfg.sim.nn = Estimator::Off;
    let (on, off) = pool(jobs)?.install(|| rayon::join(|| simulate(&on_cfg), || simulate(&off_cfg)));
    let (log, summary) = on?;
    let (_, off) = off?;

    let mut checks = Vec::new();
    checks.push(item(
        "complete",
        summary.complete && summary.records == cfg.record_count(),
        format!("{} of {} records", summary.records, cfg.record_count()),
    ));
    let identity = log
        .records
        .iter()
        .map(|r| (r.e_r - (r.e_a + r.e_r_hat())).abs().max())
        .fold(0.0f64, f64::max);
    checks.push(item("error_identity", identity <= 1e-12, format!("worst residual {identity:.1e}")));
    checks.push(item(
        "parameter_bound",
        log.max_param_magnitude <= cfg.madam.sigma_max,
        format!("max |w| {:.3} <= {}", log.max_param_magnitude, cfg.madam.sigma_max),
    ));
    let spd = log.records.iter().all(|r| {
        let m = manipulator_matrices(&cfg.plant, &r.x).m;
        m[(0, 1)] == m[(1, 0)] && m[(0, 0)] > 0.0 && m.determinant() > 0.0
    });
    checks.push(item("inertia_spd", spd, "along the logged trajectory".into()));
    let ratio = match (summary.rms(), off.rms()) {
        (Some(a), Some(b)) if b > 0.0 && summary.complete && off.complete => a / b,
        _ => f64::INFINITY,
    };
    checks.push(item(
        "rms_ratio",
        ratio <= MAX_RMS_RATIO,
        format!("on/off {ratio:.4} <= {MAX_RMS_RATIO}"),
    ));
    let joint = summary.metrics.map_or([f64::INFINITY; 2], |m| m.joint_rms());
    checks.push(item(
        "joint_rms",
        joint.iter().all(|j| *j <= MAX_JOINT_RMS),
        format!("[{:.2e}, {:.2e}] <= {MAX_JOINT_RMS}", joint[0], joint[1]),
    ));
    let frac = summary.lyapunov.violation_fraction();
    checks.push(item(
        "lyapunov",
        summary.lyapunov.checked > 0 && frac <= MAX_VIOLATION_FRACTION,
        format!("{}/{} violations", summary.lyapunov.violations, summary.lyapunov.checked),
    ));

    let report = CheckReport {
        pass: checks.iter().all(|c| c.pass),
        checks,
    };
    if let Some(dir) = out {
        write_run(dir, &log, &summary)?;
        write_json(&dir.join("check.json"), &report)?;
    }
    Ok(report)
}

/// Default output directory when `--out` is not given.
pub fn default_out(sub: &str) -> PathBuf {
    PathBuf::from("out").join(sub)
}
