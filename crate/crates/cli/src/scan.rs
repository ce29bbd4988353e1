//! Resumable parameter scans.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use trisim::analysis::{critical_point_cubic, default_windows, Summary};

use crate::config::{Axis, Engine, ExperimentConfig, Observable, Resolved};
use crate::output::{csv_bytes, line_plot_svg, num, write_atomic, write_json, Series};
use crate::pipeline::{point_hash, run_point, Observables, PointResult};
use crate::{core_code, CliError, Format};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointFailure {
    pub axis_value: f64,
    pub error: String,
    pub exit_code: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub config_hash: String,
    pub seed: u64,
    pub axis: Axis,
    pub engine: Engine,
    pub n_shots: usize,
    /// Ascending in the scan value.
    pub points: Vec<PointResult>,
    pub failures: Vec<PointFailure>,
}

impl ScanResult {
    /// The series used for analysis: shot estimates when present.
    pub fn series(&self, obs: Observable) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let pick = |o: &Observables| match obs {
            Observable::Mz => o.mz,
            Observable::Sq => o.sq,
            Observable::C1 => o.c1,
        };
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut e = Vec::new();
        for p in &self.points {
            let v = pick(p.shots.as_ref().map_or(&p.engine_values, |s| &s.observables));
            x.push(p.axis_value);
            y.push(v.value);
            e.push(v.stderr);
        }
        (x, y, e)
    }
}

pub struct ScanOutcome {
    pub result: ScanResult,
    pub computed: usize,
    pub reused: usize,
}

fn point_path(out: &Path, hash: &str) -> PathBuf {
    out.join("points").join(format!("{hash}.json"))
}

fn cached(out: &Path, hash: &str) -> Option<PointResult> {
    let text = std::fs::read_to_string(point_path(out, hash)).ok()?;
    let p: PointResult = serde_json::from_str(&text).ok()?;
    (p.point_hash == hash).then_some(p)
}

/// Runs every point not already on disk. Each finished point is written
/// atomically as soon as it completes, so an interrupted scan resumes where
/// it stopped. Failed points are reported but not cached.
pub fn run_scan(cfg: &ExperimentConfig, r: &Resolved, out: &Path) -> Result<ScanOutcome, CliError> {
    let hash = cfg.hash();
    std::fs::create_dir_all(out.join("points"))?;
    let jobs: Vec<(usize, f64)> = cfg.scan.values.iter().copied().enumerate().collect();
    let results: Vec<Result<(PointResult, bool), PointFailure>> = jobs
        .par_iter()
        .map(|&(k, v)| {
            let ph = point_hash(&hash, v);
            if let Some(p) = cached(out, &ph) {
                return Ok((p, false));
            }
            let fail = |e: CliError| PointFailure { axis_value: v, error: e.to_string(), exit_code: e.code() };
            let p = run_point(cfg, r, &hash, k, v).map_err(|e| {
                log::warn!("point {v}: {e}");
                PointFailure { axis_value: v, error: e.to_string(), exit_code: core_code(&e) }
            })?;
            write_json(&point_path(out, &ph), &p).map_err(fail)?;
            Ok((p, true))
        })
        .collect();
    let mut points = Vec::new();
    let mut failures = Vec::new();
    let mut computed = 0;
    for r in results {
        match r {
            Ok((p, fresh)) => {
                computed += fresh as usize;
                points.push(p);
            }
            Err(f) => failures.push(f),
        }
    }
    let reused = points.len() - computed;
    let result = ScanResult {
        config_hash: hash,
        seed: cfg.seed,
        axis: cfg.scan.axis,
        engine: cfg.engine,
        n_shots: cfg.shots,
        points,
        failures,
    };
    Ok(ScanOutcome { result, computed, reused })
}

fn axis_name(axis: Axis) -> &'static str {
    match axis {
        Axis::Dz => "dz_over_j1",
        Axis::Delta => "delta_over_j1",
    }
}

/// Table with one row per point: engine values, then shot estimates
/// (empty when no shots were simulated).
pub fn table_csv(res: &ScanResult) -> Result<Vec<u8>, CliError> {
    let header = [
        axis_name(res.axis),
        "delta_over_j1",
        "mz",
        "mz_err",
        "sq",
        "sq_err",
        "c1",
        "c1_err",
        "variance",
        "variance_err",
        "shot_mz",
        "shot_mz_err",
        "shot_sq",
        "shot_sq_err",
        "shot_c1",
        "shot_c1_err",
        "shot_variance",
        "shot_variance_err",
        "retention",
    ];
    let cols = |o: &Observables| {
        [o.mz, o.sq, o.c1, o.variance].iter().flat_map(|v| [num(v.value), num(v.stderr)]).collect::<Vec<_>>()
    };
    let rows = res.points.iter().map(|p| {
        let mut row = vec![num(p.axis_value), num(p.delta_over_j1)];
        row.extend(cols(&p.engine_values));
        match &p.shots {
            Some(s) => {
                row.extend(cols(&s.observables));
                row.push(num(s.retention));
            }
            None => row.extend(std::iter::repeat_n(String::new(), 9)),
        }
        row
    });
    csv_bytes(&header, rows)
}

pub fn critical_summary(cfg: &ExperimentConfig, res: &ScanResult) -> Option<Result<Summary, trisim::Error>> {
    let spec = cfg.analysis.critical_point.as_ref()?;
    let (x, y, _) = res.series(spec.observable);
    let range = match spec.window {
        Some([a, b]) => (a, b),
        None => (x.first().copied().unwrap_or(0.0), x.last().copied().unwrap_or(0.0)),
    };
    Some(critical_point_cubic(&x, &y, &default_windows(range, spec.n_windows)).map(|e| Summary::from_critical(&e, &res.config_hash)))
}

pub fn scan_svg(res: &ScanResult) -> String {
    let (x, mz, mz_e) = res.series(Observable::Mz);
    let (_, sq, sq_e) = res.series(Observable::Sq);
    line_plot_svg(
        &format!("scan {}", &res.config_hash[..12]),
        axis_name(res.axis),
        &[
            Series { label: "M^z", x: &x, y: &mz, err: Some(&mz_e) },
            Series { label: "S(q1/3)", x: &x, y: &sq, err: Some(&sq_e) },
        ],
    )
}

/// Writes the result table, the full JSON result, the optional critical
/// point summary and plot. One writer, after all points are done.
pub fn write_outputs(
    cfg: &ExperimentConfig,
    res: &ScanResult,
    out: &Path,
    format: Format,
    svg: bool,
) -> Result<(), CliError> {
    write_json(&out.join("result.json"), res)?;
    if format == Format::Csv {
        write_atomic(&out.join("scan.csv"), &table_csv(res)?)?;
    }
    match critical_summary(cfg, res) {
        Some(Ok(s)) => write_json(&out.join("critical.json"), &s)?,
        Some(Err(e)) => log::warn!("critical point: {e}"),
        None => {}
    }
    if svg {
        write_atomic(&out.join("scan.svg"), scan_svg(res).as_bytes())?;
    }
    Ok(())
}
