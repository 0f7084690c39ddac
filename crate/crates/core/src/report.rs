//! CSV results, run manifests and case-0 / case-1 comparison tables.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::config::RunConfig;
use crate::experiments::{Axis, MetricsReport, MetricsRow};
use crate::fusion::FusionMethod;
use crate::scene::LayoutCase;

pub const MANIFEST_VERSION: u32 = 1;

pub const METRICS_HEADER: [&str; 10] = [
    "scenario",
    "layout",
    "C",
    "fusion",
    "noise",
    "axis",
    "displacement_mm",
    "mean_error_deg",
    "availability_pct",
    "n_frames",
];

const SENSOR_HEADER: [&str; 10] = [
    "scenario",
    "layout",
    "C",
    "noise",
    "axis",
    "displacement_mm",
    "sensor",
    "mean_error_deg",
    "availability_pct",
    "n_frames",
];

/// Written in error columns when no frame produced an output.
pub const NO_OUTPUT: &str = "NA";
/// Written in comparison cells whose configuration was not simulated.
pub const NOT_RUN: &str = "-";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}, record {record}: {message}")]
    Malformed {
        path: PathBuf,
        record: usize,
        message: String,
    },
    #[error("nothing to summarize")]
    Empty,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> ReportError + '_ {
    move |source| ReportError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| NO_OUTPUT.to_string(), |v| v.to_string())
}

fn write_csv(
    path: &Path,
    header: &[&str],
    records: impl IntoIterator<Item = Vec<String>>,
) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for r in records {
        w.write_record(&r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn metrics_record(r: &MetricsRow) -> Vec<String> {
    vec![
        r.scenario.clone(),
        r.layout.to_string(),
        r.cameras.to_string(),
        r.fusion.to_string(),
        r.noise.to_string(),
        r.axis.name().to_string(),
        r.displacement_mm.to_string(),
        fmt_opt(r.mean_error_deg),
        r.availability_pct.to_string(),
        r.n_frames.to_string(),
    ]
}

/// Files written for one scenario block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub metrics: PathBuf,
    pub sensors: PathBuf,
}

/// Writes `<name>.csv` (fused metrics) and `<name>_sensors.csv` (per-sensor
/// metrics) for the reports of one scenario block, in the given order.
pub fn write_report(
    name: &str,
    reports: &[MetricsReport],
    dir: &Path,
) -> Result<ReportFiles, ReportError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let metrics = dir.join(format!("{name}.csv"));
    let sensors = dir.join(format!("{name}_sensors.csv"));
    write_csv(
        &metrics,
        &METRICS_HEADER,
        reports
            .iter()
            .flat_map(|r| r.rows.iter().map(metrics_record)),
    )?;
    let sensor_records = reports.iter().flat_map(|r| {
        r.sensor_rows.iter().map(move |s| {
            vec![
                r.scenario.clone(),
                r.layout.to_string(),
                r.cameras.to_string(),
                s.noise.to_string(),
                s.axis.name().to_string(),
                s.displacement_mm.to_string(),
                s.sensor.to_string(),
                fmt_opt(s.mean_error_deg),
                s.availability_pct.to_string(),
                s.n_frames.to_string(),
            ]
        })
    });
    write_csv(&sensors, &SENSOR_HEADER, sensor_records)?;
    Ok(ReportFiles { metrics, sensors })
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>, ReportError> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = reader.headers().map_err(csv_err(path))?.clone();
    if header.iter().ne(METRICS_HEADER) {
        return Err(ReportError::Malformed {
            path: path.to_path_buf(),
            record: 0,
            message: format!("expected header `{}`", METRICS_HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err(path))?;
        let bad = |field: &str| ReportError::Malformed {
            path: path.to_path_buf(),
            record: i + 1,
            message: format!("invalid {field}"),
        };
        let num = |k: usize| record[k].parse::<f64>().map_err(|_| bad(METRICS_HEADER[k]));
        let count = |k: usize| {
            record[k]
                .parse::<usize>()
                .map_err(|_| bad(METRICS_HEADER[k]))
        };
        let layout = match &record[1] {
            "case0" => LayoutCase::Case0,
            "case1" => LayoutCase::Case1,
            _ => return Err(bad("layout")),
        };
        rows.push(MetricsRow {
            scenario: record[0].to_string(),
            layout,
            cameras: count(2)?,
            fusion: record[3]
                .parse::<FusionMethod>()
                .map_err(|_| bad("fusion"))?,
            noise: num(4)?,
            axis: Axis::parse(&record[5]).ok_or_else(|| bad("axis"))?,
            displacement_mm: num(6)?,
            mean_error_deg: if &record[7] == NO_OUTPUT {
                None
            } else {
                Some(num(7)?)
            },
            availability_pct: num(8)?,
            n_frames: count(9)?,
        });
    }
    Ok(rows)
}

/// One line of the case-0 / case-1 comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub scenario: String,
    pub cameras: usize,
    pub fusion: FusionMethod,
    pub noise: f64,
    pub axis: Axis,
    pub displacement_mm: f64,
    /// `None` when the layout was not simulated for this key.
    pub case0: Option<Cell>,
    pub case1: Option<Cell>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub mean_error_deg: Option<f64>,
    pub availability_pct: f64,
}

/// Pivots metrics rows so both layouts of each (scenario, C, fusion, noise,
/// axis, displacement) share one line. Output is sorted by that key.
pub fn summarize(rows: &[MetricsRow]) -> Result<Vec<ComparisonRow>, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::Empty);
    }
    // Floats are keyed by bit pattern; they come from the same config values.
    type Key = (String, usize, FusionMethod, u64, Axis, i64);
    let mut table: BTreeMap<Key, ComparisonRow> = BTreeMap::new();
    for r in rows {
        let key = (
            r.scenario.clone(),
            r.cameras,
            r.fusion,
            r.noise.to_bits(),
            r.axis,
            (r.displacement_mm * 1e6).round() as i64,
        );
        let entry = table.entry(key).or_insert_with(|| ComparisonRow {
            scenario: r.scenario.clone(),
            cameras: r.cameras,
            fusion: r.fusion,
            noise: r.noise,
            axis: r.axis,
            displacement_mm: r.displacement_mm,
            case0: None,
            case1: None,
        });
        let cell = Some(Cell {
            mean_error_deg: r.mean_error_deg,
            availability_pct: r.availability_pct,
        });
        match r.layout {
            LayoutCase::Case0 => entry.case0 = cell,
            LayoutCase::Case1 => entry.case1 = cell,
        }
    }
    Ok(table.into_values().collect())
}

pub const COMPARISON_HEADER: [&str; 10] = [
    "scenario",
    "C",
    "fusion",
    "noise",
    "axis",
    "displacement_mm",
    "case0_mean_error_deg",
    "case0_availability_pct",
    "case1_mean_error_deg",
    "case1_availability_pct",
];

fn comparison_record(r: &ComparisonRow) -> Vec<String> {
    let cell = |c: &Option<Cell>| match c {
        None => [NOT_RUN.to_string(), NOT_RUN.to_string()],
        Some(c) => [fmt_opt(c.mean_error_deg), c.availability_pct.to_string()],
    };
    let [e0, a0] = cell(&r.case0);
    let [e1, a1] = cell(&r.case1);
    vec![
        r.scenario.clone(),
        r.cameras.to_string(),
        r.fusion.to_string(),
        r.noise.to_string(),
        r.axis.name().to_string(),
        r.displacement_mm.to_string(),
        e0,
        a0,
        e1,
        a1,
    ]
}

pub fn write_comparison(rows: &[ComparisonRow], path: &Path) -> Result<(), ReportError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    write_csv(path, &COMPARISON_HEADER, rows.iter().map(comparison_record))
}

/// The comparison as CSV text.
pub fn comparison_to_string(rows: &[ComparisonRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COMPARISON_HEADER).expect("in-memory write");
    for r in rows {
        w.write_record(comparison_record(r))
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub version: u32,
    pub tool_version: String,
    pub seed: u64,
    /// False when the run stopped early; `files` then lists what was written.
    pub complete: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub files: Vec<String>,
    /// How calibration statistics become behavior-fusion weights.
    pub reliability_score: String,
    /// Mean fused error per configuration, averaged over tested positions
    /// that produced output.
    pub summary: Vec<SummaryEntry>,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryEntry {
    pub scenario: String,
    pub layout: LayoutCase,
    #[serde(rename = "C")]
    pub cameras: usize,
    pub fusion: FusionMethod,
    pub noise: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_error_deg: Option<f64>,
    pub min_availability_pct: f64,
}

pub fn summary_entries(reports: &[MetricsReport]) -> Vec<SummaryEntry> {
    let mut out = Vec::new();
    for report in reports {
        let mut groups: Vec<(FusionMethod, f64, Vec<&MetricsRow>)> = Vec::new();
        for row in &report.rows {
            match groups
                .iter_mut()
                .find(|(f, n, _)| *f == row.fusion && *n == row.noise)
            {
                Some((_, _, rows)) => rows.push(row),
                None => groups.push((row.fusion, row.noise, vec![row])),
            }
        }
        for (fusion, noise, rows) in groups {
            let errors: Vec<f64> = rows.iter().filter_map(|r| r.mean_error_deg).collect();
            out.push(SummaryEntry {
                scenario: report.scenario.clone(),
                layout: report.layout,
                cameras: report.cameras,
                fusion,
                noise,
                mean_error_deg: (!errors.is_empty())
                    .then(|| errors.iter().sum::<f64>() / errors.len() as f64),
                min_availability_pct: rows
                    .iter()
                    .map(|r| r.availability_pct)
                    .fold(f64::INFINITY, f64::min),
            });
        }
    }
    out
}

/// Writes `manifest.toml` into `dir`. `files` are listed relative to `dir`.
pub fn write_manifest(
    dir: &Path,
    config: &RunConfig,
    files: &[PathBuf],
    reports: &[MetricsReport],
    error: Option<&str>,
) -> Result<PathBuf, ReportError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        complete: error.is_none(),
        error: error.map(str::to_string),
        files: files
            .iter()
            .map(|f| f.strip_prefix(dir).unwrap_or(f).display().to_string())
            .collect(),
        reliability_score: format!(
            "availability / (mean_error_deg + {}), normalized across sensors per calibration point",
            crate::calibration::SCORE_EPSILON_DEG
        ),
        summary: summary_entries(reports),
        config: config.clone(),
    };
    let path = dir.join("manifest.toml");
    let text = toml::to_string(&manifest).expect("manifests always serialize");
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(path)
}
