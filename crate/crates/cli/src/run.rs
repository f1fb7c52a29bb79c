//! The `run` command: one co-clustering of one input, written to a directory.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use ccot::coclust::{block_means, ccot, ccot_gw, Bandwidth, CcotConfig, CoClusterResult, KernelConfig};
use ccot::gromov::GWConfig;
use ccot::simulate::{error_rate, generate_lbm, GroundTruth, LbmConfig};
use ccot::DataMatrix;
use serde::Serialize;

use crate::error::{io_error, CliError, Result};
use crate::ingest::{ingest, Format};

pub const PARTITIONS_FILE: &str = "partitions.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TRACES_FILE: &str = "traces.csv";
/// Kept apart from the other outputs so those stay byte-reproducible.
pub const TIMING_FILE: &str = "timing.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Ccot,
    CcotGw,
}

impl FromStr for Method {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ccot" => Ok(Method::Ccot),
            "ccot-gw" => Ok(Method::CcotGw),
            other => Err(CliError::Usage(format!(
                "unknown method {other:?} (expected ccot or ccot-gw)"
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Ccot => "ccot",
            Method::CcotGw => "ccot-gw",
        })
    }
}

/// `auto` or a positive number.
pub fn parse_bandwidth(s: &str) -> Result<Bandwidth> {
    if s == "auto" {
        return Ok(Bandwidth::Auto);
    }
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(Bandwidth::Fixed(v)),
        _ => Err(CliError::Usage(format!("sigma must be auto or a positive number, got {s:?}"))),
    }
}

/// Barycenter weights as `eps_r,eps_c`.
pub fn parse_eps(s: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let pair = match parts.as_slice() {
        [a, b] => a.parse().ok().zip(b.parse().ok()),
        _ => None,
    };
    pair.ok_or_else(|| CliError::Usage(format!("eps must look like 0.5,0.5, got {s:?}")))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    File { path: PathBuf, format: Format },
    /// A shipped simulation preset, generated with the manifest seed.
    Preset(String),
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::File { path, format } => write!(f, "{} ({format})", path.display()),
            Source::Preset(name) => write!(f, "preset {name}"),
        }
    }
}

/// Settings for both pipelines; only those of `method` are used.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MethodSettings {
    pub ccot: CcotConfig,
    pub gw: GWConfig,
    pub kernel: KernelConfig,
}

impl MethodSettings {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.ccot.seed = seed;
        self.gw.seed = seed;
        self
    }

    pub fn validate(&self, method: Method) -> Result<()> {
        match method {
            Method::Ccot => self.ccot.validate()?,
            Method::CcotGw => self.gw.validate()?,
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub source: Source,
    pub method: Method,
    pub settings: MethodSettings,
    /// `None` picks the format default: on for triplets, off otherwise.
    pub exclude_zeros: Option<bool>,
    pub out: PathBuf,
    pub seed: u64,
}

impl RunManifest {
    pub fn new(source: Source, method: Method, out: PathBuf) -> Self {
        Self {
            source,
            method,
            settings: MethodSettings::default(),
            exclude_zeros: None,
            out,
            seed: 0,
        }
    }

    pub fn exclude_zeros(&self) -> bool {
        self.exclude_zeros
            .unwrap_or(matches!(self.source, Source::File { format: Format::Triplet, .. }))
    }
}

pub fn load(source: &Source, seed: u64) -> Result<(DataMatrix, Option<GroundTruth>)> {
    match source {
        Source::File { path, format } => Ok((ingest(path, *format)?, None)),
        Source::Preset(name) => {
            let cfg = LbmConfig::preset(name)?.with_seed(seed);
            let (a, truth) = generate_lbm(&cfg)?;
            Ok((a, Some(truth)))
        }
    }
}

pub fn co_cluster(a: &DataMatrix, method: Method, settings: &MethodSettings) -> Result<CoClusterResult> {
    Ok(match method {
        Method::Ccot => ccot(a, &settings.ccot)?,
        Method::CcotGw => ccot_gw(a, &settings.gw, &settings.kernel)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountFrequency {
    pub g: usize,
    pub m: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsSummary {
    pub converged: bool,
    pub lambda: f64,
    pub samples_drawn: usize,
    pub samples_converged: usize,
    pub rows_retained: usize,
    pub cols_retained: usize,
    pub count_histogram: Vec<CountFrequency>,
    pub sinkhorn_iterations_max: usize,
    pub barycenter_runs: usize,
    pub objective_trace: Vec<f64>,
    pub sigma_rows: Option<f64>,
    pub sigma_cols: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthSummary {
    pub row_error: f64,
    pub col_error: f64,
    pub cce: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub source: String,
    pub method: String,
    pub seed: u64,
    pub rows: usize,
    pub cols: usize,
    pub g: usize,
    pub m: usize,
    pub row_cluster_sizes: Vec<usize>,
    pub col_cluster_sizes: Vec<usize>,
    pub exclude_zeros: bool,
    /// `g x m`; `null` for blocks with no (nonzero) entries.
    pub block_means: Vec<Vec<Option<f64>>>,
    pub diagnostics: DiagnosticsSummary,
    pub truth: Option<TruthSummary>,
}

impl Summary {
    fn new(m: &RunManifest, a: &DataMatrix, r: &CoClusterResult, truth: Option<&GroundTruth>) -> Result<Self> {
        let exclude_zeros = m.exclude_zeros();
        let means = block_means(a.values(), &r.row_partition, &r.col_partition, exclude_zeros);
        let d = &r.diagnostics;
        let truth = match truth {
            Some(t) => {
                let row_error = error_rate(&t.row_labels, &r.row_partition.labels)?;
                let col_error = error_rate(&t.col_labels, &r.col_partition.labels)?;
                Some(TruthSummary {
                    row_error,
                    col_error,
                    cce: ccot::simulate::cce_from_rates(row_error, col_error),
                })
            }
            None => None,
        };
        Ok(Self {
            source: m.source.to_string(),
            method: m.method.to_string(),
            seed: m.seed,
            rows: a.nrows(),
            cols: a.ncols(),
            g: r.g,
            m: r.m,
            row_cluster_sizes: r.row_partition.sizes(),
            col_cluster_sizes: r.col_partition.sizes(),
            exclude_zeros,
            block_means: means
                .outer_iter()
                .map(|row| row.iter().map(|&v| v.is_finite().then_some(v)).collect())
                .collect(),
            diagnostics: DiagnosticsSummary {
                converged: d.converged,
                lambda: d.lambda,
                samples_drawn: d.samples_drawn,
                samples_converged: d.samples_converged,
                rows_retained: d.rows_retained,
                cols_retained: d.cols_retained,
                count_histogram: d
                    .count_histogram
                    .iter()
                    .map(|&((g, m), samples)| CountFrequency { g, m, samples })
                    .collect(),
                sinkhorn_iterations_max: d.sinkhorn_iterations.iter().copied().max().unwrap_or(0),
                barycenter_runs: d.barycenter_runs,
                objective_trace: d.objective_trace.clone(),
                sigma_rows: d.sigma_rows,
                sigma_cols: d.sigma_cols,
            },
            truth,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub data: DataMatrix,
    pub result: CoClusterResult,
    pub summary: Summary,
    pub wall_seconds: f64,
}

/// Runs the manifest and writes partitions, summary, traces and timing into
/// `manifest.out`.
pub fn run(manifest: &RunManifest) -> Result<RunOutput> {
    let settings = manifest.settings.clone().with_seed(manifest.seed);
    settings.validate(manifest.method)?;
    let (data, truth) = load(&manifest.source, manifest.seed)?;
    let start = Instant::now();
    let result = co_cluster(&data, manifest.method, &settings)?;
    let wall_seconds = start.elapsed().as_secs_f64();
    let summary = Summary::new(manifest, &data, &result, truth.as_ref())?;

    let out = &manifest.out;
    fs::create_dir_all(out).map_err(io_error(out))?;
    write_partitions(&out.join(PARTITIONS_FILE), &data, &result)?;
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    write_traces(&out.join(TRACES_FILE), &result)?;
    write_json(&out.join(TIMING_FILE), &serde_json::json!({ "wall_seconds": wall_seconds }))?;
    Ok(RunOutput {
        data,
        result,
        summary,
        wall_seconds,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(io_error(path))
}

/// `axis,id,label`, rows first, in input order.
pub fn write_partitions(path: &Path, a: &DataMatrix, r: &CoClusterResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["axis", "id", "label"])?;
    for (ids, labels, axis) in [
        (a.row_ids(), &r.row_partition.labels, "row"),
        (a.col_ids(), &r.col_partition.labels, "col"),
    ] {
        for (id, label) in ids.iter().zip(labels) {
            w.write_record([axis, id.as_str(), &label.to_string()])?;
        }
    }
    w.flush().map_err(io_error(path))
}

/// `axis,rank,value`: the sorted log scaling vectors the partitions were read from.
pub fn write_traces(path: &Path, r: &CoClusterResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["axis", "rank", "value"])?;
    for (signal, axis) in [
        (&r.diagnostics.sorted_row_signal, "row"),
        (&r.diagnostics.sorted_col_signal, "col"),
    ] {
        for (rank, v) in signal.iter().enumerate() {
            w.write_record([axis, &rank.to_string(), &v.to_string()])?;
        }
    }
    w.flush().map_err(io_error(path))
}

/// Writes `a` as dense CSV with an `id` corner cell.
pub fn write_dense(path: &Path, a: &DataMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string()];
    header.extend(a.col_ids().iter().cloned());
    w.write_record(&header)?;
    for (id, row) in a.row_ids().iter().zip(a.values().outer_iter()) {
        let mut record = vec![id.clone()];
        record.extend(row.iter().map(f64::to_string));
        w.write_record(&record)?;
    }
    w.flush().map_err(io_error(path))
}

/// `axis,id,label` for a simulated ground truth.
pub fn write_truth(path: &Path, a: &DataMatrix, t: &GroundTruth) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["axis", "id", "label"])?;
    for (ids, labels, axis) in [(a.row_ids(), &t.row_labels, "row"), (a.col_ids(), &t.col_labels, "col")] {
        for (id, label) in ids.iter().zip(labels) {
            w.write_record([axis, id.as_str(), &label.to_string()])?;
        }
    }
    w.flush().map_err(io_error(path))
}
