//! The `bench` command: repeated runs on simulation presets.

use std::path::Path;
use std::time::Instant;

use ccot::simulate::{cce, generate_lbm, LbmConfig};

use crate::error::Result;
use crate::run::{co_cluster, Method, MethodSettings};

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub presets: Vec<String>,
    pub methods: Vec<Method>,
    pub repeats: usize,
    /// Repeat `r` uses seed `seed + r` for both the data and the method.
    pub seed: u64,
    pub settings: MethodSettings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub preset: String,
    pub method: Method,
    pub runs: usize,
    pub failures: usize,
    /// Over successful runs; `None` when there were none.
    pub cce_mean: Option<f64>,
    pub cce_sd: Option<f64>,
    /// Over all runs; a failed run counts as wrong.
    pub correct_fraction: f64,
    pub mean_seconds: Option<f64>,
    pub first_error: Option<String>,
}

/// Sample mean and standard deviation (`n - 1` denominator; 0 for one value).
pub fn mean_sd(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}

struct Outcome {
    cce: f64,
    correct: bool,
    seconds: f64,
}

fn one_run(cfg: &LbmConfig, method: Method, settings: &MethodSettings) -> Result<Outcome> {
    let (a, truth) = generate_lbm(cfg)?;
    let start = Instant::now();
    let r = co_cluster(&a, method, &settings.clone().with_seed(cfg.seed))?;
    let seconds = start.elapsed().as_secs_f64();
    Ok(Outcome {
        cce: cce(&truth.row_labels, &r.row_partition.labels, &truth.col_labels, &r.col_partition.labels)?,
        correct: (r.g, r.m) == (cfg.g, cfg.m),
        seconds,
    })
}

/// One row per preset and method. Run errors are counted, not raised; only
/// unknown presets or invalid settings abort.
pub fn bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    for &method in &cfg.methods {
        cfg.settings.validate(method)?;
    }
    let mut rows = Vec::new();
    for name in &cfg.presets {
        let preset = LbmConfig::preset(name)?;
        for &method in &cfg.methods {
            let (mut cces, mut secs, mut correct) = (Vec::new(), Vec::new(), 0);
            let mut first_error = None;
            for r in 0..cfg.repeats {
                let lbm = preset.clone().with_seed(cfg.seed + r as u64);
                match one_run(&lbm, method, &cfg.settings) {
                    Ok(o) => {
                        cces.push(o.cce);
                        secs.push(o.seconds);
                        correct += o.correct as usize;
                    }
                    Err(e) => {
                        first_error.get_or_insert(e.to_string());
                    }
                }
            }
            let stats = mean_sd(&cces);
            rows.push(BenchRow {
                preset: name.clone(),
                method,
                runs: cfg.repeats,
                failures: cfg.repeats - cces.len(),
                cce_mean: stats.map(|s| s.0),
                cce_sd: stats.map(|s| s.1),
                correct_fraction: if cfg.repeats == 0 { 0.0 } else { correct as f64 / cfg.repeats as f64 },
                mean_seconds: mean_sd(&secs).map(|s| s.0),
                first_error,
            });
        }
    }
    Ok(rows)
}

pub fn write_report(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "preset",
        "method",
        "runs",
        "failures",
        "cce_mean",
        "cce_sd",
        "correct_gm_fraction",
        "mean_seconds",
        "first_error",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.preset.clone(),
            r.method.to_string(),
            r.runs.to_string(),
            r.failures.to_string(),
            opt(r.cce_mean),
            opt(r.cce_sd),
            r.correct_fraction.to_string(),
            opt(r.mean_seconds),
            r.first_error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(crate::error::io_error(path))
}
