//! Gaussian latent block model generator and partition-comparison metrics.
//!
//! Block means are laid out on the grid `{0, delta, ..., (g*m - 1) * delta}`
//! and shuffled, with `delta = 4 * noise_sd` for well-separated blocks and
//! `delta = 1.5 * noise_sd` for ill-separated ones. Cluster sizes are exact
//! (largest-remainder rounding of the proportions); the order of rows and
//! columns is shuffled.

use std::collections::HashMap;

use ndarray::Array2;
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use crate::data::{seeded_rng, DataMatrix};
use crate::error::{Error, Result};

const STREAM_ROWS: u64 = 1;
const STREAM_COLS: u64 = 2;
const STREAM_MEANS: u64 = 3;
const STREAM_NOISE: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Separation {
    Well,
    Ill,
}

impl Separation {
    /// Spacing between consecutive block means, in units of the noise sd.
    pub fn spacing(self) -> f64 {
        match self {
            Separation::Well => 4.0,
            Separation::Ill => 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbmConfig {
    pub n: usize,
    pub d: usize,
    pub g: usize,
    pub m: usize,
    pub row_props: Vec<f64>,
    pub col_props: Vec<f64>,
    pub separation: Separation,
    pub noise_sd: f64,
    pub seed: u64,
}

/// `k` equal proportions.
pub fn equal_proportions(k: usize) -> Vec<f64> {
    vec![1.0 / k as f64; k]
}

/// Default unbalanced proportions for `k` clusters: `(0.3, 0.7)`,
/// `(0.2, 0.3, 0.5)`, `(0.1, 0.2, 0.3, 0.4)`, `(0.1, 0.15, 0.2, 0.25, 0.3)`,
/// and `1:2:...:k` beyond that.
pub fn unequal_proportions(k: usize) -> Vec<f64> {
    match k {
        1 => vec![1.0],
        2 => vec![0.3, 0.7],
        3 => vec![0.2, 0.3, 0.5],
        4 => vec![0.1, 0.2, 0.3, 0.4],
        5 => vec![0.1, 0.15, 0.2, 0.25, 0.3],
        _ => {
            let total = (k * (k + 1) / 2) as f64;
            (1..=k).map(|i| i as f64 / total).collect()
        }
    }
}

/// Built-in preset files, `key = value` per line.
pub const PRESETS: [(&str, &str); 4] = [
    ("D1", include_str!("../presets/d1.conf")),
    ("D2", include_str!("../presets/d2.conf")),
    ("D3", include_str!("../presets/d3.conf")),
    ("D4", include_str!("../presets/d4.conf")),
];

impl LbmConfig {
    /// One of the shipped presets `D1`..`D4` (case-insensitive).
    pub fn preset(name: &str) -> Result<Self> {
        let text = PRESETS
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, t)| *t)
            .ok_or_else(|| Error::InvalidInput(format!("unknown preset {name:?}")))?;
        Self::parse(text)
    }

    /// Parses the `key = value` preset format.
    ///
    /// Keys: `n`, `d`, `g`, `m`, `separation` (`well`|`ill`), `proportions`
    /// (`equal`|`unequal`, both axes), `row_props` / `col_props` (comma
    /// separated, override `proportions`), `noise_sd` (default 1), `seed`
    /// (default 0). `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidInput(format!("line {}: expected key = value", lineno + 1))
            })?;
            kv.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
        }
        let get_usize = |key: &str| -> Result<usize> {
            kv.get(key)
                .ok_or_else(|| Error::InvalidInput(format!("missing key {key}")))?
                .parse()
                .map_err(|_| Error::InvalidInput(format!("{key} must be an integer")))
        };
        let (n, d, g, m) = (get_usize("n")?, get_usize("d")?, get_usize("g")?, get_usize("m")?);
        let separation = match kv.get("separation").map(String::as_str) {
            Some("well") | None => Separation::Well,
            Some("ill") => Separation::Ill,
            Some(other) => return Err(Error::InvalidInput(format!("unknown separation {other:?}"))),
        };
        let balanced = match kv.get("proportions").map(String::as_str) {
            Some("equal") | None => true,
            Some("unequal") => false,
            Some(other) => return Err(Error::InvalidInput(format!("unknown proportions {other:?}"))),
        };
        let props = |key: &str, k: usize| -> Result<Vec<f64>> {
            match kv.get(key) {
                Some(list) => list
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse()
                            .map_err(|_| Error::InvalidInput(format!("{key}: bad number {s:?}")))
                    })
                    .collect(),
                None if balanced => Ok(equal_proportions(k)),
                None => Ok(unequal_proportions(k)),
            }
        };
        let noise_sd = match kv.get("noise_sd") {
            Some(v) => v
                .parse()
                .map_err(|_| Error::InvalidInput("noise_sd must be a number".into()))?,
            None => 1.0,
        };
        let seed = match kv.get("seed") {
            Some(v) => v
                .parse()
                .map_err(|_| Error::InvalidInput("seed must be an integer".into()))?,
            None => 0,
        };
        let cfg = Self {
            n,
            d,
            g,
            m,
            row_props: props("row_props", g)?,
            col_props: props("col_props", m)?,
            separation,
            noise_sd,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.g == 0 || self.m == 0 || self.n < self.g || self.d < self.m {
            return Err(Error::InvalidInput(format!(
                "need n >= g >= 1 and d >= m >= 1, got {}x{} with {}x{} clusters",
                self.n, self.d, self.g, self.m
            )));
        }
        for (props, k, axis) in [(&self.row_props, self.g, "row"), (&self.col_props, self.m, "column")] {
            if props.len() != k {
                return Err(Error::InvalidInput(format!(
                    "{axis} proportions have {} entries, expected {k}",
                    props.len()
                )));
            }
            if props.iter().any(|&p| !(p >= 0.0)) || (props.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidInput(format!(
                    "{axis} proportions must be nonnegative and sum to 1"
                )));
            }
        }
        if !(self.noise_sd > 0.0) {
            return Err(Error::InvalidInput("noise_sd must be > 0".into()));
        }
        Ok(())
    }
}

/// True partitions (labels `1..=g`, `1..=m`) and block means of a simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub row_labels: Vec<usize>,
    pub col_labels: Vec<usize>,
    pub block_means: Array2<f64>,
}

/// Cluster sizes summing to `total`, by largest-remainder rounding.
pub fn cluster_sizes(props: &[f64], total: usize) -> Vec<usize> {
    let raw: Vec<f64> = props.iter().map(|p| p * total as f64).collect();
    let mut sizes: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut by_remainder: Vec<usize> = (0..props.len()).collect();
    by_remainder.sort_by(|&a, &b| {
        let (ra, rb) = (raw[a] - raw[a].floor(), raw[b] - raw[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in by_remainder.iter().take(total.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

fn shuffled_labels(sizes: &[usize], rng: &mut impl rand::Rng) -> Vec<usize> {
    let mut labels: Vec<usize> = sizes
        .iter()
        .enumerate()
        .flat_map(|(k, &s)| std::iter::repeat_n(k + 1, s))
        .collect();
    labels.shuffle(rng);
    labels
}

/// Samples a data matrix from the Gaussian latent block model.
pub fn generate_lbm(cfg: &LbmConfig) -> Result<(DataMatrix, GroundTruth)> {
    cfg.validate()?;
    let row_sizes = cluster_sizes(&cfg.row_props, cfg.n);
    let col_sizes = cluster_sizes(&cfg.col_props, cfg.d);
    if let Some(k) = row_sizes.iter().position(|&s| s == 0) {
        return Err(Error::InvalidInput(format!("row cluster {} is empty after rounding", k + 1)));
    }
    if let Some(k) = col_sizes.iter().position(|&s| s == 0) {
        return Err(Error::InvalidInput(format!("column cluster {} is empty after rounding", k + 1)));
    }
    let row_labels = shuffled_labels(&row_sizes, &mut seeded_rng(cfg.seed, STREAM_ROWS));
    let col_labels = shuffled_labels(&col_sizes, &mut seeded_rng(cfg.seed, STREAM_COLS));

    let delta = cfg.separation.spacing() * cfg.noise_sd;
    let mut grid: Vec<f64> = (0..cfg.g * cfg.m).map(|k| k as f64 * delta).collect();
    grid.shuffle(&mut seeded_rng(cfg.seed, STREAM_MEANS));
    let block_means = Array2::from_shape_vec((cfg.g, cfg.m), grid).expect("g*m grid");

    let normal = Normal::new(0.0, cfg.noise_sd).expect("positive sd");
    let mut rng = seeded_rng(cfg.seed, STREAM_NOISE);
    let mut values = Array2::zeros((cfg.n, cfg.d));
    for ((i, j), v) in values.indexed_iter_mut() {
        *v = block_means[[row_labels[i] - 1, col_labels[j] - 1]] + normal.sample(&mut rng);
    }
    let data = DataMatrix::from_values(values)?;
    Ok((
        data,
        GroundTruth {
            row_labels,
            col_labels,
            block_means,
        },
    ))
}

fn compact(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut ids = HashMap::new();
    let out = labels
        .iter()
        .map(|l| {
            let next = ids.len();
            *ids.entry(*l).or_insert(next)
        })
        .collect();
    (out, ids.len())
}

fn contingency(a: &[usize], b: &[usize]) -> (Vec<Vec<usize>>, usize, usize) {
    let (a, ka) = compact(a);
    let (b, kb) = compact(b);
    let mut table = vec![vec![0usize; kb]; ka];
    for (&x, &y) in a.iter().zip(&b) {
        table[x][y] += 1;
    }
    (table, ka, kb)
}

fn check_lengths(a: &[usize], b: &[usize]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("empty label vectors".into()));
    }
    Ok(())
}

/// Misclassification rate under the best one-to-one matching of cluster labels.
///
/// Cluster counts may differ; members of unmatched clusters count as errors.
pub fn error_rate(truth: &[usize], est: &[usize]) -> Result<f64> {
    check_lengths(truth, est)?;
    let (table, kt, ke) = contingency(truth, est);
    let size = kt.max(ke);
    let weights = Matrix::from_fn(size, size, |(i, j)| {
        if i < kt && j < ke {
            table[i][j] as i64
        } else {
            0
        }
    });
    let (agreement, _) = kuhn_munkres(&weights);
    Ok(1.0 - agreement as f64 / truth.len() as f64)
}

/// Co-clustering error `e_r + e_c - e_r * e_c`.
pub fn cce_from_rates(e_rows: f64, e_cols: f64) -> f64 {
    e_rows + e_cols - e_rows * e_cols
}

/// Co-clustering error of estimated row and column partitions.
pub fn cce(truth_rows: &[usize], est_rows: &[usize], truth_cols: &[usize], est_cols: &[usize]) -> Result<f64> {
    Ok(cce_from_rates(error_rate(truth_rows, est_rows)?, error_rate(truth_cols, est_cols)?))
}

/// Mutual information normalized by the arithmetic mean of the two entropies.
///
/// When both partitions are a single cluster the ratio is undefined; it is
/// taken as 1.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    check_lengths(a, b)?;
    let (table, _, _) = contingency(a, b);
    // A one-to-one contingency table means equal partitions; return the
    // exact value rather than a rounded ratio of logarithms.
    let nonzero = |cells: &mut dyn Iterator<Item = usize>| cells.filter(|&c| c > 0).count();
    let bijective = table.iter().all(|r| nonzero(&mut r.iter().copied()) <= 1)
        && (0..table[0].len()).all(|j| nonzero(&mut table.iter().map(|r| r[j])) <= 1);
    if bijective {
        return Ok(1.0);
    }
    let n = a.len() as f64;
    let row: Vec<f64> = table.iter().map(|r| r.iter().sum::<usize>() as f64).collect();
    let col: Vec<f64> = (0..table[0].len())
        .map(|j| table.iter().map(|r| r[j]).sum::<usize>() as f64)
        .collect();
    let h = |m: &[f64]| -> f64 {
        m.iter()
            .filter(|&&c| c > 0.0)
            .map(|&c| -(c / n) * (c / n).ln())
            .sum()
    };
    let (ha, hb) = (h(&row), h(&col));
    let mut mi = 0.0;
    for (i, r) in table.iter().enumerate() {
        for (j, &c) in r.iter().enumerate() {
            if c > 0 {
                let p = c as f64 / n;
                mi += p * (p * n * n / (row[i] * col[j])).ln();
            }
        }
    }
    let mean = 0.5 * (ha + hb);
    if mean <= 0.0 {
        // Both single-cluster: identical as partitions.
        return Ok(1.0);
    }
    Ok((mi / mean).clamp(0.0, 1.0))
}
