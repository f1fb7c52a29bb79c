//! End-to-end co-clustering pipelines.
//!
//! [`ccot`] draws square sub-matrices, solves one transport problem per
//! sample between its rows and columns, and votes over the partitions read
//! off the sorted scaling vectors. The order of clusters along a scaling
//! vector is not stable across samples, so each sample's labels are matched
//! to the running tallies before its votes are counted. [`ccot_gw`] aligns row and column kernel
//! matrices through a Gromov-Wasserstein barycenter and reads both partitions
//! from a single run.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use rand_chacha::ChaCha8Rng;

use crate::data::{pairwise_sq_dist, sample_indices, seeded_rng, CostMatrix, DataMatrix, EmpiricalMeasure};
use crate::error::{Error, Result};
use crate::gromov::{self, GWConfig, SimilarityMatrix};
use crate::jumps::{partition_vector, Partition};
use crate::sinkhorn::{self, SinkhornConfig};

/// Candidate values tried, sharpest first, when no lambda is given.
pub const LAMBDA_GRID: [f64; 5] = [50.0, 10.0, 5.0, 1.0, 0.5];

#[derive(Debug, Clone, PartialEq)]
pub struct CcotConfig {
    /// Fixed sharpness; `None` picks from [`LAMBDA_GRID`] on the first sample.
    pub lambda: Option<f64>,
    pub n_samples: usize,
    pub seed: u64,
    /// Its `lambda` is ignored in favour of the field above.
    pub sinkhorn: SinkhornConfig,
    /// Extra samples allowed for reaching every row.
    pub max_extra_samples: usize,
}

impl Default for CcotConfig {
    fn default() -> Self {
        Self {
            lambda: None,
            n_samples: 500,
            seed: 0,
            sinkhorn: SinkhornConfig {
                normalize_cost: true,
                ..SinkhornConfig::default()
            },
            max_extra_samples: 1000,
        }
    }
}

impl CcotConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::InvalidInput("n_samples must be >= 1".into()));
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::InvalidInput(format!("lambda must be > 0, got {l}")));
            }
        }
        self.sinkhorn.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Bandwidth {
    /// Mean pairwise Euclidean distance.
    #[default]
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelConfig {
    Gaussian { sigma: Bandwidth },
    Precomputed { rows: SimilarityMatrix, cols: SimilarityMatrix },
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig::Gaussian { sigma: Bandwidth::Auto }
    }
}

/// Gaussian kernel over the rows of `points`; also returns the bandwidth used.
pub fn gaussian_kernel_matrix(points: ArrayView2<'_, f64>, sigma: Bandwidth) -> Result<(SimilarityMatrix, f64)> {
    let k = points.nrows();
    if k < 2 {
        return Err(Error::InvalidInput("kernel needs at least 2 points".into()));
    }
    let d2 = pairwise_sq_dist(points, points)?.into_values();
    let sigma = match sigma {
        Bandwidth::Fixed(s) if s > 0.0 && s.is_finite() => s,
        Bandwidth::Fixed(s) => return Err(Error::InvalidInput(format!("sigma must be > 0, got {s}"))),
        Bandwidth::Auto => {
            let mut sum = 0.0;
            for i in 0..k {
                for j in 0..i {
                    sum += d2[[i, j]].sqrt();
                }
            }
            let s = sum / (k * (k - 1) / 2) as f64;
            if s <= 0.0 {
                return Err(Error::ZeroBandwidth);
            }
            s
        }
    };
    let denom = 2.0 * sigma * sigma;
    let mut kern = d2.mapv(|x| (-x / denom).exp());
    // Exact symmetry regardless of summation order.
    for i in 0..k {
        for j in 0..i {
            kern[[j, i]] = kern[[i, j]];
        }
    }
    Ok((SimilarityMatrix::new(kern)?, sigma))
}

/// Labels one sample assigned to the indices it contains.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleLabels {
    /// Original indices, aligned with `partition.labels`.
    pub indices: Vec<usize>,
    pub partition: Partition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vote {
    pub partition: Partition,
    pub modal_g: usize,
    pub retained: usize,
    /// Retained samples containing each index.
    pub coverage: Vec<usize>,
}

/// Most common value, ties toward the smaller one.
fn mode<I: IntoIterator<Item = usize>>(values: I) -> Option<usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    counts
        .into_iter()
        .fold(None, |best: Option<(usize, usize)>, (v, c)| match best {
            Some((_, bc)) if bc >= c => best,
            _ => Some((v, c)),
        })
        .map(|(v, _)| v)
}

fn retained_coverage(samples: &[SampleLabels], axis_size: usize, g: usize) -> Vec<usize> {
    let mut cov = vec![0; axis_size];
    for s in samples.iter().filter(|s| s.partition.g == g) {
        for &i in &s.indices {
            cov[i] += 1;
        }
    }
    cov
}

/// Label permutation for one sample that best agrees with `tallies`
/// (`axis_size x g`, votes so far); ties keep a label unchanged.
fn align(sample: &SampleLabels, tallies: &[usize], g: usize) -> Vec<usize> {
    let mut agree = vec![0i64; g * g];
    for (&i, &l) in sample.indices.iter().zip(&sample.partition.labels) {
        for t in 0..g {
            agree[(l - 1) * g + t] += tallies[i * g + t] as i64;
        }
    }
    let bonus = g as i64 + 1;
    let weights = Matrix::from_fn(g, g, |(a, b)| agree[a * g + b] * bonus + i64::from(a == b));
    let (_, map) = kuhn_munkres(&weights);
    map
}

/// Modal cluster count, then a per-index vote over the samples that found
/// it, each matched to the tallies of those before it.
pub fn majority_vote(samples: &[SampleLabels], axis_size: usize) -> Result<Vote> {
    let modal_g = mode(samples.iter().map(|s| s.partition.g))
        .ok_or_else(|| Error::InvalidInput("no samples to vote over".into()))?;
    let kept: Vec<&SampleLabels> = samples.iter().filter(|s| s.partition.g == modal_g).collect();
    let mut counts = vec![0usize; axis_size * modal_g];
    let mut coverage = vec![0usize; axis_size];
    for s in &kept {
        if s.indices.len() != s.partition.labels.len() {
            return Err(Error::DimensionMismatch {
                expected: s.indices.len(),
                got: s.partition.labels.len(),
            });
        }
        if let Some(&i) = s.indices.iter().find(|&&i| i >= axis_size) {
            return Err(Error::InvalidInput(format!("index {i} outside axis of size {axis_size}")));
        }
        let map = align(s, &counts, modal_g);
        for (&i, &l) in s.indices.iter().zip(&s.partition.labels) {
            counts[i * modal_g + map[l - 1]] += 1;
            coverage[i] += 1;
        }
    }
    if let Some(i) = coverage.iter().position(|&c| c == 0) {
        return Err(Error::CoverageViolation(i));
    }
    let raw: Vec<usize> = (0..axis_size)
        .map(|i| {
            let row = &counts[i * modal_g..(i + 1) * modal_g];
            let best = row.iter().copied().max().unwrap_or(0);
            row.iter().position(|&c| c == best).unwrap_or(0) + 1
        })
        .collect();
    Ok(Vote {
        partition: compact(raw),
        modal_g,
        retained: kept.len(),
        coverage,
    })
}

/// Renumbers labels to `1..=g'` keeping their order, dropping empty ones.
fn compact(labels: Vec<usize>) -> Partition {
    let g = labels.iter().copied().max().unwrap_or(0);
    let mut used = vec![false; g + 1];
    for &l in &labels {
        used[l] = true;
    }
    let mut map = vec![0; g + 1];
    let mut next = 0;
    for l in 1..=g {
        if used[l] {
            next += 1;
            map[l] = next;
        }
    }
    Partition {
        labels: labels.iter().map(|&l| map[l]).collect(),
        g: next,
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    /// Sorted log scaling vectors the partitions were read from (first
    /// retained sample for the sampled pipeline).
    pub sorted_row_signal: Vec<f64>,
    pub sorted_col_signal: Vec<f64>,
    pub lambda: f64,
    /// `(g, m)` found per converged sample.
    pub count_histogram: Vec<((usize, usize), usize)>,
    pub samples_drawn: usize,
    pub samples_converged: usize,
    pub rows_retained: usize,
    pub cols_retained: usize,
    pub row_coverage: Vec<usize>,
    pub col_coverage: Vec<usize>,
    pub sinkhorn_iterations: Vec<usize>,
    pub barycenter_runs: usize,
    pub objective_trace: Vec<f64>,
    pub sigma_rows: Option<f64>,
    pub sigma_cols: Option<f64>,
    pub converged: bool,
}

impl Diagnostics {
    fn swapped(mut self) -> Self {
        std::mem::swap(&mut self.sorted_row_signal, &mut self.sorted_col_signal);
        std::mem::swap(&mut self.rows_retained, &mut self.cols_retained);
        std::mem::swap(&mut self.row_coverage, &mut self.col_coverage);
        std::mem::swap(&mut self.sigma_rows, &mut self.sigma_cols);
        for ((g, m), _) in &mut self.count_histogram {
            std::mem::swap(g, m);
        }
        self.count_histogram.sort();
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoClusterResult {
    pub row_partition: Partition,
    pub col_partition: Partition,
    pub g: usize,
    pub m: usize,
    pub diagnostics: Diagnostics,
}

impl CoClusterResult {
    fn new(row_partition: Partition, col_partition: Partition, diagnostics: Diagnostics) -> Self {
        Self {
            g: row_partition.g,
            m: col_partition.g,
            row_partition,
            col_partition,
            diagnostics,
        }
    }

    fn transposed(self) -> Self {
        Self::new(self.col_partition, self.row_partition, self.diagnostics.swapped())
    }
}

fn log_signal(v: &Array1<f64>) -> Vec<f64> {
    v.iter().map(|x| x.ln()).collect()
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Squared distances between the rows and the columns of a square block.
fn row_column_cost(d: ArrayView2<'_, f64>) -> Result<CostMatrix> {
    let row_sq = d.map_axis(Axis(1), |r| r.dot(&r));
    let col_sq = d.map_axis(Axis(0), |c| c.dot(&c));
    let mut m = d.dot(&d) * -2.0;
    for ((i, j), v) in m.indexed_iter_mut() {
        *v = (*v + row_sq[i] + col_sq[j]).max(0.0);
    }
    CostMatrix::new(m)
}

struct SampleOutcome {
    rows: Partition,
    cols: Partition,
    row_signal: Vec<f64>,
    col_signal: Vec<f64>,
    converged: bool,
    iterations: usize,
}

fn solve_block(block: ArrayView2<'_, f64>, cfg: &SinkhornConfig) -> Result<SampleOutcome> {
    let m = row_column_cost(block)?;
    let k = block.nrows();
    let mu = EmpiricalMeasure::uniform(k);
    let coupling = sinkhorn::solve(&m, &mu, &mu, cfg)?;
    let row_signal = log_signal(&coupling.alpha);
    let col_signal = log_signal(&coupling.beta);
    let (rows, _) = partition_vector(&row_signal)?;
    let (cols, _) = partition_vector(&col_signal)?;
    Ok(SampleOutcome {
        rows,
        cols,
        row_signal,
        col_signal,
        converged: coupling.converged,
        iterations: coupling.iterations_used,
    })
}

/// Sharpest grid value that converges on `block`; falls back to the mildest.
fn select_lambda(block: ArrayView2<'_, f64>, cfg: &SinkhornConfig) -> Result<(f64, SampleOutcome)> {
    let mut last = None;
    for &lambda in &LAMBDA_GRID {
        let outcome = solve_block(block, &SinkhornConfig { lambda, ..*cfg })?;
        if outcome.converged {
            return Ok((lambda, outcome));
        }
        last = Some((lambda, outcome));
    }
    Ok(last.expect("non-empty grid"))
}

/// Co-clustering by per-sample optimal transport and majority vote.
pub fn ccot(a: &DataMatrix, cfg: &CcotConfig) -> Result<CoClusterResult> {
    cfg.validate()?;
    if a.ncols() > a.nrows() {
        return Ok(ccot(&a.transpose(), cfg)?.transposed());
    }
    let (n, d) = (a.nrows(), a.ncols());
    if d < 4 {
        return Err(Error::InvalidInput(format!(
            "need at least 4 rows and columns, got {n}x{d}"
        )));
    }
    let values = a.values();

    if n == d {
        let (lambda, out) = match cfg.lambda {
            Some(l) => (l, solve_block(values, &SinkhornConfig { lambda: l, ..cfg.sinkhorn })?),
            None => select_lambda(values, &cfg.sinkhorn)?,
        };
        if !out.converged {
            return Err(Error::NoConvergedSample);
        }
        let diagnostics = Diagnostics {
            sorted_row_signal: sorted(out.row_signal),
            sorted_col_signal: sorted(out.col_signal),
            lambda,
            count_histogram: vec![((out.rows.g, out.cols.g), 1)],
            samples_drawn: 1,
            samples_converged: 1,
            rows_retained: 1,
            cols_retained: 1,
            row_coverage: vec![1; n],
            col_coverage: vec![1; d],
            sinkhorn_iterations: vec![out.iterations],
            converged: true,
            ..Diagnostics::default()
        };
        return Ok(CoClusterResult::new(out.rows, out.cols, diagnostics));
    }

    let mut rng: ChaCha8Rng = seeded_rng(cfg.seed, 0);
    let mut lambda = cfg.lambda;
    let mut row_samples = Vec::new();
    let mut col_samples = Vec::new();
    let mut signals: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut histogram: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut iterations = Vec::new();
    let mut drawn = 0;
    let all_cols: Vec<usize> = (0..d).collect();

    loop {
        let target = if drawn < cfg.n_samples {
            cfg.n_samples
        } else {
            let g = mode(row_samples.iter().map(|s: &SampleLabels| s.partition.g));
            let uncovered: Vec<usize> = match g {
                Some(g) => retained_coverage(&row_samples, n, g)
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c == 0)
                    .map(|(i, _)| i)
                    .collect(),
                None => (0..n).collect(),
            };
            if uncovered.is_empty() {
                break;
            }
            if drawn >= cfg.n_samples + cfg.max_extra_samples {
                if row_samples.is_empty() {
                    return Err(Error::NoConvergedSample);
                }
                return Err(Error::CoverageUnreachable { rows: uncovered });
            }
            drawn + 1
        };
        while drawn < target {
            drawn += 1;
            let mut idx = sample_indices(n, d, &mut rng)?;
            idx.sort_unstable();
            let block = values.select(Axis(0), &idx);
            let out = match lambda {
                Some(l) => solve_block(block.view(), &SinkhornConfig { lambda: l, ..cfg.sinkhorn })?,
                None => {
                    let (l, out) = select_lambda(block.view(), &cfg.sinkhorn)?;
                    lambda = Some(l);
                    out
                }
            };
            iterations.push(out.iterations);
            if !out.converged {
                continue;
            }
            *histogram.entry((out.rows.g, out.cols.g)).or_default() += 1;
            if signals.is_none() {
                signals = Some((sorted(out.row_signal), sorted(out.col_signal)));
            }
            row_samples.push(SampleLabels {
                indices: idx,
                partition: out.rows,
            });
            col_samples.push(SampleLabels {
                indices: all_cols.clone(),
                partition: out.cols,
            });
        }
    }

    let rows = majority_vote(&row_samples, n)?;
    let cols = majority_vote(&col_samples, d)?;
    let (sorted_row_signal, sorted_col_signal) = signals.unwrap_or_default();
    let diagnostics = Diagnostics {
        sorted_row_signal,
        sorted_col_signal,
        lambda: lambda.unwrap_or(f64::NAN),
        count_histogram: histogram.into_iter().collect(),
        samples_drawn: drawn,
        samples_converged: row_samples.len(),
        rows_retained: rows.retained,
        cols_retained: cols.retained,
        row_coverage: rows.coverage,
        col_coverage: cols.coverage,
        sinkhorn_iterations: iterations,
        converged: true,
        ..Diagnostics::default()
    };
    Ok(CoClusterResult::new(rows.partition, cols.partition, diagnostics))
}

/// Co-clustering through a Gromov-Wasserstein barycenter of the row and
/// column kernel matrices.
pub fn ccot_gw(a: &DataMatrix, gw: &GWConfig, kernel: &KernelConfig) -> Result<CoClusterResult> {
    let (n, d) = (a.nrows(), a.ncols());
    if n < 4 || d < 4 {
        return Err(Error::InvalidInput(format!(
            "need at least 4 rows and columns, got {n}x{d}"
        )));
    }
    let (kr, kc, sigma_rows, sigma_cols) = match kernel {
        KernelConfig::Gaussian { sigma } => {
            let (kr, sr) = gaussian_kernel_matrix(a.values(), *sigma)?;
            let (kc, sc) = gaussian_kernel_matrix(a.values().t(), *sigma)?;
            (kr, kc, Some(sr), Some(sc))
        }
        KernelConfig::Precomputed { rows, cols } => {
            if rows.len() != n || cols.len() != d {
                return Err(Error::ShapeMismatch {
                    expected: (n, d),
                    got: (rows.len(), cols.len()),
                });
            }
            (rows.clone(), cols.clone(), None, None)
        }
    };
    let bary = gromov::barycenter(&kr, &kc, gw)?;
    let row_signal = log_signal(&bary.beta_r);
    let col_signal = log_signal(&bary.beta_c);
    let (rows, _) = partition_vector(&row_signal)?;
    let (cols, _) = partition_vector(&col_signal)?;
    let diagnostics = Diagnostics {
        sorted_row_signal: sorted(row_signal),
        sorted_col_signal: sorted(col_signal),
        lambda: gw.lambda,
        count_histogram: vec![((rows.g, cols.g), 1)],
        samples_drawn: 0,
        samples_converged: 0,
        rows_retained: 0,
        cols_retained: 0,
        row_coverage: vec![1; n],
        col_coverage: vec![1; d],
        sinkhorn_iterations: vec![bary.gamma_r.iterations_used, bary.gamma_c.iterations_used],
        barycenter_runs: 1,
        objective_trace: bary.objective_trace,
        sigma_rows,
        sigma_cols,
        converged: bary.converged && bary.gamma_r.converged && bary.gamma_c.converged,
    };
    Ok(CoClusterResult::new(rows, cols, diagnostics))
}

/// Mean of each co-cluster block, optionally ignoring exact zeros (missing
/// entries in sparse inputs). Empty blocks are `NaN`.
pub fn block_means(a: ArrayView2<'_, f64>, rows: &Partition, cols: &Partition, exclude_zeros: bool) -> Array2<f64> {
    let mut sum = Array2::<f64>::zeros((rows.g, cols.g));
    let mut count = Array2::<f64>::zeros((rows.g, cols.g));
    for (i, &r) in rows.labels.iter().enumerate() {
        for (j, &c) in cols.labels.iter().enumerate() {
            let v = a[[i, j]];
            if exclude_zeros && v == 0.0 {
                continue;
            }
            sum[[r - 1, c - 1]] += v;
            count[[r - 1, c - 1]] += 1.0;
        }
    }
    ndarray::Zip::from(&mut sum).and(&count).for_each(|s, &c| *s = if c > 0.0 { *s / c } else { f64::NAN });
    sum
}
