//! Shared numeric types: the data matrix, empirical measures, cost matrices,
//! permutation-tracking sort and seeded row sampling.
//!
//! All randomness in the crate flows through [`seeded_rng`], a ChaCha8 stream
//! cipher generator seeded with `seed_from_u64`. ChaCha output is defined
//! bit-for-bit independently of platform and word size, so a `(seed, stream)`
//! pair reproduces the same draws everywhere.

use std::collections::HashSet;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Deterministic generator for `seed`, on an independent `stream`.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Dense `n x d` data matrix with row and column identifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: Array2<f64>,
    row_ids: Vec<String>,
    col_ids: Vec<String>,
}

impl DataMatrix {
    pub fn new(values: Array2<f64>, row_ids: Vec<String>, col_ids: Vec<String>) -> Result<Self> {
        let (n, d) = values.dim();
        if n < 2 || d < 2 {
            return Err(Error::InvalidInput(format!(
                "data matrix must be at least 2x2, got {n}x{d}"
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        if row_ids.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: row_ids.len(),
            });
        }
        if col_ids.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: col_ids.len(),
            });
        }
        check_unique(&row_ids, "row")?;
        check_unique(&col_ids, "column")?;
        Ok(Self {
            values,
            row_ids,
            col_ids,
        })
    }

    /// Wraps a matrix with generated identifiers `r0..` and `c0..`.
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        let (n, d) = values.dim();
        let row_ids = (0..n).map(|i| format!("r{i}")).collect();
        let col_ids = (0..d).map(|j| format!("c{j}")).collect();
        Self::new(values, row_ids, col_ids)
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn col_ids(&self) -> &[String] {
        &self.col_ids
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn transpose(&self) -> Self {
        Self {
            values: self.values.t().to_owned(),
            row_ids: self.col_ids.clone(),
            col_ids: self.row_ids.clone(),
        }
    }

    /// Sub-matrix made of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            values: self.values.select(Axis(0), rows),
            row_ids: rows.iter().map(|&r| self.row_ids[r].clone()).collect(),
            col_ids: self.col_ids.clone(),
        }
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }
}

fn check_unique(ids: &[String], axis: &str) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::InvalidInput(format!("duplicate {axis} id {id:?}")));
        }
    }
    Ok(())
}

/// Probability weights on a finite support.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    weights: Array1<f64>,
}

impl EmpiricalMeasure {
    pub fn uniform(len: usize) -> Self {
        assert!(len > 0, "empirical measure needs a non-empty support");
        Self {
            weights: Array1::from_elem(len, 1.0 / len as f64),
        }
    }

    pub fn new(weights: Array1<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidInput("empty measure".into()));
        }
        if let Some(pos) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidInput(format!(
                "measure weight {pos} is negative or non-finite"
            )));
        }
        let total = weights.sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "measure weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> ArrayView1<'_, f64> {
        self.weights.view()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.weights.iter().all(|&w| w > 0.0)
    }
}

/// Nonnegative finite cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    values: Array2<f64>,
}

impl CostMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "cost entry {pos} is negative or non-finite"
            )));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn transpose(&self) -> Self {
        Self {
            values: self.values.t().to_owned(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(&self.values * factor)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Median of the strictly positive entries, `None` when all entries are zero.
    pub fn median_positive(&self) -> Option<f64> {
        let mut pos: Vec<f64> = self.values.iter().copied().filter(|&v| v > 0.0).collect();
        if pos.is_empty() {
            return None;
        }
        let mid = pos.len() / 2;
        let (_, m, _) = pos.select_nth_unstable_by(mid, f64::total_cmp);
        let upper = *m;
        if pos.len() % 2 == 1 {
            Some(upper)
        } else {
            let lower = pos[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Some(0.5 * (lower + upper))
        }
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }
}

/// Squared Euclidean distances between the rows of `a` and the rows of `b`.
///
/// Entries are accumulated as `sum((a_t - b_t)^2)`, so identical vectors give
/// exact zeros and the result is exactly symmetric when `a == b`.
pub fn pairwise_sq_dist(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<CostMatrix> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.ncols(),
            got: b.ncols(),
        });
    }
    if a.ncols() == 0 {
        return Err(Error::InvalidInput("vectors must have dimension >= 1".into()));
    }
    // Contiguous copies keep the inner loop on unit-stride slices even when a
    // caller hands in a transposed view.
    let a = a.as_standard_layout();
    let b = b.as_standard_layout();
    let mut out = Array2::zeros((a.nrows(), b.nrows()));
    for (i, ra) in a.outer_iter().enumerate() {
        let ra = ra.as_slice().expect("standard layout");
        for (j, rb) in b.outer_iter().enumerate() {
            let rb = rb.as_slice().expect("standard layout");
            out[[i, j]] = ra
                .iter()
                .zip(rb)
                .map(|(x, y)| {
                    let t = x - y;
                    t * t
                })
                .sum::<f64>();
        }
    }
    CostMatrix::new(out)
}

/// Permutation such that `v[order[0]] <= v[order[1]] <= ...`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SortPermutation {
    order: Vec<usize>,
}

impl SortPermutation {
    pub fn identity(len: usize) -> Self {
        Self {
            order: (0..len).collect(),
        }
    }

    pub fn from_order(order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; order.len()];
        for &o in &order {
            if o >= order.len() || std::mem::replace(&mut seen[o], true) {
                return Err(Error::InvalidInput("order is not a permutation".into()));
            }
        }
        Ok(Self { order })
    }

    /// Original index at each sorted position.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Sorted rank of each original index.
    pub fn ranks(&self) -> Vec<usize> {
        let mut ranks = vec![0; self.order.len()];
        for (rank, &idx) in self.order.iter().enumerate() {
            ranks[idx] = rank;
        }
        ranks
    }

    pub fn apply<T: Copy>(&self, v: &[T]) -> Vec<T> {
        self.order.iter().map(|&i| v[i]).collect()
    }

    /// Inverse of [`apply`](Self::apply): puts sorted values back in input order.
    pub fn unapply<T: Copy + Default>(&self, sorted: &[T]) -> Vec<T> {
        let mut out = vec![T::default(); sorted.len()];
        for (pos, &idx) in self.order.iter().enumerate() {
            out[idx] = sorted[pos];
        }
        out
    }
}

/// Stable ascending sort; ties keep input order.
pub fn sort_with_permutation(v: &[f64]) -> Result<(Vec<f64>, SortPermutation)> {
    if let Some(pos) = v.iter().position(|x| x.is_nan()) {
        return Err(Error::NonFinite(pos));
    }
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).expect("NaN filtered above"));
    let sorted = order.iter().map(|&i| v[i]).collect();
    Ok((sorted, SortPermutation { order }))
}

/// `k` distinct row indices out of `n`, uniformly without replacement.
pub fn sample_indices<R: rand::Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    if k > n {
        return Err(Error::InvalidInput(format!(
            "cannot sample {k} rows out of {n}"
        )));
    }
    Ok(rand::seq::index::sample(rng, n, k).into_vec())
}

/// Draws `k` distinct rows, returning the sub-matrix and the original indices.
pub fn sample_rows(a: &DataMatrix, k: usize, seed: u64) -> Result<(DataMatrix, Vec<usize>)> {
    if k < 2 {
        return Err(Error::InvalidInput(format!("sample size {k} < 2")));
    }
    let idx = sample_indices(a.nrows(), k, &mut seeded_rng(seed, 0))?;
    Ok((a.select_rows(&idx), idx))
}
