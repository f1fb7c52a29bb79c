//! Multiscale jump detection on sorted scaling vectors.
//!
//! A sorted vector is coarsened into a dyadic pyramid. At every level the
//! cells whose jump cost is a strict local maximum above a threshold are
//! suspicious. With `b` the median finest-level cost, the threshold at level
//! `s` is `b * (2^s + c * 2^(s/2))`: the cost of a smooth ramp after `s`
//! averagings plus a noise allowance.
//! A finest-level cell is reported as a jump when its ancestors stay
//! suspicious through the finer half of the pyramid; candidates that reach
//! the same confirming cell are merged into the largest step among them.
//! Jumps that would leave a segment narrower than one confirming cell are
//! dropped, smallest step first.

use crate::data::{sort_with_permutation, SortPermutation};
use crate::error::{Error, Result};

/// `F[i] = |v[i] - v[i-1]| + |v[i+1] - v[i]|`, one-sided at the ends.
pub fn jump_cost(v: &[f64]) -> Result<Vec<f64>> {
    if v.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "jump cost needs at least 3 values, got {}",
            v.len()
        )));
    }
    Ok(jump_cost_unchecked(v))
}

fn jump_cost_unchecked(v: &[f64]) -> Vec<f64> {
    let k = v.len();
    let mut f = vec![0.0; k];
    for i in 1..k {
        let d = (v[i] - v[i - 1]).abs();
        f[i - 1] += d;
        f[i] += d;
    }
    f
}

/// Pairwise averages; an odd trailing element is carried through.
pub fn coarsen(v: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = v.chunks_exact(2).map(|p| 0.5 * (p[0] + p[1])).collect();
    if v.len() % 2 == 1 {
        out.push(v[v.len() - 1]);
    }
    out
}

/// Detected jumps in a sorted vector. A jump at `p` separates ranks `< p`
/// from ranks `>= p` (zero-based), so `p` is also the size of the lower part.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct JumpList {
    pub positions: Vec<usize>,
    /// Consecutive coarser levels on which each jump stayed suspicious.
    pub scales_confirmed: Vec<usize>,
}

impl JumpList {
    pub fn cluster_count(&self) -> usize {
        self.positions.len() + 1
    }
}

/// Noise allowance `c`, in units of the median finest-level cost.
const NOISE_FACTOR: f64 = 4.0;

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = v.len() / 2;
    if v.len() % 2 == 1 {
        v[h]
    } else {
        0.5 * (v[h - 1] + v[h])
    }
}

/// Strict local maxima of `f` above `threshold`; a plateau counts once, at
/// its leftmost index.
fn suspicious(f: &[f64], threshold: f64) -> Vec<bool> {
    let k = f.len();
    let mut out = vec![false; k];
    let mut i = 0;
    while i < k {
        let mut j = i;
        while j + 1 < k && f[j + 1] == f[i] {
            j += 1;
        }
        let left_ok = i == 0 || f[i - 1] < f[i];
        let right_ok = j + 1 == k || f[j + 1] < f[i];
        if left_ok && right_ok && f[i] > threshold {
            out[i] = true;
        }
        i = j + 1;
    }
    out
}

fn pyramid(sorted: &[f64]) -> Vec<Vec<f64>> {
    let mut levels = vec![sorted.to_vec()];
    loop {
        let next = coarsen(levels.last().expect("non-empty pyramid"));
        if next.len() < 4 {
            break;
        }
        levels.push(next);
    }
    levels
}

/// Suspicious cell within one cell of `a` at this level, preferring `a`.
fn matched(sus: &[bool], a: usize) -> Option<usize> {
    [Some(a), a.checked_sub(1), Some(a + 1)]
        .into_iter()
        .flatten()
        .find(|&c| c < sus.len() && sus[c])
}

/// Detect jumps in `v` (any order; it is sorted first).
pub fn detect(v: &[f64]) -> Result<JumpList> {
    if v.len() < 4 {
        return Err(Error::InvalidInput(format!(
            "jump detection needs at least 4 values, got {}",
            v.len()
        )));
    }
    let (sorted, _) = sort_with_permutation(v)?;
    Ok(detect_sorted(&sorted))
}

/// Same as [`detect`] for input already in ascending order.
pub fn detect_sorted(v: &[f64]) -> JumpList {
    let k = v.len();
    let range = v[k - 1] - v[0];
    if k < 4 || !(range > 0.0) {
        return JumpList::default();
    }
    let levels = pyramid(v);
    let costs: Vec<Vec<f64>> = levels.iter().map(|l| jump_cost_unchecked(l)).collect();
    let base = median(&costs[0]);
    let sus: Vec<Vec<bool>> = costs
        .iter()
        .enumerate()
        .map(|(s, f)| {
            let w = (1u64 << s) as f64;
            suspicious(f, base * (w + NOISE_FACTOR * w.sqrt()))
        })
        .collect();
    let depth = levels.len() / 2;

    // Keyed by the confirming cell at `depth`, so one step seen through
    // several fine cells is reported once.
    let mut best: Vec<(usize, usize, usize)> = Vec::new(); // (key, position, scales)
    for i in (0..k).filter(|&i| sus[0][i]) {
        let mut key = i;
        let mut confirmed = 0;
        for (s, level) in sus.iter().enumerate().skip(1) {
            match matched(level, i >> s) {
                Some(c) => {
                    if s <= depth {
                        key = c;
                    }
                    confirmed += 1;
                }
                None => break,
            }
        }
        if confirmed < depth {
            continue;
        }
        let p = [i, i + 1]
            .into_iter()
            .filter(|&p| p >= 1 && p < k)
            .fold(None, |acc: Option<usize>, p| match acc {
                Some(q) if v[q] - v[q - 1] >= v[p] - v[p - 1] => Some(q),
                _ => Some(p),
            })
            .expect("k >= 4 leaves a valid neighbour");
        if v[p] - v[p - 1] <= 1e-12 * range {
            continue;
        }
        match best.iter_mut().find(|(kk, _, _)| *kk == key) {
            Some(entry) => {
                let q = entry.1;
                if v[p] - v[p - 1] > v[q] - v[q - 1] {
                    *entry = (key, p, confirmed);
                }
            }
            None => best.push((key, p, confirmed)),
        }
    }
    best.sort_by_key(|&(_, p, _)| p);
    best.dedup_by_key(|e| e.1);

    let min_width = 1usize << depth;
    let step = |p: usize| v[p] - v[p - 1];
    best.sort_by(|a, b| step(b.1).total_cmp(&step(a.1)).then(a.1.cmp(&b.1)));
    let mut kept: Vec<(usize, usize)> = Vec::new(); // (position, scales)
    for &(_, p, conf) in &best {
        let lo = kept.iter().map(|e| e.0).filter(|&q| q < p).max().unwrap_or(0);
        let hi = kept.iter().map(|e| e.0).filter(|&q| q > p).min().unwrap_or(k);
        if p - lo >= min_width && hi - p >= min_width {
            kept.push((p, conf));
        }
    }
    kept.sort_unstable();
    JumpList {
        positions: kept.iter().map(|e| e.0).collect(),
        scales_confirmed: kept.iter().map(|e| e.1).collect(),
    }
}

/// Labels in `1..=g` over original indices, ordered by ascending value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub labels: Vec<usize>,
    pub g: usize,
}

impl Partition {
    /// Validates labels and recounts `g` from them.
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        let g = labels.iter().copied().max().unwrap_or(0);
        let mut seen = vec![false; g + 1];
        for &l in &labels {
            if l == 0 {
                return Err(Error::InvalidInput("labels start at 1".into()));
            }
            seen[l] = true;
        }
        if let Some(missing) = (1..=g).find(|&l| !seen[l]) {
            return Err(Error::InvalidInput(format!("label {missing} is empty")));
        }
        Ok(Self { labels, g })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.g];
        for &l in &self.labels {
            s[l - 1] += 1;
        }
        s
    }
}

/// Label every original index by the segment its sorted rank falls into.
pub fn partition_from_jumps(perm: &SortPermutation, jl: &JumpList) -> Result<Partition> {
    let k = perm.len();
    let mut prev = 0;
    for &p in &jl.positions {
        if p <= prev || p >= k {
            return Err(Error::InvalidInput(format!(
                "jump position {p} invalid for {k} values"
            )));
        }
        prev = p;
    }
    let mut labels = vec![0; k];
    let mut label = 1;
    let mut next = jl.positions.iter().peekable();
    for (rank, &orig) in perm.order().iter().enumerate() {
        while next.peek().is_some_and(|&&p| p == rank) {
            label += 1;
            next.next();
        }
        labels[orig] = label;
    }
    Ok(Partition {
        labels,
        g: jl.positions.len() + 1,
    })
}

/// Sort, detect and label in one step.
pub fn partition_vector(v: &[f64]) -> Result<(Partition, JumpList)> {
    let (sorted, perm) = sort_with_permutation(v)?;
    if sorted.len() < 4 {
        return Err(Error::InvalidInput(format!(
            "jump detection needs at least 4 values, got {}",
            sorted.len()
        )));
    }
    let jl = detect_sorted(&sorted);
    Ok((partition_from_jumps(&perm, &jl)?, jl))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_examples() {
        assert_eq!(jump_cost(&[2.0; 5]).unwrap(), vec![0.0; 5]);
        assert_eq!(jump_cost(&[0.0, 0.0, 1.0, 1.0]).unwrap(), vec![0.0, 1.0, 1.0, 0.0]);
        assert_eq!(jump_cost(&[0.0, 1.0, 3.0, 6.0]).unwrap(), vec![1.0, 3.0, 5.0, 3.0]);
        assert!(jump_cost(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn coarsen_examples() {
        assert_eq!(coarsen(&[0.0, 0.0, 1.0, 1.0]), vec![0.0, 1.0]);
        assert_eq!(coarsen(&[1.0, 3.0, 5.0, 7.0]), vec![2.0, 6.0]);
        assert_eq!(coarsen(&[1.0, 2.0, 3.0]), vec![1.5, 3.0]);
    }

    #[test]
    fn exact_step() {
        let mut v: Vec<f64> = (0..16).map(|i| if i < 8 { 0.0 } else { 1.0 }).collect();
        v.swap(0, 12);
        v.swap(3, 9);
        let jl = detect(&v).unwrap();
        assert_eq!(jl.positions, vec![8]);
        assert_eq!(jl.cluster_count(), 2);
    }

    #[test]
    fn constant_has_no_jumps() {
        assert!(detect(&[3.5; 20]).unwrap().positions.is_empty());
        assert!(detect(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn partition_examples() {
        let jl = JumpList {
            positions: vec![2],
            scales_confirmed: vec![1],
        };
        let id = SortPermutation::identity(4);
        assert_eq!(partition_from_jumps(&id, &jl).unwrap().labels, vec![1, 1, 2, 2]);
        let rev = SortPermutation::from_order(vec![3, 2, 1, 0]).unwrap();
        assert_eq!(partition_from_jumps(&rev, &jl).unwrap().labels, vec![2, 2, 1, 1]);
        let none = partition_from_jumps(&id, &JumpList::default()).unwrap();
        assert_eq!((none.labels, none.g), (vec![1; 4], 1));
    }

    #[test]
    fn invalid_positions_are_rejected() {
        let id = SortPermutation::identity(4);
        let jl = JumpList {
            positions: vec![4],
            scales_confirmed: vec![0],
        };
        assert!(partition_from_jumps(&id, &jl).is_err());
    }
}
