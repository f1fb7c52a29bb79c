//! Entropic Gromov-Wasserstein couplings and the two-input barycenter.
//!
//! The quartic contraction `sum L(Ka[i,k], Kb[j,l]) g[i,j] g[k,l]` is evaluated
//! through the separable form `L(a, b) = f1(a) + f2(b) - h1(a) h2(b)`, which
//! turns it into three matrix products. Couplings are found by the usual
//! fixed-point scheme: linearize the contraction around the current plan and
//! hand the resulting pseudo-cost to the Sinkhorn solver.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::data::{seeded_rng, CostMatrix, EmpiricalMeasure};
use crate::error::{Error, Result};
use crate::sinkhorn::{self, Coupling, SinkhornConfig};

/// Square similarity (or distance) matrix, symmetric within `1e-10`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    values: Array2<f64>,
}

impl SimilarityMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (r, c) = values.dim();
        if r != c {
            return Err(Error::ShapeMismatch {
                expected: (r, r),
                got: (r, c),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        for i in 0..r {
            for j in 0..i {
                if (values[[i, j]] - values[[j, i]]).abs() > 1e-10 {
                    return Err(Error::InvalidInput(format!(
                        "similarity matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same matrix with points relabeled: entry `(i, j)` becomes `(perm[i], perm[j])`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let k = self.len();
        Self {
            values: Array2::from_shape_fn((k, k), |(i, j)| self.values[[perm[i], perm[j]]]),
        }
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Loss {
    /// `L(a, b) = (a - b)^2 / 2`.
    #[default]
    Squared,
    /// `L(a, b) = a ln(a / b) - a + b`, strictly positive inputs only.
    KullbackLeibler,
}

impl Loss {
    pub fn eval(self, a: f64, b: f64) -> f64 {
        match self {
            Loss::Squared => 0.5 * (a - b) * (a - b),
            Loss::KullbackLeibler => a * (a / b).ln() - a + b,
        }
    }

    fn f1(self, a: f64) -> f64 {
        match self {
            Loss::Squared => 0.5 * a * a,
            Loss::KullbackLeibler => a * a.ln() - a,
        }
    }

    fn f2(self, b: f64) -> f64 {
        match self {
            Loss::Squared => 0.5 * b * b,
            Loss::KullbackLeibler => b,
        }
    }

    fn h1(self, a: f64) -> f64 {
        a
    }

    fn h2(self, b: f64) -> f64 {
        match self {
            Loss::Squared => b,
            Loss::KullbackLeibler => b.ln(),
        }
    }

    fn check(self, k: &SimilarityMatrix) -> Result<()> {
        if self == Loss::KullbackLeibler && k.values.iter().any(|&v| v <= 0.0) {
            return Err(Error::InvalidInput(
                "Kullback-Leibler loss needs strictly positive similarities".into(),
            ));
        }
        Ok(())
    }
}

impl std::str::FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "squared" | "square" | "l2" => Ok(Loss::Squared),
            "kl" | "kullback_leibler" | "kullback-leibler" => Ok(Loss::KullbackLeibler),
            other => Err(Error::InvalidInput(format!("unknown loss {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GWConfig {
    /// Entropic sharpness for the inner transport problems.
    pub lambda: f64,
    pub loss: Loss,
    pub eps_r: f64,
    pub eps_c: f64,
    /// Barycenter support size; `None` means `min(n, d)`.
    pub barycenter_size: Option<usize>,
    /// Block-coordinate sweeps of the barycenter.
    pub outer_iter: usize,
    /// Linearize-and-solve rounds per coupling update.
    pub coupling_iter: usize,
    /// Stop a coupling update once the plan moves less than this (L1).
    pub coupling_tol: f64,
    /// Stop the barycenter once the relative objective change drops below this.
    pub objective_tol: f64,
    /// Marginal tolerance of the inner solves during the sweeps; the final
    /// couplings are re-solved at `inner.tol`.
    pub sweep_tol: f64,
    /// Inner Sinkhorn settings; its `lambda` is overridden by `lambda` above.
    pub inner: SinkhornConfig,
    pub seed: u64,
}

impl Default for GWConfig {
    fn default() -> Self {
        Self {
            lambda: 500.0,
            loss: Loss::Squared,
            eps_r: 0.5,
            eps_c: 0.5,
            barycenter_size: None,
            outer_iter: 50,
            coupling_iter: 3,
            coupling_tol: 1e-7,
            objective_tol: 1e-8,
            sweep_tol: 1e-6,
            // Near-permutation plans mix slowly; cap each solve and report it.
            inner: SinkhornConfig {
                max_iter: 1000,
                ..SinkhornConfig::default()
            },
            seed: 0,
        }
    }
}

impl GWConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if self.eps_r < 0.0 || self.eps_c < 0.0 || (self.eps_r + self.eps_c - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "barycenter weights must be nonnegative and sum to 1, got ({}, {})",
                self.eps_r, self.eps_c
            )));
        }
        if matches!(self.barycenter_size, Some(s) if s < 2) {
            return Err(Error::InvalidInput("barycenter size must be >= 2".into()));
        }
        if self.outer_iter == 0 || self.coupling_iter == 0 {
            return Err(Error::InvalidInput("iteration counts must be >= 1".into()));
        }
        self.inner.validate()
    }

    fn sinkhorn(&self) -> SinkhornConfig {
        SinkhornConfig {
            lambda: self.lambda,
            ..self.inner
        }
    }
}

fn check_coupling_shape(ka: &SimilarityMatrix, kb: &SimilarityMatrix, gamma: ArrayView2<'_, f64>) -> Result<()> {
    let expected = (ka.len(), kb.len());
    if gamma.dim() != expected {
        return Err(Error::ShapeMismatch {
            expected,
            got: gamma.dim(),
        });
    }
    Ok(())
}

/// `f1(Ka) p 1^T + 1 q^T f2(Kb)^T`, the part of the pseudo-cost that only
/// depends on the marginals `p`, `q`.
fn marginal_cost(
    ka: ArrayView2<'_, f64>,
    kb: ArrayView2<'_, f64>,
    p: ArrayView1<'_, f64>,
    q: ArrayView1<'_, f64>,
    loss: Loss,
) -> Array2<f64> {
    let left = ka.mapv(|a| loss.f1(a)).dot(&p);
    let right = kb.mapv(|b| loss.f2(b)).dot(&q);
    Array2::from_shape_fn((ka.nrows(), kb.nrows()), |(i, j)| left[i] + right[j])
}

/// Pseudo-cost `C(gamma) = f1(Ka) p 1^T + 1 q^T f2(Kb)^T - h1(Ka) gamma h2(Kb)^T`,
/// with `p`, `q` the marginals of `gamma`.
fn pseudo_cost(
    ka: ArrayView2<'_, f64>,
    kb: ArrayView2<'_, f64>,
    gamma: ArrayView2<'_, f64>,
    p: ArrayView1<'_, f64>,
    q: ArrayView1<'_, f64>,
    loss: Loss,
) -> Array2<f64> {
    let mut cost = marginal_cost(ka, kb, p, q, loss);
    let h1 = ka.mapv(|a| loss.h1(a));
    let h2 = kb.mapv(|b| loss.h2(b));
    let cross = h1.dot(&gamma).dot(&h2.t());
    cost -= &cross;
    cost
}

/// Gromov-Wasserstein contraction of `gamma` between `Ka` and `Kb`.
pub fn gw_cost(ka: &SimilarityMatrix, kb: &SimilarityMatrix, gamma: ArrayView2<'_, f64>, loss: Loss) -> Result<f64> {
    check_coupling_shape(ka, kb, gamma)?;
    loss.check(ka)?;
    loss.check(kb)?;
    let p = gamma.sum_axis(Axis(1));
    let q = gamma.sum_axis(Axis(0));
    let cost = pseudo_cost(ka.values(), kb.values(), gamma, p.view(), q.view(), loss);
    Ok(Zip::from(&cost).and(gamma).fold(0.0, |acc, &c, &g| acc + c * g))
}

fn to_cost_matrix(mut c: Array2<f64>) -> Result<CostMatrix> {
    // The contraction is nonnegative for a nonnegative loss; clear round-off.
    c.mapv_inplace(|v| v.max(0.0));
    CostMatrix::new(c)
}

/// Entropic GW objective `Gamma(gamma) - E(gamma) / lambda`.
pub fn gw_objective(ka: &SimilarityMatrix, kb: &SimilarityMatrix, gamma: ArrayView2<'_, f64>, loss: Loss, lambda: f64) -> Result<f64> {
    Ok(gw_cost(ka, kb, gamma, loss)? - sinkhorn::entropy(gamma) / lambda)
}

/// Coupling returned by a GW solve, with convergence bookkeeping.
#[derive(Debug, Clone)]
pub struct GwCoupling {
    /// Final inner Sinkhorn solution; `coupling.gamma` is the plan.
    pub coupling: Coupling,
    pub rounds: usize,
    /// L1 change of the plan in the last round.
    pub last_change: f64,
    pub converged: bool,
}

/// Entropic GW coupling between `(Ka, mu_a)` and `(Kb, mu_b)`, started from
/// the independent coupling `mu_a mu_b^T`.
pub fn entropic_gw_coupling(
    ka: &SimilarityMatrix,
    kb: &SimilarityMatrix,
    mu_a: &EmpiricalMeasure,
    mu_b: &EmpiricalMeasure,
    cfg: &GWConfig,
) -> Result<GwCoupling> {
    cfg.validate()?;
    let start = independent(mu_a, mu_b);
    gw_coupling_from(ka, kb, mu_a, mu_b, cfg, start.view(), None)
}

fn independent(mu_a: &EmpiricalMeasure, mu_b: &EmpiricalMeasure) -> Array2<f64> {
    let a = mu_a.weights();
    let b = mu_b.weights();
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

fn gw_coupling_from(
    ka: &SimilarityMatrix,
    kb: &SimilarityMatrix,
    mu_a: &EmpiricalMeasure,
    mu_b: &EmpiricalMeasure,
    cfg: &GWConfig,
    start: ArrayView2<'_, f64>,
    warm_log_beta: Option<ArrayView1<'_, f64>>,
) -> Result<GwCoupling> {
    check_coupling_shape(ka, kb, start)?;
    if mu_a.len() != ka.len() || mu_b.len() != kb.len() {
        return Err(Error::DimensionMismatch {
            expected: ka.len(),
            got: mu_a.len(),
        });
    }
    loss_check(cfg.loss, ka, kb)?;
    let inner = cfg.sinkhorn();
    let mut gamma = start.to_owned();
    let mut warm: Option<Array1<f64>> = warm_log_beta.map(|w| w.to_owned());
    let mut result = None;
    let mut last_change = f64::INFINITY;
    let mut rounds = 0;
    while rounds < cfg.coupling_iter {
        rounds += 1;
        let cost = to_cost_matrix(pseudo_cost(
            ka.values(),
            kb.values(),
            gamma.view(),
            mu_a.weights(),
            mu_b.weights(),
            cfg.loss,
        ))?;
        let next = sinkhorn::solve_warm(&cost, mu_a, mu_b, &inner, warm.as_ref().map(|w| w.view()))?;
        last_change = Zip::from(&next.gamma).and(&gamma).fold(0.0, |acc, &x, &y| acc + (x - y).abs());
        gamma.assign(&next.gamma);
        warm = Some(next.log_beta.clone());
        result = Some(next);
        if last_change <= cfg.coupling_tol {
            break;
        }
    }
    let coupling = result.expect("at least one round");
    let converged = coupling.converged && last_change <= cfg.coupling_tol;
    Ok(GwCoupling {
        coupling,
        rounds,
        last_change,
        converged,
    })
}

fn loss_check(loss: Loss, ka: &SimilarityMatrix, kb: &SimilarityMatrix) -> Result<()> {
    loss.check(ka)?;
    loss.check(kb)
}

#[derive(Debug, Clone)]
pub struct BarycenterResult {
    pub k: SimilarityMatrix,
    /// Alignment of the barycenter (rows) with the row space (columns).
    pub gamma_r: Coupling,
    /// Alignment of the barycenter (rows) with the column space (columns).
    pub gamma_c: Coupling,
    pub beta_r: Array1<f64>,
    pub beta_c: Array1<f64>,
    /// `sum_i eps_i (Gamma_i - E(gamma_i) / lambda)` after each sweep.
    pub objective_trace: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

fn random_symmetric(size: usize, lo: f64, hi: f64, seed: u64) -> Array2<f64> {
    let mut rng = seeded_rng(seed, 0);
    let mut k = Array2::zeros((size, size));
    for i in 0..size {
        for j in 0..=i {
            let v = if hi > lo { rng.random_range(lo..hi) } else { lo };
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    k
}

/// Closed-form barycenter for the squared loss given both alignments.
fn update_barycenter(
    cfg: &GWConfig,
    kr: &SimilarityMatrix,
    kc: &SimilarityMatrix,
    gamma_r: &Array2<f64>,
    gamma_c: &Array2<f64>,
    mu: &EmpiricalMeasure,
) -> Array2<f64> {
    let w = mu.weights();
    let mut num = gamma_r.dot(&kr.values()).dot(&gamma_r.t()) * cfg.eps_r;
    num.scaled_add(cfg.eps_c, &gamma_c.dot(&kc.values()).dot(&gamma_c.t()));
    Zip::indexed(&mut num).for_each(|(i, j), v| *v /= w[i] * w[j]);
    // Symmetrize away round-off.
    let t = num.t().to_owned();
    (num + t) * 0.5
}

/// Entropic GW barycenter of `Kr` (rows) and `Kc` (columns) by block-coordinate
/// descent: re-align both couplings to the current barycenter, then update the
/// barycenter in closed form.
///
/// A coupling update is only accepted when it does not increase its block of
/// the objective, so the trace is monotone up to Sinkhorn tolerance.
pub fn barycenter(kr: &SimilarityMatrix, kc: &SimilarityMatrix, cfg: &GWConfig) -> Result<BarycenterResult> {
    cfg.validate()?;
    if cfg.loss != Loss::Squared {
        return Err(Error::InvalidInput(
            "barycenter update is implemented for the squared loss".into(),
        ));
    }
    let (n, d) = (kr.len(), kc.len());
    let size = cfg.barycenter_size.unwrap_or(n.min(d));
    if size < 2 {
        return Err(Error::InvalidInput("barycenter size must be >= 2".into()));
    }
    let mu = EmpiricalMeasure::uniform(size);
    let mu_r = EmpiricalMeasure::uniform(n);
    let mu_c = EmpiricalMeasure::uniform(d);

    let (lo, hi) = kr
        .values()
        .iter()
        .chain(kc.values().iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let mut k = SimilarityMatrix::new(random_symmetric(size, lo, hi, cfg.seed))?;

    let block = |k: &SimilarityMatrix, ki: &SimilarityMatrix, g: &Array2<f64>| -> Result<f64> {
        gw_objective(k, ki, g.view(), cfg.loss, cfg.lambda)
    };

    let mut loose = cfg.clone();
    loose.inner.tol = cfg.inner.tol.max(cfg.sweep_tol);
    let mut cr = entropic_gw_coupling(&k, kr, &mu, &mu_r, &loose)?;
    let mut cc = entropic_gw_coupling(&k, kc, &mu, &mu_c, &loose)?;
    k = SimilarityMatrix::new(update_barycenter(cfg, kr, kc, &cr.coupling.gamma, &cc.coupling.gamma, &mu))?;
    let objective = |k: &SimilarityMatrix, cr: &GwCoupling, cc: &GwCoupling| -> Result<f64> {
        Ok(cfg.eps_r * block(k, kr, &cr.coupling.gamma)? + cfg.eps_c * block(k, kc, &cc.coupling.gamma)?)
    };
    let mut trace = vec![objective(&k, &cr, &cc)?];
    let mut converged = false;
    let mut sweeps = 1;

    while sweeps < cfg.outer_iter {
        sweeps += 1;
        for (ki, mu_i, current) in [(kr, &mu_r, &mut cr), (kc, &mu_c, &mut cc)] {
            let before = block(&k, ki, &current.coupling.gamma)?;
            let candidate = gw_coupling_from(
                &k,
                ki,
                &mu,
                mu_i,
                &loose,
                current.coupling.gamma.view(),
                Some(current.coupling.log_beta.view()),
            )?;
            if block(&k, ki, &candidate.coupling.gamma)? <= before {
                *current = candidate;
            }
        }
        k = SimilarityMatrix::new(update_barycenter(cfg, kr, kc, &cr.coupling.gamma, &cc.coupling.gamma, &mu))?;
        let obj = objective(&k, &cr, &cc)?;
        let prev = *trace.last().expect("non-empty trace");
        trace.push(obj);
        if (prev - obj).abs() <= cfg.objective_tol * prev.abs().max(1e-300) {
            converged = true;
            break;
        }
    }

    // Final alignment at full precision; this is where beta_r, beta_c come from.
    for (ki, mu_i, current) in [(kr, &mu_r, &mut cr), (kc, &mu_c, &mut cc)] {
        *current = gw_coupling_from(
            &k,
            ki,
            &mu,
            mu_i,
            cfg,
            current.coupling.gamma.view(),
            Some(current.coupling.log_beta.view()),
        )?;
    }
    trace.push(objective(&k, &cr, &cc)?);

    Ok(BarycenterResult {
        k,
        beta_r: cr.coupling.beta.clone(),
        beta_c: cc.coupling.beta.clone(),
        gamma_r: cr.coupling,
        gamma_c: cc.coupling,
        objective_trace: trace,
        sweeps,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn naive_gw(ka: &Array2<f64>, kb: &Array2<f64>, g: &Array2<f64>, loss: Loss) -> f64 {
        let (n, m) = g.dim();
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..m {
                for k in 0..n {
                    for l in 0..m {
                        s += loss.eval(ka[[i, k]], kb[[j, l]]) * g[[i, j]] * g[[k, l]];
                    }
                }
            }
        }
        s
    }

    fn sim(v: Array2<f64>) -> SimilarityMatrix {
        SimilarityMatrix::new(v).unwrap()
    }

    #[test]
    fn gw_cost_examples() {
        let k = sim(array![[0.0, 1.0, 2.0], [1.0, 0.0, 1.5], [2.0, 1.5, 0.0]]);
        let diag = Array2::from_diag(&Array1::from_elem(3, 1.0 / 3.0));
        assert_eq!(gw_cost(&k, &k, diag.view(), Loss::Squared).unwrap(), 0.0);
        let v = gw_cost(&sim(array![[0.0]]), &sim(array![[1.0]]), array![[1.0]].view(), Loss::Squared).unwrap();
        assert_eq!(v, 0.5);
    }

    #[test]
    fn gw_cost_matches_naive_loop() {
        let ka = array![[0.0, 0.7, 1.9], [0.7, 0.2, 0.4], [1.9, 0.4, 1.1]];
        let kb = array![
            [1.0, 0.3, 0.5, 0.9],
            [0.3, 0.8, 0.6, 0.2],
            [0.5, 0.6, 0.1, 0.4],
            [0.9, 0.2, 0.4, 0.7]
        ];
        let g = array![[0.1, 0.05, 0.08, 0.1], [0.02, 0.2, 0.03, 0.08], [0.1, 0.02, 0.12, 0.1]];
        for loss in [Loss::Squared, Loss::KullbackLeibler] {
            let ka = if loss == Loss::KullbackLeibler { ka.mapv(|x| x + 0.1) } else { ka.clone() };
            let fast = gw_cost(&sim(ka.clone()), &sim(kb.clone()), g.view(), loss).unwrap();
            let slow = naive_gw(&ka, &kb, &g, loss);
            assert!((fast - slow).abs() < 1e-10, "{loss:?}: {fast} vs {slow}");
        }
    }

    #[test]
    fn kl_loss_needs_positive_entries() {
        let k = sim(array![[0.0, 1.0], [1.0, 1.0]]);
        let g = Array2::from_elem((2, 2), 0.25);
        assert!(gw_cost(&k, &k, g.view(), Loss::KullbackLeibler).is_err());
        assert!("tv".parse::<Loss>().is_err());
        assert_eq!("kl".parse::<Loss>().unwrap(), Loss::KullbackLeibler);
    }

    #[test]
    fn single_point_spaces() {
        let cfg = GWConfig::default();
        let c = entropic_gw_coupling(
            &sim(array![[0.3]]),
            &sim(array![[0.9]]),
            &EmpiricalMeasure::uniform(1),
            &EmpiricalMeasure::uniform(1),
            &cfg,
        )
        .unwrap();
        assert!((c.coupling.gamma[[0, 0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn optimizer_no_worse_than_independent_start() {
        let k = sim(array![
            [0.0, 1.0, 2.5, 3.0],
            [1.0, 0.0, 1.2, 2.0],
            [2.5, 1.2, 0.0, 0.7],
            [3.0, 2.0, 0.7, 0.0]
        ]);
        let mu = EmpiricalMeasure::uniform(4);
        let cfg = GWConfig {
            lambda: 200.0,
            ..GWConfig::default()
        };
        let c = entropic_gw_coupling(&k, &k, &mu, &mu, &cfg).unwrap();
        let start = independent(&mu, &mu);
        let got = gw_cost(&k, &k, c.coupling.gamma.view(), Loss::Squared).unwrap();
        let init = gw_cost(&k, &k, start.view(), Loss::Squared).unwrap();
        assert!(got <= init, "{got} > {init}");
    }

    #[test]
    fn rejects_bad_weights() {
        let k = sim(array![[0.0, 1.0], [1.0, 0.0]]);
        let cfg = GWConfig {
            eps_r: 0.7,
            eps_c: 0.7,
            ..GWConfig::default()
        };
        assert!(barycenter(&k, &k, &cfg).is_err());
    }

    #[test]
    fn asymmetric_similarity_is_rejected() {
        assert!(SimilarityMatrix::new(array![[0.0, 1.0], [2.0, 0.0]]).is_err());
        assert!(SimilarityMatrix::new(array![[0.0, 1.0]]).is_err());
    }
}
