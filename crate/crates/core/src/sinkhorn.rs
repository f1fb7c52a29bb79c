//! Entropy-regularized optimal transport by Sinkhorn-Knopp matrix scaling.
//!
//! Solves `min <M, gamma> - (1/lambda) E(gamma)` over couplings with prescribed
//! marginals. The minimizer factors as `diag(alpha) * xi * diag(beta)` with
//! `xi = exp(-lambda * M)`; the scaling vectors are what the co-clustering
//! pipelines read cluster structure from, so they are returned in a fixed
//! gauge (unit total mass, `|alpha|_1 == |beta|_1`).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};

use crate::data::{CostMatrix, EmpiricalMeasure};
use crate::error::{Error, Result};

/// Largest `lambda * max(M)` handled in the standard domain under
/// [`LogDomain::Auto`]. `exp(-x)` underflows near `x = 745`.
pub const AUTO_LOG_DOMAIN_THRESHOLD: f64 = 200.0;

/// Marginal violation is evaluated every this many iterations.
const CHECK_EVERY: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogDomain {
    /// Stabilized updates when `lambda * max(M)` exceeds
    /// [`AUTO_LOG_DOMAIN_THRESHOLD`], or when the standard iteration breaks down.
    #[default]
    Auto,
    Always,
    Never,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    /// Regularization sharpness: larger values approach unregularized transport.
    pub lambda: f64,
    pub max_iter: usize,
    /// Threshold on the L1 violation of the marginals.
    pub tol: f64,
    pub log_domain: LogDomain,
    /// Divide the cost by its median positive entry before solving, so that
    /// `lambda` is relative to the typical cost.
    pub normalize_cost: bool,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            max_iter: 10_000,
            tol: 1e-9,
            log_domain: LogDomain::Auto,
            normalize_cost: false,
        }
    }
}

impl SinkhornConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidInput(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidInput("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

/// Regularized optimal coupling together with its Sinkhorn factors.
#[derive(Debug, Clone)]
pub struct Coupling {
    pub gamma: Array2<f64>,
    pub alpha: Array1<f64>,
    pub beta: Array1<f64>,
    /// Gibbs kernel `exp(-lambda * M / cost_scale)`.
    pub xi: Array2<f64>,
    pub log_alpha: Array1<f64>,
    pub log_beta: Array1<f64>,
    pub iterations_used: usize,
    /// L1 violation of the row marginal plus that of the column marginal.
    pub marginal_violation: f64,
    pub converged: bool,
    pub log_domain_used: bool,
    /// Divisor applied to the cost before exponentiation (1 when not normalized).
    pub cost_scale: f64,
}

impl Coupling {
    pub fn dim(&self) -> (usize, usize) {
        self.gamma.dim()
    }

    pub fn transport_cost(&self, m: &CostMatrix) -> Result<f64> {
        transport_cost(self.gamma.view(), m)
    }

    pub fn entropy(&self) -> f64 {
        entropy(self.gamma.view())
    }
}

/// Element-wise `exp(-lambda * M)`.
pub fn gibbs_kernel(m: &CostMatrix, lambda: f64) -> Result<Array2<f64>> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!("lambda must be > 0, got {lambda}")));
    }
    let xi = m.values().mapv(|c| (-lambda * c).exp());
    check_kernel(xi.view())?;
    Ok(xi)
}

fn check_kernel(xi: ArrayView2<'_, f64>) -> Result<()> {
    if let Some(i) = xi.rows().into_iter().position(|r| r.iter().all(|&x| x == 0.0)) {
        return Err(Error::DegenerateKernel { axis: "row", index: i });
    }
    if let Some(j) = xi.columns().into_iter().position(|c| c.iter().all(|&x| x == 0.0)) {
        return Err(Error::DegenerateKernel { axis: "column", index: j });
    }
    Ok(())
}

/// Frobenius inner product `<M, gamma>`.
pub fn transport_cost(gamma: ArrayView2<'_, f64>, m: &CostMatrix) -> Result<f64> {
    if gamma.dim() != m.dim() {
        return Err(Error::ShapeMismatch {
            expected: m.dim(),
            got: gamma.dim(),
        });
    }
    Ok(Zip::from(gamma).and(m.values()).fold(0.0, |acc, &g, &c| acc + g * c))
}

/// Shannon entropy `-sum gamma log gamma`, with `0 log 0 = 0`.
pub fn entropy(gamma: ArrayView2<'_, f64>) -> f64 {
    -gamma
        .iter()
        .filter(|&&g| g > 0.0)
        .map(|&g| g * g.ln())
        .sum::<f64>()
}

/// Regularized objective `<M, gamma> - E(gamma) / lambda`.
pub fn regularized_objective(gamma: ArrayView2<'_, f64>, m: &CostMatrix, lambda: f64) -> Result<f64> {
    Ok(transport_cost(gamma, m)? - entropy(gamma) / lambda)
}

/// Solves the entropic transport problem between `mu_r` and `mu_c`.
///
/// Non-convergence within `max_iter` is not an error: the coupling comes back
/// with `converged == false` and the achieved violation.
pub fn solve(
    m: &CostMatrix,
    mu_r: &EmpiricalMeasure,
    mu_c: &EmpiricalMeasure,
    cfg: &SinkhornConfig,
) -> Result<Coupling> {
    solve_warm(m, mu_r, mu_c, cfg, None)
}

/// [`solve`] started from the column scaling `log_beta` of a previous solve.
pub fn solve_warm(
    m: &CostMatrix,
    mu_r: &EmpiricalMeasure,
    mu_c: &EmpiricalMeasure,
    cfg: &SinkhornConfig,
    warm_log_beta: Option<ArrayView1<'_, f64>>,
) -> Result<Coupling> {
    cfg.validate()?;
    let (a, b) = m.dim();
    if mu_r.len() != a {
        return Err(Error::DimensionMismatch { expected: a, got: mu_r.len() });
    }
    if mu_c.len() != b {
        return Err(Error::DimensionMismatch { expected: b, got: mu_c.len() });
    }
    if !mu_r.is_strictly_positive() || !mu_c.is_strictly_positive() {
        return Err(Error::InvalidInput("marginals must be strictly positive".into()));
    }
    if let Some(w) = warm_log_beta {
        if w.len() != b || w.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("warm start does not fit the problem".into()));
        }
    }

    let cost_scale = if cfg.normalize_cost {
        m.median_positive().unwrap_or(1.0)
    } else {
        1.0
    };
    let lambda = cfg.lambda / cost_scale;
    let use_log = match cfg.log_domain {
        LogDomain::Always => true,
        LogDomain::Never => false,
        LogDomain::Auto => lambda * m.max() > AUTO_LOG_DOMAIN_THRESHOLD,
    };

    let mut standard = None;
    if !use_log {
        let xi = m.values().mapv(|c| (-lambda * c).exp());
        match check_kernel(xi.view()) {
            Ok(()) => {
                standard = scale_standard(&xi, mu_r.weights(), mu_c.weights(), cfg, warm_log_beta);
                if standard.is_none() && cfg.log_domain == LogDomain::Never {
                    return Err(Error::InvalidInput(
                        "standard-domain scaling broke down numerically; enable log-domain mode".into(),
                    ));
                }
            }
            Err(e) if cfg.log_domain == LogDomain::Never => return Err(e),
            Err(_) => {}
        }
    }

    let (state, log_domain_used) = match standard {
        Some(s) => (s, false),
        None => (
            scale_log(m, lambda, mu_r.weights(), mu_c.weights(), cfg, warm_log_beta),
            true,
        ),
    };
    Ok(finish(m, lambda, cost_scale, mu_r, mu_c, state, log_domain_used))
}

struct ScalingState {
    log_alpha: Array1<f64>,
    log_beta: Array1<f64>,
    iterations: usize,
    converged: bool,
}

fn l1_violation(actual: &Array1<f64>, target: ArrayView1<'_, f64>) -> f64 {
    actual.iter().zip(target).map(|(x, y)| (x - y).abs()).sum()
}

/// Classic alternating scaling. Returns `None` if the iteration breaks down
/// numerically (zero or non-finite scaling).
fn scale_standard(
    xi: &Array2<f64>,
    mu_r: ArrayView1<'_, f64>,
    mu_c: ArrayView1<'_, f64>,
    cfg: &SinkhornConfig,
    warm_log_beta: Option<ArrayView1<'_, f64>>,
) -> Option<ScalingState> {
    let xi_t = xi.t().as_standard_layout().into_owned();
    let mut beta = match warm_log_beta {
        Some(w) => w.mapv(f64::exp),
        None => Array1::ones(xi.ncols()),
    };
    let mut alpha = Array1::ones(xi.nrows());
    let mut converged = false;
    let mut iterations = 0;
    loop {
        // After a column update the column marginal is exact, so the row
        // marginal `alpha * (xi beta)` measures the whole violation.
        let kb = xi.dot(&beta);
        if iterations > 0 && (iterations % CHECK_EVERY == 0 || iterations == cfg.max_iter) {
            if !alpha.iter().chain(beta.iter()).all(|&x| x.is_finite() && x > 0.0) {
                return None;
            }
            let violation: f64 = Zip::from(&alpha)
                .and(&kb)
                .and(mu_r)
                .fold(0.0, |acc, &a, &k, &mu| acc + (a * k - mu).abs());
            if violation <= cfg.tol {
                converged = true;
                break;
            }
        }
        if iterations == cfg.max_iter {
            break;
        }
        iterations += 1;
        Zip::from(&mut alpha).and(&kb).and(mu_r).for_each(|a, &k, &mu| *a = mu / k);
        let ka = xi_t.dot(&alpha);
        Zip::from(&mut beta).and(&ka).and(mu_c).for_each(|b, &k, &mu| *b = mu / k);
    }
    if !alpha.iter().chain(beta.iter()).all(|&x| x.is_finite() && x > 0.0) {
        return None;
    }
    Some(ScalingState {
        log_alpha: alpha.mapv(f64::ln),
        log_beta: beta.mapv(f64::ln),
        iterations,
        converged,
    })
}

fn log_sum_exp<I: Iterator<Item = f64> + Clone>(values: I) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Scalings beyond `exp(ABSORB)` are folded into the stabilized kernel.
const ABSORB: f64 = 50.0;

/// Log-stabilized scaling. Potentials `f`, `g` are kept in the log domain and
/// absorbed into `exp(log_xi + f + g)`, so most iterations are plain
/// matrix-vector products on that kernel; exact log-sum-exp updates are used
/// whenever the stabilized kernel underflows.
fn scale_log(
    m: &CostMatrix,
    lambda: f64,
    mu_r: ArrayView1<'_, f64>,
    mu_c: ArrayView1<'_, f64>,
    cfg: &SinkhornConfig,
    warm_log_beta: Option<ArrayView1<'_, f64>>,
) -> ScalingState {
    let log_xi = m.values().mapv(|c| -lambda * c);
    let log_xi_t = log_xi.t().as_standard_layout().into_owned();
    let log_mu_r = mu_r.mapv(f64::ln);
    let log_mu_c = mu_c.mapv(f64::ln);
    let mut f = Array1::zeros(log_xi.nrows());
    let mut g = match warm_log_beta {
        Some(w) => w.to_owned(),
        None => Array1::zeros(log_xi.ncols()),
    };

    let row_lse = |k: &Array2<f64>, pot: &Array1<f64>, out: &mut Array1<f64>, log_mu: &Array1<f64>| {
        for (i, row) in k.outer_iter().enumerate() {
            let lse = log_sum_exp(row.iter().zip(pot.iter()).map(|(&x, &p)| x + p));
            out[i] = log_mu[i] - lse;
        }
    };
    let stabilized = |f: &Array1<f64>, g: &Array1<f64>| -> (Array2<f64>, Array2<f64>) {
        let k = Array2::from_shape_fn(log_xi.dim(), |(i, j)| (log_xi[[i, j]] + f[i] + g[j]).exp());
        let kt = k.t().as_standard_layout().into_owned();
        (k, kt)
    };
    let usable = |v: &Array1<f64>| v.iter().all(|&x| x.is_finite() && x > 0.0);

    // One exact update puts the potentials on the scale of the solution.
    row_lse(&log_xi, &g, &mut f, &log_mu_r);
    row_lse(&log_xi_t, &f, &mut g, &log_mu_c);
    let mut iterations = 1;
    let (mut k, mut kt) = stabilized(&f, &g);
    let mut a = Array1::<f64>::ones(f.len());
    let mut b = Array1::<f64>::ones(g.len());
    let mut converged = false;

    loop {
        let kb = k.dot(&b);
        if iterations % CHECK_EVERY == 0 || iterations == cfg.max_iter {
            // The column marginal is exact right after the column update.
            let violation: f64 = Zip::from(&a)
                .and(&kb)
                .and(mu_r)
                .fold(0.0, |acc, &x, &y, &mu| acc + (x * y - mu).abs());
            if violation <= cfg.tol {
                converged = true;
                break;
            }
        }
        if iterations >= cfg.max_iter {
            break;
        }
        iterations += 1;
        let mut next_a = Array1::zeros(a.len());
        Zip::from(&mut next_a).and(&kb).and(mu_r).for_each(|x, &y, &mu| *x = mu / y);
        let ka = kt.dot(&next_a);
        let mut next_b = Array1::zeros(b.len());
        Zip::from(&mut next_b).and(&ka).and(mu_c).for_each(|x, &y, &mu| *x = mu / y);
        if !usable(&next_a) || !usable(&next_b) {
            f.zip_mut_with(&a, |p, &x| *p += x.ln());
            g.zip_mut_with(&b, |p, &x| *p += x.ln());
            row_lse(&log_xi, &g, &mut f, &log_mu_r);
            row_lse(&log_xi_t, &f, &mut g, &log_mu_c);
            (k, kt) = stabilized(&f, &g);
            a.fill(1.0);
            b.fill(1.0);
            continue;
        }
        a = next_a;
        b = next_b;
        let big = a.iter().chain(b.iter()).any(|&x| x.ln().abs() > ABSORB);
        if big {
            f.zip_mut_with(&a, |p, &x| *p += x.ln());
            g.zip_mut_with(&b, |p, &x| *p += x.ln());
            (k, kt) = stabilized(&f, &g);
            a.fill(1.0);
            b.fill(1.0);
        }
    }
    f.zip_mut_with(&a, |p, &x| *p += x.ln());
    g.zip_mut_with(&b, |p, &x| *p += x.ln());
    ScalingState {
        log_alpha: f,
        log_beta: g,
        iterations,
        converged,
    }
}

/// Fixes the gauge, materializes the coupling and measures the final violation.
fn finish(
    m: &CostMatrix,
    lambda: f64,
    cost_scale: f64,
    mu_r: &EmpiricalMeasure,
    mu_c: &EmpiricalMeasure,
    state: ScalingState,
    log_domain_used: bool,
) -> Coupling {
    let ScalingState {
        mut log_alpha,
        mut log_beta,
        iterations,
        converged,
    } = state;
    let log_xi = m.values().mapv(|c| -lambda * c);

    // Unit total mass.
    let log_mass = log_sum_exp(
        log_xi
            .indexed_iter()
            .map(|((i, j), &x)| log_alpha[i] + x + log_beta[j])
            .collect::<Vec<_>>()
            .into_iter(),
    );
    log_alpha -= log_mass;
    // Balance |alpha|_1 and |beta|_1.
    let shift = 0.5 * (log_sum_exp(log_beta.iter().copied()) - log_sum_exp(log_alpha.iter().copied()));
    log_alpha += shift;
    log_beta -= shift;

    let alpha = log_alpha.mapv(f64::exp);
    let beta = log_beta.mapv(f64::exp);
    let xi = log_xi.mapv(f64::exp);
    let gamma = if log_domain_used {
        Array2::from_shape_fn(log_xi.dim(), |(i, j)| (log_alpha[i] + log_xi[[i, j]] + log_beta[j]).exp())
    } else {
        Array2::from_shape_fn(xi.dim(), |(i, j)| alpha[i] * xi[[i, j]] * beta[j])
    };
    let marginal_violation = l1_violation(&gamma.sum_axis(ndarray::Axis(1)), mu_r.weights())
        + l1_violation(&gamma.sum_axis(ndarray::Axis(0)), mu_c.weights());

    Coupling {
        gamma,
        alpha,
        beta,
        xi,
        log_alpha,
        log_beta,
        iterations_used: iterations,
        marginal_violation,
        converged,
        log_domain_used,
        cost_scale,
    }
}
