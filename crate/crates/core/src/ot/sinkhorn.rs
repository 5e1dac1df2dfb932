use serde::{Deserialize, Serialize};

use super::{generalized_kl, marginal_violation, Matrix, OtProblem, TransportPlan};
use crate::error::{Error, Result};

/// Above this `max(C)/eta` the factored kernel `exp(-C/eta)` could underflow,
/// so every log-sum-exp is evaluated entry by entry instead.
const FACTORED_LIMIT: f64 = 600.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    /// Entropic regularization strength.
    pub eta: f64,
    /// Number of scaling sweeps.
    pub iterations: usize,
    /// Soft target-marginal weight; `None` keeps the target marginal hard.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi_b: Option<f64>,
    /// Optional early exit on marginal error (balanced) or potential change
    /// (unbalanced). Off by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self { eta: 0.02, iterations: 500, xi_b: None, tolerance: None }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta must be positive, got {}", self.eta)));
        }
        if self.iterations == 0 {
            return Err(Error::Config("sinkhorn needs at least one iteration".into()));
        }
        if let Some(xi) = self.xi_b {
            if !(xi > 0.0) {
                return Err(Error::Config(format!("xi_b must be positive, got {xi}")));
            }
        }
        Ok(())
    }
}

/// Balanced entropic OT, `min <C,T> + eta KL(T | a b^T)` over `U(a, b)`.
///
/// Each sweep updates the column potentials and then the row potentials, so
/// the returned coupling has exact row sums; the column error is reported in
/// `marginal_violation`.
pub fn sinkhorn(p: &OtProblem, cfg: &SinkhornConfig) -> Result<TransportPlan> {
    p.validate()?;
    cfg.validate()?;
    solve(p, cfg, 1.0, false, FACTORED_LIMIT)
}

/// Entropic OT with a hard source marginal and a soft target marginal:
/// `min <C,T> + eta KL(T | a b^T) + xi_b KL(T^T 1 | b)` subject to `T 1 = a`.
/// The target-side log-sum-exp term is damped by `xi_b / (xi_b + eta)`.
pub fn sinkhorn_unbalanced(p: &OtProblem, cfg: &SinkhornConfig) -> Result<TransportPlan> {
    p.validate()?;
    cfg.validate()?;
    let xi = cfg
        .xi_b
        .ok_or_else(|| Error::Config("unbalanced sinkhorn needs xi_b".into()))?;
    solve(p, cfg, xi / (xi + cfg.eta), true, FACTORED_LIMIT)
}

struct Active {
    rows: Vec<usize>,
    cols: Vec<usize>,
    cost: Vec<f64>,
}

fn solve(
    p: &OtProblem,
    cfg: &SinkhornConfig,
    kappa: f64,
    unbalanced: bool,
    factored_limit: f64,
) -> Result<TransportPlan> {
    let eta = cfg.eta;
    let rows: Vec<usize> = (0..p.cost.rows()).filter(|&i| p.source_weights[i] > 0.0).collect();
    let cols: Vec<usize> = (0..p.cost.cols()).filter(|&j| p.target_weights[j] > 0.0).collect();
    let (n, m) = (rows.len(), cols.len());
    let mut cost = Vec::with_capacity(n * m);
    for &i in &rows {
        for &j in &cols {
            cost.push(p.cost.get(i, j));
        }
    }
    let act = Active { rows, cols, cost };

    let scaled_max = act.cost.iter().fold(0.0f64, |acc, c| acc.max(c / eta));
    let scaled_min = act.cost.iter().fold(f64::INFINITY, |acc, c| acc.min(c / eta));
    let diagnostics = || format!("C/eta ranges over [{scaled_min:e}, {scaled_max:e}]");
    if !scaled_max.is_finite() {
        return Err(Error::Numerical(format!("kernel is not finite; {}", diagnostics())));
    }

    let log_a: Vec<f64> = act.rows.iter().map(|&i| p.source_weights[i].ln()).collect();
    let log_b: Vec<f64> = act.cols.iter().map(|&j| p.target_weights[j].ln()).collect();
    let kernel: Option<Vec<f64>> =
        (scaled_max <= factored_limit).then(|| act.cost.iter().map(|c| (-c / eta).exp()).collect());

    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut col_lse = vec![0.0; m];
    let mut row_lse = vec![0.0; n];
    for _ in 0..cfg.iterations {
        lse_over_rows(&act.cost, kernel.as_deref(), n, m, eta, &f, &mut col_lse);
        let mut max_change: f64 = 0.0;
        for j in 0..m {
            let next = eta * log_b[j] - kappa * eta * col_lse[j];
            max_change = max_change.max((next - g[j]).abs());
            g[j] = next;
        }
        lse_over_cols(&act.cost, kernel.as_deref(), n, m, eta, &g, &mut row_lse);
        for i in 0..n {
            f[i] = eta * log_a[i] - eta * row_lse[i];
        }
        if f.iter().chain(&g).any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!("potentials diverged; {}", diagnostics())));
        }
        if let Some(tol) = cfg.tolerance {
            let done = if unbalanced {
                max_change < tol
            } else {
                let coupling = assemble(p, &act, &f, &g, eta);
                marginal_violation(&coupling, &p.source_weights, &p.target_weights) < tol
            };
            if done {
                break;
            }
        }
    }

    let coupling = assemble(p, &act, &f, &g, eta);
    if coupling.as_slice().iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical(format!("coupling is not finite; {}", diagnostics())));
    }
    let total = coupling.dot(&p.cost);
    let violation = marginal_violation(&coupling, &p.source_weights, &p.target_weights);
    let target_kl = unbalanced.then(|| generalized_kl(&coupling.col_sums(), &p.target_weights));
    Ok(TransportPlan { coupling, cost: total, marginal_violation: violation, target_kl })
}

fn assemble(p: &OtProblem, act: &Active, f: &[f64], g: &[f64], eta: f64) -> Matrix {
    let m = act.cols.len();
    let mut out = Matrix::zeros(p.cost.rows(), p.cost.cols());
    for (ai, &i) in act.rows.iter().enumerate() {
        for (aj, &j) in act.cols.iter().enumerate() {
            out.set(i, j, ((f[ai] + g[aj] - act.cost[ai * m + aj]) / eta).exp());
        }
    }
    out
}

/// `out[j] = LSE_i((f_i - C_ij) / eta)`.
fn lse_over_rows(cost: &[f64], kernel: Option<&[f64]>, n: usize, m: usize, eta: f64, f: &[f64], out: &mut [f64]) {
    match kernel {
        Some(k) => {
            let fmax = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            out.iter_mut().for_each(|x| *x = 0.0);
            for i in 0..n {
                let w = ((f[i] - fmax) / eta).exp();
                if w == 0.0 {
                    continue;
                }
                for (o, kij) in out.iter_mut().zip(&k[i * m..(i + 1) * m]) {
                    *o += w * kij;
                }
            }
            out.iter_mut().for_each(|x| *x = fmax / eta + x.ln());
        }
        None => {
            for (j, o) in out.iter_mut().enumerate() {
                *o = log_sum_exp((0..n).map(|i| (f[i] - cost[i * m + j]) / eta));
            }
        }
    }
}

/// `out[i] = LSE_j((g_j - C_ij) / eta)`.
fn lse_over_cols(cost: &[f64], kernel: Option<&[f64]>, n: usize, m: usize, eta: f64, g: &[f64], out: &mut [f64]) {
    match kernel {
        Some(k) => {
            let gmax = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = g.iter().map(|x| ((x - gmax) / eta).exp()).collect();
            for (i, o) in out.iter_mut().enumerate() {
                let s: f64 = k[i * m..(i + 1) * m].iter().zip(&w).map(|(a, b)| a * b).sum();
                *o = gmax / eta + s.ln();
            }
        }
        None => {
            for (i, o) in out.iter_mut().enumerate() {
                *o = log_sum_exp((0..m).map(|j| (g[j] - cost[i * m + j]) / eta));
            }
        }
    }
    debug_assert_eq!(out.len(), n);
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Projects an approximate coupling onto `U(a, b)`: shrink rows and columns
/// that exceed their marginals, then add the rank-one correction for the
/// remaining deficit.
pub fn round_to_feasible(coupling: &Matrix, a: &[f64], b: &[f64]) -> Matrix {
    let (n, m) = (coupling.rows(), coupling.cols());
    let mut t = coupling.clone();
    let r = t.row_sums();
    for i in 0..n {
        let x = if r[i] > 0.0 { (a[i] / r[i]).min(1.0) } else { 1.0 };
        for j in 0..m {
            t.set(i, j, t.get(i, j) * x);
        }
    }
    let c = t.col_sums();
    for j in 0..m {
        let y = if c[j] > 0.0 { (b[j] / c[j]).min(1.0) } else { 1.0 };
        for i in 0..n {
            t.set(i, j, t.get(i, j) * y);
        }
    }
    let err_r: Vec<f64> = t.row_sums().iter().zip(a).map(|(r, a)| (a - r).max(0.0)).collect();
    let err_c: Vec<f64> = t.col_sums().iter().zip(b).map(|(c, b)| (b - c).max(0.0)).collect();
    let mass: f64 = err_r.iter().sum();
    if mass > 0.0 {
        for i in 0..n {
            for j in 0..m {
                t.set(i, j, t.get(i, j) + err_r[i] * err_c[j] / mass);
            }
        }
    }
    t
}
