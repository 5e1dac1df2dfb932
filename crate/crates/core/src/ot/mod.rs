//! Discrete optimal transport between weighted point sets.
//!
//! [`transport_simplex`] solves the linear program exactly,
//! [`sinkhorn`] and [`sinkhorn_unbalanced`] solve the entropically
//! regularized problem in the log domain, and [`assignment_bruteforce`]
//! enumerates permutations for small uniform square instances.

mod brute;
mod simplex;
mod sinkhorn;

pub use brute::assignment_bruteforce;
pub use simplex::transport_simplex;
pub use sinkhorn::{round_to_feasible, sinkhorn, sinkhorn_unbalanced, SinkhornConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix; serialized as nested arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::Config("ragged matrix".into()));
        }
        Ok(Self { rows: n, cols: m, data: rows.into_iter().flatten().collect() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (o, x) in out.iter_mut().zip(self.row(i)) {
                *o += x;
            }
        }
        out
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &Matrix) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for Matrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Matrix::from_rows(rows)
    }
}

impl From<Matrix> for Vec<Vec<f64>> {
    fn from(m: Matrix) -> Self {
        m.to_rows()
    }
}

const WEIGHT_TOL: f64 = 1e-9;

/// Cost matrix with source and target weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OtProblem {
    pub cost: Matrix,
    pub source_weights: Vec<f64>,
    pub target_weights: Vec<f64>,
}

impl OtProblem {
    pub fn new(cost: Matrix, source_weights: Vec<f64>, target_weights: Vec<f64>) -> Result<Self> {
        let p = Self { cost, source_weights, target_weights };
        p.validate()?;
        Ok(p)
    }

    /// Uniform weights on both sides.
    pub fn uniform(cost: Matrix) -> Result<Self> {
        let (n, m) = (cost.rows(), cost.cols());
        if n == 0 || m == 0 {
            return Err(Error::Config("empty cost matrix".into()));
        }
        Self::new(cost, vec![1.0 / n as f64; n], vec![1.0 / m as f64; m])
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.cost.rows(), self.cost.cols());
        if n == 0 || m == 0 {
            return Err(Error::Config("empty cost matrix".into()));
        }
        if self.source_weights.len() != n || self.target_weights.len() != m {
            return Err(Error::Config(format!(
                "cost is {n}x{m} but weights have lengths {} and {}",
                self.source_weights.len(),
                self.target_weights.len()
            )));
        }
        for (side, w) in [("source", &self.source_weights), ("target", &self.target_weights)] {
            if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::InvalidDistribution(format!("{side} weights must be nonnegative")));
            }
            let total: f64 = w.iter().sum();
            if (total - 1.0).abs() > WEIGHT_TOL {
                return Err(Error::InvalidDistribution(format!("{side} weights sum to {total}")));
            }
        }
        if self.cost.as_slice().iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::Config("cost entries must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// A coupling with its transport cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub coupling: Matrix,
    pub cost: f64,
    /// Largest deviation of a row or column sum from its prescribed weight.
    pub marginal_violation: f64,
    /// Generalized KL of the realized target marginal against the target
    /// weights; only set by the unbalanced solver.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_kl: Option<f64>,
}

pub(crate) fn marginal_violation(coupling: &Matrix, a: &[f64], b: &[f64]) -> f64 {
    let rows = coupling.row_sums().iter().zip(a).map(|(r, w)| (r - w).abs()).fold(0.0, f64::max);
    let cols = coupling.col_sums().iter().zip(b).map(|(c, w)| (c - w).abs()).fold(0.0, f64::max);
    rows.max(cols)
}

/// Generalized KL divergence `sum x log(x/y) - x + y`.
pub fn generalized_kl(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&p, &q)| {
            let t = if p > 0.0 { p * (p / q).ln() } else { 0.0 };
            t - p + q
        })
        .sum()
}
