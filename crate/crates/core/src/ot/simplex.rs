use std::collections::VecDeque;

use super::{marginal_violation, Matrix, OtProblem, TransportPlan};
use crate::error::{Error, Result};

const MAX_CELLS: usize = 1_000_000;

/// Basis of the transportation problem: a spanning tree over the bipartite
/// row/column graph with `n + m - 1` cells, some of which may carry zero flow.
struct Basis {
    n: usize,
    m: usize,
    flow: Vec<f64>,
    in_basis: Vec<bool>,
    cells: Vec<(usize, usize)>,
}

impl Basis {
    /// North-west corner rule. When a row and a column exhaust together the
    /// walk still advances one index at a time, so the staircase keeps
    /// `n + m - 1` cells and degenerate zero-flow cells stay basic.
    fn north_west(a: &[f64], b: &[f64]) -> Self {
        let (n, m) = (a.len(), b.len());
        let mut supply = a.to_vec();
        let mut demand = b.to_vec();
        let mut flow = vec![0.0; n * m];
        let mut in_basis = vec![false; n * m];
        let mut cells = Vec::with_capacity(n + m - 1);
        let (mut i, mut j) = (0, 0);
        loop {
            let q = supply[i].min(demand[j]).max(0.0);
            flow[i * m + j] = q;
            in_basis[i * m + j] = true;
            cells.push((i, j));
            supply[i] -= q;
            demand[j] -= q;
            if i == n - 1 && j == m - 1 {
                break;
            }
            if j == m - 1 || (i < n - 1 && supply[i] <= demand[j]) {
                i += 1;
            } else {
                j += 1;
            }
        }
        Self { n, m, flow, in_basis, cells }
    }

    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        // nodes 0..n are rows, n..n+m are columns; edge payload is the cell index
        let mut adj = vec![Vec::new(); self.n + self.m];
        for (k, &(i, j)) in self.cells.iter().enumerate() {
            adj[i].push((self.n + j, k));
            adj[self.n + j].push((i, k));
        }
        adj
    }

    fn duals(&self, cost: &Matrix, adj: &[Vec<(usize, usize)>]) -> (Vec<f64>, Vec<f64>) {
        let mut pot = vec![f64::NAN; self.n + self.m];
        pot[0] = 0.0;
        let mut queue = VecDeque::from([0usize]);
        while let Some(node) = queue.pop_front() {
            for &(other, k) in &adj[node] {
                if pot[other].is_nan() {
                    let (i, j) = self.cells[k];
                    // u_i + v_j = C_ij
                    pot[other] = cost.get(i, j) - pot[node];
                    queue.push_back(other);
                }
            }
        }
        let v = pot.split_off(self.n);
        (pot, v)
    }

    /// Basis cells on the tree path from column `j` to row `i`, in order.
    fn path(&self, adj: &[Vec<(usize, usize)>], i: usize, j: usize) -> Vec<usize> {
        let target = self.n + j;
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; self.n + self.m];
        let mut seen = vec![false; self.n + self.m];
        seen[i] = true;
        let mut queue = VecDeque::from([i]);
        while let Some(node) = queue.pop_front() {
            if node == target {
                break;
            }
            for &(other, k) in &adj[node] {
                if !seen[other] {
                    seen[other] = true;
                    parent[other] = Some((node, k));
                    queue.push_back(other);
                }
            }
        }
        let mut out = Vec::new();
        let mut node = target;
        while let Some((prev, k)) = parent[node] {
            out.push(k);
            node = prev;
        }
        out
    }
}

/// Exact optimal transport by the transportation simplex (MODI duals,
/// Bland's rule for entering and leaving cells).
pub fn transport_simplex(p: &OtProblem) -> Result<TransportPlan> {
    p.validate()?;
    let (n, m) = (p.cost.rows(), p.cost.cols());
    if n * m > MAX_CELLS {
        return Err(Error::TooLarge(format!("{n}x{m} exceeds {MAX_CELLS} cells")));
    }
    let cost = &p.cost;
    let mut basis = Basis::north_west(&p.source_weights, &p.target_weights);
    let tol = 1e-12 * cost.max().max(1.0);

    loop {
        let adj = basis.adjacency();
        let (u, v) = basis.duals(cost, &adj);
        let entering = (0..n * m).find(|&c| {
            let (i, j) = (c / m, c % m);
            !basis.in_basis[c] && cost.get(i, j) - u[i] - v[j] < -tol
        });
        let Some(enter) = entering else { break };
        let (ei, ej) = (enter / m, enter % m);

        let path = basis.path(&adj, ei, ej);
        // the first path cell touches column ej and loses flow; signs alternate
        let mut theta = f64::INFINITY;
        let mut leave: Option<usize> = None;
        for &k in path.iter().step_by(2) {
            let (i, j) = basis.cells[k];
            let c = i * m + j;
            let f = basis.flow[c];
            let better = match leave {
                None => true,
                Some(l) => {
                    let (li, lj) = basis.cells[l];
                    f < theta || (f == theta && c < li * m + lj)
                }
            };
            if better {
                theta = f;
                leave = Some(k);
            }
        }
        let leave = leave.expect("entering cell closes a cycle through the basis");
        for (pos, &k) in path.iter().enumerate() {
            let (i, j) = basis.cells[k];
            let c = i * m + j;
            if pos % 2 == 0 {
                basis.flow[c] = (basis.flow[c] - theta).max(0.0);
            } else {
                basis.flow[c] += theta;
            }
        }
        let (li, lj) = basis.cells[leave];
        basis.flow[li * m + lj] = 0.0;
        basis.in_basis[li * m + lj] = false;
        basis.flow[enter] = theta;
        basis.in_basis[enter] = true;
        basis.cells[leave] = (ei, ej);
    }

    let coupling = Matrix::from_fn(n, m, |i, j| basis.flow[i * m + j]);
    let total = coupling.dot(cost);
    let violation = marginal_violation(&coupling, &p.source_weights, &p.target_weights);
    Ok(TransportPlan { coupling, cost: total, marginal_violation: violation, target_kl: None })
}
