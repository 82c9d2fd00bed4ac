//! Dense two-phase tableau simplex for the offline baseline LPs.
//!
//! Problems are tiny (tens of variables), so the implementation favors
//! auditability over speed: Bland's rule for anti-cycling, explicit
//! artificials for every row, and a duality certificate recovered from the
//! reduced costs of the artificial columns.

use crate::error::{Error, Result};

/// Maximize `objective . x` subject to `eq` (equalities), `le`
/// (inequalities `row . x <= rhs`), and `x >= 0`.
#[derive(Clone, Debug)]
pub struct LpProblem {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub eq: Vec<(Vec<f64>, f64)>,
    pub le: Vec<(Vec<f64>, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub value: f64,
    /// Verified certificate: max of |primal - dual| and any residual dual
    /// infeasibility at termination.
    pub duality_gap: f64,
}

const PIVOT_TOL: f64 = 1e-9;

struct Tableau {
    rows: Vec<Vec<f64>>, // each len ncols + 1, rhs last
    basis: Vec<usize>,
    ncols: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.rows[i][self.ncols]
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let piv = self.rows[row][col];
        for v in self.rows[row].iter_mut() {
            *v /= piv;
        }
        let pivot_row = self.rows[row].clone();
        for (i, r) in self.rows.iter_mut().enumerate() {
            if i == row {
                continue;
            }
            let f = r[col];
            if f != 0.0 {
                for (a, &b) in r.iter_mut().zip(&pivot_row) {
                    *a -= f * b;
                }
                r[col] = 0.0;
            }
        }
        self.basis[row] = col;
    }

    /// `z_j = c_B . B^{-1} A_j` for one column.
    fn z(&self, cost: &[f64], col: usize) -> f64 {
        self.rows
            .iter()
            .zip(&self.basis)
            .map(|(r, &b)| cost[b] * r[col])
            .sum()
    }

    /// Bland's rule simplex on the current basis, maximizing `cost . x`.
    /// `allowed` masks columns that may enter.
    fn optimize(&mut self, cost: &[f64], allowed: &[bool]) -> Result<()> {
        let m = self.rows.len();
        loop {
            let mut entering = usize::MAX;
            for j in 0..self.ncols {
                if !allowed[j] || self.basis.contains(&j) {
                    continue;
                }
                if cost[j] - self.z(cost, j) > PIVOT_TOL {
                    entering = j;
                    break;
                }
            }
            if entering == usize::MAX {
                return Ok(());
            }
            let mut leave = usize::MAX;
            let mut best_ratio = f64::INFINITY;
            for i in 0..m {
                let a = self.rows[i][entering];
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i) / a;
                    if ratio < best_ratio - PIVOT_TOL
                        || (ratio < best_ratio + PIVOT_TOL
                            && (leave == usize::MAX || self.basis[i] < self.basis[leave]))
                    {
                        best_ratio = ratio;
                        leave = i;
                    }
                }
            }
            if leave == usize::MAX {
                return Err(Error::Unbounded(format!(
                    "column {entering} has no blocking row"
                )));
            }
            self.pivot(leave, entering);
        }
    }
}

pub fn solve(p: &LpProblem) -> Result<LpSolution> {
    let n = p.num_vars;
    if p.objective.len() != n {
        return Err(Error::Dimension("objective length".into()));
    }
    for (row, _) in p.eq.iter().chain(&p.le) {
        if row.len() != n {
            return Err(Error::Dimension("constraint row length".into()));
        }
    }
    let n_le = p.le.len();
    let m = p.eq.len() + n_le;
    let ncols = n + n_le + m; // structural, slacks, artificials
    let mut rows = Vec::with_capacity(m);
    // Equality-form rhs kept for the dual certificate.
    let mut b_hat = Vec::with_capacity(m);
    for (i, (row, rhs)) in p.eq.iter().chain(&p.le).enumerate() {
        let mut t = vec![0.0; ncols + 1];
        t[..n].copy_from_slice(row);
        if i >= p.eq.len() {
            t[n + (i - p.eq.len())] = 1.0; // slack
        }
        t[ncols] = *rhs;
        if t[ncols] < 0.0 {
            for v in t.iter_mut() {
                *v = -*v;
            }
        }
        b_hat.push(t[ncols]);
        t[n + n_le + i] = 1.0; // artificial
        rows.push(t);
    }
    let basis: Vec<usize> = (0..m).map(|i| n + n_le + i).collect();
    let mut tab = Tableau { rows, basis, ncols };

    // Phase 1: drive out the artificials.
    let mut cost1 = vec![0.0; ncols];
    for c in cost1[n + n_le..].iter_mut() {
        *c = -1.0;
    }
    let allowed1 = vec![true; ncols];
    tab.optimize(&cost1, &allowed1)?;
    let infeas: f64 = (0..m)
        .filter(|&i| tab.basis[i] >= n + n_le)
        .map(|i| tab.rhs(i))
        .sum();
    if infeas > 1e-7 {
        return Err(Error::Infeasible(format!(
            "phase-1 residual {infeas:.3e}"
        )));
    }
    // Pivot remaining degenerate artificials out where possible.
    for i in 0..m {
        if tab.basis[i] >= n + n_le {
            if let Some(j) = (0..n + n_le).find(|&j| tab.rows[i][j].abs() > PIVOT_TOL) {
                tab.pivot(i, j);
            }
        }
    }

    // Phase 2: real objective, artificials barred from entering.
    let mut cost2 = vec![0.0; ncols];
    cost2[..n].copy_from_slice(&p.objective);
    let mut allowed2 = vec![true; ncols];
    for a in allowed2[n + n_le..].iter_mut() {
        *a = false;
    }
    tab.optimize(&cost2, &allowed2)?;

    let mut x = vec![0.0; n];
    for i in 0..m {
        if tab.basis[i] < n {
            x[tab.basis[i]] = tab.rhs(i);
        }
    }
    let value: f64 = p.objective.iter().zip(&x).map(|(c, v)| c * v).sum();

    // Duals from the artificial columns (initially e_i): y_i = z(artificial_i).
    let y: Vec<f64> = (0..m).map(|i| tab.z(&cost2, n + n_le + i)).collect();
    let dual_value: f64 = y.iter().zip(&b_hat).map(|(a, b)| a * b).sum();
    let mut gap = (value - dual_value).abs();
    for j in 0..n + n_le {
        gap = gap.max(cost2[j] - tab.z(&cost2, j));
    }
    Ok(LpSolution {
        status: LpStatus::Optimal,
        x,
        value,
        duality_gap: gap,
    })
}
