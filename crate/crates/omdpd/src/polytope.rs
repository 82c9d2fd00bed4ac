//! The feasible-set machinery: the extended occupancy polytope induced by a
//! transition confidence set, its Euclidean projection oracle (the mirror
//! descent argmin step), and the LP baseline solver.
//!
//! Membership of the confidence set is encoded by the standard
//! linearization `low_h(s,a,s') * q_h(s,a) <= q_h(s,a,s') <= high_h(s,a,s') *
//! q_h(s,a)`, which is exact for occupancy measures and keeps the set convex.

use crate::cmdp::{policy_to_occupancy, Dims, ExtendedOccupancy, Policy, TabularCmdp};
use crate::error::{Error, Result};
use crate::estimator::OptimisticModel;
use crate::linalg::{dot, norm_inf, solve_dense, Cholesky};
use crate::simplex::{LpProblem, LpStatus};

/// Default projection tolerance.
pub const PROJECTION_TOL: f64 = 1e-8;

/// Occupancy polytope: flow-conservation equalities plus linearized
/// per-transition confidence bounds.
#[derive(Clone, Debug)]
pub struct OccupancyPolytope {
    pub dims: Dims,
    pub init_dist: Vec<f64>,
    /// Lower kernel bounds, `[H][S][A][S]`.
    pub low: Vec<f64>,
    /// Upper kernel bounds, `[H][S][A][S]`.
    pub high: Vec<f64>,
    /// Dense flow-conservation matrix, `(H*S) x (H*S*A*S)` row-major.
    eq_matrix: Vec<f64>,
    /// Right-hand side of the equalities (`mu` for layer 1, zero after).
    eq_rhs: Vec<f64>,
    /// Cholesky factor of `E E^T`.
    gram: Cholesky,
}

impl OccupancyPolytope {
    pub fn new(dims: Dims, init_dist: Vec<f64>, low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        let n = dims.extended_len();
        if init_dist.len() != dims.s || low.len() != n || high.len() != n {
            return Err(Error::Dimension("polytope tensor lengths".into()));
        }
        for j in 0..n {
            if low[j] > high[j] + 1e-15 {
                return Err(Error::Validation(format!(
                    "bound bracket inverted at entry {j}: low {} > high {}",
                    low[j], high[j]
                )));
            }
        }
        // Nonempty iff every row bracket admits a kernel.
        for base in (0..n).step_by(dims.s) {
            let lo: f64 = low[base..base + dims.s].iter().sum();
            let hi: f64 = high[base..base + dims.s].iter().sum();
            if lo > 1.0 + 1e-12 || hi < 1.0 - 1e-12 {
                return Err(Error::Infeasible(format!(
                    "no kernel in bounds at block {}: sum(low)={lo}, sum(high)={hi}",
                    base / dims.s
                )));
            }
        }
        let rows = dims.h * dims.s;
        let mut eq_matrix = vec![0.0; rows * n];
        let mut eq_rhs = vec![0.0; rows];
        for h in 0..dims.h {
            for s in 0..dims.s {
                let r = h * dims.s + s;
                let row = &mut eq_matrix[r * n..(r + 1) * n];
                for a in 0..dims.a {
                    for s2 in 0..dims.s {
                        row[dims.idx4(h, s, a, s2)] += 1.0;
                    }
                }
                if h == 0 {
                    eq_rhs[r] = init_dist[s];
                } else {
                    for s_prev in 0..dims.s {
                        for a in 0..dims.a {
                            row[dims.idx4(h - 1, s_prev, a, s)] -= 1.0;
                        }
                    }
                }
            }
        }
        let mut gram_mat = vec![0.0; rows * rows];
        for i in 0..rows {
            for j in 0..=i {
                let v = dot(&eq_matrix[i * n..(i + 1) * n], &eq_matrix[j * n..(j + 1) * n]);
                gram_mat[i * rows + j] = v;
                gram_mat[j * rows + i] = v;
            }
        }
        let gram = Cholesky::new(&gram_mat, rows, 1e-12)
            .ok_or_else(|| Error::Validation("flow equalities rank deficient".into()))?;
        Ok(OccupancyPolytope {
            dims,
            init_dist,
            low,
            high,
            eq_matrix,
            eq_rhs,
            gram,
        })
    }

    /// Polytope for the confidence set of an optimistic model.
    pub fn from_model(model: &OptimisticModel, init_dist: &[f64]) -> Result<Self> {
        Self::new(
            model.dims,
            init_dist.to_vec(),
            model.low.clone(),
            model.high.clone(),
        )
    }

    /// Polytope collapsed to an exactly known kernel (`low = high = p`).
    pub fn from_kernel(env: &TabularCmdp) -> Result<Self> {
        Self::new(
            env.dims,
            env.init_dist.clone(),
            env.transitions.clone(),
            env.transitions.clone(),
        )
    }

    fn num_eq_rows(&self) -> usize {
        self.dims.h * self.dims.s
    }

    /// Euclidean projection onto the flow-equality affine set.
    fn project_equalities(&self, y: &mut [f64]) {
        let rows = self.num_eq_rows();
        let n = self.dims.extended_len();
        let mut resid = vec![0.0; rows];
        for r in 0..rows {
            resid[r] = dot(&self.eq_matrix[r * n..(r + 1) * n], y) - self.eq_rhs[r];
        }
        self.gram.solve(&mut resid);
        for r in 0..rows {
            let c = resid[r];
            if c == 0.0 {
                continue;
            }
            let row = &self.eq_matrix[r * n..(r + 1) * n];
            for (yi, &ei) in y.iter_mut().zip(row) {
                if ei != 0.0 {
                    *yi -= c * ei;
                }
            }
        }
    }

    /// Exact Euclidean projection onto the product of per-block cones
    /// `{x >= 0, low_i * t <= x_i <= high_i * t, t = sum(x)}`.
    fn project_cones(&self, y: &mut [f64], ws: &mut ConeWorkspace) {
        let s = self.dims.s;
        for (b, block) in y.chunks_mut(s).enumerate() {
            let base = b * s;
            project_block_cone(block, &self.low[base..base + s], &self.high[base..base + s], ws);
        }
    }

    /// Max violation of the cone constraints at `x` (diagnostics).
    pub fn cone_violation(&self, x: &[f64]) -> f64 {
        let s = self.dims.s;
        let mut worst = 0.0f64;
        for (b, block) in x.chunks(s).enumerate() {
            let t: f64 = block.iter().sum();
            for i in 0..s {
                let j = b * s + i;
                worst = worst
                    .max(-block[i])
                    .max(self.low[j] * t - block[i])
                    .max(block[i] - self.high[j] * t);
            }
        }
        worst
    }

    /// Max violation of the flow equalities at `x` (diagnostics).
    pub fn equality_violation(&self, x: &[f64]) -> f64 {
        let rows = self.num_eq_rows();
        let n = self.dims.extended_len();
        let mut worst = 0.0f64;
        for r in 0..rows {
            worst = worst.max((dot(&self.eq_matrix[r * n..(r + 1) * n], x) - self.eq_rhs[r]).abs());
        }
        worst
    }

    /// A kernel row inside `[low, high]` closest (in the shift-clamp sense)
    /// to the interval midpoint.
    pub fn kernel_in_bounds(&self, h: usize, s: usize, a: usize) -> Vec<f64> {
        let d = self.dims;
        let base = d.idx4(h, s, a, 0);
        kernel_between(&self.low[base..base + d.s], &self.high[base..base + d.s])
    }
}

/// Clamp-shift projection of the bound midpoint onto the simplex slice
/// `{p : low <= p <= high, sum p = 1}`.
fn kernel_between(low: &[f64], high: &[f64]) -> Vec<f64> {
    let mid: Vec<f64> = low.iter().zip(high).map(|(&l, &u)| 0.5 * (l + u)).collect();
    let eval = |tau: f64| -> f64 {
        mid.iter()
            .zip(low.iter().zip(high))
            .map(|(&m, (&l, &u))| (m + tau).clamp(l, u))
            .sum::<f64>()
            - 1.0
    };
    // tau in [-1, 1] saturates every clamp (entries live in [0,1]), so the
    // root is bracketed up to roundoff in sum(low)/sum(high).
    let mut lo = -1.0;
    let mut hi = 1.0;
    for _ in 0..200 {
        let midpoint = 0.5 * (lo + hi);
        if eval(midpoint) >= 0.0 {
            hi = midpoint;
        } else {
            lo = midpoint;
        }
    }
    let tau = 0.5 * (lo + hi);
    mid.iter()
        .zip(low.iter().zip(high))
        .map(|(&m, (&l, &u))| (m + tau).clamp(l, u))
        .collect()
}

/// Scratch buffers for the per-block cone projection.
pub struct ConeWorkspace {
    s: usize,
    g: Vec<f64>,      // cone rows, 3S x S
    atb: Vec<f64>,    // gradient buffer, len 3S
    lambda: Vec<f64>, // dual iterate, len 3S
    banned: Vec<bool>, // columns dropped as linearly dependent
    passive: Vec<usize>,
    normal: Vec<f64>, // normal-equation scratch
    rhs: Vec<f64>,
}

impl ConeWorkspace {
    pub fn new(s: usize) -> Self {
        ConeWorkspace {
            s,
            g: vec![0.0; 3 * s * s],
            atb: vec![0.0; 3 * s],
            lambda: vec![0.0; 3 * s],
            banned: vec![false; 3 * s],
            passive: Vec::with_capacity(s + 1),
            normal: vec![0.0; (s + 1) * (s + 1)],
            rhs: vec![0.0; s + 1],
        }
    }
}

/// Exact projection onto `{x in R^S : x >= 0, low_i t <= x_i <= high_i t}`
/// via the Moreau decomposition: `P_K(y) = y + G^T lambda*` where `lambda*`
/// solves the nonnegative least-squares problem `min ||G^T lambda + y||`.
fn project_block_cone(y: &mut [f64], low: &[f64], high: &[f64], ws: &mut ConeWorkspace) {
    let s = ws.s;
    debug_assert_eq!(y.len(), s);
    // Fast path: already inside the cone.
    let t: f64 = y.iter().sum();
    let mut inside = true;
    for i in 0..s {
        if y[i] < 0.0 || y[i] < low[i] * t - 1e-15 || y[i] > high[i] * t + 1e-15 {
            inside = false;
            break;
        }
    }
    if inside {
        return;
    }
    // Cone rows G (each row g with g.x >= 0):
    //   x_i - low_i * t, high_i * t - x_i, x_i.
    let m = 3 * s;
    ws.g[..m * s].fill(0.0);
    for i in 0..s {
        let r0 = (3 * i) * s;
        for j in 0..s {
            ws.g[r0 + j] = -low[i];
            ws.g[r0 + s + j] = high[i];
        }
        ws.g[r0 + i] += 1.0;
        ws.g[r0 + s + i] -= 1.0;
        ws.g[r0 + 2 * s + i] = 1.0;
    }
    nnls_cone(
        y,
        &ws.g[..m * s],
        m,
        s,
        &mut ws.lambda,
        &mut ws.atb,
        &mut ws.banned,
        &mut ws.passive,
        &mut ws.normal,
        &mut ws.rhs,
    );
}

/// Lawson-Hanson style active-set NNLS specialized for the Moreau problem:
/// minimize `||G^T lambda + y||^2` over `lambda >= 0`, then overwrite `y`
/// with `y + G^T lambda`.
#[allow(clippy::too_many_arguments)]
fn nnls_cone(
    y: &mut [f64],
    g: &[f64],
    m: usize,
    s: usize,
    lambda: &mut [f64],
    grad: &mut [f64],
    banned: &mut [bool],
    passive: &mut Vec<usize>,
    normal: &mut [f64],
    rhs: &mut [f64],
) {
    const MAX_OUTER: usize = 200;
    lambda[..m].fill(0.0);
    banned[..m].fill(false);
    passive.clear();
    // Residual r = y + G^T lambda, starts at y.
    let mut resid = y.to_vec();
    for _ in 0..MAX_OUTER {
        // Gradient of -1/2||r||^2 along each inactive row: -G r.
        let mut best = 1e-12;
        let mut best_j = usize::MAX;
        for j in 0..m {
            if banned[j] || lambda[j] > 0.0 || passive.contains(&j) {
                continue;
            }
            let v = -dot(&g[j * s..(j + 1) * s], &resid);
            grad[j] = v;
            if v > best {
                best = v;
                best_j = j;
            }
        }
        if best_j == usize::MAX {
            break;
        }
        passive.push(best_j);
        // Inner loop: solve the unconstrained LS on the passive set and trim
        // negative coordinates until the passive solution is nonnegative.
        loop {
            let k = passive.len();
            if k == 0 {
                break;
            }
            for (ii, &pi) in passive.iter().enumerate() {
                for (jj, &pj) in passive.iter().enumerate() {
                    normal[ii * k + jj] = dot(&g[pi * s..(pi + 1) * s], &g[pj * s..(pj + 1) * s]);
                }
                rhs[ii] = -dot(&g[pi * s..(pi + 1) * s], y);
            }
            let sol = match solve_dense(&normal[..k * k], &rhs[..k], k) {
                Some(sol) => sol,
                None => {
                    // Dependent row; drop the newest and bar it from
                    // re-entering (it cannot improve the fit).
                    if let Some(j) = passive.pop() {
                        banned[j] = true;
                    }
                    break;
                }
            };
            if sol.iter().all(|&z| z >= -1e-14) {
                for (&pj, &zj) in passive.iter().zip(&sol) {
                    lambda[pj] = zj.max(0.0);
                }
                break;
            }
            // Step from current lambda toward sol, stopping at the first zero.
            let mut alpha = 1.0f64;
            for (ii, &pj) in passive.iter().enumerate() {
                if sol[ii] < 0.0 {
                    let cur = lambda[pj];
                    let denom = cur - sol[ii];
                    if denom > 0.0 {
                        alpha = alpha.min(cur / denom);
                    }
                }
            }
            for (ii, &pj) in passive.iter().enumerate() {
                lambda[pj] += alpha * (sol[ii] - lambda[pj]);
            }
            let keep: Vec<usize> = passive
                .iter()
                .copied()
                .filter(|&pj| lambda[pj] > 1e-14)
                .collect();
            for &pj in passive.iter() {
                if lambda[pj] <= 1e-14 {
                    lambda[pj] = 0.0;
                }
            }
            *passive = keep;
        }
        // Refresh the residual.
        resid.copy_from_slice(y);
        for &pj in passive.iter() {
            let lj = lambda[pj];
            if lj > 0.0 {
                for (ri, &gi) in resid.iter_mut().zip(&g[pj * s..(pj + 1) * s]) {
                    *ri += lj * gi;
                }
            }
        }
    }
    y.copy_from_slice(&resid);
}

/// Reusable state for warm-starting consecutive projections.
#[derive(Clone, Debug, Default)]
pub struct ProjectionWarmStart {
    z: Vec<f64>,
    u: Vec<f64>,
    rho: f64,
}

/// Outcome of a projection call.
#[derive(Clone, Copy, Debug)]
pub struct ProjectionStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Solves `argmin_{q in polytope} eta <q, gradient> + 1/2 ||q - anchor||^2`,
/// i.e. the Euclidean projection of `anchor - eta * gradient`.
///
/// Operator splitting (ADMM) between the flow-equality affine set and the
/// product of per-block bound cones; both partial projections are exact, so
/// that the fixed point is the true projection. Warm starts carry the
/// splitting variables across episodes.
pub fn omd_argmin(
    polytope: &OccupancyPolytope,
    gradient: &[f64],
    anchor: &ExtendedOccupancy,
    eta: f64,
    tol: f64,
    warm: Option<&mut ProjectionWarmStart>,
) -> Result<(ExtendedOccupancy, ProjectionStats)> {
    let n = polytope.dims.extended_len();
    if gradient.len() != n || anchor.q.len() != n {
        return Err(Error::Dimension("omd_argmin input lengths".into()));
    }
    if !(eta > 0.0) || !(tol > 0.0) {
        return Err(Error::Validation("eta and tol must be positive".into()));
    }
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::Validation("gradient has non-finite entries".into()));
    }
    let target: Vec<f64> = anchor
        .q
        .iter()
        .zip(gradient)
        .map(|(&q, &g)| q - eta * g)
        .collect();
    let (q, stats) = project_onto_polytope(polytope, &target, tol, warm)?;
    Ok((ExtendedOccupancy::new(polytope.dims, q)?, stats))
}

/// Euclidean projection of `target` onto the polytope.
pub fn project_onto_polytope(
    polytope: &OccupancyPolytope,
    target: &[f64],
    tol: f64,
    warm: Option<&mut ProjectionWarmStart>,
) -> Result<(Vec<f64>, ProjectionStats)> {
    let n = polytope.dims.extended_len();
    let max_iter = 50 * n.max(64);
    let mut local = ProjectionWarmStart::default();
    let state = match warm {
        Some(w) => w,
        None => &mut local,
    };
    if state.z.len() != n {
        state.z = target.to_vec();
        let mut ws0 = ConeWorkspace::new(polytope.dims.s);
        polytope.project_cones(&mut state.z, &mut ws0);
        state.u = vec![0.0; n];
        state.rho = 1.0;
    }
    let mut rho = if state.rho > 0.0 { state.rho } else { 1.0 };
    let mut ws = ConeWorkspace::new(polytope.dims.s);
    let mut x = vec![0.0; n];
    let mut z_prev = vec![0.0; n];
    let over_relax = 1.6;
    let mut residual = f64::INFINITY;
    for iter in 0..max_iter {
        // x-step: equality-constrained proximal point.
        for i in 0..n {
            x[i] = (target[i] + rho * (state.z[i] - state.u[i])) / (1.0 + rho);
        }
        polytope.project_equalities(&mut x);
        // z-step with over-relaxation, then dual update u <- u + xr - z.
        z_prev.copy_from_slice(&state.z);
        for i in 0..n {
            let xr = over_relax * x[i] + (1.0 - over_relax) * z_prev[i];
            state.z[i] = xr + state.u[i];
        }
        polytope.project_cones(&mut state.z, &mut ws);
        let mut r_prim = 0.0f64;
        let mut r_dual = 0.0f64;
        for i in 0..n {
            let xr = over_relax * x[i] + (1.0 - over_relax) * z_prev[i];
            state.u[i] += xr - state.z[i];
            r_prim = r_prim.max((x[i] - state.z[i]).abs());
            r_dual = r_dual.max(rho * (state.z[i] - z_prev[i]).abs());
        }
        residual = r_prim.max(r_dual);
        if residual <= tol {
            return Ok((
                x,
                ProjectionStats {
                    iterations: iter + 1,
                    residual,
                },
            ));
        }
        if (iter + 1) % 50 == 0 {
            if r_prim > 10.0 * r_dual && rho < 1e6 {
                rho *= 2.0;
                for u in state.u.iter_mut() {
                    *u *= 0.5;
                }
            } else if r_dual > 10.0 * r_prim && rho > 1e-6 {
                rho *= 0.5;
                for u in state.u.iter_mut() {
                    *u *= 2.0;
                }
            }
        }
        state.rho = rho;
    }
    Err(Error::Convergence {
        residual,
        iterations: max_iter,
        tol,
    })
}

/// Occupancy of `policy` under a kernel chosen inside the polytope's bounds
/// (the bound midpoint projected back into the bracket). Used to initialize
/// the mirror-descent iterates.
pub fn nominal_occupancy(polytope: &OccupancyPolytope, policy: &Policy) -> Result<ExtendedOccupancy> {
    let d = polytope.dims;
    if policy.dims != d {
        return Err(Error::Dimension("nominal_occupancy policy dims".into()));
    }
    let mut kernel = vec![0.0; d.extended_len()];
    for h in 0..d.h {
        for s in 0..d.s {
            for a in 0..d.a {
                let row = polytope.kernel_in_bounds(h, s, a);
                let base = d.idx4(h, s, a, 0);
                kernel[base..base + d.s].copy_from_slice(&row);
            }
        }
    }
    policy_to_occupancy(policy, &kernel, &polytope.init_dist)
}

/// Solves the offline baseline `max r^T q` over the occupancy polytope at an
/// exactly known kernel, subject to the supplied cost constraints
/// `c^T q <= bound`.
///
/// The collapsed bounds make the extended polytope the lift of the marginal
/// one, so the LP runs over marginals `[H][S][A]` and the solution is lifted
/// back through the kernel.
pub fn solve_baseline_lp(
    env: &TabularCmdp,
    cost_constraints: &[(Vec<f64>, f64)],
) -> Result<(ExtendedOccupancy, f64)> {
    let d = env.dims;
    let n = d.marginal_len();
    for (c, _) in cost_constraints {
        if c.len() != n {
            return Err(Error::Dimension("cost constraint length".into()));
        }
    }
    let mut eq: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d.h * d.s);
    for h in 0..d.h {
        for s in 0..d.s {
            let mut row = vec![0.0; n];
            for a in 0..d.a {
                row[d.idx3(h, s, a)] += 1.0;
            }
            let rhs = if h == 0 {
                env.init_dist[s]
            } else {
                for s_prev in 0..d.s {
                    for a in 0..d.a {
                        row[d.idx3(h - 1, s_prev, a)] -=
                            env.transitions[d.idx4(h - 1, s_prev, a, s)];
                    }
                }
                0.0
            };
            eq.push((row, rhs));
        }
    }

    // Constraint generation: start without cost rows, add the most violated
    // one until none remain. Keeps the tableau small for large adversarial
    // constraint families.
    let mut active: Vec<usize> = Vec::new();
    let objective = env.mean_reward.clone();
    loop {
        let problem = LpProblem {
            num_vars: n,
            objective: objective.clone(),
            eq: eq.clone(),
            le: active
                .iter()
                .map(|&i| cost_constraints[i].clone())
                .collect(),
        };
        let sol = crate::simplex::solve(&problem)?;
        match sol.status {
            LpStatus::Optimal => {}
        }
        let mut worst = 1e-9;
        let mut worst_i = usize::MAX;
        for (i, (c, b)) in cost_constraints.iter().enumerate() {
            if active.contains(&i) {
                continue;
            }
            let v = dot(c, &sol.x) - b;
            if v > worst {
                worst = v;
                worst_i = i;
            }
        }
        if worst_i == usize::MAX {
            if sol.duality_gap > 1e-8 {
                return Err(Error::Validation(format!(
                    "LP duality gap {} above certificate tolerance",
                    sol.duality_gap
                )));
            }
            let mut q = vec![0.0; d.extended_len()];
            for h in 0..d.h {
                for s in 0..d.s {
                    for a in 0..d.a {
                        let m = sol.x[d.idx3(h, s, a)];
                        for s2 in 0..d.s {
                            q[d.idx4(h, s, a, s2)] = m * env.transitions[d.idx4(h, s, a, s2)];
                        }
                    }
                }
            }
            let occ = ExtendedOccupancy::new(d, q)?;
            return Ok((occ, sol.value));
        }
        active.push(worst_i);
    }
}

/// Max-norm distance helper used by the projection property tests.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    norm_inf(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>())
}
