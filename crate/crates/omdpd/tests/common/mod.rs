//! Shared helpers for integration tests: an independent active-set QP
//! solver used as a projection oracle, plus small environment builders.

#![allow(dead_code)]

use omdpd::cmdp::Dims;
use omdpd::linalg::solve_dense;
use omdpd::polytope::OccupancyPolytope;

/// Linear-constraint form of an occupancy polytope: `eq_a x = eq_b`,
/// `ineq_g x >= ineq_h`, all rows dense over the extended coordinates.
pub struct LinearizedPolytope {
    pub n: usize,
    pub eq_a: Vec<Vec<f64>>,
    pub eq_b: Vec<f64>,
    pub ineq_g: Vec<Vec<f64>>,
    pub ineq_h: Vec<f64>,
}

/// Rewrite the polytope as plain linear constraints built from scratch:
/// flow equalities per (h, s), then inequalities x_i >= 0,
/// x_i - low_i*t >= 0, high_i*t - x_i >= 0 with t the block sum. Rows
/// that would duplicate the nonnegativity rows (low_i == 0) are skipped
/// so the active-set solver never sees an exactly repeated constraint.
pub fn linearize(polytope: &OccupancyPolytope) -> LinearizedPolytope {
    let d = polytope.dims;
    let n = d.extended_len();
    let mut eq_a = Vec::with_capacity(d.h * d.s);
    let mut eq_b = Vec::with_capacity(d.h * d.s);
    for h in 0..d.h {
        for s in 0..d.s {
            let mut row = vec![0.0; n];
            for a in 0..d.a {
                for s2 in 0..d.s {
                    row[d.idx4(h, s, a, s2)] += 1.0;
                }
            }
            let rhs = if h == 0 {
                polytope.init_dist[s]
            } else {
                for sp in 0..d.s {
                    for a in 0..d.a {
                        row[d.idx4(h - 1, sp, a, s)] -= 1.0;
                    }
                }
                0.0
            };
            eq_a.push(row);
            eq_b.push(rhs);
        }
    }
    let mut ineq_g = Vec::new();
    let mut ineq_h = Vec::new();
    for i in 0..n {
        let mut row = vec![0.0; n];
        row[i] = 1.0;
        ineq_g.push(row);
        ineq_h.push(0.0);
    }
    for base in (0..n).step_by(d.s) {
        for i in base..base + d.s {
            if polytope.low[i] > 0.0 {
                let mut row = vec![0.0; n];
                for j in base..base + d.s {
                    row[j] -= polytope.low[i];
                }
                row[i] += 1.0;
                ineq_g.push(row);
                ineq_h.push(0.0);
            }
            let mut row = vec![0.0; n];
            for j in base..base + d.s {
                row[j] += polytope.high[i];
            }
            row[i] -= 1.0;
            ineq_g.push(row);
            ineq_h.push(0.0);
        }
    }
    LinearizedPolytope {
        n,
        eq_a,
        eq_b,
        ineq_g,
        ineq_h,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Primal active-set method for `min 0.5*||x - target||^2` subject to the
/// linearized constraints, started from a strictly feasible point. This is
/// a from-scratch oracle: it shares no iteration logic with the production
/// ADMM projection. Returns the minimizer.
pub fn active_set_qp(lp: &LinearizedPolytope, target: &[f64], x0: &[f64]) -> Vec<f64> {
    let n = lp.n;
    let m = lp.eq_a.len();
    let mut x = x0.to_vec();
    let mut working: Vec<usize> = Vec::new();
    // Constraints whose addition made the KKT system singular; skipped as
    // blockers until the working set next shrinks.
    let mut banned: Vec<usize> = Vec::new();
    let step_tol = 1e-9;
    let mult_tol = 1e-9;

    for _iter in 0..5000 {
        // KKT system for the step d: minimize 0.5*||x + d - target||^2
        // with E d = 0 and g_j d = 0 for every working constraint.
        let k = n + m + working.len();
        let mut kkt = vec![0.0; k * k];
        let mut rhs = vec![0.0; k];
        for i in 0..n {
            kkt[i * k + i] = 1.0;
            rhs[i] = target[i] - x[i];
        }
        for (r, row) in lp.eq_a.iter().enumerate() {
            for c in 0..n {
                kkt[(n + r) * k + c] = row[c];
                kkt[c * k + n + r] = row[c];
            }
        }
        for (r, &j) in working.iter().enumerate() {
            for c in 0..n {
                kkt[(n + m + r) * k + c] = lp.ineq_g[j][c];
                kkt[c * k + n + m + r] = lp.ineq_g[j][c];
            }
        }
        let sol = match solve_dense(&kkt, &rhs, k) {
            Some(s) => s,
            None => {
                // Dependent working set; drop the newest row and bar it
                // until the set changes again.
                if let Some(j) = working.pop() {
                    banned.push(j);
                }
                continue;
            }
        };
        let d = &sol[..n];
        let step_norm = d.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));

        if step_norm <= step_tol {
            // Stationary on the working set; inspect multipliers. With the
            // KKT block signs used above, the standard multiplier of
            // working constraint r is -sol[n+m+r], so optimality means
            // sol[n+m+r] <= 0 for all r. Bland-style anti-cycling: drop
            // the violating row with the smallest constraint index.
            let mut drop_idx = None;
            let mut smallest_constraint = usize::MAX;
            for r in 0..working.len() {
                if sol[n + m + r] > mult_tol && working[r] < smallest_constraint {
                    smallest_constraint = working[r];
                    drop_idx = Some(r);
                }
            }
            match drop_idx {
                Some(r) => {
                    working.remove(r);
                    banned.clear();
                }
                None => return x,
            }
            continue;
        }

        // Longest step along d keeping every inactive inequality feasible;
        // ties on the step length break toward the smallest index (Bland).
        let mut alpha = 1.0f64;
        let mut blocker = None;
        for j in 0..lp.ineq_g.len() {
            if working.contains(&j) || banned.contains(&j) {
                continue;
            }
            let gd = dot(&lp.ineq_g[j], d);
            if gd < -1e-13 {
                let slack = dot(&lp.ineq_g[j], &x) - lp.ineq_h[j];
                let limit = (slack / -gd).max(0.0);
                if limit < alpha - 1e-15 {
                    alpha = limit;
                    blocker = Some(j);
                }
            }
        }
        for i in 0..n {
            x[i] += alpha * d[i];
        }
        if let Some(j) = blocker {
            working.push(j);
        }
    }
    panic!("active-set oracle failed to converge in 5000 iterations");
}

/// QP objective value for the projection problem.
pub fn projection_objective(x: &[f64], target: &[f64]) -> f64 {
    x.iter()
        .zip(target)
        .map(|(a, b)| 0.5 * (a - b) * (a - b))
        .sum()
}

/// Deterministic small environment config used across oracle tests.
pub fn small_env_config(s: usize, a: usize, h: usize, seed: u64) -> omdpd::env::EnvConfig {
    omdpd::env::EnvConfig {
        num_states: s,
        num_actions: a,
        horizon: h,
        dirichlet_alpha: 0.5,
        cost_mode: omdpd::env::CostMode::Stochastic,
        adversarial_cost_levels: vec![-1.0, -0.6, -0.2, 0.0, 0.2, 0.6, 1.0],
        reward_noise: omdpd::env::RewardNoise::None,
        reward_noise_sigma: 0.1,
        resample_costs: false,
        seed,
    }
}

/// Widened-bracket polytope around an environment's true kernel, with
/// strictly positive lower bounds so linearization rows stay distinct.
pub fn widened_polytope(env: &omdpd::cmdp::TabularCmdp, width: f64) -> OccupancyPolytope {
    let d = env.dims;
    let n = d.extended_len();
    let mut low = vec![0.0; n];
    let mut high = vec![0.0; n];
    for i in 0..n {
        let p = env.transitions[i];
        low[i] = (p * (1.0 - width)).max(1e-9);
        high[i] = (p + width).min(1.0);
    }
    OccupancyPolytope::new(d, env.init_dist.clone(), low, high).expect("widened polytope")
}

pub fn dims(s: usize, a: usize, h: usize) -> Dims {
    Dims::new(s, a, h).unwrap()
}
