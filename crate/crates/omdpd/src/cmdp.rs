//! Core domain types and exact dynamic-programming evaluation.
//!
//! Tensors are stored dense in row-major order. A transition tensor is
//! indexed `[h][s][a][s']`, per-step payoffs `[h][s][a]`. Dimensions are small
//! enough (a few thousand entries) that sparsity buys nothing.

use crate::error::{Error, Result};

/// Tolerance for probability inputs (exact up to accumulation error).
pub const INPUT_TOL: f64 = 1e-12;
/// Tolerance for optimizer outputs, which carry projection error.
pub const OUTPUT_TOL: f64 = 1e-8;

/// Problem dimensions: `s` states, `a` actions, `h` steps per episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub s: usize,
    pub a: usize,
    pub h: usize,
}

impl Dims {
    pub fn new(s: usize, a: usize, h: usize) -> Result<Self> {
        if s == 0 || a == 0 || h == 0 {
            return Err(Error::Dimension(format!(
                "dimensions must be positive, got S={s}, A={a}, H={h}"
            )));
        }
        Ok(Dims { s, a, h })
    }

    /// Number of entries in an `[H][S][A]` tensor.
    pub fn marginal_len(&self) -> usize {
        self.h * self.s * self.a
    }

    /// Number of entries in an `[H][S][A][S]` tensor.
    pub fn extended_len(&self) -> usize {
        self.h * self.s * self.a * self.s
    }

    #[inline]
    pub fn idx3(&self, h: usize, s: usize, a: usize) -> usize {
        (h * self.s + s) * self.a + a
    }

    #[inline]
    pub fn idx4(&self, h: usize, s: usize, a: usize, s2: usize) -> usize {
        ((h * self.s + s) * self.a + a) * self.s + s2
    }
}

fn check_prob_vector(v: &[f64], what: &str) -> Result<()> {
    let mut sum = 0.0;
    for &x in v {
        if !(x >= 0.0) {
            return Err(Error::Validation(format!("{what} has negative entry {x}")));
        }
        sum += x;
    }
    if (sum - 1.0).abs() > INPUT_TOL {
        return Err(Error::Validation(format!(
            "{what} sums to {sum}, expected 1 within {INPUT_TOL}"
        )));
    }
    Ok(())
}

/// The true environment: initial distribution, per-step transition kernels
/// and mean reward/cost tensors.
#[derive(Clone, Debug)]
pub struct TabularCmdp {
    pub dims: Dims,
    /// Initial state distribution, length `S`.
    pub init_dist: Vec<f64>,
    /// Transition kernels, `[H][S][A][S]`.
    pub transitions: Vec<f64>,
    /// Mean rewards in `[0, 1]`, `[H][S][A]`.
    pub mean_reward: Vec<f64>,
    /// Mean costs in `[-1, 1]`, `[H][S][A]`.
    pub mean_cost: Vec<f64>,
}

impl TabularCmdp {
    pub fn new(
        dims: Dims,
        init_dist: Vec<f64>,
        transitions: Vec<f64>,
        mean_reward: Vec<f64>,
        mean_cost: Vec<f64>,
    ) -> Result<Self> {
        if init_dist.len() != dims.s
            || transitions.len() != dims.extended_len()
            || mean_reward.len() != dims.marginal_len()
            || mean_cost.len() != dims.marginal_len()
        {
            return Err(Error::Dimension("environment tensor lengths".into()));
        }
        check_prob_vector(&init_dist, "initial distribution")?;
        for h in 0..dims.h {
            for s in 0..dims.s {
                for a in 0..dims.a {
                    let base = dims.idx4(h, s, a, 0);
                    check_prob_vector(
                        &transitions[base..base + dims.s],
                        &format!("transition row ({h},{s},{a})"),
                    )?;
                }
            }
        }
        for &r in &mean_reward {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Validation(format!("mean reward {r} outside [0,1]")));
            }
        }
        for &d in &mean_cost {
            if !(-1.0..=1.0).contains(&d) {
                return Err(Error::Validation(format!("mean cost {d} outside [-1,1]")));
            }
        }
        Ok(TabularCmdp {
            dims,
            init_dist,
            transitions,
            mean_reward,
            mean_cost,
        })
    }

    pub fn transition_row(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let base = self.dims.idx4(h, s, a, 0);
        &self.transitions[base..base + self.dims.s]
    }
}

/// A nonstationary Markov policy: `probs[h][s]` is a distribution over actions.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    pub dims: Dims,
    /// `[H][S][A]`, each `(h, s)` row a distribution over actions.
    pub probs: Vec<f64>,
}

impl Policy {
    pub fn new(dims: Dims, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != dims.marginal_len() {
            return Err(Error::Dimension("policy tensor length".into()));
        }
        for h in 0..dims.h {
            for s in 0..dims.s {
                let base = dims.idx3(h, s, 0);
                check_prob_vector(&probs[base..base + dims.a], &format!("policy row ({h},{s})"))?;
            }
        }
        Ok(Policy { dims, probs })
    }

    /// The uniform policy over actions at every state and step.
    pub fn uniform(dims: Dims) -> Self {
        Policy {
            dims,
            probs: vec![1.0 / dims.a as f64; dims.marginal_len()],
        }
    }

    pub fn row(&self, h: usize, s: usize) -> &[f64] {
        let base = self.dims.idx3(h, s, 0);
        &self.probs[base..base + self.dims.a]
    }
}

/// The extended occupancy measure `q_h(s, a, s')` with flow-conservation
/// structure. Marginalizing over the last coordinate gives `q_h(s, a)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtendedOccupancy {
    pub dims: Dims,
    /// `[H][S][A][S]`.
    pub q: Vec<f64>,
}

impl ExtendedOccupancy {
    pub fn new(dims: Dims, q: Vec<f64>) -> Result<Self> {
        if q.len() != dims.extended_len() {
            return Err(Error::Dimension("occupancy tensor length".into()));
        }
        Ok(ExtendedOccupancy { dims, q })
    }

    /// Marginal `q_h(s, a) = sum_{s'} q_h(s, a, s')`, laid out `[H][S][A]`.
    pub fn marginal(&self) -> Vec<f64> {
        let d = self.dims;
        let mut m = vec![0.0; d.marginal_len()];
        for i in 0..d.marginal_len() {
            let base = i * d.s;
            m[i] = self.q[base..base + d.s].iter().sum();
        }
        m
    }

    /// Per-state in-flow at layer `h`: `sum_{s,a} q_h(s, a, s')` for each `s'`.
    pub fn layer_inflow(&self, h: usize) -> Vec<f64> {
        let d = self.dims;
        let mut inflow = vec![0.0; d.s];
        for s in 0..d.s {
            for a in 0..d.a {
                for s2 in 0..d.s {
                    inflow[s2] += self.q[d.idx4(h, s, a, s2)];
                }
            }
        }
        inflow
    }

    /// Checks nonnegativity, per-layer normalization and flow conservation
    /// against the given initial distribution.
    pub fn validate(&self, init_dist: &[f64], tol: f64) -> Result<()> {
        let d = self.dims;
        for &x in &self.q {
            if x < -tol || !x.is_finite() {
                return Err(Error::Validation(format!("occupancy entry {x} < 0")));
            }
        }
        let marg = self.marginal();
        for h in 0..d.h {
            let layer: f64 = (0..d.s * d.a)
                .map(|i| marg[h * d.s * d.a + i])
                .sum();
            if (layer - 1.0).abs() > tol.max(OUTPUT_TOL) {
                return Err(Error::Validation(format!(
                    "layer {h} mass {layer}, expected 1"
                )));
            }
        }
        for h in 0..d.h {
            let expected: Vec<f64> = if h == 0 {
                init_dist.to_vec()
            } else {
                self.layer_inflow(h - 1)
            };
            for s in 0..d.s {
                let outflow: f64 = (0..d.a).map(|a| marg[d.idx3(h, s, a)]).sum();
                if (outflow - expected[s]).abs() > tol {
                    return Err(Error::Validation(format!(
                        "flow conservation violated at (h={h}, s={s}): out {outflow}, in {}",
                        expected[s]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Reward and cost values of a policy evaluated under one kernel.
#[derive(Clone, Copy, Debug)]
pub struct ValueResult {
    pub reward_value: f64,
    pub cost_value: f64,
}

/// Exact occupancy measure of `policy` under `(init, transitions)`.
///
/// `q_h(s,a,s') = Pr(s_h = s, a_h = a, s_{h+1} = s')`.
pub fn policy_to_occupancy(
    policy: &Policy,
    transitions: &[f64],
    init_dist: &[f64],
) -> Result<ExtendedOccupancy> {
    let d = policy.dims;
    if transitions.len() != d.extended_len() || init_dist.len() != d.s {
        return Err(Error::Dimension(
            "policy/transition dimension mismatch".into(),
        ));
    }
    let mut q = vec![0.0; d.extended_len()];
    let mut state_dist = init_dist.to_vec();
    for h in 0..d.h {
        let mut next = vec![0.0; d.s];
        for s in 0..d.s {
            let ps = state_dist[s];
            if ps == 0.0 {
                continue;
            }
            for a in 0..d.a {
                let pa = ps * policy.probs[d.idx3(h, s, a)];
                if pa == 0.0 {
                    continue;
                }
                for s2 in 0..d.s {
                    let v = pa * transitions[d.idx4(h, s, a, s2)];
                    q[d.idx4(h, s, a, s2)] = v;
                    next[s2] += v;
                }
            }
        }
        state_dist = next;
    }
    Ok(ExtendedOccupancy { dims: d, q })
}

/// Reconstructs the policy from an occupancy measure.
///
/// Rows with marginal mass below `INPUT_TOL` fall back to the uniform
/// distribution over actions.
pub fn occupancy_to_policy(occ: &ExtendedOccupancy) -> Policy {
    let d = occ.dims;
    let marg = occ.marginal();
    let mut probs = vec![0.0; d.marginal_len()];
    for h in 0..d.h {
        for s in 0..d.s {
            let base = d.idx3(h, s, 0);
            // Clamp projection noise before normalizing.
            let row: Vec<f64> = marg[base..base + d.a].iter().map(|&x| x.max(0.0)).collect();
            let total: f64 = row.iter().sum();
            if total < INPUT_TOL {
                for a in 0..d.a {
                    probs[base + a] = 1.0 / d.a as f64;
                }
            } else {
                for a in 0..d.a {
                    probs[base + a] = row[a] / total;
                }
            }
        }
    }
    Policy { dims: d, probs }
}

/// Expected cumulative payoff of `policy` via backward dynamic programming.
///
/// Agrees with `payoff . marginal(policy_to_occupancy(..))` within 1e-10.
pub fn evaluate_value(
    policy: &Policy,
    payoff: &[f64],
    transitions: &[f64],
    init_dist: &[f64],
) -> Result<f64> {
    let d = policy.dims;
    if payoff.len() != d.marginal_len()
        || transitions.len() != d.extended_len()
        || init_dist.len() != d.s
    {
        return Err(Error::Dimension("evaluate_value tensor lengths".into()));
    }
    if payoff.iter().any(|x| !x.is_finite()) {
        return Err(Error::Validation("payoff has non-finite entries".into()));
    }
    let mut v_next = vec![0.0; d.s];
    for h in (0..d.h).rev() {
        let mut v = vec![0.0; d.s];
        for s in 0..d.s {
            let mut vs = 0.0;
            for a in 0..d.a {
                let pa = policy.probs[d.idx3(h, s, a)];
                if pa == 0.0 {
                    continue;
                }
                let mut qsa = payoff[d.idx3(h, s, a)];
                for s2 in 0..d.s {
                    qsa += transitions[d.idx4(h, s, a, s2)] * v_next[s2];
                }
                vs += pa * qsa;
            }
            v[s] = vs;
        }
        v_next = v;
    }
    Ok(init_dist.iter().zip(&v_next).map(|(m, v)| m * v).sum())
}

/// Reward and cost values of a policy under the true environment.
pub fn evaluate_policy(env: &TabularCmdp, policy: &Policy, cost: &[f64]) -> Result<ValueResult> {
    Ok(ValueResult {
        reward_value: evaluate_value(policy, &env.mean_reward, &env.transitions, &env.init_dist)?,
        cost_value: evaluate_value(policy, cost, &env.transitions, &env.init_dist)?,
    })
}
