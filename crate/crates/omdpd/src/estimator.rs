//! Visit counting, empirical models, UCB bonuses, and the transition
//! confidence set used by the optimistic loop.

use crate::cmdp::{Dims, TabularCmdp};
use crate::env::{CostMode, EpisodeFeedback};
use crate::error::{Error, Result};

/// Running empirical model of the environment under bandit feedback.
#[derive(Clone, Debug)]
pub struct ConfidenceModel {
    pub dims: Dims,
    pub cost_mode: CostMode,
    /// Visit counts `n_h(s,a)`, `[H][S][A]`.
    pub counts: Vec<u64>,
    /// Transition counts, `[H][S][A][S]`.
    pub transition_counts: Vec<u64>,
    reward_sums: Vec<f64>,
    cost_sums: Vec<f64>,
    /// `ln(12 S A H K / delta)`.
    pub l_delta: f64,
    /// `ln(6 S A H K / delta)`.
    pub lp_delta: f64,
    /// Planned episode budget; running past it invalidates the constants.
    pub planned_episodes: usize,
    pub delta: f64,
    pub episodes_seen: usize,
}

impl ConfidenceModel {
    pub fn new(dims: Dims, cost_mode: CostMode, planned_episodes: usize, delta: f64) -> Result<Self> {
        if !(0.0 < delta && delta < 1.0) {
            return Err(Error::Validation(format!("delta {delta} outside (0,1)")));
        }
        if planned_episodes == 0 {
            return Err(Error::Validation("planned episode budget must be > 0".into()));
        }
        let sahk = (dims.s * dims.a * dims.h * planned_episodes) as f64;
        Ok(ConfidenceModel {
            dims,
            cost_mode,
            counts: vec![0; dims.marginal_len()],
            transition_counts: vec![0; dims.extended_len()],
            reward_sums: vec![0.0; dims.marginal_len()],
            cost_sums: vec![0.0; dims.marginal_len()],
            l_delta: (12.0 * sahk / delta).ln(),
            lp_delta: (6.0 * sahk / delta).ln(),
            planned_episodes,
            delta,
            episodes_seen: 0,
        })
    }

    /// Empirical transition row; uniform when the pair is unvisited.
    pub fn p_hat_row(&self, h: usize, s: usize, a: usize) -> Vec<f64> {
        let d = self.dims;
        let n = self.counts[d.idx3(h, s, a)];
        let base = d.idx4(h, s, a, 0);
        if n == 0 {
            vec![1.0 / d.s as f64; d.s]
        } else {
            self.transition_counts[base..base + d.s]
                .iter()
                .map(|&c| c as f64 / n as f64)
                .collect()
        }
    }

    /// Empirical mean reward (0 when unvisited, the `n v 1` convention).
    pub fn r_hat(&self, i: usize) -> f64 {
        self.reward_sums[i] / (self.counts[i].max(1) as f64)
    }

    /// Empirical mean cost (stochastic mode only; 0 when unvisited).
    pub fn d_hat(&self, i: usize) -> f64 {
        self.cost_sums[i] / (self.counts[i].max(1) as f64)
    }

    /// Folds one episode of feedback into the counts and sample sums.
    pub fn update_counts(&mut self, feedback: &EpisodeFeedback) -> Result<()> {
        feedback.validate(self.dims)?;
        if self.episodes_seen >= self.planned_episodes {
            return Err(Error::BudgetExceeded(format!(
                "model was sized for K={} episodes",
                self.planned_episodes
            )));
        }
        match (self.cost_mode, &feedback.observed_costs) {
            (CostMode::Stochastic, None) => {
                return Err(Error::Mode(
                    "stochastic model requires observed_costs feedback".into(),
                ))
            }
            (CostMode::Adversarial, Some(_)) => {
                // Adversarial costs are revealed, never estimated.
                return Err(Error::Mode(
                    "adversarial-mode feedback must not update the cost estimate".into(),
                ));
            }
            _ => {}
        }
        let d = self.dims;
        for (i, step) in feedback.trajectory.iter().enumerate() {
            let m = d.idx3(step.h, step.s, step.a);
            self.counts[m] += 1;
            self.transition_counts[d.idx4(step.h, step.s, step.a, step.s_next)] += 1;
            self.reward_sums[m] += feedback.observed_rewards[i];
            if let Some(costs) = &feedback.observed_costs {
                self.cost_sums[m] += costs[i];
            }
        }
        self.episodes_seen += 1;
        Ok(())
    }

    /// Hoeffding-style reward/cost bonus `sqrt(L_delta / (n v 1))`.
    pub fn beta_r(&self, i: usize) -> f64 {
        (self.l_delta / self.counts[i].max(1) as f64).sqrt()
    }

    /// Optimistic rewards, pessimistic costs and transition interval bounds.
    pub fn compute_bonuses(&self) -> OptimisticModel {
        let d = self.dims;
        let m_len = d.marginal_len();
        let e_len = d.extended_len();
        let mut r_tilde = vec![0.0; m_len];
        let mut d_tilde = vec![0.0; m_len];
        let mut beta_r = vec![0.0; m_len];
        let mut beta_p = vec![0.0; e_len];
        let mut low = vec![0.0; e_len];
        let mut high = vec![0.0; e_len];
        for h in 0..d.h {
            for s in 0..d.s {
                for a in 0..d.a {
                    let i = d.idx3(h, s, a);
                    let n = self.counts[i].max(1) as f64;
                    let br = self.beta_r(i);
                    beta_r[i] = br;
                    r_tilde[i] = self.r_hat(i) + br;
                    d_tilde[i] = self.d_hat(i) - br;
                    let p_row = self.p_hat_row(h, s, a);
                    for s2 in 0..d.s {
                        let j = d.idx4(h, s, a, s2);
                        let p = p_row[s2];
                        let bp = 2.0 * (p * (1.0 - p) * self.lp_delta / n).sqrt()
                            + (14.0 / 3.0) * self.lp_delta / n;
                        beta_p[j] = bp;
                        low[j] = (p - bp).max(0.0);
                        high[j] = (p + bp).min(1.0);
                    }
                }
            }
        }
        OptimisticModel {
            dims: d,
            r_tilde,
            d_tilde,
            beta_r,
            beta_p,
            low,
            high,
        }
    }
}

/// Optimistic reward, pessimistic cost, and the linearized transition
/// confidence intervals `[low, high]`.
#[derive(Clone, Debug)]
pub struct OptimisticModel {
    pub dims: Dims,
    /// `r_hat + beta_r`; deliberately not clipped to `[0, 1]`.
    pub r_tilde: Vec<f64>,
    /// `d_hat - beta_d` with `beta_d = beta_r`; not clipped to `[-1, 1]`.
    pub d_tilde: Vec<f64>,
    pub beta_r: Vec<f64>,
    pub beta_p: Vec<f64>,
    /// `max(0, p_hat - beta_p)`, `[H][S][A][S]`.
    pub low: Vec<f64>,
    /// `min(1, p_hat + beta_p)`, `[H][S][A][S]`.
    pub high: Vec<f64>,
}

/// One entry that breaks a confidence interval, for diagnostics.
#[derive(Clone, Copy, Debug)]
pub struct WorstEntry {
    pub index: usize,
    /// `|truth - estimate| - bonus` (positive means violated).
    pub excess: f64,
}

/// Per-event outcome of the good-event diagnostic.
#[derive(Clone, Debug)]
pub struct GoodEventReport {
    pub transitions_ok: bool,
    pub rewards_ok: bool,
    /// `None` in adversarial mode, where costs are never estimated.
    pub costs_ok: Option<bool>,
    pub worst_transition: WorstEntry,
    pub worst_reward: WorstEntry,
    pub worst_cost: Option<WorstEntry>,
}

impl GoodEventReport {
    pub fn holds(&self) -> bool {
        self.transitions_ok && self.rewards_ok && self.costs_ok.unwrap_or(true)
    }
}

/// Diagnostic check that the truth lies inside every confidence interval.
/// Requires the true environment, so it only runs in diagnostic mode.
pub fn good_event_holds(
    model: &ConfidenceModel,
    optimistic: &OptimisticModel,
    truth: &TabularCmdp,
) -> Result<GoodEventReport> {
    let d = model.dims;
    if truth.dims != d {
        return Err(Error::Dimension("good_event_holds dims".into()));
    }
    let mut worst_p = WorstEntry {
        index: 0,
        excess: f64::NEG_INFINITY,
    };
    let mut worst_r = WorstEntry {
        index: 0,
        excess: f64::NEG_INFINITY,
    };
    let mut worst_d = WorstEntry {
        index: 0,
        excess: f64::NEG_INFINITY,
    };
    for h in 0..d.h {
        for s in 0..d.s {
            for a in 0..d.a {
                let i = d.idx3(h, s, a);
                let p_row = model.p_hat_row(h, s, a);
                for s2 in 0..d.s {
                    let j = d.idx4(h, s, a, s2);
                    let excess = (truth.transitions[j] - p_row[s2]).abs() - optimistic.beta_p[j];
                    if excess > worst_p.excess {
                        worst_p = WorstEntry { index: j, excess };
                    }
                }
                let er = (truth.mean_reward[i] - model.r_hat(i)).abs() - optimistic.beta_r[i];
                if er > worst_r.excess {
                    worst_r = WorstEntry { index: i, excess: er };
                }
                if model.cost_mode == CostMode::Stochastic {
                    let ed = (truth.mean_cost[i] - model.d_hat(i)).abs() - optimistic.beta_r[i];
                    if ed > worst_d.excess {
                        worst_d = WorstEntry { index: i, excess: ed };
                    }
                }
            }
        }
    }
    let stochastic = model.cost_mode == CostMode::Stochastic;
    Ok(GoodEventReport {
        transitions_ok: worst_p.excess <= 0.0,
        rewards_ok: worst_r.excess <= 0.0,
        costs_ok: stochastic.then(|| worst_d.excess <= 0.0),
        worst_transition: worst_p,
        worst_reward: worst_r,
        worst_cost: stochastic.then_some(worst_d),
    })
}
