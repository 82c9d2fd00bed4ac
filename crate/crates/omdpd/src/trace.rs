//! Per-episode run records and the CSV serialization used by the harness.

use std::io::Write;

use crate::error::Result;

/// One executed episode.
#[derive(Clone, Debug)]
pub struct EpisodeRecord {
    /// 1-based episode index.
    pub k: usize,
    /// True reward value of the executed policy under the true kernel.
    pub value_reward_true: f64,
    /// True cost value of the executed policy (mean cost in stochastic mode,
    /// the episode's revealed cost vector in adversarial mode).
    pub value_cost_true: f64,
    /// Estimated constraint level `d_tilde . q_k` driving the dual update.
    pub dtilde_q: f64,
    /// Dual variable after this episode's update.
    pub lambda: f64,
    /// Learning rate used in the refinement step that produced `q_k`.
    pub eta: f64,
    /// Residual of the projection that produced `q_k` (0 for the initial
    /// nominal iterate).
    pub proj_residual: f64,
    /// Whether the per-step dual drift inequality held.
    pub drift_ok: bool,
    /// Whether the exponent overflow guard fired this episode.
    pub guard_triggered: bool,
    /// Confidence intervals contained the truth (diagnostic mode only).
    pub good_event: Option<bool>,
    /// `d_tilde . q*` against a reference feasible occupancy, when supplied.
    pub dtilde_qstar: Option<f64>,
}

/// Complete output of one algorithm run.
#[derive(Clone, Debug)]
pub struct RunTrace {
    pub records: Vec<EpisodeRecord>,
    pub alpha: f64,
    pub beta: f64,
    pub diameter_bound: f64,
    /// Populated when the run stopped early (projection failure etc.);
    /// records up to the failure are retained.
    pub aborted: Option<String>,
}

impl RunTrace {
    pub fn completed(&self, planned: usize) -> bool {
        self.aborted.is_none() && self.records.len() == planned
    }
}

fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes the canonical per-episode CSV. The cumulative series are computed
/// by the caller so the file carries the final regret/violation columns.
pub fn write_csv<W: Write>(
    out: &mut W,
    trace: &RunTrace,
    cum_regret: &[f64],
    cum_violation: &[f64],
) -> Result<()> {
    writeln!(
        out,
        "k,value_reward_true,value_cost_true,dtilde_q,lambda,eta,proj_residual,cum_regret,cum_violation"
    )?;
    for (i, rec) in trace.records.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            rec.k,
            fmt17(rec.value_reward_true),
            fmt17(rec.value_cost_true),
            fmt17(rec.dtilde_q),
            fmt17(rec.lambda),
            fmt17(rec.eta),
            fmt17(rec.proj_residual),
            fmt17(cum_regret[i]),
            fmt17(cum_violation[i]),
        )?;
    }
    Ok(())
}
