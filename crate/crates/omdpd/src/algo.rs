//! The main loop: optimistic mirror descent over occupancy measures with a
//! multiplicative dual potential, plus the adaptive learning rate and the
//! surrogate objective it descends.

use crate::cmdp::{evaluate_policy, occupancy_to_policy, Dims, ExtendedOccupancy, Policy};
use crate::env::{CostMode, Simulator};
use crate::error::{Error, Result};
use crate::estimator::{good_event_holds, ConfidenceModel};
use crate::linalg::dot;
use crate::polytope::{
    nominal_occupancy, omd_argmin, OccupancyPolytope, ProjectionWarmStart, PROJECTION_TOL,
};
use crate::trace::{EpisodeRecord, RunTrace};

/// Exponent cap applied before every exponentiation of `beta * lambda`.
/// Unreachable under the default constants; hitting it is logged as
/// anomalous in the trace.
pub const EXP_GUARD: f64 = 500.0;

/// Dual potential state for `Phi(x) = exp(beta x) - 1`.
#[derive(Clone, Debug)]
pub struct DualState {
    pub lambda: f64,
    pub beta: f64,
    /// `ln Phi'(lambda) = ln beta + beta * lambda`, kept in sync.
    pub log_phi_prime: f64,
    /// Sticky flag: the exponent guard fired at least once.
    pub guard_triggered: bool,
}

impl DualState {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::Validation(format!("beta must be positive, got {beta}")));
        }
        Ok(DualState {
            lambda: 0.0,
            beta,
            log_phi_prime: beta.ln(),
            guard_triggered: false,
        })
    }

    /// `Phi'(lambda) = beta * exp(beta * lambda)`, exponent-guarded.
    pub fn phi_prime(&mut self) -> f64 {
        let mut e = self.beta * self.lambda;
        if e > EXP_GUARD {
            e = EXP_GUARD;
            self.guard_triggered = true;
        }
        self.beta * e.exp()
    }

    /// `Phi(lambda) = exp(beta * lambda) - 1`, exponent-guarded.
    pub fn phi(&mut self) -> f64 {
        let mut e = self.beta * self.lambda;
        if e > EXP_GUARD {
            e = EXP_GUARD;
            self.guard_triggered = true;
        }
        e.exp_m1()
    }
}

/// `lambda <- lambda + alpha * [d_vec . q]_+`. Returns the raw constraint
/// level `d_vec . q` (before the positive part).
pub fn update_dual(dual: &mut DualState, d_vec: &[f64], q: &ExtendedOccupancy, alpha: f64) -> f64 {
    let level = dot(d_vec, &q.marginal());
    dual.lambda += alpha * level.max(0.0);
    dual.log_phi_prime = dual.beta.ln() + dual.beta * dual.lambda;
    level
}

/// Checks the per-step potential drift inequality
/// `Phi(lambda_k) - Phi(lambda_{k-1}) <= Phi'(lambda_k) * delta` for the
/// increment `delta = alpha [d.q]_+`. Factoring out `exp(beta lambda_{k-1})`
/// reduces it to `expm1(beta delta) <= beta delta exp(beta delta)`, which is
/// checkable without overflow.
pub fn drift_holds(beta: f64, increment: f64) -> bool {
    let e = beta * increment;
    e.exp_m1() <= e * e.exp()
}

/// Surrogate objective
/// `f_k(q) = alpha(-r.q + Phi'(lambda)[d.q]_+) + 1/2 ||q - anchor||^2`,
/// with the payoff terms taken on marginals. The proximal term's sign makes
/// the refinement gradient `+(q - anchor)`, consistent with the
/// finite-difference checks below.
pub fn surrogate_value(
    q: &ExtendedOccupancy,
    r_tilde: &[f64],
    d_tilde: &[f64],
    dual: &mut DualState,
    alpha: f64,
    anchor: &ExtendedOccupancy,
) -> f64 {
    let m = q.marginal();
    let payoff = alpha * (-dot(r_tilde, &m) + dual.phi_prime() * dot(d_tilde, &m).max(0.0));
    let prox: f64 = q
        .q
        .iter()
        .zip(&anchor.q)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum();
    payoff + 0.5 * prox
}

/// Replicates a marginal-space gradient across the `s'` coordinate: each
/// extended entry `(h,s,a,s')` receives `g_h(s,a)` because
/// `q_h(s,a) = sum_{s'} q_h(s,a,s')`.
pub fn broadcast_marginal(dims: Dims, g: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; dims.extended_len()];
    for (i, &gi) in g.iter().enumerate() {
        out[i * dims.s..(i + 1) * dims.s].fill(gi);
    }
    out
}

/// Gradient of the surrogate at its anchor:
/// `alpha(-r + Phi'(lambda) d)` broadcast to the extended space; the
/// proximal term contributes zero there. With `hinge_aware` the cost term
/// drops when the constraint level at the anchor is strictly negative.
pub fn surrogate_gradient(
    q_k: &ExtendedOccupancy,
    r_tilde: &[f64],
    d_tilde: &[f64],
    dual: &mut DualState,
    alpha: f64,
    hinge_aware: bool,
) -> Vec<f64> {
    let dims = q_k.dims;
    let cost_scale = if hinge_aware && dot(d_tilde, &q_k.marginal()) < 0.0 {
        0.0
    } else {
        dual.phi_prime()
    };
    let g: Vec<f64> = r_tilde
        .iter()
        .zip(d_tilde)
        .map(|(&r, &d)| alpha * (-r + cost_scale * d))
        .collect();
    broadcast_marginal(dims, &g)
}

/// Gradient of the surrogate away from its anchor, used by the refinement
/// phase: the hinge subgradient is evaluated at `q_hat` (zero on the
/// strictly negative side), and the proximal term contributes
/// `q_hat - anchor`.
pub fn refinement_gradient(
    q_hat: &ExtendedOccupancy,
    anchor: &ExtendedOccupancy,
    r_tilde: &[f64],
    d_tilde: &[f64],
    dual: &mut DualState,
    alpha: f64,
) -> Vec<f64> {
    let dims = q_hat.dims;
    let cost_scale = if dot(d_tilde, &q_hat.marginal()) < 0.0 {
        0.0
    } else {
        dual.phi_prime()
    };
    let g: Vec<f64> = r_tilde
        .iter()
        .zip(d_tilde)
        .map(|(&r, &d)| alpha * (-r + cost_scale * d))
        .collect();
    let mut out = broadcast_marginal(dims, &g);
    for (o, (&x, &y)) in out.iter_mut().zip(q_hat.q.iter().zip(&anchor.q)) {
        *o += x - y;
    }
    out
}

/// Running gradient-variation sums for the adaptive learning rate: the two
/// windows are `sum_{i<=j} ||g_i - g_{i-1}||^2` for the latest and the
/// previous `j`, with `g_0 = 0`.
#[derive(Clone, Debug)]
pub struct GradHistory {
    prev: Vec<f64>,
    pub sum_latest: f64,
    pub sum_prev: f64,
    pub count: usize,
}

impl GradHistory {
    pub fn new(n: usize) -> Self {
        GradHistory {
            prev: vec![0.0; n],
            sum_latest: 0.0,
            sum_prev: 0.0,
            count: 0,
        }
    }

    pub fn push(&mut self, grad: &[f64]) {
        let diff: f64 = grad
            .iter()
            .zip(&self.prev)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        self.sum_prev = self.sum_latest;
        self.sum_latest += diff;
        self.prev.copy_from_slice(grad);
        self.count += 1;
    }
}

/// `eta = sqrt(C) min{ 1 / (sqrt(S_latest) + sqrt(S_prev)), 1 }`, with the
/// `1/0 = +inf` convention so empty history gives `sqrt(C)`.
pub fn learning_rate(history: &GradHistory, c: f64) -> f64 {
    let denom = history.sum_latest.sqrt() + history.sum_prev.sqrt();
    if denom <= 0.0 {
        c.sqrt()
    } else {
        c.sqrt() * (1.0 / denom).min(1.0)
    }
}

/// Algorithm constants.
#[derive(Clone, Copy, Debug)]
pub struct Params {
    pub k_total: usize,
    pub delta: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Squared-diameter bound C for the learning rate.
    pub c: f64,
    pub known_model: bool,
    pub hinge_aware: bool,
}

/// `ln(12 S A H K / delta)`, the confidence-log term entering `alpha`.
pub fn l_delta(dims: Dims, k_total: usize, delta: f64) -> f64 {
    (12.0 * (dims.s * dims.a * dims.h * k_total) as f64 / delta).ln()
}

/// Diameter bound: half the squared occupancy diameter `sqrt(SAH)`.
pub fn default_diameter(dims: Dims) -> f64 {
    0.5 * (dims.s * dims.a * dims.h) as f64
}

pub fn default_alpha(dims: Dims, k_total: usize, delta: f64) -> f64 {
    let sah = (dims.s * dims.a * dims.h) as f64;
    1.0 / (2.0 * (1.0 + l_delta(dims, k_total, delta).sqrt()) * sah)
}

/// Default potential parameter.
pub fn default_beta(dims: Dims, k_total: usize, c: f64) -> f64 {
    let sah = (dims.s * dims.a * dims.h) as f64;
    sah / (8.0 * c.sqrt() * (6.0 * sah * k_total as f64).sqrt())
}

/// Tighter potential parameter admissible when the model is known and the
/// reward is fixed.
pub fn known_model_beta(dims: Dims, k_total: usize, c: f64) -> f64 {
    let sah = (dims.s * dims.a * dims.h) as f64;
    2.0 * sah / (3.5 * c.sqrt() * (2.0 * sah * k_total as f64).sqrt())
}

impl Params {
    /// Defaults for an unknown-model run.
    pub fn defaults(dims: Dims, k_total: usize, delta: f64) -> Self {
        let c = default_diameter(dims);
        Params {
            k_total,
            delta,
            alpha: default_alpha(dims, k_total, delta),
            beta: default_beta(dims, k_total, c),
            c,
            known_model: false,
            hinge_aware: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_total == 0 {
            return Err(Error::Validation("k_total must be >= 1".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Validation("delta must lie in (0,1)".into()));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("C", self.c)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Validation(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Run options beyond the core constants.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub params: Params,
    pub projection_tol: f64,
    /// Per-episode confidence-interval check against the true model
    /// (diagnostics; requires the simulator's ground truth).
    pub track_good_event: bool,
    /// Reference feasible occupancy; when set, `d_tilde . q_ref` is logged
    /// per episode.
    pub reference_occupancy: Option<ExtendedOccupancy>,
}

impl RunOptions {
    pub fn new(params: Params) -> Self {
        RunOptions {
            params,
            projection_tol: PROJECTION_TOL,
            track_good_event: false,
            reference_occupancy: None,
        }
    }
}

/// Executes the full two-phase optimistic mirror-descent primal-dual loop.
///
/// Per episode `k`: play the policy of `q_k`, ingest feedback (counts and
/// bonuses, or the revealed cost vector), update the dual with the fresh
/// estimates at `q_k`, then build the next iterates
/// `q_hat_{k+1} = argmin over Q_k of eta_k <grad_k, q> + 1/2||q - q_hat_k||^2`
/// and `q_{k+1}` from the refinement gradient at `q_hat_{k+1}` with the
/// learning rate refreshed by the new gradient-variation term.
///
/// Solver failures abort the run; the trace keeps the completed episodes and
/// the abort reason.
pub fn run_omdpd(sim: &mut Simulator, opts: &RunOptions) -> Result<RunTrace> {
    let params = &opts.params;
    params.validate()?;
    let dims = sim.dims();
    let truth = sim.env.clone();
    let cost_mode = sim.config.cost_mode;
    let m_len = dims.marginal_len();

    let mut est = if params.known_model {
        None
    } else {
        Some(ConfidenceModel::new(dims, cost_mode, params.k_total, params.delta)?)
    };
    let mut polytope = match &est {
        Some(e) => OccupancyPolytope::from_model(&e.compute_bonuses(), &truth.init_dist)?,
        None => OccupancyPolytope::from_kernel(&truth)?,
    };
    let mut r_tilde = if params.known_model {
        truth.mean_reward.clone()
    } else {
        vec![0.0; m_len]
    };
    let mut d_tilde = if params.known_model && cost_mode == CostMode::Stochastic {
        truth.mean_cost.clone()
    } else {
        vec![0.0; m_len]
    };

    let mut dual = DualState::new(params.beta)?;
    let mut hist = GradHistory::new(dims.extended_len());
    let mut q = nominal_occupancy(&polytope, &Policy::uniform(dims))?;
    let mut q_hat = q.clone();
    let mut eta_used = params.c.sqrt();
    let mut resid_used = 0.0f64;
    let mut warm_opt = ProjectionWarmStart::default();
    let mut warm_ref = ProjectionWarmStart::default();
    let reference_marginal = opts.reference_occupancy.as_ref().map(|r| r.marginal());

    let mut records = Vec::with_capacity(params.k_total);
    let mut aborted: Option<String> = None;

    for k in 1..=params.k_total {
        let policy = occupancy_to_policy(&q);
        let feedback = sim.sample_episode(&policy, k as u64)?;

        let mut good_event = None;
        if let Some(est) = est.as_mut() {
            est.update_counts(&feedback)?;
            let opt = est.compute_bonuses();
            r_tilde.copy_from_slice(&opt.r_tilde);
            match cost_mode {
                CostMode::Stochastic => d_tilde.copy_from_slice(&opt.d_tilde),
                CostMode::Adversarial => {
                    d_tilde.copy_from_slice(feedback.revealed_cost_vector.as_ref().ok_or_else(
                        || Error::Mode("adversarial feedback missing revealed costs".into()),
                    )?)
                }
            }
            if opts.track_good_event {
                good_event = Some(good_event_holds(est, &opt, &truth)?.holds());
            }
            polytope = match OccupancyPolytope::from_model(&opt, &truth.init_dist) {
                Ok(p) => p,
                Err(e) => {
                    aborted = Some(format!("confidence polytope rebuild failed: {e}"));
                    break;
                }
            };
        } else if cost_mode == CostMode::Adversarial {
            d_tilde.copy_from_slice(feedback.revealed_cost_vector.as_ref().ok_or_else(|| {
                Error::Mode("adversarial feedback missing revealed costs".into())
            })?);
        }

        let lambda_before = dual.lambda;
        let level = update_dual(&mut dual, &d_tilde, &q, params.alpha);
        let increment = dual.lambda - lambda_before;
        let drift_ok = drift_holds(params.beta, increment);

        let true_cost: &[f64] = match cost_mode {
            CostMode::Stochastic => &truth.mean_cost,
            CostMode::Adversarial => feedback
                .revealed_cost_vector
                .as_ref()
                .expect("checked above"),
        };
        let values = evaluate_policy(&truth, &policy, true_cost)?;
        records.push(EpisodeRecord {
            k,
            value_reward_true: values.reward_value,
            value_cost_true: values.cost_value,
            dtilde_q: level,
            lambda: dual.lambda,
            eta: eta_used,
            proj_residual: resid_used,
            drift_ok,
            guard_triggered: dual.guard_triggered,
            good_event,
            dtilde_qstar: reference_marginal.as_ref().map(|m| dot(&d_tilde, m)),
        });
        if k == params.k_total {
            break;
        }

        let grad = surrogate_gradient(&q, &r_tilde, &d_tilde, &mut dual, params.alpha, params.hinge_aware);
        let eta_k = learning_rate(&hist, params.c);
        let q_hat_next = match omd_argmin(
            &polytope,
            &grad,
            &q_hat,
            eta_k,
            opts.projection_tol,
            Some(&mut warm_opt),
        ) {
            Ok((q, _)) => q,
            Err(e) => {
                aborted = Some(format!("optimistic projection failed at k={k}: {e}"));
                break;
            }
        };
        hist.push(&grad);
        let g_hat = refinement_gradient(&q_hat_next, &q, &r_tilde, &d_tilde, &mut dual, params.alpha);
        let eta_next = learning_rate(&hist, params.c);
        let (q_next, stats) = match omd_argmin(
            &polytope,
            &g_hat,
            &q_hat_next,
            eta_next,
            opts.projection_tol,
            Some(&mut warm_ref),
        ) {
            Ok(r) => r,
            Err(e) => {
                aborted = Some(format!("refinement projection failed at k={k}: {e}"));
                break;
            }
        };
        q = q_next;
        q_hat = q_hat_next;
        eta_used = eta_next;
        resid_used = stats.residual;
    }

    Ok(RunTrace {
        records,
        alpha: params.alpha,
        beta: params.beta,
        diameter_bound: params.c,
        aborted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmdp::{policy_to_occupancy, TabularCmdp};
    use crate::env::{EnvConfig, RewardNoise};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn small_dims() -> Dims {
        Dims::new(2, 2, 2).unwrap()
    }

    fn random_kernel(dims: Dims, rng: &mut ChaCha12Rng) -> Vec<f64> {
        let mut p = vec![0.0; dims.extended_len()];
        for row in p.chunks_mut(dims.s) {
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = rng.random_range(0.05..1.0);
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        p
    }

    fn random_occupancy(dims: Dims, kernel: &[f64], rng: &mut ChaCha12Rng) -> ExtendedOccupancy {
        let mut probs = vec![0.0; dims.marginal_len()];
        for row in probs.chunks_mut(dims.a) {
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = rng.random_range(0.05..1.0);
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        let mu = vec![1.0 / dims.s as f64; dims.s];
        policy_to_occupancy(&Policy::new(dims, probs).unwrap(), kernel, &mu).unwrap()
    }

    #[test]
    fn learning_rate_empty_history() {
        let h = GradHistory::new(4);
        assert_eq!(learning_rate(&h, 2.25), 1.5);
    }

    #[test]
    fn learning_rate_closed_form_unit_diffs() {
        // ||g_i - g_{i-1}|| = 1 for all i: after i pushes the windows are
        // (i, i-1), so eta_{i+1} = sqrt(C)/(sqrt(i) + sqrt(i-1)).
        let c: f64 = 0.5 * 8.0;
        let mut h = GradHistory::new(2);
        for i in 1..=12u32 {
            h.push(&[i as f64, 0.0]);
            let k = (i + 1) as f64;
            let expected = c.sqrt() / ((k - 1.0).sqrt() + (k - 2.0).sqrt());
            let got = learning_rate(&h, c);
            if k >= 3.0 {
                assert!((got - expected.min(c.sqrt())).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn learning_rate_constant_after_identical_gradients() {
        let mut h = GradHistory::new(3);
        h.push(&[1.0, 2.0, -1.0]);
        let mut prev = f64::INFINITY;
        for _ in 0..10 {
            h.push(&[1.0, 2.0, -1.0]);
            let eta = learning_rate(&h, 1.0);
            assert!(eta <= prev + 1e-15);
            prev = eta;
        }
        // Sums stopped growing: two consecutive values identical.
        let a = learning_rate(&h, 1.0);
        h.push(&[1.0, 2.0, -1.0]);
        assert_eq!(a, learning_rate(&h, 1.0));
    }

    #[test]
    fn surrogate_value_trivial_cases() {
        let dims = small_dims();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let kernel = random_kernel(dims, &mut rng);
        let q = random_occupancy(dims, &kernel, &mut rng);
        let r: Vec<f64> = (0..dims.marginal_len()).map(|_| rng.random_range(0.0..1.0)).collect();
        let alpha = 0.05;
        // Anchored, inactive hinge, lambda = 0.
        let d_neg = vec![-1.0; dims.marginal_len()];
        let mut dual = DualState::new(0.1).unwrap();
        let v = surrogate_value(&q, &r, &d_neg, &mut dual, alpha, &q);
        assert!((v + alpha * dot(&r, &q.marginal())).abs() < 1e-14);
        // r = 0, d.q = const, lambda = 0: payoff is alpha * beta * [d.q]_+.
        let d_pos = vec![1.0; dims.marginal_len()];
        let level = dot(&d_pos, &q.marginal());
        let v2 = surrogate_value(&q, &vec![0.0; dims.marginal_len()], &d_pos, &mut dual, alpha, &q);
        assert!((v2 - alpha * 0.1 * level).abs() < 1e-14);
    }

    #[test]
    fn surrogate_value_redundant_oracle() {
        // Independent scalar re-implementation of the same formula.
        let dims = small_dims();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let kernel = random_kernel(dims, &mut rng);
        for _ in 0..50 {
            let q = random_occupancy(dims, &kernel, &mut rng);
            let anchor = random_occupancy(dims, &kernel, &mut rng);
            let r: Vec<f64> = (0..dims.marginal_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let d: Vec<f64> = (0..dims.marginal_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let beta: f64 = rng.random_range(0.01..2.0);
            let lambda: f64 = rng.random_range(0.0..5.0);
            let alpha: f64 = rng.random_range(0.001..0.5);
            let mut dual = DualState::new(beta).unwrap();
            dual.lambda = lambda;
            let got = surrogate_value(&q, &r, &d, &mut dual, alpha, &anchor);
            let mut rq = 0.0;
            let mut dq = 0.0;
            let marg = q.marginal();
            for i in 0..dims.marginal_len() {
                rq += r[i] * marg[i];
                dq += d[i] * marg[i];
            }
            let hinge = if dq > 0.0 { dq } else { 0.0 };
            let mut sq = 0.0;
            for j in 0..dims.extended_len() {
                sq += (q.q[j] - anchor.q[j]).powi(2);
            }
            let expected = alpha * (-rq + beta * (beta * lambda).exp() * hinge) + 0.5 * sq;
            assert!((got - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_trivial_cases() {
        let dims = small_dims();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let kernel = random_kernel(dims, &mut rng);
        let q = random_occupancy(dims, &kernel, &mut rng);
        let r: Vec<f64> = (0..dims.marginal_len()).map(|_| rng.random_range(0.0..1.0)).collect();
        // Zero cost vector: gradient is -alpha r broadcast.
        let mut dual = DualState::new(1.0).unwrap();
        dual.lambda = 3.0;
        let g = surrogate_gradient(&q, &r, &vec![0.0; r.len()], &mut dual, 0.1, false);
        for (i, &ri) in r.iter().enumerate() {
            for s2 in 0..dims.s {
                assert!((g[i * dims.s + s2] + 0.1 * ri).abs() < 1e-15);
            }
        }
        // r = d, beta = 1, lambda = 0 (Phi' = 1): exact cancellation.
        let mut dual2 = DualState::new(1.0).unwrap();
        let g2 = surrogate_gradient(&q, &r, &r, &mut dual2, 0.1, false);
        assert!(g2.iter().all(|&x| x.abs() < 1e-15));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let dims = small_dims();
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let kernel = random_kernel(dims, &mut rng);
        let r: Vec<f64> = (0..dims.marginal_len()).map(|_| rng.random_range(0.0..1.0)).collect();
        // Positive costs keep d.q > 0 everywhere: away from the hinge kink.
        let d: Vec<f64> = (0..dims.marginal_len()).map(|_| rng.random_range(0.2..1.0)).collect();
        let alpha = 0.07;
        let anchor = random_occupancy(dims, &kernel, &mut rng);
        let mut dual = DualState::new(0.3).unwrap();
        dual.lambda = 1.7;
        // At the anchor.
        let g = surrogate_gradient(&anchor, &r, &d, &mut dual, alpha, false);
        for _ in 0..20 {
            let other = random_occupancy(dims, &kernel, &mut rng);
            let dir: Vec<f64> = other.q.iter().zip(&anchor.q).map(|(a, b)| a - b).collect();
            let eps = 1e-6;
            let mut shift = |t: f64| {
                let qb = ExtendedOccupancy::new(
                    dims,
                    anchor.q.iter().zip(&dir).map(|(&x, &v)| x + t * v).collect(),
                )
                .unwrap();
                surrogate_value(&qb, &r, &d, &mut dual, alpha, &anchor)
            };
            let fd = (shift(eps) - shift(-eps)) / (2.0 * eps);
            let ip = dot(&g, &dir);
            assert!((fd - ip).abs() < 1e-6, "fd {fd} vs grad {ip}");
        }
        // Off-anchor refinement gradient (includes the proximal term).
        let q_hat = random_occupancy(dims, &kernel, &mut rng);
        let g_hat = refinement_gradient(&q_hat, &anchor, &r, &d, &mut dual, alpha);
        for _ in 0..20 {
            let other = random_occupancy(dims, &kernel, &mut rng);
            let dir: Vec<f64> = other.q.iter().zip(&q_hat.q).map(|(a, b)| a - b).collect();
            let eps = 1e-6;
            let mut shift = |t: f64| {
                let qb = ExtendedOccupancy::new(
                    dims,
                    q_hat.q.iter().zip(&dir).map(|(&x, &v)| x + t * v).collect(),
                )
                .unwrap();
                surrogate_value(&qb, &r, &d, &mut dual, alpha, &anchor)
            };
            let fd = (shift(eps) - shift(-eps)) / (2.0 * eps);
            let ip = dot(&g_hat, &dir);
            assert!((fd - ip).abs() < 1e-6, "fd {fd} vs grad {ip}");
        }
    }

    #[test]
    fn dual_update_arithmetic() {
        let dims = Dims::new(1, 1, 1).unwrap();
        let q = ExtendedOccupancy::new(dims, vec![1.0]).unwrap();
        let mut dual = DualState::new(0.5).unwrap();
        // Negative level: unchanged.
        update_dual(&mut dual, &[-0.3], &q, 0.01);
        assert_eq!(dual.lambda, 0.0);
        // Positive level: lambda = alpha * level.
        update_dual(&mut dual, &[0.5], &q, 0.01);
        assert!((dual.lambda - 0.005).abs() < 1e-16);
        assert!((dual.log_phi_prime - (0.5f64.ln() + 0.5 * 0.005)).abs() < 1e-12);
    }

    #[test]
    fn exponent_guard_sticky() {
        let mut dual = DualState::new(1.0).unwrap();
        dual.lambda = 1e4;
        let v = dual.phi_prime();
        assert!(v.is_finite());
        assert!(dual.guard_triggered);
    }

    fn test_config(dims: Dims, seed: u64, mode: CostMode) -> EnvConfig {
        EnvConfig {
            num_states: dims.s,
            num_actions: dims.a,
            horizon: dims.h,
            dirichlet_alpha: 0.5,
            cost_mode: mode,
            adversarial_cost_levels: vec![-1.0, 0.0, 1.0],
            reward_noise: RewardNoise::None,
            reward_noise_sigma: 0.1,
            resample_costs: false,
            seed,
        }
    }

    #[test]
    fn single_episode_run() {
        let dims = small_dims();
        let mut sim = Simulator::from_config(test_config(dims, 11, CostMode::Stochastic)).unwrap();
        let params = Params::defaults(dims, 1, 0.1);
        let trace = run_omdpd(&mut sim, &RunOptions::new(params)).unwrap();
        assert_eq!(trace.records.len(), 1);
        assert!(trace.aborted.is_none());
        let rec = &trace.records[0];
        // Exactly one dual update happened.
        assert!((rec.lambda - params.alpha * rec.dtilde_q.max(0.0)).abs() < 1e-16);
    }

    #[test]
    fn never_violated_constraint_keeps_lambda_zero() {
        let dims = small_dims();
        let config = test_config(dims, 21, CostMode::Stochastic);
        let mut env = crate::env::generate_env(&config).unwrap();
        env = TabularCmdp::new(
            dims,
            env.init_dist.clone(),
            env.transitions.clone(),
            env.mean_reward.clone(),
            vec![-1.0; dims.marginal_len()],
        )
        .unwrap();
        let mut sim = Simulator::with_env(env, config).unwrap();
        let params = Params::defaults(dims, 60, 0.1);
        let trace = run_omdpd(&mut sim, &RunOptions::new(params)).unwrap();
        assert!(trace.aborted.is_none());
        for rec in &trace.records {
            assert_eq!(rec.lambda, 0.0);
        }
    }

    #[test]
    fn run_invariants_over_thousand_episodes() {
        let dims = small_dims();
        let mut sim = Simulator::from_config(test_config(dims, 7, CostMode::Stochastic)).unwrap();
        let params = Params::defaults(dims, 1000, 0.1);
        let trace = run_omdpd(&mut sim, &RunOptions::new(params)).unwrap();
        assert!(trace.aborted.is_none());
        assert_eq!(trace.records.len(), 1000);
        let mut prev_eta = f64::INFINITY;
        let mut prev_lambda = 0.0;
        let mut lambda_sum = 0.0;
        for rec in &trace.records {
            assert!(rec.drift_ok, "drift inequality failed at k={}", rec.k);
            assert!(!rec.guard_triggered);
            assert!(rec.eta > 0.0 && rec.eta <= params.c.sqrt() + 1e-15);
            assert!(rec.eta <= prev_eta + 1e-15);
            assert!(rec.lambda >= prev_lambda);
            prev_eta = rec.eta;
            prev_lambda = rec.lambda;
            lambda_sum += params.alpha * rec.dtilde_q.max(0.0);
        }
        // lambda_K equals the accumulated positive parts exactly.
        let last = trace.records.last().unwrap().lambda;
        assert!((last - lambda_sum).abs() <= 1e-12 * lambda_sum.max(1.0));
    }

    #[test]
    fn adversarial_mode_runs() {
        let dims = small_dims();
        let mut sim = Simulator::from_config(test_config(dims, 13, CostMode::Adversarial)).unwrap();
        let params = Params::defaults(dims, 100, 0.1);
        let trace = run_omdpd(&mut sim, &RunOptions::new(params)).unwrap();
        assert!(trace.aborted.is_none());
        assert_eq!(trace.records.len(), 100);
        for rec in &trace.records {
            assert!(rec.drift_ok);
        }
    }

    #[test]
    fn known_model_run() {
        let dims = small_dims();
        let mut sim = Simulator::from_config(test_config(dims, 31, CostMode::Stochastic)).unwrap();
        let mut params = Params::defaults(dims, 200, 0.1);
        params.known_model = true;
        params.beta = known_model_beta(dims, 200, params.c);
        let trace = run_omdpd(&mut sim, &RunOptions::new(params)).unwrap();
        assert!(trace.aborted.is_none());
        assert_eq!(trace.records.len(), 200);
    }
}
