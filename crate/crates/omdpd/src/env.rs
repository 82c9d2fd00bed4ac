//! Environment generation, trajectory sampling with bandit feedback, and the
//! oblivious adversarial cost stream.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::cmdp::{policy_to_occupancy, Dims, Policy, TabularCmdp};
use crate::error::{Error, Result};

/// How per-episode costs are produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    /// Costs drawn from a fixed distribution; the learner sees bandit samples.
    Stochastic,
    /// Costs picked by an oblivious adversary; the full vector is revealed
    /// after each episode.
    Adversarial,
}

/// Reward observation noise around the mean tensor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardNoise {
    /// Observed reward equals the mean reward (the simulation default).
    #[default]
    None,
    /// Observed reward resampled uniformly in
    /// `[max(0, r - sigma), min(1, r + sigma)]` each visit.
    UniformUnit,
}

/// Environment generation and feedback configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvConfig {
    #[serde(rename = "S")]
    pub num_states: usize,
    #[serde(rename = "A")]
    pub num_actions: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    #[serde(default = "default_dirichlet_alpha")]
    pub dirichlet_alpha: f64,
    pub cost_mode: CostMode,
    #[serde(default = "default_cost_levels", rename = "cost_levels")]
    pub adversarial_cost_levels: Vec<f64>,
    #[serde(default = "default_reward_noise")]
    pub reward_noise: RewardNoise,
    #[serde(default = "default_reward_noise_sigma")]
    pub reward_noise_sigma: f64,
    /// Resample stochastic cost observations around the fixed mean tensor
    /// instead of returning it verbatim.
    #[serde(default)]
    pub resample_costs: bool,
    pub seed: u64,
}

fn default_dirichlet_alpha() -> f64 {
    0.5
}

fn default_cost_levels() -> Vec<f64> {
    vec![-1.0, -0.6, -0.2, 0.0, 0.2, 0.6, 1.0]
}

fn default_reward_noise() -> RewardNoise {
    RewardNoise::None
}

fn default_reward_noise_sigma() -> f64 {
    0.1
}

impl EnvConfig {
    pub fn dims(&self) -> Result<Dims> {
        Dims::new(self.num_states, self.num_actions, self.horizon)
    }

    pub fn validate(&self) -> Result<()> {
        self.dims()?;
        if !(self.dirichlet_alpha > 0.0) {
            return Err(Error::Validation(format!(
                "dirichlet_alpha must be positive, got {}",
                self.dirichlet_alpha
            )));
        }
        if self.adversarial_cost_levels.is_empty() {
            return Err(Error::Validation("cost_levels must be nonempty".into()));
        }
        for &l in &self.adversarial_cost_levels {
            if !(-1.0..=1.0).contains(&l) {
                return Err(Error::Validation(format!("cost level {l} outside [-1,1]")));
            }
        }
        if !(self.reward_noise_sigma >= 0.0) {
            return Err(Error::Validation("reward_noise_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// One step of a realized trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Step {
    pub h: usize,
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
}

/// What the learner observes after one episode.
#[derive(Clone, Debug)]
pub struct EpisodeFeedback {
    pub trajectory: Vec<Step>,
    /// Bandit reward samples along the trajectory, in `[0, 1]`.
    pub observed_rewards: Vec<f64>,
    /// Bandit cost samples (stochastic mode only).
    pub observed_costs: Option<Vec<f64>>,
    /// Full cost tensor `[H][S][A]` revealed after the episode
    /// (adversarial mode only).
    pub revealed_cost_vector: Option<Vec<f64>>,
}

impl EpisodeFeedback {
    /// Dynamic consistency plus mode exclusivity of the payload.
    pub fn validate(&self, dims: Dims) -> Result<()> {
        if self.trajectory.len() != dims.h {
            return Err(Error::Validation("trajectory length != H".into()));
        }
        for (i, w) in self.trajectory.windows(2).enumerate() {
            if w[0].s_next != w[1].s || w[0].h + 1 != w[1].h {
                return Err(Error::Validation(format!(
                    "trajectory inconsistent at step {i}"
                )));
            }
        }
        match (&self.observed_costs, &self.revealed_cost_vector) {
            (Some(_), None) | (None, Some(_)) => Ok(()),
            _ => Err(Error::Mode(
                "exactly one of observed_costs / revealed_cost_vector must be present".into(),
            )),
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Deterministic sub-stream for episode `k` of the adversarial cost source.
fn stream_rng(seed: u64, k: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(splitmix64(seed ^ splitmix64(k.wrapping_add(0x5ad4_c0de))))
}

/// Draws the environment tensors for `config`: uniform initial distribution,
/// Dirichlet transition rows, Uniform[0,1] mean rewards and Uniform[-1,1]
/// mean costs. Deterministic given the seed.
pub fn generate_env(config: &EnvConfig) -> Result<TabularCmdp> {
    config.validate()?;
    let dims = config.dims()?;
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let init_dist = vec![1.0 / dims.s as f64; dims.s];

    let gamma = Gamma::new(config.dirichlet_alpha, 1.0)
        .map_err(|e| Error::Validation(format!("dirichlet alpha: {e}")))?;
    let mut transitions = vec![0.0; dims.extended_len()];
    for row in transitions.chunks_mut(dims.s) {
        let mut total = 0.0;
        for x in row.iter_mut() {
            *x = gamma.sample(&mut rng);
            total += *x;
        }
        if total <= f64::MIN_POSITIVE {
            // All gamma draws underflowed; fall back to uniform.
            row.fill(1.0 / dims.s as f64);
        } else {
            for x in row.iter_mut() {
                *x /= total;
            }
        }
    }

    let mut mean_reward = vec![0.0; dims.marginal_len()];
    for r in mean_reward.iter_mut() {
        *r = rng.random_range(0.0..1.0);
    }
    let mut mean_cost = vec![0.0; dims.marginal_len()];
    for d in mean_cost.iter_mut() {
        *d = rng.random_range(-1.0..1.0);
    }
    TabularCmdp::new(dims, init_dist, transitions, mean_reward, mean_cost)
}

/// The oblivious adversarial cost tensor for episode `k`: every entry drawn
/// uniformly from the configured finite level set, deterministic in
/// `(seed, k)`.
pub fn adversarial_cost_stream(config: &EnvConfig, k: u64) -> Result<Vec<f64>> {
    if config.cost_mode != CostMode::Adversarial {
        return Err(Error::Mode(
            "adversarial_cost_stream called in stochastic mode".into(),
        ));
    }
    let dims = config.dims()?;
    let levels = &config.adversarial_cost_levels;
    let mut rng = stream_rng(config.seed, k);
    Ok((0..dims.marginal_len())
        .map(|_| levels[rng.random_range(0..levels.len())])
        .collect())
}

fn sample_index(probs: &[f64], rng: &mut ChaCha12Rng) -> usize {
    let u: f64 = rng.random_range(0.0..1.0);
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Owns the true environment, its feedback configuration and the run's RNG.
/// Episodes within one run are strictly sequential.
pub struct Simulator {
    pub env: TabularCmdp,
    pub config: EnvConfig,
    rng: ChaCha12Rng,
}

impl Simulator {
    /// Builds the environment from `config` and seeds the trajectory RNG from
    /// a separate sub-stream of the same seed.
    pub fn from_config(config: EnvConfig) -> Result<Self> {
        let env = generate_env(&config)?;
        let rng = ChaCha12Rng::seed_from_u64(splitmix64(config.seed ^ 0x0ccu64));
        Ok(Simulator { env, config, rng })
    }

    /// Wraps an existing environment (used by tests and known-model runs).
    pub fn with_env(env: TabularCmdp, config: EnvConfig) -> Result<Self> {
        if env.dims != config.dims()? {
            return Err(Error::Dimension("simulator env/config dims".into()));
        }
        let rng = ChaCha12Rng::seed_from_u64(splitmix64(config.seed ^ 0x0ccu64));
        Ok(Simulator { env, config, rng })
    }

    pub fn dims(&self) -> Dims {
        self.env.dims
    }

    /// Samples one episode under `policy` and returns the learner-visible
    /// feedback for episode index `k`.
    pub fn sample_episode(&mut self, policy: &Policy, k: u64) -> Result<EpisodeFeedback> {
        let d = self.env.dims;
        if policy.dims != d {
            return Err(Error::Dimension("policy dims for sample_episode".into()));
        }
        let mut trajectory = Vec::with_capacity(d.h);
        let mut observed_rewards = Vec::with_capacity(d.h);
        let mut observed_costs = if self.config.cost_mode == CostMode::Stochastic {
            Some(Vec::with_capacity(d.h))
        } else {
            None
        };
        let mut s = sample_index(&self.env.init_dist, &mut self.rng);
        for h in 0..d.h {
            let a = sample_index(policy.row(h, s), &mut self.rng);
            let s_next = sample_index(self.env.transition_row(h, s, a), &mut self.rng);
            trajectory.push(Step { h, s, a, s_next });

            let r_mean = self.env.mean_reward[d.idx3(h, s, a)];
            let r = match self.config.reward_noise {
                RewardNoise::None => r_mean,
                RewardNoise::UniformUnit => {
                    let lo = (r_mean - self.config.reward_noise_sigma).max(0.0);
                    let hi = (r_mean + self.config.reward_noise_sigma).min(1.0);
                    if hi > lo {
                        self.rng.random_range(lo..hi)
                    } else {
                        r_mean
                    }
                }
            };
            observed_rewards.push(r);

            if let Some(costs) = observed_costs.as_mut() {
                let d_mean = self.env.mean_cost[d.idx3(h, s, a)];
                let c = if self.config.resample_costs {
                    let lo = (d_mean - self.config.reward_noise_sigma).max(-1.0);
                    let hi = (d_mean + self.config.reward_noise_sigma).min(1.0);
                    if hi > lo {
                        self.rng.random_range(lo..hi)
                    } else {
                        d_mean
                    }
                } else {
                    d_mean
                };
                costs.push(c);
            }
            s = s_next;
        }
        let revealed_cost_vector = if self.config.cost_mode == CostMode::Adversarial {
            Some(adversarial_cost_stream(&self.config, k)?)
        } else {
            None
        };
        let fb = EpisodeFeedback {
            trajectory,
            observed_rewards,
            observed_costs,
            revealed_cost_vector,
        };
        debug_assert!(fb.validate(d).is_ok());
        Ok(fb)
    }
}

/// Empirical state-visit frequencies of a fixed policy, for oracle tests.
pub fn empirical_visit_frequencies(
    sim: &mut Simulator,
    policy: &Policy,
    episodes: u64,
) -> Result<Vec<f64>> {
    let d = sim.dims();
    let mut freq = vec![0.0; d.marginal_len()];
    for k in 0..episodes {
        let fb = sim.sample_episode(policy, k)?;
        for step in &fb.trajectory {
            freq[d.idx3(step.h, step.s, step.a)] += 1.0;
        }
    }
    for f in freq.iter_mut() {
        *f /= episodes as f64;
    }
    Ok(freq)
}

/// Exact visit marginals of `policy`, used as the oracle counterpart of
/// [`empirical_visit_frequencies`].
pub fn exact_visit_marginals(env: &TabularCmdp, policy: &Policy) -> Result<Vec<f64>> {
    Ok(policy_to_occupancy(policy, &env.transitions, &env.init_dist)?.marginal())
}
