//! Experiment configuration: one JSON document selecting the environment,
//! the run schedule, and the output location.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::algo::{default_alpha, default_beta, default_diameter, known_model_beta, Params};
use crate::cmdp::Dims;
use crate::env::{CostMode, EnvConfig, RewardNoise};
use crate::error::{Error, Result};

fn default_dirichlet() -> f64 {
    0.5
}

fn default_levels() -> Vec<f64> {
    vec![-1.0, -0.6, -0.2, 0.0, 0.2, 0.6, 1.0]
}

fn default_sigma() -> f64 {
    0.1
}

/// Cost-mode selection for a whole experiment; `both` expands to one cell
/// per concrete mode.
#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ModeSelect {
    Stochastic,
    Adversarial,
    Both,
}

impl ModeSelect {
    pub fn modes(self) -> Vec<CostMode> {
        match self {
            ModeSelect::Stochastic => vec![CostMode::Stochastic],
            ModeSelect::Adversarial => vec![CostMode::Adversarial],
            ModeSelect::Both => vec![CostMode::Stochastic, CostMode::Adversarial],
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    #[serde(rename = "S")]
    pub num_states: usize,
    #[serde(rename = "A")]
    pub num_actions: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    #[serde(default = "default_dirichlet")]
    pub dirichlet_alpha: f64,
    pub cost_mode: ModeSelect,
    #[serde(rename = "cost_levels", default = "default_levels")]
    pub adversarial_cost_levels: Vec<f64>,
    #[serde(default)]
    pub reward_noise: RewardNoise,
    #[serde(default = "default_sigma")]
    pub reward_noise_sigma: f64,
    #[serde(default)]
    pub resample_costs: bool,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    #[serde(rename = "C")]
    pub c: Option<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(rename = "K")]
    pub episodes: usize,
    pub delta: f64,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub known_model: bool,
    #[serde(default)]
    pub hinge_aware_subgradient: bool,
    #[serde(default)]
    pub overrides: Overrides,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub env: EnvSection,
    pub run: RunSection,
    pub output: OutputSection,
}

impl Config {
    pub fn from_str(text: &str) -> Result<Self> {
        let cfg: Config =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_str(&text)
    }

    pub fn dims(&self) -> Result<Dims> {
        Dims::new(self.env.num_states, self.env.num_actions, self.env.horizon)
    }

    pub fn validate(&self) -> Result<()> {
        // Environment validity is checked via a concrete materialization.
        for mode in self.env.cost_mode.modes() {
            self.env_config(mode, *self.run.seeds.first().unwrap_or(&0))
                .validate()
                .map_err(|e| Error::Config(format!("env section: {e}")))?;
        }
        if self.run.episodes == 0 {
            return Err(Error::Config("run.K must be >= 1".into()));
        }
        if !(self.run.delta > 0.0 && self.run.delta < 1.0) {
            return Err(Error::Config("run.delta must lie in (0,1)".into()));
        }
        if self.run.seeds.is_empty() {
            return Err(Error::Config("run.seeds must be nonempty".into()));
        }
        let mut sorted = self.run.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.run.seeds.len() {
            return Err(Error::Config("run.seeds must be distinct".into()));
        }
        for (name, v) in [
            ("alpha", self.run.overrides.alpha),
            ("beta", self.run.overrides.beta),
            ("C", self.run.overrides.c),
        ] {
            if let Some(v) = v {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::Config(format!(
                        "run.overrides.{name} must be positive, got {v}"
                    )));
                }
            }
        }
        if self.output.dir.is_empty() {
            return Err(Error::Config("output.dir must be nonempty".into()));
        }
        Ok(())
    }

    /// Environment seed for one (mode-independent) replicate: the base env
    /// seed mixed with the run seed so replicates are independent while the
    /// same seed yields the same environment across cost modes.
    pub fn cell_seed(&self, run_seed: u64) -> u64 {
        splitmix(self.env.seed ^ run_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }

    /// Concrete environment description for one experiment cell.
    pub fn env_config(&self, mode: CostMode, run_seed: u64) -> EnvConfig {
        EnvConfig {
            num_states: self.env.num_states,
            num_actions: self.env.num_actions,
            horizon: self.env.horizon,
            dirichlet_alpha: self.env.dirichlet_alpha,
            cost_mode: mode,
            adversarial_cost_levels: self.env.adversarial_cost_levels.clone(),
            reward_noise: self.env.reward_noise,
            reward_noise_sigma: self.env.reward_noise_sigma,
            resample_costs: self.env.resample_costs,
            seed: self.cell_seed(run_seed),
        }
    }

    /// Algorithm constants for this run, with overrides applied on top of
    /// the defaults (the known-model fixed-reward case takes the tighter
    /// potential parameter).
    pub fn params(&self) -> Result<Params> {
        let dims = self.dims()?;
        let k = self.run.episodes;
        let c = self.run.overrides.c.unwrap_or_else(|| default_diameter(dims));
        let default_beta = if self.run.known_model && self.env.reward_noise == RewardNoise::None {
            known_model_beta(dims, k, c)
        } else {
            default_beta(dims, k, c)
        };
        let params = Params {
            k_total: k,
            delta: self.run.delta,
            alpha: self
                .run
                .overrides
                .alpha
                .unwrap_or_else(|| default_alpha(dims, k, self.run.delta)),
            beta: self.run.overrides.beta.unwrap_or(default_beta),
            c,
            known_model: self.run.known_model,
            hinge_aware: self.run.hinge_aware_subgradient,
        };
        params.validate()?;
        Ok(params)
    }

    /// All (mode, seed) experiment cells in deterministic order.
    pub fn cells(&self) -> Vec<(CostMode, u64)> {
        let mut out = Vec::new();
        for mode in self.env.cost_mode.modes() {
            for &seed in &self.run.seeds {
                out.push((mode, seed));
            }
        }
        out
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "env": {"S": 5, "A": 3, "H": 5, "cost_mode": "both", "seed": 7},
        "run": {"K": 3000, "delta": 0.1, "seeds": [1, 2, 3]},
        "output": {"dir": "out"}
    }"#;

    #[test]
    fn minimal_config_defaults() {
        let cfg = Config::from_str(MINIMAL).unwrap();
        assert_eq!(cfg.env.dirichlet_alpha, 0.5);
        assert_eq!(cfg.env.adversarial_cost_levels.len(), 7);
        assert!(!cfg.run.known_model);
        assert_eq!(cfg.cells().len(), 6);
        let p = cfg.params().unwrap();
        // alpha = 1/(2(1+sqrt(L))SAH) with L = ln(12*75*3000/0.1).
        let l: f64 = (12.0 * 75.0 * 3000.0 / 0.1f64).ln();
        assert!((p.alpha - 1.0 / (2.0 * (1.0 + l.sqrt()) * 75.0)).abs() < 1e-15);
        assert!((p.c - 37.5).abs() < 1e-15);
        let expected_beta = 75.0 / (8.0 * 37.5f64.sqrt() * (6.0 * 75.0 * 3000.0f64).sqrt());
        assert!((p.beta - expected_beta).abs() < 1e-18);
    }

    #[test]
    fn overrides_and_flags() {
        let text = r#"{
            "env": {"S": 2, "A": 2, "H": 2, "cost_mode": "stochastic", "seed": 1},
            "run": {"K": 10, "delta": 0.05, "seeds": [4], "known_model": true,
                    "hinge_aware_subgradient": true,
                    "overrides": {"alpha": 0.02, "beta": 0.5, "C": 9.0}},
            "output": {"dir": "x"}
        }"#;
        let cfg = Config::from_str(text).unwrap();
        let p = cfg.params().unwrap();
        assert_eq!(p.alpha, 0.02);
        assert_eq!(p.beta, 0.5);
        assert_eq!(p.c, 9.0);
        assert!(p.known_model && p.hinge_aware);
    }

    #[test]
    fn known_model_beta_applied() {
        let text = r#"{
            "env": {"S": 2, "A": 2, "H": 2, "cost_mode": "stochastic", "seed": 1},
            "run": {"K": 100, "delta": 0.1, "seeds": [4], "known_model": true},
            "output": {"dir": "x"}
        }"#;
        let cfg = Config::from_str(text).unwrap();
        let p = cfg.params().unwrap();
        let dims = cfg.dims().unwrap();
        assert_eq!(p.beta, known_model_beta(dims, 100, p.c));
    }

    #[test]
    fn invalid_configs_rejected() {
        for bad in [
            r#"{"env": {"S": 0, "A": 1, "H": 1, "cost_mode": "stochastic", "seed": 1},
                "run": {"K": 1, "delta": 0.1, "seeds": [1]}, "output": {"dir": "x"}}"#,
            r#"{"env": {"S": 2, "A": 2, "H": 2, "cost_mode": "stochastic", "seed": 1},
                "run": {"K": 0, "delta": 0.1, "seeds": [1]}, "output": {"dir": "x"}}"#,
            r#"{"env": {"S": 2, "A": 2, "H": 2, "cost_mode": "stochastic", "seed": 1},
                "run": {"K": 5, "delta": 1.5, "seeds": [1]}, "output": {"dir": "x"}}"#,
            r#"{"env": {"S": 2, "A": 2, "H": 2, "cost_mode": "stochastic", "seed": 1},
                "run": {"K": 5, "delta": 0.1, "seeds": []}, "output": {"dir": "x"}}"#,
            r#"{"env": {"S": 2, "A": 2, "H": 2, "cost_mode": "stochastic", "seed": 1},
                "run": {"K": 5, "delta": 0.1, "seeds": [1, 1]}, "output": {"dir": "x"}}"#,
            r#"{"env": {"S": 2, "A": 2, "H": 2, "cost_mode": "nope", "seed": 1},
                "run": {"K": 5, "delta": 0.1, "seeds": [1]}, "output": {"dir": "x"}}"#,
            r#"{"env": {"S": 2, "A": 2, "H": 2, "cost_mode": "stochastic", "seed": 1},
                "run": {"K": 5, "delta": 0.1, "seeds": [1], "overrides": {"alpha": -1}},
                "output": {"dir": "x"}}"#,
            r#"{"env": {"S": 2, "A": 2, "H": 2, "cost_mode": "stochastic", "seed": 1,
                        "bogus_key": 3},
                "run": {"K": 5, "delta": 0.1, "seeds": [1]}, "output": {"dir": "x"}}"#,
        ] {
            assert!(
                matches!(Config::from_str(bad), Err(Error::Config(_))),
                "accepted: {bad}"
            );
        }
    }

    #[test]
    fn cell_seeds_distinct_but_mode_invariant() {
        let cfg = Config::from_str(MINIMAL).unwrap();
        let a = cfg.cell_seed(1);
        let b = cfg.cell_seed(2);
        assert_ne!(a, b);
        // Same replicate gets the same env in both modes.
        let s = cfg.env_config(CostMode::Stochastic, 1).seed;
        let adv = cfg.env_config(CostMode::Adversarial, 1).seed;
        assert_eq!(s, adv);
    }
}
