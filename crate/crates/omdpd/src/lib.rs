//! Online learning in tabular episodic constrained MDPs with an optimistic
//! mirror descent primal-dual loop over occupancy measures.
//!
//! The crate is organized bottom-up:
//!
//! - [`cmdp`]: domain types (environment tensors, policies, occupancy
//!   measures) and exact dynamic-programming evaluation.
//! - [`env`]: seeded environment generation, trajectory sampling with bandit
//!   feedback, and the oblivious adversarial cost stream.
//! - [`estimator`]: visit counts, empirical models, UCB bonuses and the
//!   transition confidence set.
//! - [`polytope`]: the occupancy polytope, its Euclidean projection oracle
//!   (the mirror-descent argmin step) and the dense LP baseline solver.
//! - [`algo`]: the main primal-dual loop with its surrogate objective, dual
//!   potential and adaptive learning rate.
//! - [`harness`]: experiment configuration, metrics, CSV/SVG artifacts and
//!   the CLI entry points.

pub mod algo;
pub mod cmdp;
pub mod config;
pub mod env;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod plot;
pub mod polytope;
pub mod simplex;
pub mod trace;

pub use error::{Error, Result};
