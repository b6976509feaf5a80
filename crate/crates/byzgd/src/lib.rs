//! Byzantine-tolerant distributed gradient descent at desk scale.
//!
//! A parameter server broadcasts a model to `m` workers, each of which
//! computes a gradient over its local shard of the data. Up to `q` workers per
//! round are Byzantine: they may report anything, they see the whole system,
//! and the set of corrupted workers can change every round. Plain averaging of
//! the reports is defenseless here; one forged report steers the mean wherever
//! the attacker wants. This crate implements the robust alternative: group the
//! `m` reports into `k` fixed batches, average inside each batch, and take the
//! *geometric median* of the `k` batch means. With `k = 1` the rule is exactly
//! the mean; with `k = m` it is the geometric median of the raw reports.
//!
//! The crate is organized by module:
//!
//! - [`problem`] — loss models, synthetic linear-regression data, sharding
//! - [`aggregation`] — geometric median (Weiszfeld with a certificate),
//!   norm trimming, median-of-means, the robustness displacement bound
//! - [`adversary`] — fault-set policies and a catalog of attack strategies
//! - [`engine`] — the synchronous round loop for both aggregation rules
//! - [`diagnostics`] — convergence constants, batch-deviation functions, the
//!   good-event estimator, and tail-constant spot checks
//! - [`harness`] — TOML experiment configs, sweeps, CSV/JSON emission
//!
//! # Quick start
//!
//! ```
//! use byzgd::adversary::{AttackSpec, AttackStrategy, FaultSetPolicy};
//! use byzgd::aggregation::AggregatorConfig;
//! use byzgd::engine::{run_byzantine_gd, RunConfig};
//! use byzgd::problem::{generate_linear_regression, shard_samples, LinearRegression};
//! use byzgd::vector::ModelVector;
//!
//! let dim = 4;
//! let theta_star = ModelVector::new(vec![1.0, -2.0, 0.5, 3.0]);
//! let samples = generate_linear_regression(&theta_star, 1200, 42)?;
//! let shards = shard_samples(&samples, 12)?;
//!
//! let config = RunConfig {
//!     n_total: 1200,
//!     workers: 12,
//!     byzantine_budget: 2,
//!     step_size: 0.5,
//!     rounds: 30,
//!     theta0: ModelVector::zeros(dim),
//!     aggregator: AggregatorConfig::new(6),
//!     attack: AttackSpec {
//!         strategy: AttackStrategy::SignFlip { scale: 10.0 },
//!         policy: FaultSetPolicy::ResampleEachRound { count: 2, seed: 7 },
//!     },
//!     seed: 42,
//! };
//! let model = LinearRegression::new(dim);
//! let traces = run_byzantine_gd(&config, &model, &shards, &theta_star)?;
//! assert!(traces.last().unwrap().error < 0.5);
//! # Ok::<(), byzgd::Error>(())
//! ```
//!
//! The `examples/` directory has one runnable program per capability; the
//! thin `byzgd` binary exposes the experiment runner (`run`, `sweep`) and the
//! standalone calculators (`median`, `constants`).

pub mod adversary;
pub mod aggregation;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod harness;
pub mod problem;
pub mod rng;
pub mod vector;

pub use error::{Error, Result};
pub use vector::ModelVector;
