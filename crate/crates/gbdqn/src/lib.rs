//! Gradient-boosted Q-ensembles for non-stationary control tasks.
//!
//! The crate is organized around six subsystems:
//!
//! - [`numcore`] — dense feed-forward value networks with exact gradients,
//!   global-norm clipping, Adam, and Polyak target tracking.
//! - [`replay`] — a prioritized experience buffer mixing TD-error and
//!   recency priorities, with importance-sampling weights.
//! - [`boost`] — the additive Q-ensemble: residual targets, step-size
//!   selection, commits, and action policies.
//! - [`envs`] — classic-control environments with run-time-mutable physics
//!   and a drift scheduler.
//! - [`agents`] — training loops for the boosted agent and four baselines.
//! - [`bench`] — experiment harness: configs, seeded runs, CSV metrics,
//!   SVG learning curves, and an invariant-verification suite.

pub mod agents;
pub mod bench;
pub mod boost;
pub mod envs;
pub mod numcore;
pub mod replay;
