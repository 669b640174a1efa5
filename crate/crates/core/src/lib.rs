//! Offline deep reinforcement learning for mechanical-ventilation decision support.
//!
//! The crate covers the whole batch-RL workflow on episodic ICU data:
//!
//! - [`dataset`]: episode model, CSV/JSONL ingestion, synthetic cohorts and the
//!   binary replay-dataset format.
//! - [`preprocess`]: missingness-tiered imputation (KNN, sample-and-hold, mean,
//!   drop), normalization and episode-level splitting.
//! - [`mdp`]: the 7×7×7 ventilator action space, the modified APACHE II score
//!   and the reward function.
//! - [`nn`]: a small dense network engine with analytic gradients.
//! - [`algorithms`]: DDQN, CQL and behavior cloning trainers plus a tabular
//!   Q-learning reference.
//! - [`evaluation`]: fitted Q evaluation, Monte Carlo returns, OOD splitting and
//!   action-distribution statistics.
//! - [`experiment`]: configuration and the end-to-end pipeline.

pub mod algorithms;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod mdp;
pub mod nn;
pub mod preprocess;

pub use error::{Error, Result};
