//! Population decision simulator driven by an evolving mean-field summary.
//!
//! * [`domain`]: profiles, actions, events, run configuration, trajectories.
//! * [`corpus`]: JSONL corpora, splits, state resampling, synthetic populations.
//! * [`backends`]: policy and mean-field model roles; scripted, exact toy and
//!   remote chat-completions implementations; prompt templates.
//! * [`engine`]: the warm-up/generate loop, baselines, interventions, forks.
//! * [`ibtune`]: information-bottleneck objectives and toy-scale training.
//! * [`metrics`]: decision-dimension classification and distribution metrics.

pub mod backends;
pub mod corpus;
pub mod domain;
pub mod engine;
pub mod error;
pub mod ibtune;
pub mod metrics;
pub mod par;
pub mod rng;

pub use error::{Error, Result};
