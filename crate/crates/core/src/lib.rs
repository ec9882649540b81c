//! Discrete-event simulation of RuleSet-driven quantum link bootstrapping.
//!
//! Two repeater nodes share a MeetInTheMiddle or SenderReceiver link. Each
//! runs a [`rule_engine::RuleEngine`] over the pairs the link heralds,
//! optionally purifying them in recurrent rounds before link-level
//! tomography reconstructs their fidelity.

pub mod cli;
pub mod error_model;
pub mod link_layer;
pub mod purification;
pub mod rule_engine;
pub mod ruleset_protocol;
pub mod sim_core;
pub mod tomography;

pub use cli::config::{ExperimentConfig, Protocol};
pub use sim_core::{run_trial, SimTime, TrialResult};
