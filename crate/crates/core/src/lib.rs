//! Deterministic federated-learning simulator with a client-side,
//! trust-based defense against label-flipping attacks (AntiFLipper), baseline
//! robust aggregators, attack schedules and metric output.

pub mod baselines;
pub mod cli;
pub mod config;
pub mod data;
pub mod defense;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod seed;

pub use error::{Error, Result};
