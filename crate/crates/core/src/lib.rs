//! Collider-bias toy models of Bell correlations.
//!
//! A small library of finite causal models, filters and constrained
//! colliders, with a singlet oracle to check them against and a batch runner
//! for reproducible experiments.

pub mod causal;
pub mod quantum;
pub mod rng;
pub mod runner;
pub mod scenarios;
pub mod stats;
