//! Pessimistic model-based multi-agent reinforcement learning toolkit.
//!
//! The crate is organized around a training pipeline for connected
//! autonomous vehicles on a figure-eight loop:
//!
//! - [`nn`]: flat-parameter MLPs with manual reverse-mode gradients, Adam,
//!   and diagonal Gaussian heads.
//! - [`dynamics`]: Gaussian MLE dynamics/reward models, the KL constraint
//!   set around the MLE model, and synthetic rollouts.
//! - [`pessimism`]: projected gradient descent over model parameters inside
//!   the constraint set, with best/average/final candidate selection.
//! - [`agent`]: per-agent soft actor-critic on mixed real/synthetic batches.
//! - [`traffic`]: deterministic figure-eight single-lane microsimulation.
//! - [`comms`]: range-limited episode-end data exchange, overhead accounting,
//!   and exact minimum clique covers.
//! - [`boundlab`]: tabular MDP oracles for the PAC-bound machinery
//!   (occupancy measures, concentrability, decompositions, lemma checks).

pub mod agent;
pub mod boundlab;
pub mod comms;
pub mod dynamics;
pub mod error;
pub mod nn;
pub mod pessimism;
pub mod traffic;

pub use error::{CoreError, Result};
