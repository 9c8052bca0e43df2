//! Two-tier HetNet system-level simulator with a reinforcement-learning
//! stack for joint tuning of macrocell antenna tilt and half-power beamwidths.
//!
//! The crate is layered bottom-up:
//!
//! - [`geometry`]: Poisson deployments, per-link geometry, max-RSS association.
//! - [`radio`]: antenna patterns, path loss, shadowing and SINR composition.
//! - [`mdp`]: SINR quantization, state/action codecs and the ACK-based reward.
//! - [`env`]: the simulated network as seen by the learning agents.
//! - [`meanfield`]: offline mean-field multi-agent Q-learning, the interference
//!   table it produces and the environment-dynamics diagnostic.
//! - [`online`]: online feature-based Q-learning with linear function
//!   approximation, plus the tabular baseline.
//! - [`locnet`]: polar cluster grid and the small network that reconstructs
//!   cluster SINR values from a single observed cluster.

pub mod env;
pub mod error;
pub mod geometry;
pub mod locnet;
pub mod meanfield;
pub mod mdp;
pub mod online;
pub mod radio;
pub mod rng;

pub use error::{Error, Result};
