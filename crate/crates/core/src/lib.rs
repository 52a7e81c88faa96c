//! Learnable behavior control at desk scale.
//!
//! A population of tabular actor-critic members is trained off-policy from
//! shared data. Actors act with Boltzmann mixtures over the population whose
//! inverse temperatures and weights are chosen per episode by a population of
//! UCB bandits.

pub mod behavior;
pub mod config;
pub mod env;
pub mod error;
pub mod experiment;
pub mod metactrl;
pub mod metrics;
pub mod offpolicy;
pub mod orchestrator;
pub mod par;
pub mod policy;
pub mod rng;
pub mod stats;

pub use config::{ExecMode, RunConfig, Selection};
pub use error::{LbcError, Result};
pub use orchestrator::{train, RunArtifact};
