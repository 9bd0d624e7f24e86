//! Server-less federated learning over an agent graph.
//!
//! Agents hold private data shards and a copy of a small MLP classifier.
//! Each communication round they adapt locally with SGD, exchange
//! intermediate models with graph neighbours, and combine them with convex
//! weights. Weights come from either a constant dataset-size rule or an
//! adaptive rule driven by the angle between each neighbour's local
//! gradient and a neighbourhood aggregate gradient.
//!
//! Module map:
//!
//! * [`topology`]: agent graphs and neighbourhoods
//! * [`data`]: IDX loading, synthetic data, shards, mini-batches
//! * [`model`]: the MLP over flat parameter vectors
//! * [`rules`]: constant and adaptive combination weights
//! * [`engine`]: rounds, epochs, baselines and the communication ledger
//! * [`metrics`]: records, aggregation, the global objective
//! * [`experiment`]: turns a [`config::RunConfig`] into a finished run

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod engine;
mod exec;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod rules;
pub mod seed;
pub mod topology;

/// Agent identifier, `0..N`.
pub type AgentId = usize;

pub use config::{Algorithm, Rule, RunConfig};
pub use engine::{Execution, RunOptions, Simulation};
pub use metrics::{AggregateRecord, RunRecord};
pub use model::{Mlp, MlpSpec, ParamVector};
pub use topology::Topology;
