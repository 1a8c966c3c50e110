//! Federated learning with class-distribution-aware client clustering and
//! vote-based trust.
//!
//! The server infers which classes each client holds from the last-layer
//! part of its update, groups clients with overlapping label sets, lets
//! clients inside a group vote for each other by update similarity and
//! aggregates updates weighted by accumulated trust.

pub mod attacks;
pub mod baselines;
pub mod clustering;
pub mod data;
pub mod ddig;
pub mod error;
pub mod matrix;
pub mod model;
pub mod rng;
pub mod sim;
pub mod trust;
pub mod vector;

pub use clustering::{greedy_cluster, ClusterAssignment, ClusterThresholds, SizeRule};
pub use data::{AbstractDistribution, LabeledDataset, TriggerPattern};
pub use ddig::{BetaMode, DdigConfig, IndicatorVector};
pub use error::{Error, Result};
pub use matrix::BinaryMatrix;
pub use model::{Batch, LayerShape, ModelParams, ModelUpdate, TrainSpec};
pub use trust::{TrustLedger, UpdateSign, VoteBudget};
