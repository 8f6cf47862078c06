//! Long-tail analysis and rebalancing for vision-language instruction
//! tuning corpora.
//!
//! Entity statistics gathered from four perspectives drive a resampler
//! that thins head-heavy data and a planner that adds synthetic tail data.

pub mod dataset;
pub mod distribution;
pub mod entity;
pub mod error;
pub mod evalsplit;
pub mod extraction;
pub mod fixture;
pub mod http;
pub mod mock_server;
pub mod pipeline;
pub mod rebalance;
pub mod rng;
pub mod scalar;
pub mod synthesis;
pub mod template;

pub use dataset::{DataInstance, EvalCase, Turn};
pub use entity::{EntityKey, EntitySet, Perspective};
pub use error::{Error, Result, Warning};
pub use num::BigRational;
pub use scalar::Probability;

/// Sampling-side probability dictionary.
pub type ProbabilityDictionary = rebalance::ProbabilityDictionary<f64>;
/// Exact rational dictionary used by the retention oracle.
pub type ExactProbabilityDictionary = rebalance::ProbabilityDictionary<BigRational>;
pub type ProbabilityDicts = rebalance::ProbabilityDicts<f64>;
pub type ExactProbabilityDicts = rebalance::ProbabilityDicts<BigRational>;
pub type SynthesisQuantity = synthesis::SynthesisQuantity<f64>;
