//! Deterministic edge-cloud co-inference simulator.
//!
//! A small edge model labels every sample; a learned gate (or a heuristic
//! scorer) decides whether that label is good enough. Uncertain samples are
//! uploaded to a cloud model that returns unlabeled region masks, which are
//! relabeled by the edge model's aggregate vote. The fused labels double as
//! pseudo-labels for periodic retraining of both the edge model and the gate.
//!
//! Modules, bottom-up: [`tensor`] and [`text`] (value types and their text
//! format), [`fusion`], [`gating`], [`models`], [`adapt`], [`simenv`],
//! [`wire`], [`orchestrator`], [`metrics`], and [`harness`].

pub mod adapt;
pub mod error;
pub mod fusion;
pub mod gating;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod orchestrator;
pub mod simenv;
pub mod tensor;
pub mod text;
pub mod wire;

pub use error::{Error, Result};
