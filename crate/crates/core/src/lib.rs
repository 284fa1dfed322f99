//! Federated multi-group prompt learning over a synthetic orthogonal
//! feature world, plus a numerical harness for the selection and
//! aggregation theory.

pub mod aggregation;
pub mod analysis;
pub mod commands;
pub mod config;
pub mod error;
pub mod feature_space;
pub mod federation;
pub mod linalg;
pub mod prompt_model;
pub mod report;
pub mod rng;
pub mod selection;
pub mod synth_data;

pub use error::{Error, Result};
