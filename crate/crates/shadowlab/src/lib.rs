//! Numerical toolkit for pseudo-orbit tracing (shadowing) experiments on
//! three-dimensional flows.

pub mod adversarial;
pub mod align;
pub mod chain;
pub mod config;
pub mod error;
pub mod experiment;
pub mod growth;
pub mod flow;
pub mod models;
pub mod plot;
pub mod reparam;
pub mod rng;
pub mod sample;
pub mod section;
pub mod verify;

pub use error::{Error, Result};
pub use flow::{IntegrateOpts, State, TangentFrame, Trajectory, VectorField};
