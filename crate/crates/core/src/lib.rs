//! Knowledge-constrained streaming QoE modeling.

pub mod baseline;
pub mod constraints;
pub mod grid;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod predict;
pub mod qp;
pub mod ranking;
pub mod scalar;
pub mod session;
pub mod sweep;
pub mod synth;
pub mod synthetic;
pub mod train;

pub use scalar::Scalar;
