//! Trainable unrolled iterative detector for overloaded MIMO channels.
//!
//! The crate is generic over the scalar type through [`Scalar`]; the
//! aliases below fix `f64`, which all defaults and the CLI use.

pub mod channel;
pub mod cli;
pub mod detectors;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod scalar;
pub mod stream;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default scalar used by the CLI and the type aliases below.
pub type Real = f64;
/// Dense matrix over the default scalar.
pub type Matrix = linalg::DenseMatrix<Real>;
/// Real-valued system model over the default scalar.
pub type System = channel::RealSystem<Real>;
/// Detector parameter vector over the default scalar.
pub type Params = detectors::DetectorParams<Real>;
