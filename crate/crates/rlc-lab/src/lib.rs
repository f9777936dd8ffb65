//! Randomized linear classifiers (RLCs) with invariance-by-construction
//! coefficient samplers for sets, graphs, and spheres, deterministic
//! baselines (Deep Sets, GIN), synthetic tasks, and an experiment harness.
//!
//! All numeric code is generic over [`scalar::Real`]; the aliases below pin
//! the `f64` instantiation used by the CLI and the experiments.

pub mod baselines;
pub mod error;
pub mod experiment;
pub mod nn;
pub mod optim;
pub mod rlc;
pub mod samplers;
pub mod scalar;
pub mod tape;
pub mod tasks;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::{sgn, Real};

pub type Tensor64 = tensor::Tensor<f64>;
pub type Graph64 = tape::Graph<f64>;
pub type LinearClassifier64 = rlc::LinearClassifier<f64>;
pub type RSetC64 = samplers::RSetC<f64>;
pub type RGraphC64 = samplers::RGraphC<f64>;
pub type RSphereC64 = samplers::RSphereC<f64>;
