//! Spectral Monte Carlo for semilinear stochastic evolution equations
//! `dZ = (AZ + b(Z)) dt + (−A)^{−ε/2} dW` with diagonal `A`.
//!
//! The nonlinear law is represented as a weighted law of the stochastic
//! convolution; the modules build the Gaussian reference paths, the
//! deterministic maps between paths, the weights, and the estimators that
//! check the representation against direct simulation.

pub mod analytic;
pub mod error;
pub mod girsanov_mc;
pub mod mc;
pub mod mild_maps;
pub mod path_space;
pub mod rng;
pub mod spectral;
pub mod stationary;

pub use error::{Error, Result};
pub use girsanov_mc::{GirsanovProblem, PathFunctional, StateFunction, WeightedSample};
pub use mc::{Estimate, McConfig};
pub use mild_maps::DeterministicPath;
pub use path_space::{GaussianPathSample, TimeGrid};
pub use spectral::{DriftSpec, OperatorSpec};
pub use stationary::{StationarySample, WindowGrid};
