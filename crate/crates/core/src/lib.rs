//! Numerical building blocks for population-scale modal identification of
//! planar trusses.
//!
//! The crate covers everything that is not learned: synthesising a truss
//! population, finite-element simulation of its dynamic response, emulating
//! sparse instrumentation with feature propagation, the dataset container,
//! modal parameter extraction from decomposed responses, and the classical
//! EFDD / SSI baselines used for comparison.

pub mod baselines;
pub mod error;
pub mod fem;
pub mod graphdata;
pub mod identify;
pub mod population;
pub mod seed;
pub mod sensing;
pub mod spectral;

pub use error::{Error, Result};
