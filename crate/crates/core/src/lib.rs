//! Simulation and tomographic characterization of quantum non-demolition
//! qubit readout.

pub mod analytics;
pub mod cli;
pub mod error;
pub mod linalg;
pub mod mle;
pub mod model;
pub mod protocol;
pub mod quantifiers;
pub mod sme;

pub use error::{Error, Result};
