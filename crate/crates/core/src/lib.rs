//! Message passing neural networks for molecular property prediction.

pub mod bench;
pub mod engine;
pub mod error;
pub mod io;
pub mod model;
pub mod molgraph;
pub mod nn;
pub mod params;
pub mod readout;
pub mod spectral;
pub mod tensor;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
