pub mod error;
pub mod evalsuite;
pub mod experiment;
pub mod generator;
pub mod nn;
pub mod predictor;
pub mod rng;
pub mod rvq;
pub mod syndata;

pub use error::{Error, Result};
