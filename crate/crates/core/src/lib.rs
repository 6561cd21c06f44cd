pub mod calibrate;
pub mod cli;
pub mod error;
pub mod experiment;
pub mod noisegen;
pub mod numkit;
pub mod robustmean;
pub mod suite;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
