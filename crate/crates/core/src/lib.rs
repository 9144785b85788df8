//! Dimensional aspect sentiment regression: predict a valence/arousal pair
//! in [1, 9] for each (sentence, aspect) instance.

pub mod compare;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod llm;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod seed;
pub mod tensor_io;
pub mod trainer;
pub mod va;

pub use error::{Error, Result};
pub use va::VaPair;
