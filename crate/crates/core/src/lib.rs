pub mod checkpoint;
pub mod clipio;
pub mod config;
pub mod error;
pub mod losses;
pub mod masking;
pub mod model;
pub mod nn;
pub mod optim;
pub mod par;
pub mod report;
pub mod pseudo;
pub mod scoring;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;
