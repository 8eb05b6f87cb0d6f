pub mod config;
pub mod dataset;
pub mod decision;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod rng;
pub mod scalar;
pub mod simulator;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type EncoderModel64 = encoder::EncoderModel<f64>;
pub type EncoderModel32 = encoder::EncoderModel<f32>;
pub type SvrModel64 = decision::SvrModel<f64>;
