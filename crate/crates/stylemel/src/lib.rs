pub mod alignment;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod decoder;
pub mod diffusion;
pub mod encoders;
pub mod error;
pub mod layers;
pub mod model;
pub mod params;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor};
