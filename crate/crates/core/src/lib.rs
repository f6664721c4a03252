pub mod attention;
pub mod classifier;
pub mod data;
pub mod embeddings;
pub mod encoder;
pub mod error;
pub mod export;
pub mod model;
pub mod params;
pub mod synthetic;
pub mod tensor;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
