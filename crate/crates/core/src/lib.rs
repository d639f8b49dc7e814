pub mod encoder;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod heads;
pub mod input;
pub mod kb;
pub mod model;
pub mod params;
pub mod reference;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
