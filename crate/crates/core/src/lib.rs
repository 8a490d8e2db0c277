pub mod container;
pub mod crn;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod room;
pub mod spatial;
pub mod speaker;
pub mod stft;
pub mod wave;

pub use error::{Error, Result};
