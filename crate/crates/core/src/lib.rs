pub mod beamform;
pub mod cli;
pub mod error;
pub mod gradcheck;
pub mod linalg;
pub mod loss;
pub mod net;
pub mod scene;
pub mod signal;
pub mod spatial;

pub use error::{Error, Result};
