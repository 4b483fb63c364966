pub mod codec;
pub mod delay;
pub mod efficiency;
pub mod error;
pub mod kernel;
pub mod model;
pub mod moments;
pub mod optimizer;
pub mod sim;

pub use error::{Error, Result};
