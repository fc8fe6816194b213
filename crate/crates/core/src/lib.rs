pub mod autograd;
pub mod backbone;
pub mod baselines;
pub mod encoder;
pub mod env;
pub mod error;
pub mod harness;
pub mod heads;
pub mod lrna;
pub mod params;
pub mod tensor;
pub mod vp;

pub use error::{Error, Result};
