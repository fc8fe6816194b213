pub mod data;
pub mod rl_model;
pub mod rollout;
pub mod train;
pub mod vp_model;

pub use data::*;
pub use rl_model::*;
pub use rollout::*;
pub use train::*;
pub use vp_model::*;
