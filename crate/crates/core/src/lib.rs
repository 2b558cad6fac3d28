pub mod agent;
pub mod autodiff;
pub mod baselines;
pub mod envs;
pub mod error;
pub mod harness;
pub mod metalearn;
pub mod nets;

pub use error::{Error, Result};
