//! Networks for the manager, the options and the baselines, plus the
//! optimizer and checkpoint format.

pub mod checkpoint;
mod network;
mod params;
mod rmsprop;

pub use network::{Head, NetOutput, Network, NetworkSpec, TorsoSpec, BETA_MARGIN};
pub use params::{ParamSet, Role};
pub use rmsprop::{FrozenStep, RmsProp, RmsPropConfig, StepInfo};
