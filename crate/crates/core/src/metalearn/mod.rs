//! Option learning by meta-gradients: return computations, inner losses,
//! the meta objective and the outer training loop.

mod config;
mod learner;
mod losses;
mod replay;
mod returns;

pub use config::HyperParams;
pub use learner::{derive_seed, IterationReport, Learner, Method};
pub use losses::{
    actor_critic, intrinsic_option_loss, manager_loss, manager_targets, manager_values_at,
    meta_objective, option_windows, task_option_loss, Detached, LossStats, OptionSteps,
};
pub use replay::{MetaReplay, ReplayStep};
pub use returns::{
    discounted_targets, manager_return, option_return, windows, DiscountMode, ReturnPlan, Window,
};

#[cfg(test)]
mod tests;
