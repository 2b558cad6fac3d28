//! Experiment orchestration: configs, train and transfer phases, sweeps,
//! statistics and plots.

mod config;
mod metrics;
mod plot;
mod run;
mod selftest;
mod stats;
mod sweep;
mod viz;

pub use config::{set_key, split_override, EnvConfig, EnvKind, NetConfig, RunConfig, Tasks};
pub use metrics::{metrics_header, MetricsWriter, Table, UsageLog};
pub use plot::{curve_svg, Band};
pub use run::{
    checkpoint_config, learner_from_checkpoint, option_hash, pipeline, train_phase, transfer_phase,
    Phase, PhaseSummary, Pipeline, RunRecord, RECORD,
};
pub use selftest::{
    literal_manager_return, literal_option_return, meta_gradient_check, selftest, tiny_hp,
    tiny_spec, tiny_tasks, Check, MetaGradCheck,
};
pub use stats::{auc, mean, paired_t_test, std_dev, PairedTest};
pub use sweep::{sweep, SweepAggregate, SweepRow, SweepSummary};
pub use viz::viz;

#[cfg(test)]
mod tests;
