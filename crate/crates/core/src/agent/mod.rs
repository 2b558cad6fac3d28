//! Call-and-return execution of a manager over options and primitive
//! actions.

mod actor;
mod nets;
mod usage;

pub use actor::{Actor, Trajectory};
pub(crate) use nets::gather_rows;
pub use nets::{sample_categorical, softmax, AgentNets, AgentParams, Choice, TerminationRule};
pub use usage::{
    option_map, option_map_svg, usage_svg, write_option_map_csv, MapCell, UsageCounts, UsageStats,
};

#[cfg(test)]
mod tests;
