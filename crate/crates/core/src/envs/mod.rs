//! Multi-task gridworlds: four rooms with disjoint train and test goals, and
//! procedurally generated rooms and mazes.

mod env;
mod layout;
mod tasks;

pub use env::{
    env_rng, read_trace, write_observation, write_trace, EnvBatch, GridEnv, TaskSource, TraceRow,
    Transition, DEFAULT_EPISODE_CAP, MANAGER_CHANNELS, OPTION_CHANNELS,
};
pub use layout::{Action, Cell, GridLayout, NUM_ACTIONS};
pub use tasks::{
    default_test_goals, default_train_goals, four_rooms, four_rooms_layout, procedural_rooms,
    Difficulty, GoalConfig, Phase, ProceduralInstance, TaskSpec, TaskSuite, PROCEDURAL_SIZE,
};

#[cfg(test)]
mod tests;
