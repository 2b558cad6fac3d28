use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layout::{Action, Cell, GridLayout};
use super::tasks::{procedural_rooms, Difficulty, Phase, TaskSpec};
use crate::error::{Error, Result};

pub const DEFAULT_EPISODE_CAP: usize = 100;

/// Channels: 0 agent one-hot, 1 walls, 2 goal one-hot (manager view only).
pub const MANAGER_CHANNELS: usize = 3;
pub const OPTION_CHANNELS: usize = 2;

/// Where each episode's task comes from.
#[derive(Clone, Debug)]
pub enum TaskSource {
    /// Fixed layout; the goal is drawn uniformly from `tasks` at every reset.
    Goals {
        layout: Arc<GridLayout>,
        tasks: Vec<TaskSpec>,
    },
    /// A freshly generated layout and goal at every reset.
    Procedural { difficulty: Difficulty },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub reward: f64,
    pub done: bool,
    pub reached_goal: bool,
}

/// One gridworld instance with its own random stream.
#[derive(Clone, Debug)]
pub struct GridEnv {
    source: TaskSource,
    layout: Arc<GridLayout>,
    task: TaskSpec,
    agent: Cell,
    steps: usize,
    cap: usize,
    done: bool,
    rng: ChaCha8Rng,
}

/// Independent stream per (run seed, env index).
pub fn env_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

impl GridEnv {
    /// Builds the env and starts its first episode.
    pub fn new(source: TaskSource, cap: usize, rng: ChaCha8Rng) -> Result<Self> {
        if cap == 0 {
            return Err(Error::Env("episode cap must be positive".into()));
        }
        let layout = match &source {
            TaskSource::Goals { layout, tasks } => {
                if tasks.is_empty() {
                    return Err(Error::Env("task list is empty".into()));
                }
                if let Some(t) = tasks.iter().find(|t| layout.is_wall(t.goal)) {
                    return Err(Error::Env(format!("goal {} is a wall", t.goal)));
                }
                Arc::clone(layout)
            }
            // Replaced by the first reset.
            TaskSource::Procedural { .. } => Arc::new(super::tasks::four_rooms_layout()),
        };
        let mut env = GridEnv {
            source,
            layout,
            task: TaskSpec {
                goal: Cell::new(0, 0),
                phase: Phase::Train,
                id: 0,
            },
            agent: Cell::new(0, 0),
            steps: 0,
            cap,
            done: true,
            rng,
        };
        env.reset()?;
        Ok(env)
    }

    /// Starts a new episode on a task drawn from the source.
    pub fn reset(&mut self) -> Result<()> {
        match &self.source {
            TaskSource::Goals { tasks, .. } => {
                let task = *tasks.choose(&mut self.rng).expect("non-empty task list");
                self.place(task);
            }
            TaskSource::Procedural { difficulty } => {
                let difficulty = *difficulty;
                let inst = procedural_rooms(difficulty, self.rng.gen())?;
                self.layout = Arc::new(inst.layout);
                let phase = match difficulty {
                    Difficulty::Simple => Phase::Train,
                    Difficulty::Hard => Phase::Test,
                };
                self.place(TaskSpec {
                    goal: inst.goal,
                    phase,
                    id: 0,
                });
            }
        }
        Ok(())
    }

    fn place(&mut self, task: TaskSpec) {
        self.task = task;
        let starts: Vec<Cell> = self
            .layout
            .open_cells()
            .into_iter()
            .filter(|&c| c != task.goal)
            .collect();
        self.agent = *starts.choose(&mut self.rng).unwrap_or(&task.goal);
        self.steps = 0;
        self.done = false;
    }

    pub fn step(&mut self, action: Action) -> Result<Transition> {
        if self.done {
            return Err(Error::Env("step called on a finished episode".into()));
        }
        self.agent = self.layout.move_from(self.agent, action);
        self.steps += 1;
        let reached_goal = self.agent == self.task.goal;
        self.done = reached_goal || self.steps >= self.cap;
        Ok(Transition {
            reward: if reached_goal { 1.0 } else { 0.0 },
            done: self.done,
            reached_goal,
        })
    }

    pub fn layout(&self) -> &GridLayout {
        &self.layout
    }

    pub fn task(&self) -> TaskSpec {
        self.task
    }

    pub fn agent(&self) -> Cell {
        self.agent
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn obs_len(&self, with_goal: bool) -> usize {
        let channels = if with_goal {
            MANAGER_CHANNELS
        } else {
            OPTION_CHANNELS
        };
        channels * self.layout.width() * self.layout.height()
    }

    /// Writes the observation into `buf`: the manager view when `with_goal`,
    /// otherwise the option view without the goal channel.
    pub fn observe(&self, buf: &mut [f64], with_goal: bool) {
        write_observation(
            &self.layout,
            self.agent,
            with_goal.then_some(self.task.goal),
            buf,
        );
    }

    pub fn observation(&self, with_goal: bool) -> Vec<f64> {
        let mut buf = vec![0.0; self.obs_len(with_goal)];
        self.observe(&mut buf, with_goal);
        buf
    }
}

/// Stacked channels for one state; the goal channel is written only when a
/// goal is given.
pub fn write_observation(layout: &GridLayout, agent: Cell, goal: Option<Cell>, buf: &mut [f64]) {
    let plane = layout.width() * layout.height();
    let channels = if goal.is_some() {
        MANAGER_CHANNELS
    } else {
        OPTION_CHANNELS
    };
    debug_assert_eq!(buf.len(), channels * plane);
    buf.fill(0.0);
    buf[layout.index(agent)] = 1.0;
    for (i, &w) in layout.walls().iter().enumerate() {
        if w {
            buf[plane + i] = 1.0;
        }
    }
    if let Some(g) = goal {
        buf[2 * plane + layout.index(g)] = 1.0;
    }
}

/// A fixed set of environments stepped together.
#[derive(Clone, Debug)]
pub struct EnvBatch {
    pub envs: Vec<GridEnv>,
}

impl EnvBatch {
    /// `count` envs; env `i` draws from stream `i` of `seed`.
    pub fn new(source: &TaskSource, count: usize, cap: usize, seed: u64) -> Result<Self> {
        let envs = (0..count)
            .map(|i| GridEnv::new(source.clone(), cap, env_rng(seed, i as u64)))
            .collect::<Result<_>>()?;
        Ok(EnvBatch { envs })
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn step_all(&mut self, actions: &[Action]) -> Result<Vec<Transition>> {
        if actions.len() != self.envs.len() {
            return Err(Error::Env(format!(
                "{} actions for {} environments",
                actions.len(),
                self.envs.len()
            )));
        }
        self.envs
            .iter_mut()
            .zip(actions)
            .map(|(e, &a)| e.step(a))
            .collect()
    }
}

/// One row of a trajectory trace; `active_option` is -1 for primitive
/// choices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub x: usize,
    pub y: usize,
    pub action: usize,
    pub reward: f64,
    pub active_option: i64,
}

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}
