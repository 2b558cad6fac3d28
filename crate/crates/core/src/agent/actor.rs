use std::collections::VecDeque;

use rand::Rng;

use super::nets::{
    gather_rows, sample_categorical, softmax, AgentNets, AgentParams, Choice, TerminationRule,
};
use crate::autodiff::Tensor;
use crate::envs::{
    Action, Cell, EnvBatch, TaskSource, TraceRow, MANAGER_CHANNELS, OPTION_CHANNELS,
};
use crate::error::{Error, Result};

/// A fixed-length segment of experience from every env in a batch.
///
/// Steps are indexed `t * batch + b`. States live in a table: row `s` of a
/// step is its own state, rows `steps*batch + b` are the states after the
/// last step, and terminal states of finished episodes follow.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub batch: usize,
    pub steps: usize,
    pub options: usize,
    pub actions: usize,
    /// `[rows, manager_obs_len]`.
    pub manager_obs: Tensor,
    /// `[rows, option_obs_len]`.
    pub option_obs: Tensor,
    /// Task id of every state row.
    pub task_ids: Vec<usize>,
    pub action: Vec<usize>,
    /// Active choice index (options first, then primitives).
    pub choice: Vec<usize>,
    /// The manager picked `choice` at this step.
    pub decision: Vec<bool>,
    pub reward: Vec<f64>,
    /// The episode ended after this step (goal or cap).
    pub done: Vec<bool>,
    /// Control returned to the manager after this step for any reason other
    /// than the episode ending.
    pub switch: Vec<bool>,
    /// State row reached by this step.
    pub next_row: Vec<usize>,
    /// Learned intrinsic reward seen while acting (0 when not used).
    pub option_reward: Vec<f64>,
    /// Termination probability of the active option at the next state (0 for
    /// primitive steps and fixed-duration options).
    pub beta: Vec<f64>,
    /// Agent position at each step's state.
    pub cells: Vec<Cell>,
    /// `(return, length)` of episodes that ended inside this segment.
    pub finished: Vec<(f64, usize)>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.action.len()
    }

    pub fn is_empty(&self) -> bool {
        self.action.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.task_ids.len()
    }

    pub fn choice_of(&self, s: usize) -> Choice {
        Choice::decode(self.choice[s], self.options)
    }

    pub fn option_of(&self, s: usize) -> Option<usize> {
        self.choice_of(s).option()
    }

    /// Steps run under options, in index order.
    pub fn option_steps(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&s| self.choice[s] < self.options)
            .collect()
    }

    pub fn decision_steps(&self) -> Vec<usize> {
        (0..self.len()).filter(|&s| self.decision[s]).collect()
    }

    /// Step that follows `s` for the same env within this segment, if the
    /// episode goes on.
    pub fn successor(&self, s: usize) -> Option<usize> {
        let n = s + self.batch;
        (!self.done[s] && n < self.len()).then_some(n)
    }

    /// Per-env trace rows of env `b`.
    pub fn trace(&self, b: usize, first_step: usize) -> Vec<TraceRow> {
        (0..self.steps)
            .map(|t| {
                let s = t * self.batch + b;
                TraceRow {
                    step: first_step + t,
                    x: self.cells[s].x,
                    y: self.cells[s].y,
                    action: self.action[s],
                    reward: self.reward[s],
                    active_option: self.option_of(s).map_or(-1, |i| i as i64),
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug)]
struct Running {
    choice: usize,
    len: usize,
}

/// A batch of envs plus the call-and-return state carried between segments.
#[derive(Clone, Debug)]
pub struct Actor {
    pub envs: EnvBatch,
    running: Vec<Option<Running>>,
    episode_return: Vec<f64>,
    episode_len: Vec<usize>,
    recent: VecDeque<f64>,
    window: usize,
    pub frames: u64,
    pub episodes: u64,
}

impl Actor {
    pub fn new(source: &TaskSource, batch: usize, cap: usize, seed: u64) -> Result<Self> {
        if batch == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let envs = EnvBatch::new(source, batch, cap, seed)?;
        Ok(Actor {
            envs,
            running: vec![None; batch],
            episode_return: vec![0.0; batch],
            episode_len: vec![0; batch],
            recent: VecDeque::new(),
            window: 100,
            frames: 0,
            episodes: 0,
        })
    }

    pub fn batch(&self) -> usize {
        self.envs.len()
    }

    /// Mean of the last 100 finished episode returns, with its standard
    /// error; `None` before any episode has finished.
    pub fn recent_returns(&self) -> Option<(f64, f64)> {
        let n = self.recent.len();
        if n == 0 {
            return None;
        }
        let mean = self.recent.iter().sum::<f64>() / n as f64;
        let sem = if n > 1 {
            let var = self.recent.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Some((mean, sem))
    }

    pub fn clear_recent(&mut self) {
        self.recent.clear();
    }

    /// Runs `steps` steps in every env with call-and-return option
    /// execution. Randomness is drawn from `rng` in a fixed order: manager
    /// choices, then actions, then terminations, each in env order.
    pub fn rollout(
        &mut self,
        nets: &AgentNets,
        params: &AgentParams,
        steps: usize,
        rule: TerminationRule,
        rng: &mut impl Rng,
    ) -> Result<Trajectory> {
        let b = self.batch();
        let k = nets.options;
        let a_n = nets.actions;
        let ml = nets.manager_obs_len();
        let ol = nets.option_obs_len();
        if steps == 0 {
            return Err(Error::Config("rollout length must be positive".into()));
        }
        if self.envs.envs[0].obs_len(true) != ml {
            return Err(Error::Config(format!(
                "network expects {} inputs but the environment produces {}",
                ml,
                self.envs.envs[0].obs_len(true)
            )));
        }
        if let (TerminationRule::Learned, true) = (rule, k > 0 && nets.option_termination.is_none())
        {
            return Err(Error::Config(
                "learned termination needs a termination network".into(),
            ));
        }
        let n = steps * b;
        let mut step_mobs = vec![0.0; n * ml];
        let mut term_mobs: Vec<f64> = Vec::new();
        let mut task_ids = vec![0; n];
        let mut term_tasks = Vec::new();
        let mut tr = Trajectory {
            batch: b,
            steps,
            options: k,
            actions: a_n,
            manager_obs: Tensor::zeros(&[0, ml]),
            option_obs: Tensor::zeros(&[0, ol]),
            task_ids: Vec::new(),
            action: vec![0; n],
            choice: vec![0; n],
            decision: vec![false; n],
            reward: vec![0.0; n],
            done: vec![false; n],
            switch: vec![false; n],
            next_row: vec![0; n],
            option_reward: vec![0.0; n],
            beta: vec![0.0; n],
            cells: vec![Cell::new(0, 0); n],
            finished: Vec::new(),
        };
        let terminal_base = n + b;
        let mut next_obs = vec![0.0; b * ml];

        for t in 0..steps {
            let base = t * b;
            for (i, env) in self.envs.envs.iter().enumerate() {
                env.observe(&mut step_mobs[(base + i) * ml..(base + i + 1) * ml], true);
                task_ids[base + i] = env.task().id;
                tr.cells[base + i] = env.agent();
            }

            let need: Vec<usize> = (0..b).filter(|&i| self.running[i].is_none()).collect();
            if !need.is_empty() {
                let rows: Vec<usize> = need.iter().map(|&i| base + i).collect();
                let ids: Vec<usize> = rows.iter().map(|&r| task_ids[r]).collect();
                let (logits, _) = nets.manager_eval(
                    &params.manager,
                    gather_rows(&step_mobs, ml, &rows),
                    nets.task_encoding(&ids)?,
                )?;
                for (j, &i) in need.iter().enumerate() {
                    let c = sample_categorical(&softmax(logits.row(j)), rng.gen());
                    self.running[i] = Some(Running { choice: c, len: 0 });
                    tr.decision[base + i] = true;
                }
            }

            let in_option: Vec<usize> = (0..b)
                .filter(|&i| self.running[i].map_or(false, |r| r.choice < k))
                .collect();
            let opt_x = (!in_option.is_empty()).then(|| {
                let rows: Vec<usize> = in_option.iter().map(|&i| base + i).collect();
                option_view(&gather_rows(&step_mobs, ml, &rows), ml, ol)
            });
            let policy_logits = match (&opt_x, &nets.option_policy, &params.option_policy) {
                (Some(x), Some(net), Some(ps)) => {
                    Some(AgentNets::option_eval(net, ps, x.clone())?.0)
                }
                (Some(_), _, _) => {
                    return Err(Error::Config("options need an option policy".into()))
                }
                _ => None,
            };
            let mut actions = Vec::with_capacity(b);
            let mut j = 0;
            for i in 0..b {
                let run = self.running[i].expect("every env has a running choice");
                let a = if run.choice < k {
                    let logits = policy_logits.as_ref().expect("option rows evaluated");
                    let row = &logits.row(j)[run.choice * a_n..(run.choice + 1) * a_n];
                    j += 1;
                    sample_categorical(&softmax(row), rng.gen())
                } else {
                    run.choice - k
                };
                actions.push(a);
                tr.action[base + i] = a;
                tr.choice[base + i] = run.choice;
            }
            if let (Some(x), Some(net), Some(ps)) =
                (&opt_x, &nets.option_reward, &params.option_reward)
            {
                let (r, _) = AgentNets::option_eval(net, ps, x.clone())?;
                for (j, &i) in in_option.iter().enumerate() {
                    let c = self.running[i].expect("running").choice;
                    tr.option_reward[base + i] = r.row(j)[c * a_n + actions[i]];
                }
            }

            let acts: Vec<Action> = actions
                .iter()
                .map(|&a| Action::from_index(a).expect("action index in range"))
                .collect();
            let transitions = self.envs.step_all(&acts)?;
            self.frames += b as u64;
            for (i, env) in self.envs.envs.iter().enumerate() {
                env.observe(&mut next_obs[i * ml..(i + 1) * ml], true);
            }

            let betas = match (&nets.option_termination, &params.option_termination, rule) {
                (Some(net), Some(ps), TerminationRule::Learned) if !in_option.is_empty() => {
                    let x = option_view(&gather_rows(&next_obs, ml, &in_option), ml, ol);
                    Some(AgentNets::option_eval(net, ps, x)?.0)
                }
                _ => None,
            };

            let mut j = 0;
            for (i, tn) in transitions.iter().enumerate() {
                let s = base + i;
                tr.reward[s] = tn.reward;
                tr.done[s] = tn.done;
                self.episode_return[i] += tn.reward;
                self.episode_len[i] += 1;
                let mut run = self.running[i].expect("running");
                run.len += 1;
                let ends = if run.choice < k {
                    let stop = match rule {
                        TerminationRule::Learned => {
                            let beta =
                                betas.as_ref().expect("termination evaluated").row(j)[run.choice];
                            tr.beta[s] = beta;
                            !tn.done && rng.gen::<f64>() < beta
                        }
                        TerminationRule::Fixed(d) => run.len >= d,
                    };
                    j += 1;
                    stop
                } else {
                    true
                };
                tr.switch[s] = ends && !tn.done;
                self.running[i] = (!ends && !tn.done).then_some(run);
                if tn.done {
                    tr.next_row[s] = terminal_base + term_tasks.len();
                    term_mobs.extend_from_slice(&next_obs[i * ml..(i + 1) * ml]);
                    term_tasks.push(self.envs.envs[i].task().id);
                    tr.finished
                        .push((self.episode_return[i], self.episode_len[i]));
                    self.recent.push_back(self.episode_return[i]);
                    if self.recent.len() > self.window {
                        self.recent.pop_front();
                    }
                    self.episodes += 1;
                    self.episode_return[i] = 0.0;
                    self.episode_len[i] = 0;
                    self.envs.envs[i].reset()?;
                } else {
                    tr.next_row[s] = if t + 1 < steps { s + b } else { n + i };
                }
            }
        }

        let mut all = step_mobs;
        all.reserve((b + term_tasks.len()) * ml);
        for env in &self.envs.envs {
            let start = all.len();
            all.resize(start + ml, 0.0);
            env.observe(&mut all[start..], true);
            task_ids.push(env.task().id);
        }
        all.extend_from_slice(&term_mobs);
        task_ids.extend(term_tasks);
        let rows = task_ids.len();
        let mobs = Tensor::new(vec![rows, ml], all)?;
        tr.option_obs = option_view(&mobs, ml, ol);
        tr.manager_obs = mobs;
        tr.task_ids = task_ids;
        Ok(tr)
    }
}

/// Drops the goal channel from manager-view rows.
fn option_view(mobs: &Tensor, ml: usize, ol: usize) -> Tensor {
    debug_assert_eq!(ml / MANAGER_CHANNELS * OPTION_CHANNELS, ol);
    let rows = mobs.shape()[0];
    let mut out = Vec::with_capacity(rows * ol);
    for r in 0..rows {
        out.extend_from_slice(&mobs.data()[r * ml..r * ml + ol]);
    }
    Tensor::from_parts(vec![rows, ol], out)
}
