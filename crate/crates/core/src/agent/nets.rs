use rand::Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::envs::NUM_ACTIONS;
use crate::error::{Error, Result};
use crate::nets::{Head, Network, NetworkSpec, ParamSet, Role};

/// What the manager picked: option `i` runs until it terminates, a primitive
/// action runs for one step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Choice {
    Option(usize),
    Primitive(usize),
}

impl Choice {
    /// Choices are indexed options first, then primitive actions.
    pub fn decode(index: usize, options: usize) -> Choice {
        if index < options {
            Choice::Option(index)
        } else {
            Choice::Primitive(index - options)
        }
    }

    pub fn index(self, options: usize) -> usize {
        match self {
            Choice::Option(i) => i,
            Choice::Primitive(a) => options + a,
        }
    }

    pub fn option(self) -> Option<usize> {
        match self {
            Choice::Option(i) => Some(i),
            Choice::Primitive(_) => None,
        }
    }
}

/// How a running option decides to stop.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TerminationRule {
    /// Bernoulli draw on the termination network at every next state.
    Learned,
    /// Stop after a fixed number of steps.
    Fixed(usize),
}

/// Architectures of one agent. Options are optional as a whole; reward and
/// termination networks are present only for methods that use them.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentNets {
    pub manager: Network,
    pub option_policy: Option<Network>,
    pub option_reward: Option<Network>,
    pub option_termination: Option<Network>,
    pub options: usize,
    pub actions: usize,
}

impl AgentNets {
    pub fn new(
        spec: &NetworkSpec,
        options: usize,
        with_reward: bool,
        with_termination: bool,
    ) -> Self {
        let actions = NUM_ACTIONS;
        let option_spec = NetworkSpec {
            task_count: 0,
            ..spec.clone()
        };
        let has = options > 0;
        AgentNets {
            manager: Network::new(
                spec.clone(),
                Head::Manager {
                    choices: options + actions,
                },
            ),
            option_policy: has.then(|| {
                Network::new(option_spec.clone(), Head::OptionPolicy { options, actions })
            }),
            option_reward: (has && with_reward).then(|| {
                Network::new(option_spec.clone(), Head::OptionReward { options, actions })
            }),
            option_termination: (has && with_termination)
                .then(|| Network::new(option_spec, Head::OptionTermination { options })),
            options,
            actions,
        }
    }

    /// Same as `new` with the manager stored under the baseline role.
    pub fn flat(spec: &NetworkSpec) -> Self {
        let mut nets = Self::new(spec, 0, false, false);
        nets.manager = nets.manager.with_role(Role::Baseline);
        nets
    }

    pub fn choices(&self) -> usize {
        self.options + self.actions
    }

    pub fn manager_obs_len(&self) -> usize {
        self.manager.spec.height * self.manager.spec.width * self.manager.channels()
    }

    pub fn option_obs_len(&self) -> usize {
        self.manager.spec.height * self.manager.spec.width * 2
    }

    /// Initialises manager, option policy, reward and termination in that
    /// order from one stream.
    pub fn init(&self, rng: &mut impl Rng) -> Result<AgentParams> {
        Ok(AgentParams {
            manager: self.manager.init(rng)?,
            option_policy: self
                .option_policy
                .as_ref()
                .map(|n| n.init(rng))
                .transpose()?,
            option_reward: self
                .option_reward
                .as_ref()
                .map(|n| n.init(rng))
                .transpose()?,
            option_termination: self
                .option_termination
                .as_ref()
                .map(|n| n.init(rng))
                .transpose()?,
        })
    }

    pub fn check(&self, p: &AgentParams) -> Result<()> {
        self.manager.check_params(&p.manager)?;
        for (net, ps, what) in [
            (&self.option_policy, &p.option_policy, "option policy"),
            (&self.option_reward, &p.option_reward, "option reward"),
            (
                &self.option_termination,
                &p.option_termination,
                "option termination",
            ),
        ] {
            match (net, ps) {
                (Some(n), Some(ps)) => n.check_params(ps)?,
                (None, None) => {}
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "{what} parameters do not match the architecture"
                    )))
                }
            }
        }
        Ok(())
    }

    /// Manager logits and values for the given rows, as plain tensors.
    pub fn manager_eval(
        &self,
        params: &ParamSet,
        obs: Tensor,
        tasks: Option<Tensor>,
    ) -> Result<(Tensor, Tensor)> {
        let tape = Tape::new();
        let p = params.on_tape(&tape, false)?;
        let x = tape.constant(obs)?;
        let t = tasks.map(|t| tape.constant(t)).transpose()?;
        let out = self.manager.forward(&p, x, t)?;
        Ok((
            (*out.main.value()).clone(),
            (*out.value.expect("manager has a value head").value()).clone(),
        ))
    }

    /// Main output (and value, if any) of an option-side network on rows.
    pub fn option_eval(
        net: &Network,
        params: &ParamSet,
        obs: Tensor,
    ) -> Result<(Tensor, Option<Tensor>)> {
        let tape = Tape::new();
        let p = params.on_tape(&tape, false)?;
        let out = net.forward(&p, tape.constant(obs)?, None)?;
        Ok((
            (*out.main.value()).clone(),
            out.value.map(|v| (*v.value()).clone()),
        ))
    }

    /// One-hot task rows for the manager, when it embeds task ids.
    pub fn task_encoding(&self, ids: &[usize]) -> Result<Option<Tensor>> {
        let n = self.manager.spec.task_count;
        if n == 0 {
            return Ok(None);
        }
        let mut data = vec![0.0; ids.len() * n];
        for (r, &id) in ids.iter().enumerate() {
            if id >= n {
                return Err(Error::InvalidArgument(format!(
                    "task id {id} outside {n} embedded tasks"
                )));
            }
            data[r * n + id] = 1.0;
        }
        Ok(Some(Tensor::new(vec![ids.len(), n], data)?))
    }

    /// Tracked manager forward used by the learners.
    pub fn manager_forward<'t>(
        &self,
        params: &[Var<'t>],
        obs: Var<'t>,
        task_ids: &[usize],
    ) -> Result<(Var<'t>, Var<'t>)> {
        let tape = obs.tape();
        let t = self
            .task_encoding(task_ids)?
            .map(|t| tape.constant(t))
            .transpose()?;
        let out = self.manager.forward(params, obs, t)?;
        Ok((out.main, out.value.expect("manager has a value head")))
    }
}

/// Parameters matching an [`AgentNets`].
#[derive(Clone, Debug, PartialEq)]
pub struct AgentParams {
    pub manager: ParamSet,
    pub option_policy: Option<ParamSet>,
    pub option_reward: Option<ParamSet>,
    pub option_termination: Option<ParamSet>,
}

impl AgentParams {
    /// All present sets in a fixed order.
    pub fn sets(&self) -> Vec<&ParamSet> {
        std::iter::once(&self.manager)
            .chain(self.option_policy.as_ref())
            .chain(self.option_reward.as_ref())
            .chain(self.option_termination.as_ref())
            .collect()
    }
}

/// Rows `rows` of a row-major `[_, width]` buffer as a tensor.
pub(crate) fn gather_rows(data: &[f64], width: usize, rows: &[usize]) -> Tensor {
    let mut out = Vec::with_capacity(rows.len() * width);
    for &r in rows {
        out.extend_from_slice(&data[r * width..(r + 1) * width]);
    }
    Tensor::from_parts(vec![rows.len(), width], out)
}

/// Softmax over a slice of logits.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Inverse-CDF draw from `probs` with one uniform `u` in [0, 1).
pub fn sample_categorical(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left the total just below one.
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}
