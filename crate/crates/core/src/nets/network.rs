use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::params::{ParamSet, Role};
use crate::autodiff::{Padding, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TorsoSpec {
    /// Two stride-1 convolutions with relu, then one dense relu layer.
    Conv2 {
        filters: usize,
        kernel: usize,
        dense: usize,
        #[serde(default = "valid")]
        padding: Padding,
    },
    /// Dense relu layers on the flattened grid.
    Mlp { hidden: Vec<usize> },
}

fn valid() -> Padding {
    Padding::Valid
}

impl Default for TorsoSpec {
    fn default() -> Self {
        TorsoSpec::Conv2 {
            filters: 32,
            kernel: 2,
            dense: 256,
            padding: Padding::Valid,
        }
    }
}

/// Input geometry and torso shared by every network of an agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub torso: TorsoSpec,
    pub height: usize,
    pub width: usize,
    /// One-hot task ids fed to the manager through a linear embedding;
    /// 0 disables it.
    #[serde(default)]
    pub task_count: usize,
    #[serde(default = "default_embed")]
    pub task_embed: usize,
}

fn default_embed() -> usize {
    16
}

/// What a network computes on top of the torso.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Head {
    /// Logits over `choices` plus a scalar value; sees the goal channel.
    Manager { choices: usize },
    /// Per-option action logits `[options*actions]` and values `[options]`.
    OptionPolicy { options: usize, actions: usize },
    /// Per-option, per-action arctan rewards `[options*actions]`.
    OptionReward { options: usize, actions: usize },
    /// Per-option sigmoid termination probabilities `[options]`.
    OptionTermination { options: usize },
}

impl Head {
    pub fn role(self) -> Role {
        match self {
            Head::Manager { .. } => Role::Manager,
            Head::OptionPolicy { .. } => Role::OptionPolicy,
            Head::OptionReward { .. } => Role::OptionReward,
            Head::OptionTermination { .. } => Role::OptionTermination,
        }
    }

    /// Manager networks see layout, agent and goal; the rest see only
    /// layout and agent.
    pub fn channels(self) -> usize {
        match self {
            Head::Manager { .. } => 3,
            _ => 2,
        }
    }

    fn outputs(self) -> (usize, usize) {
        match self {
            Head::Manager { choices } => (choices, 1),
            Head::OptionPolicy { options, actions } => (options * actions, options),
            Head::OptionReward { options, actions } => (options * actions, 0),
            Head::OptionTermination { options } => (options, 0),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct NetOutput<'t> {
    /// Logits, rewards in (-pi/2, pi/2) or terminations in (0, 1), `[N, P]`.
    pub main: Var<'t>,
    /// Linear value head `[N, V]`, when the head has one.
    pub value: Option<Var<'t>>,
}

/// A network architecture; parameters live in a separate [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    pub head: Head,
    pub role: Role,
}

/// Terminations are squeezed into `[m, 1-m]` so they stay strictly inside
/// (0, 1) where the sigmoid saturates in `f64`.
pub const BETA_MARGIN: f64 = 1e-6;

/// Truncated normal at two standard deviations, scaled by `1/sqrt(fan_in)`.
fn fan_in_init(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let std = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() <= 2.0 {
                break z * std;
            }
        })
        .collect();
    Tensor::from_parts(shape.to_vec(), data)
}

impl Network {
    pub fn new(spec: NetworkSpec, head: Head) -> Self {
        Network {
            spec,
            head,
            role: head.role(),
        }
    }

    /// Same architecture, tagged with another role (baselines reuse the
    /// manager architecture).
    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn channels(&self) -> usize {
        self.head.channels()
    }

    pub fn input_len(&self) -> usize {
        self.channels() * self.spec.height * self.spec.width
    }

    fn uses_task(&self) -> bool {
        matches!(self.head, Head::Manager { .. }) && self.spec.task_count > 0
    }

    fn conv_flat(&self) -> usize {
        match self.spec.torso {
            TorsoSpec::Conv2 {
                filters,
                kernel,
                padding,
                ..
            } => {
                let (h, w) = (self.spec.height, self.spec.width);
                match padding {
                    Padding::Same => filters * h * w,
                    Padding::Valid => {
                        filters
                            * (h + 2).saturating_sub(2 * kernel)
                            * (w + 2).saturating_sub(2 * kernel)
                    }
                }
            }
            TorsoSpec::Mlp { .. } => 0,
        }
    }

    /// Parameter names, shapes and fan-ins (`None` for zero-initialised
    /// biases), in declaration order.
    pub fn layout(&self) -> Result<Vec<(String, Vec<usize>, Option<usize>)>> {
        let mut out = Vec::new();
        let mut push =
            |name: String, shape: Vec<usize>, fan: Option<usize>| out.push((name, shape, fan));
        let c = self.channels();
        let mut feat = match &self.spec.torso {
            TorsoSpec::Conv2 {
                filters,
                kernel,
                dense,
                ..
            } => {
                let (f, k) = (*filters, *kernel);
                if k == 0 || f == 0 || *dense == 0 || self.conv_flat() == 0 {
                    return Err(Error::Config(format!(
                        "conv torso ({f} filters, kernel {k}, dense {dense}) does not fit a {}x{} grid",
                        self.spec.height, self.spec.width
                    )));
                }
                push("conv1.w".into(), vec![f, c, k, k], Some(c * k * k));
                push("conv1.b".into(), vec![f], None);
                push("conv2.w".into(), vec![f, f, k, k], Some(f * k * k));
                push("conv2.b".into(), vec![f], None);
                let flat = self.conv_flat();
                push("dense.w".into(), vec![flat, *dense], Some(flat));
                push("dense.b".into(), vec![*dense], None);
                *dense
            }
            TorsoSpec::Mlp { hidden } => {
                let mut fan = self.input_len();
                for (i, &h) in hidden.iter().enumerate() {
                    if h == 0 {
                        return Err(Error::Config("mlp hidden sizes must be positive".into()));
                    }
                    push(format!("fc{i}.w"), vec![fan, h], Some(fan));
                    push(format!("fc{i}.b"), vec![h], None);
                    fan = h;
                }
                fan
            }
        };
        if self.uses_task() {
            let (t, e) = (self.spec.task_count, self.spec.task_embed);
            push("task.w".into(), vec![t, e], Some(t));
            push("task.b".into(), vec![e], None);
            feat += e;
        }
        let (p, v) = self.head.outputs();
        push("head.w".into(), vec![feat, p], Some(feat));
        push("head.b".into(), vec![p], None);
        if v > 0 {
            push("value.w".into(), vec![feat, v], Some(feat));
            push("value.b".into(), vec![v], None);
        }
        Ok(out)
    }

    /// Fresh parameters: fan-in truncated-normal weights, zero biases.
    pub fn init(&self, rng: &mut impl Rng) -> Result<ParamSet> {
        let mut ps = ParamSet::new(self.role);
        for (name, shape, fan) in self.layout()? {
            let t = match fan {
                Some(fan) => fan_in_init(rng, &shape, fan),
                None => Tensor::zeros(&shape),
            };
            ps.push(name, t)?;
        }
        Ok(ps)
    }

    /// Checks that `ps` has exactly the layout [`Network::init`] produces.
    pub fn check_params(&self, ps: &ParamSet) -> Result<()> {
        let layout = self.layout()?;
        let ok = layout.len() == ps.len()
            && layout
                .iter()
                .zip(ps.iter())
                .all(|((name, shape, _), (n, t))| name == n && shape.as_slice() == t.shape());
        if ok {
            Ok(())
        } else {
            Err(Error::Checkpoint(format!(
                "parameter layout for {} does not match the network",
                self.role.as_str()
            )))
        }
    }

    /// Forward pass over a batch of flattened observations `[N, C*H*W]`.
    /// `task` is a one-hot `[N, task_count]` when task embedding is on.
    pub fn forward<'t>(
        &self,
        params: &[Var<'t>],
        obs: Var<'t>,
        task: Option<Var<'t>>,
    ) -> Result<NetOutput<'t>> {
        let shape = obs.shape();
        if shape.len() != 2 || shape[1] != self.input_len() {
            return Err(Error::Shape {
                op: "network_input",
                lhs: shape,
                rhs: vec![self.input_len()],
            });
        }
        let n = shape[0];
        let mut it = params.iter().copied();
        let mut next = || {
            it.next()
                .ok_or_else(|| Error::InvalidArgument("too few parameters for network".into()))
        };
        let mut h = match &self.spec.torso {
            TorsoSpec::Conv2 { padding, .. } => {
                let x = obs.reshape(&[n, self.channels(), self.spec.height, self.spec.width])?;
                let x = conv_layer(x, next()?, next()?, *padding)?;
                let x = conv_layer(x, next()?, next()?, *padding)?;
                let x = x.reshape(&[n, self.conv_flat()])?;
                x.matmul(next()?)?.add(next()?)?.relu()?
            }
            TorsoSpec::Mlp { hidden } => {
                let mut x = obs;
                for _ in hidden {
                    x = x.matmul(next()?)?.add(next()?)?.relu()?;
                }
                x
            }
        };
        if self.uses_task() {
            let task =
                task.ok_or_else(|| Error::InvalidArgument("manager needs a task encoding".into()))?;
            let e = task.matmul(next()?)?.add(next()?)?.relu()?;
            h = h.concat_last(e)?;
        }
        let pre = h.matmul(next()?)?.add(next()?)?;
        let main = match self.head {
            Head::OptionReward { .. } => pre.arctan()?,
            Head::OptionTermination { .. } => pre
                .sigmoid()?
                .affine(1.0 - 2.0 * BETA_MARGIN, BETA_MARGIN)?,
            _ => pre,
        };
        let value = if self.head.outputs().1 > 0 {
            Some(h.matmul(next()?)?.add(next()?)?)
        } else {
            None
        };
        Ok(NetOutput { main, value })
    }
}

fn conv_layer<'t>(x: Var<'t>, w: Var<'t>, b: Var<'t>, padding: Padding) -> Result<Var<'t>> {
    let y = x.conv2d(w, padding)?;
    let s = y.shape();
    let (f, hw) = (s[1], s[2] * s[3]);
    let bias = b.gather(
        (0..f).flat_map(|c| std::iter::repeat(c).take(hw)).collect(),
        &s[1..],
    )?;
    y.add(bias)?.relu()
}
