use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::HyperParams;
use super::losses::{
    intrinsic_option_loss, manager_loss, meta_objective, task_option_loss, LossStats,
};
use super::replay::{MetaReplay, ReplayStep};
use crate::agent::{Actor, AgentNets, AgentParams, TerminationRule, Trajectory, UsageCounts};
use crate::autodiff::{Tape, Tensor, Var};
use crate::envs::TaskSource;
use crate::error::{Error, Result};
use crate::nets::{NetworkSpec, ParamSet, RmsProp};

/// Which learning rule drives the agent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Options learned from meta-learned rewards and terminations.
    Modac,
    /// Primitive actions only.
    Flat,
    /// Options of fixed duration trained on task reward.
    Mlsh,
    /// Options and terminations trained on task reward.
    OptionCritic,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Modac => "modac",
            Method::Flat => "flat",
            Method::Mlsh => "mlsh",
            Method::OptionCritic => "option_critic",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        match s {
            "modac" => Ok(Method::Modac),
            "flat" => Ok(Method::Flat),
            "mlsh" => Ok(Method::Mlsh),
            "option_critic" | "oc" => Ok(Method::OptionCritic),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }

    pub fn is_baseline(self) -> bool {
        self != Method::Modac
    }

    pub fn termination_rule(self, hp: &HyperParams) -> TerminationRule {
        match self {
            Method::Mlsh => TerminationRule::Fixed(hp.fixed_duration),
            _ => TerminationRule::Learned,
        }
    }

    /// Options this method runs with under `hp`.
    pub fn options(self, hp: &HyperParams) -> usize {
        match self {
            Method::Flat => 0,
            _ => hp.options,
        }
    }

    pub fn nets(self, spec: &NetworkSpec, hp: &HyperParams) -> AgentNets {
        match self {
            Method::Flat => AgentNets::flat(spec),
            Method::Modac => AgentNets::new(spec, hp.options, true, true),
            Method::Mlsh => AgentNets::new(spec, hp.options, false, false),
            Method::OptionCritic => AgentNets::new(spec, hp.options, false, true),
        }
    }
}

/// Independent seed for one purpose of a run.
pub fn derive_seed(seed: u64, purpose: u64) -> u64 {
    let mut z = seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) const SEED_INIT: u64 = 1;
pub(crate) const SEED_AGENT: u64 = 2;
pub(crate) const SEED_TRAIN_ENVS: u64 = 3;
pub(crate) const SEED_VALIDATION_ENVS: u64 = 4;

/// Everything measured during one outer iteration.
#[derive(Clone, Debug)]
pub struct IterationReport {
    /// Frames consumed so far, validation rollouts included.
    pub frames: u64,
    /// Mean and standard error of the last 100 training episode returns.
    pub returns: Option<(f64, f64)>,
    pub usage: UsageCounts,
    pub meta_grad_norm: f64,
    /// False when the validation rollout had no option steps.
    pub meta_updated: bool,
    pub manager: LossStats,
    pub option: LossStats,
    /// Training rollouts of this iteration, when recording is on.
    pub trajectories: Vec<Trajectory>,
    pub validation: Option<Trajectory>,
    /// Inputs of the meta update, when recording is on and every inner
    /// update was differentiated.
    pub replay: Option<MetaReplay>,
}

/// Training state of one agent.
#[derive(Clone, Debug)]
pub struct Learner {
    pub method: Method,
    pub hp: HyperParams,
    pub nets: AgentNets,
    pub params: AgentParams,
    /// Option parameters are held fixed (transfer).
    pub options_frozen: bool,
    /// Switching cost charged to the manager.
    pub cost: f64,
    pub actor: Actor,
    validation: Option<Actor>,
    opt_manager: RmsProp,
    opt_option: Option<RmsProp>,
    opt_meta: Option<RmsProp>,
    opt_termination: Option<RmsProp>,
    rng: ChaCha8Rng,
    /// Keep every trajectory in the reports.
    pub record: bool,
}

fn mean_stats(all: &[LossStats]) -> LossStats {
    if all.is_empty() {
        return LossStats::default();
    }
    let n = all.len() as f64;
    LossStats {
        policy: all.iter().map(|s| s.policy).sum::<f64>() / n,
        value: all.iter().map(|s| s.value).sum::<f64>() / n,
        entropy: all.iter().map(|s| s.entropy).sum::<f64>() / n,
        count: all.iter().map(|s| s.count).sum(),
    }
}

fn grads_as_tensors(g: &[Var<'_>]) -> Vec<Tensor> {
    g.iter().map(|v| (*v.value()).clone()).collect()
}

impl Learner {
    /// Fresh agent for `method` on `train` tasks; `validation` supplies the
    /// tasks of the meta objective (meta-gradient training with options
    /// only).
    pub fn new(
        method: Method,
        hp: HyperParams,
        spec: &NetworkSpec,
        train: &TaskSource,
        validation: &TaskSource,
        seed: u64,
    ) -> Result<Self> {
        hp.validate()?;
        let nets = method.nets(spec, &hp);
        let params = nets.init(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, SEED_INIT)))?;
        let actor = Actor::new(
            train,
            hp.batch,
            hp.episode_cap,
            derive_seed(seed, SEED_TRAIN_ENVS),
        )?;
        let validation = if method == Method::Modac && nets.options > 0 {
            Some(Actor::new(
                validation,
                hp.batch,
                hp.episode_cap,
                derive_seed(seed, SEED_VALIDATION_ENVS),
            )?)
        } else {
            None
        };
        let cost = hp.switching_cost;
        Self::assemble(
            method, hp, nets, params, actor, validation, cost, seed, false,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        method: Method,
        hp: HyperParams,
        nets: AgentNets,
        params: AgentParams,
        actor: Actor,
        validation: Option<Actor>,
        cost: f64,
        seed: u64,
        options_frozen: bool,
    ) -> Result<Self> {
        nets.check(&params)?;
        let cfg = hp.rmsprop;
        let opt_manager = RmsProp::new(&params.manager, cfg);
        let opt_option = params.option_policy.as_ref().map(|p| RmsProp::new(p, cfg));
        let opt_meta = match (&params.option_reward, &params.option_termination, method) {
            (Some(r), Some(b), Method::Modac) => Some(RmsProp::over(&[r, b], cfg)),
            _ => None,
        };
        let opt_termination = match (&params.option_termination, method) {
            (Some(b), Method::OptionCritic) => Some(RmsProp::new(b, cfg)),
            _ => None,
        };
        Ok(Learner {
            method,
            hp,
            nets,
            params,
            options_frozen,
            cost,
            actor,
            validation,
            opt_manager,
            opt_option,
            opt_meta,
            opt_termination,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, SEED_AGENT)),
            record: false,
        })
    }

    /// A learner that keeps this agent's options fixed and trains a freshly
    /// initialised manager on `tasks`, with no switching cost. Without
    /// options this is a fresh agent.
    pub fn for_transfer(&self, tasks: &TaskSource, seed: u64) -> Result<Self> {
        let nets = self.nets.clone();
        let mut init = ChaCha8Rng::seed_from_u64(derive_seed(seed, SEED_INIT));
        let manager = nets.manager.init(&mut init)?;
        let params = AgentParams {
            manager,
            option_policy: self.params.option_policy.clone(),
            option_reward: self.params.option_reward.clone(),
            option_termination: self.params.option_termination.clone(),
        };
        let actor = Actor::new(
            tasks,
            self.hp.batch,
            self.hp.episode_cap,
            derive_seed(seed, SEED_TRAIN_ENVS),
        )?;
        let frozen = self.nets.options > 0;
        Self::assemble(
            self.method,
            self.hp.clone(),
            nets,
            params,
            actor,
            None,
            0.0,
            seed,
            frozen,
        )
    }

    pub fn frames(&self) -> u64 {
        self.actor.frames + self.validation.as_ref().map_or(0, |v| v.frames)
    }

    fn rule(&self) -> TerminationRule {
        self.method.termination_rule(&self.hp)
    }

    /// One outer iteration: `inner_steps` rollouts with their updates, plus
    /// the validation rollout and meta update when learning options by
    /// meta-gradient.
    pub fn iterate(&mut self) -> Result<IterationReport> {
        let meta = self.method == Method::Modac && self.nets.options > 0 && !self.options_frozen;
        if meta {
            self.iterate_meta()
        } else {
            self.iterate_plain()
        }
    }

    fn manager_step(&mut self, tr: &Trajectory) -> Result<Option<LossStats>> {
        let tape = Tape::new();
        let p = self.params.manager.on_tape(&tape, true)?;
        let Some((loss, stats)) = manager_loss(
            &self.nets,
            &p,
            &self.params.manager,
            tr,
            &self.hp,
            self.cost,
        )?
        else {
            return Ok(None);
        };
        let g = tape.grad(loss, &p, false)?;
        self.opt_manager.step(
            &mut self.params.manager,
            &grads_as_tensors(&g.grads),
            self.hp.lr_manager,
            self.hp.clip,
        )?;
        Ok(Some(stats))
    }

    fn report(
        &self,
        usage: UsageCounts,
        manager: &[LossStats],
        option: &[LossStats],
    ) -> IterationReport {
        IterationReport {
            frames: self.frames(),
            returns: self.actor.recent_returns(),
            usage,
            meta_grad_norm: 0.0,
            meta_updated: false,
            manager: mean_stats(manager),
            option: mean_stats(option),
            trajectories: Vec::new(),
            validation: None,
            replay: None,
        }
    }

    fn iterate_plain(&mut self) -> Result<IterationReport> {
        let mut usage = UsageCounts::new(self.nets.options, self.nets.actions);
        let (mut mstats, mut ostats) = (Vec::new(), Vec::new());
        let mut kept = Vec::new();
        for _ in 0..self.hp.inner_steps {
            let tr = self.actor.rollout(
                &self.nets,
                &self.params,
                self.hp.rollout_len,
                self.rule(),
                &mut self.rng,
            )?;
            usage.add(&tr);
            if !self.options_frozen && self.nets.options > 0 {
                if let Some(s) = self.task_option_step(&tr)? {
                    ostats.push(s);
                }
                if self.method == Method::OptionCritic {
                    crate::baselines::termination_step(self, &tr)?;
                }
            }
            if let Some(s) = self.manager_step(&tr)? {
                mstats.push(s);
            }
            if self.record {
                kept.push(tr);
            }
        }
        let mut r = self.report(usage, &mstats, &ostats);
        r.trajectories = kept;
        Ok(r)
    }

    fn task_option_step(&mut self, tr: &Trajectory) -> Result<Option<LossStats>> {
        let theta = self.params.option_policy.as_mut().expect("options present");
        let tape = Tape::new();
        let p = theta.on_tape(&tape, true)?;
        let Some((loss, stats)) = task_option_loss(&self.nets, &p, theta, tr, &self.hp)? else {
            return Ok(None);
        };
        let g = tape.grad(loss, &p, false)?;
        self.opt_option.as_mut().expect("option optimizer").step(
            theta,
            &grads_as_tensors(&g.grads),
            self.hp.lr_option,
            self.hp.clip,
        )?;
        Ok(Some(stats))
    }

    pub(crate) fn termination_parts(
        &mut self,
    ) -> (&AgentNets, &mut AgentParams, &mut RmsProp, &HyperParams) {
        (
            &self.nets,
            &mut self.params,
            self.opt_termination
                .as_mut()
                .expect("termination optimizer"),
            &self.hp,
        )
    }

    fn iterate_meta(&mut self) -> Result<IterationReport> {
        let hp = self.hp.clone();
        let l_total = hp.inner_steps;
        let first_diff = l_total - hp.meta_horizon.unwrap_or(l_total).min(l_total);
        let mut usage = UsageCounts::new(self.nets.options, self.nets.actions);
        let (mut mstats, mut ostats) = (Vec::new(), Vec::new());
        let mut kept = Vec::new();

        let tape = Tape::new();
        let eta_r_set = self.params.option_reward.clone().expect("reward network");
        let eta_b_set = self
            .params
            .option_termination
            .clone()
            .expect("termination network");
        let eta_r = eta_r_set.on_tape(&tape, true)?;
        let eta_b = eta_b_set.on_tape(&tape, true)?;
        let mut theta_vals: ParamSet = self.params.option_policy.clone().expect("option policy");
        let names = theta_vals.names().to_vec();
        let mut theta: Option<Vec<Var<'_>>> = None;
        let theta0 = theta_vals.clone();
        let mut replay_steps = Vec::new();

        for l in 0..l_total {
            let tr = self.actor.rollout(
                &self.nets,
                &self.params,
                hp.rollout_len,
                TerminationRule::Learned,
                &mut self.rng,
            )?;
            usage.add(&tr);
            if l < first_diff {
                let t2 = Tape::new();
                let p = theta_vals.on_tape(&t2, true)?;
                let er = eta_r_set.on_tape(&t2, false)?;
                let eb = eta_b_set.on_tape(&t2, false)?;
                if let Some((loss, stats, _)) =
                    intrinsic_option_loss(&self.nets, &p, &theta_vals, &er, &eb, &tr, &hp, None)?
                {
                    let g = t2.grad(loss, &p, false)?;
                    self.opt_option.as_mut().expect("option optimizer").step(
                        &mut theta_vals,
                        &grads_as_tensors(&g.grads),
                        hp.lr_option,
                        hp.clip,
                    )?;
                    ostats.push(stats);
                }
            } else {
                let cur = match theta.take() {
                    Some(t) => t,
                    None => theta_vals.on_tape(&tape, true)?,
                };
                let (next, frozen) = match intrinsic_option_loss(
                    &self.nets,
                    &cur,
                    &theta_vals,
                    &eta_r,
                    &eta_b,
                    &tr,
                    &hp,
                    None,
                )? {
                    Some((loss, stats, detached)) => {
                        ostats.push(stats);
                        let g = tape.grad(loss, &cur, true)?;
                        let (next, _, frozen) = self
                            .opt_option
                            .as_mut()
                            .expect("option optimizer")
                            .differentiable_step(&names, &cur, &g.grads, hp.lr_option, hp.clip)?;
                        (next, Some((frozen, detached)))
                    }
                    None => (cur, None),
                };
                if self.record {
                    replay_steps.push(ReplayStep {
                        trajectory: tr.clone(),
                        frozen,
                    });
                }
                theta_vals = theta_vals.with_values(&next)?;
                theta = Some(next);
            }
            self.params.option_policy = Some(theta_vals.clone());
            if let Some(s) = self.manager_step(&tr)? {
                mstats.push(s);
            }
            if self.record {
                kept.push(tr);
            }
        }

        let validation = self.validation.as_mut().expect("validation actor");
        let vt = validation.rollout(
            &self.nets,
            &self.params,
            hp.rollout_len,
            TerminationRule::Learned,
            &mut self.rng,
        )?;
        let theta = match theta {
            Some(t) => t,
            None => theta_vals.on_tape(&tape, true)?,
        };
        let mut report_norm = 0.0;
        let mut updated = false;
        let mut replay = None;
        if let Some(j) = meta_objective(
            &self.nets,
            &theta,
            &self.params.manager,
            &vt,
            &hp,
            self.cost,
        )? {
            let wrt: Vec<Var<'_>> = eta_r.iter().chain(&eta_b).copied().collect();
            let g = tape.grad(j, &wrt, false)?;
            let grads = grads_as_tensors(&g.grads);
            if self.record && first_diff == 0 {
                replay = Some(MetaReplay {
                    theta0,
                    eta_r: eta_r_set.clone(),
                    eta_b: eta_b_set.clone(),
                    manager: self.params.manager.clone(),
                    steps: replay_steps,
                    validation: vt.clone(),
                    cost: self.cost,
                    gradient: grads.clone(),
                });
            }
            let mut r = eta_r_set;
            let mut b = eta_b_set;
            let info = self.opt_meta.as_mut().expect("meta optimizer").apply(
                &mut [&mut r, &mut b],
                &grads,
                hp.lr_meta,
                hp.meta_clip,
                1.0,
            )?;
            report_norm = info.grad_norm;
            updated = true;
            self.params.option_reward = Some(r);
            self.params.option_termination = Some(b);
        }
        let mut report = self.report(usage, &mstats, &ostats);
        report.meta_grad_norm = report_norm;
        report.meta_updated = updated;
        report.trajectories = kept;
        report.replay = replay;
        if self.record {
            report.validation = Some(vt);
        }
        Ok(report)
    }
}
