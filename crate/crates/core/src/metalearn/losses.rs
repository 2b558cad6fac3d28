use std::collections::BTreeMap;

use super::config::HyperParams;
use super::returns::{discounted_targets, windows, ReturnPlan, Window};
use crate::agent::{gather_rows, AgentNets, Trajectory};
use crate::autodiff::{Tensor, Var};
use crate::error::Result;
use crate::nets::{Network, ParamSet};

/// Scalar summaries of one actor-critic loss.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossStats {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub count: usize,
}

/// `-sum(A * log pi) + value_coef * sum((G - v)^2 / 2) - entropy_coef *
/// sum(H)` with `A = G - baseline`. `logits` is `[N, C]`, one pick per
/// row; `baseline` defaults to `sg(v)`.
pub fn actor_critic<'t>(
    logits: Var<'t>,
    picks: &[usize],
    values: Var<'t>,
    targets: Var<'t>,
    baseline: Option<Var<'t>>,
    value_coef: f64,
    entropy_coef: f64,
) -> Result<(Var<'t>, LossStats)> {
    let logp_all = logits.log_softmax()?;
    let logp = logp_all.pick_columns(picks)?;
    let entropy = logp_all.exp()?.mul(logp_all)?.sum_last()?.neg()?.sum()?;
    let baseline = match baseline {
        Some(b) => b,
        None => values.stop_gradient()?,
    };
    let adv = targets.sub(baseline)?;
    let policy = adv.mul(logp)?.sum()?.neg()?;
    let err = targets.sub(values)?;
    let value = err.mul(err)?.sum()?.scale(0.5)?;
    let total = policy
        .add(value.scale(value_coef)?)?
        .sub(entropy.scale(entropy_coef)?)?;
    Ok((
        total,
        LossStats {
            policy: policy.item(),
            value: value.item(),
            entropy: entropy.item(),
            count: picks.len(),
        },
    ))
}

/// Option-side view of a trajectory: option steps, their option and
/// action, and the distinct next-state rows they reach.
#[derive(Clone, Debug)]
pub struct OptionSteps {
    pub steps: Vec<usize>,
    pub option: Vec<usize>,
    pub action: Vec<usize>,
    position: BTreeMap<usize, usize>,
}

impl OptionSteps {
    pub fn new(tr: &Trajectory) -> Self {
        let steps = tr.option_steps();
        let option = steps.iter().map(|&s| tr.choice[s]).collect();
        let action = steps.iter().map(|&s| tr.action[s]).collect();
        let position = steps.iter().enumerate().map(|(m, &s)| (s, m)).collect();
        OptionSteps {
            steps,
            option,
            action,
            position,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn position(&self, s: usize) -> usize {
        self.position[&s]
    }

    /// Option-policy logits of each step's own option, `[M, A]`, plus the
    /// matching value `[M]`.
    pub fn policy<'t>(
        &self,
        net: &Network,
        theta: &[Var<'t>],
        tr: &Trajectory,
        actions: usize,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let tape = theta[0].tape();
        let k = tr.options;
        let m = self.len();
        let x = tape.constant(gather_rows(
            tr.option_obs.data(),
            tr.option_obs.shape()[1],
            &self.steps,
        ))?;
        let out = net.forward(theta, x, None)?;
        let rows: Vec<usize> = (0..m).map(|j| j * k + self.option[j]).collect();
        let logits = out.main.reshape(&[m * k, actions])?.select_rows(&rows)?;
        let values = out
            .value
            .expect("option policy has values")
            .reshape(&[m * k])?
            .gather(rows, &[m])?;
        Ok((logits, values))
    }
}

/// Per-row values of option `option[j]` at `rows[j]`, as constants.
fn option_values_at(
    net: &Network,
    theta: &ParamSet,
    tr: &Trajectory,
    rows: &[usize],
    option: &[usize],
) -> Result<Vec<f64>> {
    if rows.is_empty() {
        return Ok(Vec::new());
    }
    let x = gather_rows(tr.option_obs.data(), tr.option_obs.shape()[1], rows);
    let (_, v) = AgentNets::option_eval(net, theta, x)?;
    let v = v.expect("option policy has values");
    let k = tr.options;
    Ok(rows
        .iter()
        .enumerate()
        .map(|(j, _)| v.data()[j * k + option[j]])
        .collect())
}

/// Manager values at `rows`, as constants.
pub fn manager_values_at(
    nets: &AgentNets,
    manager: &ParamSet,
    tr: &Trajectory,
    rows: &[usize],
) -> Result<Vec<f64>> {
    if rows.is_empty() {
        return Ok(Vec::new());
    }
    let ids: Vec<usize> = rows.iter().map(|&r| tr.task_ids[r]).collect();
    let x = gather_rows(tr.manager_obs.data(), tr.manager_obs.shape()[1], rows);
    let (_, v) = nets.manager_eval(manager, x, nets.task_encoding(&ids)?)?;
    Ok(v.into_data())
}

/// Task-reward targets for the manager from each step in `starts`,
/// including switching costs.
pub fn manager_targets(
    nets: &AgentNets,
    manager: &ParamSet,
    tr: &Trajectory,
    starts: &[usize],
    hp: &HyperParams,
    cost: f64,
) -> Result<Vec<f64>> {
    let ws = windows(tr, starts, hp.n_step, false);
    let rows: Vec<usize> = ws.iter().filter_map(|w| w.bootstrap_row).collect();
    let vals = manager_values_at(nets, manager, tr, &rows)?;
    let lookup: BTreeMap<usize, f64> = rows.into_iter().zip(vals).collect();
    Ok(discounted_targets(tr, &ws, hp.gamma, cost, |_, row| {
        lookup[&row]
    }))
}

/// Actor-critic loss of the manager over its decision steps.
pub fn manager_loss<'t>(
    nets: &AgentNets,
    params: &[Var<'t>],
    manager: &ParamSet,
    tr: &Trajectory,
    hp: &HyperParams,
    cost: f64,
) -> Result<Option<(Var<'t>, LossStats)>> {
    let decisions = tr.decision_steps();
    if decisions.is_empty() {
        return Ok(None);
    }
    let targets = manager_targets(nets, manager, tr, &decisions, hp, cost)?;
    let tape = params[0].tape();
    let x = tape.constant(gather_rows(
        tr.manager_obs.data(),
        tr.manager_obs.shape()[1],
        &decisions,
    ))?;
    let ids: Vec<usize> = decisions.iter().map(|&s| tr.task_ids[s]).collect();
    let (logits, values) = nets.manager_forward(params, x, &ids)?;
    let n = decisions.len();
    let picks: Vec<usize> = decisions.iter().map(|&s| tr.choice[s]).collect();
    let g = tape.constant(Tensor::new(vec![n], targets)?)?;
    actor_critic(
        logits,
        &picks,
        values.reshape(&[n])?,
        g,
        None,
        hp.value_coef,
        hp.entropy_manager,
    )
    .map(Some)
}

/// Windows for option returns: they stop where the invocation ends.
pub fn option_windows(tr: &Trajectory, os: &OptionSteps, n: usize) -> Vec<Window> {
    windows(tr, &os.steps, n, true)
}

/// Quantities the option loss holds fixed: bootstrap values of each return
/// window and the value baseline of each step.
#[derive(Clone, Debug, PartialEq)]
pub struct Detached {
    pub bootstrap: Vec<f64>,
    pub baseline: Vec<f64>,
}

/// Option loss with learned rewards and terminations: returns are built
/// from the reward network on each step and the termination network at
/// each next state. `eta_r` and `eta_b` may be tracked, in which case the
/// loss keeps its dependence on them. With `detached` given, its values
/// replace the ones computed from `theta_values`.
#[allow(clippy::too_many_arguments)]
pub fn intrinsic_option_loss<'t>(
    nets: &AgentNets,
    theta: &[Var<'t>],
    theta_values: &ParamSet,
    eta_r: &[Var<'t>],
    eta_b: &[Var<'t>],
    tr: &Trajectory,
    hp: &HyperParams,
    detached: Option<&Detached>,
) -> Result<Option<(Var<'t>, LossStats, Detached)>> {
    let os = OptionSteps::new(tr);
    if os.is_empty() {
        return Ok(None);
    }
    let policy_net = nets.option_policy.as_ref().expect("options need a policy");
    let reward_net = nets
        .option_reward
        .as_ref()
        .expect("learned rewards need a network");
    let term_net = nets
        .option_termination
        .as_ref()
        .expect("learned terminations need a network");
    let tape = theta[0].tape();
    let (k, a) = (tr.options, tr.actions);
    let m = os.len();
    let ol = tr.option_obs.shape()[1];

    let (logits, values) = os.policy(policy_net, theta, tr, a)?;

    let x = tape.constant(gather_rows(tr.option_obs.data(), ol, &os.steps))?;
    let reward_idx: Vec<usize> = (0..m)
        .map(|j| j * k * a + os.option[j] * a + os.action[j])
        .collect();
    let rewards = reward_net
        .forward(eta_r, x, None)?
        .main
        .reshape(&[m * k * a])?
        .gather(reward_idx, &[m])?;

    let mut next_rows: Vec<usize> = os.steps.iter().map(|&s| tr.next_row[s]).collect();
    next_rows.sort_unstable();
    next_rows.dedup();
    let row_pos: BTreeMap<usize, usize> =
        next_rows.iter().enumerate().map(|(i, &r)| (r, i)).collect();
    let xq = tape.constant(gather_rows(tr.option_obs.data(), ol, &next_rows))?;
    let beta_idx: Vec<usize> = os
        .steps
        .iter()
        .zip(&os.option)
        .map(|(&s, &o)| row_pos[&tr.next_row[s]] * k + o)
        .collect();
    let betas = term_net
        .forward(eta_b, xq, None)?
        .main
        .reshape(&[next_rows.len() * k])?
        .gather(beta_idx, &[m])?;
    let keep = betas.affine(-1.0, 1.0)?;

    let ws = option_windows(tr, &os, hp.n_step);
    let fixed = match detached {
        Some(d) => d.clone(),
        None => {
            let boot_rows: Vec<usize> = ws.iter().map(|w| w.bootstrap_row.unwrap_or(0)).collect();
            let boot_opts: Vec<usize> = ws.iter().map(|w| tr.choice[w.start]).collect();
            let mut bootstrap =
                option_values_at(policy_net, theta_values, tr, &boot_rows, &boot_opts)?;
            for (b, w) in bootstrap.iter_mut().zip(&ws) {
                if w.bootstrap_row.is_none() {
                    *b = 0.0;
                }
            }
            Detached {
                bootstrap,
                baseline: values.value().data().to_vec(),
            }
        }
    };
    let plan = ReturnPlan::new(&ws, &|s| os.position(s));
    let targets = plan.returns(rewards, keep, &fixed.bootstrap, hp.discount_mode)?;
    let baseline = tape.constant(Tensor::new(vec![m], fixed.baseline.clone())?)?;
    let (loss, stats) = actor_critic(
        logits,
        &os.action,
        values,
        targets,
        Some(baseline),
        hp.value_coef,
        hp.entropy_option,
    )?;
    Ok(Some((loss, stats, fixed)))
}

/// Option loss on task rewards, each option's window ending with its
/// invocation.
pub fn task_option_loss<'t>(
    nets: &AgentNets,
    theta: &[Var<'t>],
    theta_values: &ParamSet,
    tr: &Trajectory,
    hp: &HyperParams,
) -> Result<Option<(Var<'t>, LossStats)>> {
    let os = OptionSteps::new(tr);
    if os.is_empty() {
        return Ok(None);
    }
    let policy_net = nets.option_policy.as_ref().expect("options need a policy");
    let tape = theta[0].tape();
    let (logits, values) = os.policy(policy_net, theta, tr, tr.actions)?;
    let ws = option_windows(tr, &os, hp.n_step);
    let rows: Vec<usize> = ws.iter().map(|w| w.bootstrap_row.unwrap_or(0)).collect();
    let opts: Vec<usize> = ws.iter().map(|w| tr.choice[w.start]).collect();
    let boot = option_values_at(policy_net, theta_values, tr, &rows, &opts)?;
    let boot: BTreeMap<usize, f64> = ws.iter().map(|w| w.start).zip(boot).collect();
    let targets = discounted_targets(tr, &ws, hp.gamma, 0.0, |w, _| boot[&w.start]);
    let g = tape.constant(Tensor::new(vec![os.len()], targets)?)?;
    actor_critic(
        logits,
        &os.action,
        values,
        g,
        None,
        hp.value_coef,
        hp.entropy_option,
    )
    .map(Some)
}

/// Validation objective for the meta update: the sum over option steps of
/// `sg(G_manager - v_manager) * log pi_option(a | s)` under `theta`.
pub fn meta_objective<'t>(
    nets: &AgentNets,
    theta: &[Var<'t>],
    manager: &ParamSet,
    tr: &Trajectory,
    hp: &HyperParams,
    cost: f64,
) -> Result<Option<Var<'t>>> {
    let os = OptionSteps::new(tr);
    if os.is_empty() {
        return Ok(None);
    }
    let tape = theta[0].tape();
    let targets = manager_targets(nets, manager, tr, &os.steps, hp, cost)?;
    let values = manager_values_at(nets, manager, tr, &os.steps)?;
    let adv: Vec<f64> = targets.iter().zip(&values).map(|(g, v)| g - v).collect();
    let policy_net = nets.option_policy.as_ref().expect("options need a policy");
    let (logits, _) = os.policy(policy_net, theta, tr, tr.actions)?;
    let logp = logits.log_softmax()?.pick_columns(&os.action)?;
    let adv = tape.constant(Tensor::new(vec![os.len()], adv)?)?;
    Ok(Some(adv.mul(logp)?.sum()?))
}
