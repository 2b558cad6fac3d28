//! Comparison methods: a flat actor-critic, fixed-duration options and
//! option-critic terminations. All share the manager and option machinery
//! of [`crate::metalearn::Learner`].

use crate::agent::{gather_rows, AgentNets, Trajectory};
use crate::autodiff::{Tape, Tensor};
use crate::envs::TaskSource;
use crate::error::Result;
use crate::metalearn::{manager_values_at, HyperParams, Learner, Method, OptionSteps};
use crate::nets::NetworkSpec;

/// Actor-critic over primitive actions.
pub fn flat(hp: HyperParams, spec: &NetworkSpec, train: &TaskSource, seed: u64) -> Result<Learner> {
    Learner::new(Method::Flat, hp, spec, train, train, seed)
}

/// Options that always run for `hp.fixed_duration` steps, trained on task
/// reward.
pub fn mlsh(hp: HyperParams, spec: &NetworkSpec, train: &TaskSource, seed: u64) -> Result<Learner> {
    Learner::new(Method::Mlsh, hp, spec, train, train, seed)
}

/// Options with learned terminations, both trained on task reward.
pub fn option_critic(
    hp: HyperParams,
    spec: &NetworkSpec,
    train: &TaskSource,
    seed: u64,
) -> Result<Learner> {
    Learner::new(Method::OptionCritic, hp, spec, train, train, seed)
}

/// Termination update: lowers the termination probability where continuing
/// the option is worth more than handing control back,
/// `sum(beta(s') * sg(Q_o(s') - V(s') + margin))` over option steps whose
/// episode goes on.
pub(crate) fn termination_step(learner: &mut Learner, tr: &Trajectory) -> Result<Option<f64>> {
    let os = OptionSteps::new(tr);
    let keep: Vec<usize> = (0..os.len()).filter(|&m| !tr.done[os.steps[m]]).collect();
    if keep.is_empty() {
        return Ok(None);
    }
    let (nets, params, opt, hp) = learner.termination_parts();
    let k = tr.options;
    let rows: Vec<usize> = keep.iter().map(|&m| tr.next_row[os.steps[m]]).collect();
    let opts: Vec<usize> = keep.iter().map(|&m| os.option[m]).collect();
    let ol = tr.option_obs.shape()[1];
    let x = gather_rows(tr.option_obs.data(), ol, &rows);

    let policy_net = nets.option_policy.as_ref().expect("options present");
    let theta = params.option_policy.as_ref().expect("options present");
    let (_, q) = AgentNets::option_eval(policy_net, theta, x.clone())?;
    let q = q.expect("option policy has values");
    let v = manager_values_at(nets, &params.manager, tr, &rows)?;
    let margin: Vec<f64> = opts
        .iter()
        .enumerate()
        .map(|(j, &o)| q.data()[j * k + o] - v[j] + hp.deliberation_cost)
        .collect();

    let term_net = nets
        .option_termination
        .as_ref()
        .expect("termination network");
    let eta = params
        .option_termination
        .as_mut()
        .expect("termination parameters");
    let tape = Tape::new();
    let p = eta.on_tape(&tape, true)?;
    let n = rows.len();
    let idx: Vec<usize> = opts.iter().enumerate().map(|(j, &o)| j * k + o).collect();
    let beta = term_net
        .forward(&p, tape.constant(x)?, None)?
        .main
        .reshape(&[n * k])?
        .gather(idx, &[n])?;
    let loss = beta
        .mul(tape.constant(Tensor::new(vec![n], margin)?)?)?
        .sum()?;
    let g = tape.grad(loss, &p, false)?;
    let grads: Vec<Tensor> = g.grads.iter().map(|v| (*v.value()).clone()).collect();
    opt.step(eta, &grads, hp.lr_option, hp.clip)?;
    Ok(Some(loss.item()))
}
