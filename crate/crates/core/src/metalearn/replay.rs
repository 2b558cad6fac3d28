use super::config::HyperParams;
use super::losses::{intrinsic_option_loss, meta_objective, Detached};
use crate::agent::{AgentNets, Trajectory};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nets::{FrozenStep, ParamSet};

/// One inner option update as it happened: its rollout and, when the rollout
/// had option steps, the optimizer constants and detached values it used.
#[derive(Clone, Debug)]
pub struct ReplayStep {
    pub trajectory: Trajectory,
    pub frozen: Option<(FrozenStep, Detached)>,
}

/// Everything needed to recompute one meta update as a function of the
/// reward and termination parameters alone.
#[derive(Clone, Debug)]
pub struct MetaReplay {
    pub theta0: ParamSet,
    pub eta_r: ParamSet,
    pub eta_b: ParamSet,
    pub manager: ParamSet,
    pub steps: Vec<ReplayStep>,
    pub validation: Trajectory,
    pub cost: f64,
    /// Raw meta-gradient the learner applied, reward entries then
    /// termination entries.
    pub gradient: Vec<Tensor>,
}

impl MetaReplay {
    /// Validation objective after replaying the inner updates from `theta0`
    /// under `eta_r` and `eta_b`, and optionally its gradient with respect
    /// to both.
    pub fn objective(
        &self,
        nets: &AgentNets,
        hp: &HyperParams,
        eta_r: &ParamSet,
        eta_b: &ParamSet,
        with_grad: bool,
    ) -> Result<(f64, Option<Vec<Tensor>>)> {
        let tape = Tape::new();
        let er = eta_r.on_tape(&tape, with_grad)?;
        let eb = eta_b.on_tape(&tape, with_grad)?;
        let mut theta = self.theta0.on_tape(&tape, true)?;
        let mut values = self.theta0.clone();
        for step in &self.steps {
            let Some((frozen, detached)) = &step.frozen else {
                continue;
            };
            let (loss, _, _) = intrinsic_option_loss(
                nets,
                &theta,
                &values,
                &er,
                &eb,
                &step.trajectory,
                hp,
                Some(detached),
            )?
            .ok_or_else(|| Error::InvalidArgument("recorded update has no option steps".into()))?;
            let g = tape.grad(loss, &theta, with_grad)?;
            theta = frozen.apply(&theta, &g.grads)?;
            values = values.with_values(&theta)?;
        }
        let j = meta_objective(nets, &theta, &self.manager, &self.validation, hp, self.cost)?
            .ok_or_else(|| {
                Error::InvalidArgument("validation rollout has no option steps".into())
            })?;
        let grads = if with_grad {
            let wrt: Vec<Var<'_>> = er.iter().chain(&eb).copied().collect();
            let g = tape.grad(j, &wrt, false)?;
            Some(g.grads.iter().map(|v| (*v.value()).clone()).collect())
        } else {
            None
        };
        Ok((j.item(), grads))
    }
}
