use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RmsPropConfig {
    pub decay: f64,
    pub epsilon: f64,
    pub momentum: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        RmsPropConfig {
            decay: 0.99,
            epsilon: 0.01,
            momentum: 0.0,
        }
    }
}

/// RMSProp with global-norm clipping, over one or more parameter sets that
/// share the clip.
///
/// `acc <- decay*acc + (1-decay)*g^2`, `step = lr*g/sqrt(acc+eps)`.
#[derive(Clone, Debug)]
pub struct RmsProp {
    pub cfg: RmsPropConfig,
    acc: Vec<Tensor>,
    mom: Vec<Tensor>,
}

/// Outcome of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    /// Global norm of the raw gradient, before clipping.
    pub grad_norm: f64,
    pub clip_scale: f64,
}

/// The constants of one differentiable step, enough to replay it:
/// `p' = p - coef*g - carried`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenStep {
    pub coef: Vec<Tensor>,
    pub carried: Vec<Option<Tensor>>,
}

impl FrozenStep {
    /// Applies the recorded step to new gradients.
    pub fn apply<'t>(&self, params: &[Var<'t>], grads: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
        if params.len() != self.coef.len() || grads.len() != self.coef.len() {
            return Err(Error::InvalidArgument(
                "frozen step does not match parameter count".into(),
            ));
        }
        params
            .iter()
            .zip(grads)
            .zip(self.coef.iter().zip(&self.carried))
            .map(|((p, g), (c, m))| {
                let tape = p.tape();
                let mut next = p.sub(g.mul(tape.constant(c.clone())?)?)?;
                if let Some(m) = m {
                    next = next.sub(tape.constant(m.clone())?)?;
                }
                Ok(next)
            })
            .collect()
    }
}

fn global_norm<'a>(grads: impl Iterator<Item = &'a Tensor>) -> f64 {
    grads.map(|g| g.norm_sq()).sum::<f64>().sqrt()
}

fn clip_scale(norm: f64, clip: f64) -> f64 {
    if clip > 0.0 && norm > clip {
        clip / norm
    } else {
        1.0
    }
}

impl RmsProp {
    pub fn new(params: &ParamSet, cfg: RmsPropConfig) -> Self {
        Self::over(&[params], cfg)
    }

    /// One optimizer spanning several sets, entries in order.
    pub fn over(sets: &[&ParamSet], cfg: RmsPropConfig) -> Self {
        let zeros: Vec<Tensor> = sets
            .iter()
            .flat_map(|s| s.tensors().iter().map(|t| Tensor::zeros(t.shape())))
            .collect();
        RmsProp {
            cfg,
            mom: zeros.clone(),
            acc: zeros,
        }
    }

    pub fn accumulators(&self) -> &[Tensor] {
        &self.acc
    }

    fn check<'a>(&self, names: impl Iterator<Item = &'a String>, grads: &[&Tensor]) -> Result<()> {
        if grads.len() != self.acc.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} gradients, got {}",
                self.acc.len(),
                grads.len()
            )));
        }
        for ((g, a), name) in grads.iter().zip(&self.acc).zip(names) {
            if g.shape() != a.shape() {
                return Err(Error::Shape {
                    op: "rmsprop",
                    lhs: a.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
        Ok(())
    }

    /// Gradient descent step on `params`.
    pub fn step(
        &mut self,
        params: &mut ParamSet,
        grads: &[Tensor],
        lr: f64,
        clip: f64,
    ) -> Result<StepInfo> {
        self.apply(&mut [params], grads, lr, clip, -1.0)
    }

    /// Gradient ascent step on `params`.
    pub fn ascend(
        &mut self,
        params: &mut ParamSet,
        grads: &[Tensor],
        lr: f64,
        clip: f64,
    ) -> Result<StepInfo> {
        self.apply(&mut [params], grads, lr, clip, 1.0)
    }

    /// Step over several sets; `sign` is -1 for descent and +1 for ascent.
    /// `grads` lists every entry of every set in order.
    pub fn apply(
        &mut self,
        sets: &mut [&mut ParamSet],
        grads: &[Tensor],
        lr: f64,
        clip: f64,
        sign: f64,
    ) -> Result<StepInfo> {
        let refs: Vec<&Tensor> = grads.iter().collect();
        self.check(sets.iter().flat_map(|s| s.names().iter()), &refs)?;
        let norm = global_norm(refs.iter().copied());
        let scale = clip_scale(norm, clip);
        let RmsPropConfig {
            decay,
            epsilon,
            momentum,
        } = self.cfg;
        let mut k = 0;
        for set in sets.iter_mut() {
            for i in 0..set.len() {
                let g = refs[k];
                let (acc, mom) = (&mut self.acc[k], &mut self.mom[k]);
                let mut updated = (*set.tensors()[i]).clone();
                for (((p, &gv), a), m) in updated
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(acc.data_mut())
                    .zip(mom.data_mut())
                {
                    let gv = gv * scale;
                    *a = decay * *a + (1.0 - decay) * gv * gv;
                    *m = momentum * *m + lr * gv / (*a + epsilon).sqrt();
                    *p += sign * *m;
                }
                if !updated.is_finite() {
                    return Err(Error::NonFiniteGradient(set.names()[i].clone()));
                }
                set.set(i, updated)?;
                k += 1;
            }
        }
        Ok(StepInfo {
            grad_norm: norm,
            clip_scale: scale,
        })
    }

    /// Descent step that stays on the tape: `p' = p - c*g` where the
    /// per-element coefficient `c` (clip scale, learning rate, second-moment
    /// statistics) is a constant and only the raw gradient path is
    /// differentiable. Returns the recorded constants too.
    pub fn differentiable_step<'t>(
        &mut self,
        names: &[String],
        params: &[Var<'t>],
        grads: &[Var<'t>],
        lr: f64,
        clip: f64,
    ) -> Result<(Vec<Var<'t>>, StepInfo, FrozenStep)> {
        if params.len() != grads.len() {
            return Err(Error::InvalidArgument(
                "parameter/gradient count mismatch".into(),
            ));
        }
        let values: Vec<_> = grads.iter().map(|g| g.value()).collect();
        let refs: Vec<&Tensor> = values.iter().map(|v| &**v).collect();
        self.check(names.iter(), &refs)?;
        let norm = global_norm(refs.iter().copied());
        let scale = clip_scale(norm, clip);
        let RmsPropConfig {
            decay,
            epsilon,
            momentum,
        } = self.cfg;
        let mut frozen = FrozenStep {
            coef: Vec::with_capacity(params.len()),
            carried: Vec::with_capacity(params.len()),
        };
        for (i, gv) in values.iter().enumerate() {
            let (acc, mom) = (&mut self.acc[i], &mut self.mom[i]);
            let mut coef = Vec::with_capacity(gv.numel());
            let mut carried = Vec::with_capacity(gv.numel());
            for ((&raw, a), m) in gv.data().iter().zip(acc.data_mut()).zip(mom.data_mut()) {
                let x = raw * scale;
                *a = decay * *a + (1.0 - decay) * x * x;
                let c = lr * scale / (*a + epsilon).sqrt();
                carried.push(momentum * *m);
                *m = momentum * *m + c * raw;
                coef.push(c);
            }
            frozen
                .coef
                .push(Tensor::from_parts(gv.shape().to_vec(), coef));
            frozen
                .carried
                .push((momentum != 0.0).then(|| Tensor::from_parts(gv.shape().to_vec(), carried)));
        }
        let next = frozen.apply(params, grads)?;
        Ok((
            next,
            StepInfo {
                grad_norm: norm,
                clip_scale: scale,
            },
            frozen,
        ))
    }
}
