use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Manager,
    OptionPolicy,
    OptionReward,
    OptionTermination,
    Baseline,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Manager => "manager",
            Role::OptionPolicy => "option_policy",
            Role::OptionReward => "option_reward",
            Role::OptionTermination => "option_termination",
            Role::Baseline => "baseline",
        }
    }
}

/// Ordered, uniquely named parameter tensors of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    role: Role,
    names: Vec<String>,
    tensors: Vec<Arc<Tensor>>,
}

impl ParamSet {
    pub fn new(role: Role) -> Self {
        ParamSet {
            role,
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter name `{name}`"
            )));
        }
        self.names.push(name);
        self.tensors.push(Arc::new(t));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Arc<Tensor>] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &*self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter().map(|t| &**t))
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    /// Overwrites every entry from a flat vector in declaration order.
    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape {
                op: "unflatten",
                lhs: vec![self.num_params()],
                rhs: vec![flat.len()],
            });
        }
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.numel();
            let shape = t.shape().to_vec();
            *t = Arc::new(Tensor::new(shape, flat[off..off + n].to_vec())?);
            off += n;
        }
        Ok(())
    }

    /// Replaces entry `i`, which must keep its shape.
    pub fn set(&mut self, i: usize, t: Tensor) -> Result<()> {
        if t.shape() != self.tensors[i].shape() {
            return Err(Error::Shape {
                op: "set_param",
                lhs: self.tensors[i].shape().to_vec(),
                rhs: t.shape().to_vec(),
            });
        }
        self.tensors[i] = Arc::new(t);
        Ok(())
    }

    /// Registers every entry on `tape`: as gradient-receiving leaves when
    /// `tracked`, otherwise as constants.
    pub fn on_tape<'t>(&self, tape: &'t Tape, tracked: bool) -> Result<Vec<Var<'t>>> {
        self.tensors
            .iter()
            .map(|t| {
                if tracked {
                    tape.param(Arc::clone(t))
                } else {
                    tape.constant(Arc::clone(t))
                }
            })
            .collect()
    }

    /// Copy with the values of `vars`, which must mirror this set.
    pub fn with_values(&self, vars: &[Var<'_>]) -> Result<ParamSet> {
        if vars.len() != self.len() {
            return Err(Error::InvalidArgument("parameter count mismatch".into()));
        }
        let mut out = self.clone();
        for (i, v) in vars.iter().enumerate() {
            out.set(i, (*v.value()).clone())?;
        }
        Ok(out)
    }

    /// Same names and shapes as `other`.
    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.names == other.names
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape() == b.shape())
    }
}
