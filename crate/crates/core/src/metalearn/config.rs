use serde::{Deserialize, Serialize};

use super::returns::DiscountMode;
use crate::error::{Error, Result};
use crate::nets::RmsPropConfig;

/// Learning hyperparameters shared by every method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperParams {
    /// Number of options; 0 leaves only primitive actions.
    pub options: usize,
    /// Cost charged to the manager each time control returns to it.
    pub switching_cost: f64,
    pub gamma: f64,
    /// Longest return window.
    pub n_step: usize,
    /// Steps per env per rollout.
    pub rollout_len: usize,
    /// Envs per rollout.
    pub batch: usize,
    /// Option updates per meta update.
    pub inner_steps: usize,
    /// Trailing inner updates differentiated through; `None` means all.
    pub meta_horizon: Option<usize>,
    pub lr_manager: f64,
    pub lr_option: f64,
    pub lr_meta: f64,
    pub entropy_manager: f64,
    pub entropy_option: f64,
    pub value_coef: f64,
    pub clip: f64,
    pub meta_clip: f64,
    pub rmsprop: RmsPropConfig,
    pub discount_mode: DiscountMode,
    pub episode_cap: usize,
    /// Option duration of the fixed-duration baseline.
    pub fixed_duration: usize,
    /// Margin added to the termination advantage of the option-critic
    /// baseline.
    pub deliberation_cost: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            options: 4,
            switching_cost: 0.05,
            gamma: 0.99,
            n_step: 20,
            rollout_len: 20,
            batch: 32,
            inner_steps: 5,
            meta_horizon: None,
            lr_manager: 0.003,
            lr_option: 0.003,
            lr_meta: 0.0003,
            entropy_manager: 0.01,
            entropy_option: 0.01,
            value_coef: 0.5,
            clip: 40.0,
            meta_clip: 1.0,
            rmsprop: RmsPropConfig::default(),
            discount_mode: DiscountMode::Power,
            episode_cap: 100,
            fixed_duration: 5,
            deliberation_cost: 0.01,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if self.n_step == 0 || self.rollout_len == 0 || self.batch == 0 || self.inner_steps == 0 {
            return bad("n_step, rollout_len, batch and inner_steps must be positive");
        }
        if self.meta_horizon == Some(0) {
            return bad("meta_horizon must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        for (name, v) in [
            ("lr_manager", self.lr_manager),
            ("lr_option", self.lr_option),
            ("lr_meta", self.lr_meta),
            ("entropy_manager", self.entropy_manager),
            ("entropy_option", self.entropy_option),
            ("value_coef", self.value_coef),
            ("clip", self.clip),
            ("meta_clip", self.meta_clip),
            ("switching_cost", self.switching_cost),
            ("deliberation_cost", self.deliberation_cost),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be a finite non-negative number"
                )));
            }
        }
        if self.episode_cap == 0 || self.fixed_duration == 0 {
            return bad("episode_cap and fixed_duration must be positive");
        }
        let r = self.rmsprop;
        if !(0.0..1.0).contains(&r.decay) || r.epsilon <= 0.0 || !(0.0..1.0).contains(&r.momentum) {
            return bad("rmsprop needs decay and momentum in [0, 1) and a positive epsilon");
        }
        Ok(())
    }

    /// Frames consumed by one outer iteration of meta-gradient training.
    pub fn frames_per_rollout(&self) -> u64 {
        (self.batch * self.rollout_len) as u64
    }
}
