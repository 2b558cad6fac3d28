use serde::{Deserialize, Serialize};

use crate::agent::Trajectory;
use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};

/// How termination probabilities discount an option's rewards.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscountMode {
    /// Reward `j` is weighted by `(1 - beta_j)^j`, the bootstrap by
    /// `(1 - beta_n)^(n+1)`.
    #[default]
    Power,
    /// Reward `j` is weighted by the running product of `(1 - beta_l)` for
    /// `l <= j`; the bootstrap reuses the last weight.
    Product,
}

fn check_window(n: usize, other: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("empty return window".into()));
    }
    if other != n {
        return Err(Error::InvalidArgument(format!(
            "window of {n} rewards with {other} terminations"
        )));
    }
    Ok(())
}

/// Option return over one window: `rewards[j-1]` is the learned reward of
/// the `j`-th step and `betas[j-1]` the termination probability at the
/// state it reaches.
pub fn option_return(
    rewards: &[f64],
    betas: &[f64],
    bootstrap: f64,
    mode: DiscountMode,
) -> Result<f64> {
    check_window(rewards.len(), betas.len())?;
    let n = rewards.len();
    let mut g = 0.0;
    let mut running = 1.0;
    for (j, (&r, &b)) in rewards.iter().zip(betas).enumerate() {
        running *= 1.0 - b;
        let w = match mode {
            DiscountMode::Power => (1.0 - b).powi(j as i32 + 1),
            DiscountMode::Product => running,
        };
        g += w * r;
    }
    let tail = match mode {
        DiscountMode::Power => (1.0 - betas[n - 1]).powi(n as i32 + 1),
        DiscountMode::Product => running,
    };
    Ok(g + tail * bootstrap)
}

/// Manager return over one window of `n` task rewards. The switching cost
/// is charged at the end of the window when control returned to the
/// manager there.
pub fn manager_return(
    rewards: &[f64],
    gamma: f64,
    cost: f64,
    bootstrap: f64,
    switch_occurred: bool,
) -> Result<f64> {
    let n = rewards.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty return window".into()));
    }
    let mut g = 0.0;
    for (j, &r) in rewards.iter().enumerate() {
        g += gamma.powi(j as i32 + 1) * r;
    }
    if switch_occurred {
        g -= gamma.powi(n as i32) * cost;
    }
    Ok(g + gamma.powi(n as i32 + 1) * bootstrap)
}

/// Consecutive steps of one env starting at `start`, and the state row to
/// bootstrap from (`None` when the episode ended inside the window).
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub start: usize,
    pub steps: Vec<usize>,
    pub bootstrap_row: Option<usize>,
}

/// Windows of at most `n` steps from each start. A window ends at an
/// episode end, at the end of the segment, and, with `stop_at_switch`, after
/// the step where control returns to the manager.
pub fn windows(tr: &Trajectory, starts: &[usize], n: usize, stop_at_switch: bool) -> Vec<Window> {
    starts
        .iter()
        .map(|&start| {
            let mut steps = Vec::with_capacity(n);
            let mut u = start;
            let bootstrap_row = loop {
                steps.push(u);
                if tr.done[u] {
                    break None;
                }
                if steps.len() == n || (stop_at_switch && tr.switch[u]) {
                    break Some(tr.next_row[u]);
                }
                match tr.successor(u) {
                    Some(next) => u = next,
                    None => break Some(tr.next_row[u]),
                }
            };
            Window {
                start,
                steps,
                bootstrap_row,
            }
        })
        .collect()
}

/// Task-reward targets: `sum_j gamma^j r_j - sum_{switch at j} gamma^j c +
/// gamma^(n+1) v`, with the cost charged at every switch inside the window.
pub fn discounted_targets(
    tr: &Trajectory,
    windows: &[Window],
    gamma: f64,
    cost: f64,
    bootstrap: impl Fn(&Window, usize) -> f64,
) -> Vec<f64> {
    windows
        .iter()
        .map(|w| {
            let mut g = 0.0;
            let mut disc = 1.0;
            for &u in &w.steps {
                disc *= gamma;
                g += disc * tr.reward[u];
                if tr.switch[u] {
                    g -= disc * cost;
                }
            }
            if let Some(row) = w.bootstrap_row {
                g += disc * gamma * bootstrap(w, row);
            }
            g
        })
        .collect()
}

/// Index plan for computing option returns of many windows at once on the
/// tape. Positions refer to the option-step list the windows were built on.
#[derive(Clone, Debug, Default)]
pub struct ReturnPlan {
    count: usize,
    entry_src: Vec<usize>,
    entry_dst: Vec<usize>,
    entry_exp: Vec<i32>,
    last: Vec<usize>,
    boot_exp: Vec<i32>,
    /// Running-product mode: entry `e` multiplies `omb[prod_src]` for every
    /// pair `(prod_entry, prod_src)`.
    prod_entry: Vec<usize>,
    prod_src: Vec<usize>,
    /// Entry index of the last step of each window.
    last_entry: Vec<usize>,
}

impl ReturnPlan {
    /// `position[s]` maps a step to its index in the option-step list.
    pub fn new(windows: &[Window], position: &dyn Fn(usize) -> usize) -> Self {
        let mut p = ReturnPlan {
            count: windows.len(),
            ..Default::default()
        };
        for (m, w) in windows.iter().enumerate() {
            let first_entry = p.entry_src.len();
            for (j, &u) in w.steps.iter().enumerate() {
                let e = p.entry_src.len();
                p.entry_src.push(position(u));
                p.entry_dst.push(m);
                p.entry_exp.push(j as i32 + 1);
                for &v in &w.steps[..=j] {
                    p.prod_entry.push(e);
                    p.prod_src.push(position(v));
                }
            }
            let last = *w.steps.last().expect("windows are non-empty");
            p.last.push(position(last));
            p.boot_exp.push(w.steps.len() as i32 + 1);
            p.last_entry.push(first_entry + w.steps.len() - 1);
        }
        p
    }

    /// Option returns `[M]` from learned rewards `[M]`, continuation
    /// probabilities `1 - beta` `[M]` and bootstrap values (zero where the
    /// episode ended).
    pub fn returns<'t>(
        &self,
        rewards: Var<'t>,
        keep: Var<'t>,
        bootstrap: &[f64],
        mode: DiscountMode,
    ) -> Result<Var<'t>> {
        let tape = rewards.tape();
        let e = self.entry_src.len();
        let m = self.count;
        let weights = match mode {
            DiscountMode::Power => keep
                .gather(self.entry_src.clone(), &[e])?
                .powi_each(self.entry_exp.clone())?,
            DiscountMode::Product => keep
                .log()?
                .gather(self.prod_src.clone(), &[self.prod_src.len()])?
                .scatter_add(self.prod_entry.clone(), &[e])?
                .exp()?,
        };
        let r = rewards.gather(self.entry_src.clone(), &[e])?;
        let body = r.mul(weights)?.scatter_add(self.entry_dst.clone(), &[m])?;
        let tail_w = match mode {
            DiscountMode::Power => keep
                .gather(self.last.clone(), &[m])?
                .powi_each(self.boot_exp.clone())?,
            DiscountMode::Product => weights.gather(self.last_entry.clone(), &[m])?,
        };
        let boot = tape.constant(Tensor::new(vec![m], bootstrap.to_vec())?)?;
        body.add(tail_w.mul(boot)?)
    }
}
