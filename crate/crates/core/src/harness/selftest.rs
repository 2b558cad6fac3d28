use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor};
use crate::envs::{TaskSource, TaskSuite};
use crate::error::{Error, Result};
use crate::metalearn::{manager_return, option_return, DiscountMode, HyperParams, Learner, Method};
use crate::nets::{Head, Network, NetworkSpec, ParamSet, TorsoSpec};

/// Outcome of one self-check.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Check {
        Check {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

const TINY: &str = "\
######
#T..E#
#..T.#
######
";

/// Two-room strip used by the gradient checks.
pub fn tiny_tasks() -> TaskSource {
    let suite = TaskSuite::parse(TINY).expect("built-in grid parses");
    TaskSource::Goals {
        layout: Arc::new(suite.layout),
        tasks: suite.train,
    }
}

pub fn tiny_spec(hidden: usize) -> NetworkSpec {
    NetworkSpec {
        torso: TorsoSpec::Mlp {
            hidden: vec![hidden],
        },
        height: 4,
        width: 6,
        task_count: 0,
        task_embed: 4,
    }
}

pub fn tiny_hp(options: usize, inner: usize) -> HyperParams {
    HyperParams {
        options,
        batch: 4,
        rollout_len: 6,
        n_step: 4,
        inner_steps: inner,
        episode_cap: 12,
        lr_option: 0.05,
        lr_manager: 0.01,
        lr_meta: 0.01,
        ..HyperParams::default()
    }
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn second_derivative() -> Result<Check> {
    let tape = Tape::new();
    let x = tape.param(Tensor::scalar(2.0))?;
    let y = x.powi(3)?;
    let g = tape.grad(y, &[x], true)?.grads[0];
    let gg = tape.grad(g, &[x], false)?.grads[0].item();
    Ok(Check::new(
        "second derivative of x^3 at 2",
        (gg - 12.0).abs() < 1e-12,
        format!("{gg}"),
    ))
}

fn network_gradient(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Network::new(
        tiny_spec(5),
        Head::OptionPolicy {
            options: 2,
            actions: 4,
        },
    );
    let params = net.init(&mut rng)?;
    let rows = 3;
    let obs: Vec<f64> = (0..rows * net.input_len())
        .map(|_| rng.gen_range(-2.0..2.0))
        .collect();
    let loss_at = |ps: &ParamSet| -> Result<f64> {
        let tape = Tape::new();
        let p = ps.on_tape(&tape, false)?;
        let x = tape.constant(Tensor::new(vec![rows, net.input_len()], obs.clone())?)?;
        let out = net.forward(&p, x, None)?;
        Ok(out.main.mul(out.main)?.mean()?.item())
    };
    let tape = Tape::new();
    let p = params.on_tape(&tape, true)?;
    let x = tape.constant(Tensor::new(vec![rows, net.input_len()], obs.clone())?)?;
    let out = net.forward(&p, x, None)?;
    let loss = out.main.mul(out.main)?.mean()?;
    let grads: Vec<f64> = tape
        .grad(loss, &p, false)?
        .grads
        .iter()
        .flat_map(|g| g.value().data().to_vec())
        .collect();
    let flat = params.flatten();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..flat.len() {
        let at = |d: f64| -> Result<f64> {
            let mut f = flat.clone();
            f[i] += d;
            let mut ps = params.clone();
            ps.unflatten(&f)?;
            loss_at(&ps)
        };
        let fd = (at(h)? - at(-h)?) / (2.0 * h);
        worst = worst.max(rel_err(fd, grads[i], 1e-6));
    }
    Ok(Check::new(
        "network gradient vs finite differences",
        worst <= 1e-6,
        format!(
            "max relative error {worst:.3e} over {} parameters",
            flat.len()
        ),
    ))
}

/// Option return read straight off its definition: reward `j` (1-based)
/// weighted by `(1 - beta_j)^j`, bootstrap by `(1 - beta_n)^(n+1)`.
pub fn literal_option_return(r: &[f64], b: &[f64], v: f64) -> f64 {
    let n = r.len();
    let mut g = 0.0;
    for j in 1..=n {
        g += (1.0 - b[j - 1]).powf(j as f64) * r[j - 1];
    }
    g + (1.0 - b[n - 1]).powf((n + 1) as f64) * v
}

/// Manager return read straight off its definition.
pub fn literal_manager_return(r: &[f64], gamma: f64, c: f64, v: f64, switched: bool) -> f64 {
    let n = r.len();
    let mut g = 0.0;
    for j in 1..=n {
        g += gamma.powf(j as f64) * r[j - 1];
    }
    if switched {
        g -= gamma.powf(n as f64) * c;
    }
    g + gamma.powf((n + 1) as f64) * v
}

fn return_oracles(seed: u64, cases: usize) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let n = rng.gen_range(1..=20);
        let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.6..1.6)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let v = rng.gen_range(-5.0..5.0);
        let gamma = rng.gen_range(0.5..1.0);
        let c = rng.gen_range(0.0..0.2);
        let switched = rng.gen_bool(0.5);
        worst = worst.max(
            (option_return(&r, &b, v, DiscountMode::Power)? - literal_option_return(&r, &b, v))
                .abs(),
        );
        worst = worst.max(
            (manager_return(&r, gamma, c, v, switched)?
                - literal_manager_return(&r, gamma, c, v, switched))
            .abs(),
        );
    }
    Ok(Check::new(
        "return oracles",
        worst <= 1e-12,
        format!("max absolute error {worst:.3e} over {cases} cases"),
    ))
}

/// Largest relative error between the meta-gradient and central finite
/// differences of the recorded composite, with the count of entries above
/// 1e-6 in magnitude.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaGradCheck {
    pub options: usize,
    pub inner: usize,
    pub params: usize,
    pub max_rel_err: f64,
    pub informative: usize,
}

fn perturbed(set: &ParamSet, i: usize, h: f64) -> Result<ParamSet> {
    let mut flat = set.flatten();
    flat[i] += h;
    let mut out = set.clone();
    out.unflatten(&flat)?;
    Ok(out)
}

/// Runs meta-gradient training on the tiny grid until an update is
/// recorded, then compares its gradient with central differences (step
/// `1e-6`) of the recorded composite at every parameter.
pub fn meta_gradient_check(options: usize, inner: usize, seed: u64) -> Result<MetaGradCheck> {
    let hp = tiny_hp(options, inner);
    let mut learner = Learner::new(
        Method::Modac,
        hp.clone(),
        &tiny_spec(3),
        &tiny_tasks(),
        &tiny_tasks(),
        seed,
    )?;
    learner.record = true;
    let mut replay = None;
    for _ in 0..10 {
        if let Some(r) = learner.iterate()?.replay {
            replay = Some(r);
            break;
        }
    }
    let replay = replay.ok_or_else(|| Error::Numeric("no meta update with option steps".into()))?;
    let grads: Vec<f64> = replay
        .gradient
        .iter()
        .flat_map(|t| t.data().to_vec())
        .collect();
    let nr = replay.eta_r.num_params();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut informative = 0;
    for (i, &g) in grads.iter().enumerate() {
        let eval = |sign: f64| -> Result<f64> {
            let (r, b) = if i < nr {
                (perturbed(&replay.eta_r, i, sign * h)?, replay.eta_b.clone())
            } else {
                (
                    replay.eta_r.clone(),
                    perturbed(&replay.eta_b, i - nr, sign * h)?,
                )
            };
            Ok(replay.objective(&learner.nets, &hp, &r, &b, false)?.0)
        };
        let fd = (eval(1.0)? - eval(-1.0)?) / (2.0 * h);
        worst = worst.max(rel_err(fd, g, 1e-4));
        if g.abs() > 1e-6 {
            informative += 1;
        }
    }
    Ok(MetaGradCheck {
        options,
        inner,
        params: grads.len(),
        max_rel_err: worst,
        informative,
    })
}

/// Every oracle check, in order.
pub fn selftest() -> Result<Vec<Check>> {
    let mut out = vec![
        second_derivative()?,
        network_gradient(3)?,
        return_oracles(5, 1000)?,
    ];
    for options in [1, 2] {
        for inner in [1, 5] {
            let c = meta_gradient_check(options, inner, 11)?;
            out.push(Check::new(
                &format!("meta-gradient K={options} L={inner}"),
                c.max_rel_err <= 1e-4 && c.informative > 0,
                format!(
                    "max relative error {:.3e} over {} parameters ({} informative)",
                    c.max_rel_err, c.params, c.informative
                ),
            ));
        }
    }
    Ok(out)
}
