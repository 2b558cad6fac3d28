use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::agent::{Actor, AgentNets, TerminationRule, Trajectory};
use crate::autodiff::{Tape, Tensor};
use crate::envs::{TaskSource, TaskSuite};
use crate::nets::{NetworkSpec, ParamSet, TorsoSpec};

const TINY: &str = "\
######
#T..E#
#..T.#
######
";

fn tiny_source() -> TaskSource {
    let suite = TaskSuite::parse(TINY).unwrap();
    TaskSource::Goals {
        layout: Arc::new(suite.layout),
        tasks: suite.train,
    }
}

fn tiny_spec(hidden: usize) -> NetworkSpec {
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

fn tiny_hp(options: usize, inner: usize) -> HyperParams {
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

#[test]
fn option_return_examples() {
    let g = option_return(&[0.5, 0.25], &[0.0, 0.0], 1.0, DiscountMode::Power).unwrap();
    assert!((g - 1.75).abs() < 1e-12);
    let g = option_return(&[1.0, 1.0], &[0.5, 0.5], 2.0, DiscountMode::Power).unwrap();
    assert!((g - 1.0).abs() < 1e-12);
    assert!(option_return(&[], &[], 1.0, DiscountMode::Power).is_err());
    assert!(option_return(&[1.0], &[0.1, 0.2], 1.0, DiscountMode::Power).is_err());
}

#[test]
fn manager_return_example_with_switching_cost() {
    let g = manager_return(&[0.0, 1.0], 0.9, 0.05, 0.5, true).unwrap();
    assert!((g - 1.134).abs() < 1e-12);
    let free = manager_return(&[0.0, 1.0], 0.9, 0.05, 0.5, false).unwrap();
    assert!((free - g - 0.81 * 0.05).abs() < 1e-12);
}

/// Independent evaluation of the product discount: weights accumulate
/// step by step.
fn product_return_oracle(r: &[f64], b: &[f64], v: f64) -> f64 {
    let mut w = 1.0;
    let mut g = 0.0;
    for i in 0..r.len() {
        w *= 1.0 - b[i];
        g += w * r[i];
    }
    g + w * v
}

proptest! {
    #[test]
    fn zero_termination_return_is_plain_sum(r in proptest::collection::vec(-1.5f64..1.5, 1..8), v in -3.0f64..3.0) {
        let b = vec![0.0; r.len()];
        let g = option_return(&r, &b, v, DiscountMode::Power).unwrap();
        prop_assert!((g - (r.iter().sum::<f64>() + v)).abs() < 1e-12);
    }

    #[test]
    fn product_discount_matches_running_weights(
        rb in proptest::collection::vec((-1.5f64..1.5, 0.0f64..1.0), 1..8),
        v in -3.0f64..3.0,
    ) {
        let r: Vec<f64> = rb.iter().map(|p| p.0).collect();
        let b: Vec<f64> = rb.iter().map(|p| p.1).collect();
        let g = option_return(&r, &b, v, DiscountMode::Product).unwrap();
        prop_assert!((g - product_return_oracle(&r, &b, v)).abs() < 1e-12);
    }

    #[test]
    fn option_return_is_bounded_by_reward_range(
        rb in proptest::collection::vec((-1.5f64..1.5, 1e-6f64..1.0), 1..10),
        v in -1.0f64..1.0,
    ) {
        let r: Vec<f64> = rb.iter().map(|p| p.0).collect();
        let b: Vec<f64> = rb.iter().map(|p| p.1).collect();
        let g = option_return(&r, &b, v, DiscountMode::Power).unwrap();
        prop_assert!(g.abs() <= r.iter().map(|x| x.abs()).sum::<f64>() + v.abs() + 1e-12);
    }
}

fn tiny_trajectories(options: usize, seed: u64, count: usize) -> (AgentNets, Vec<Trajectory>) {
    let nets = AgentNets::new(&tiny_spec(3), options, true, true);
    let params = nets.init(&mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let mut actor = Actor::new(&tiny_source(), 4, 12, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 7);
    let trs = (0..count)
        .map(|_| {
            actor
                .rollout(&nets, &params, 8, TerminationRule::Learned, &mut rng)
                .unwrap()
        })
        .collect();
    (nets, trs)
}

/// Brute-force windows: walk each env forward step by step.
fn window_oracle(
    tr: &Trajectory,
    start: usize,
    n: usize,
    stop_at_switch: bool,
) -> (Vec<usize>, Option<usize>) {
    let b = start % tr.batch;
    let mut t = start / tr.batch;
    let mut steps = Vec::new();
    loop {
        let s = t * tr.batch + b;
        steps.push(s);
        if tr.done[s] {
            return (steps, None);
        }
        if steps.len() == n || (stop_at_switch && tr.switch[s]) || t + 1 == tr.steps {
            return (steps, Some(tr.next_row[s]));
        }
        t += 1;
    }
}

#[test]
fn windows_match_step_by_step_walk_and_scalar_returns() {
    let (_, trs) = tiny_trajectories(2, 3, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for tr in &trs {
        let starts: Vec<usize> = (0..tr.len()).collect();
        let values: Vec<f64> = (0..tr.rows()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for stop in [false, true] {
            let ws = windows(tr, &starts, 3, stop);
            let targets = discounted_targets(tr, &ws, 0.9, 0.05, |_, r| values[r]);
            for (w, g) in ws.iter().zip(&targets) {
                let (steps, boot) = window_oracle(tr, w.start, 3, stop);
                assert_eq!((&w.steps, w.bootstrap_row), (&steps, boot));
                // One switch at the window end reduces to the scalar return.
                let inner_switch = steps[..steps.len() - 1].iter().any(|&s| tr.switch[s]);
                if !inner_switch {
                    let r: Vec<f64> = steps.iter().map(|&s| tr.reward[s]).collect();
                    let last = *steps.last().unwrap();
                    let v = boot.map_or(0.0, |row| values[row]);
                    let expect = manager_return(&r, 0.9, 0.05, v, tr.switch[last]).unwrap();
                    assert!((g - expect).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn batched_option_returns_match_scalar_returns() {
    let (_, trs) = tiny_trajectories(2, 4, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for tr in &trs {
        let os = OptionSteps::new(tr);
        if os.is_empty() {
            continue;
        }
        let m = os.len();
        let r: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.gen_range(0.01..0.99)).collect();
        let ws = option_windows(tr, &os, 4);
        let boot: Vec<f64> = ws
            .iter()
            .map(|w| {
                if w.bootstrap_row.is_some() {
                    rng.gen_range(-1.0..1.0)
                } else {
                    0.0
                }
            })
            .collect();
        let plan = ReturnPlan::new(&ws, &|s| os.position(s));
        for mode in [DiscountMode::Power, DiscountMode::Product] {
            let tape = Tape::new();
            let rv = tape.constant(Tensor::vector(r.clone())).unwrap();
            let keep = tape
                .constant(Tensor::vector(b.iter().map(|x| 1.0 - x).collect()))
                .unwrap();
            let got = plan.returns(rv, keep, &boot, mode).unwrap().value();
            for (i, w) in ws.iter().enumerate() {
                let idx: Vec<usize> = w.steps.iter().map(|&s| os.position(s)).collect();
                let rr: Vec<f64> = idx.iter().map(|&p| r[p]).collect();
                let bb: Vec<f64> = idx.iter().map(|&p| b[p]).collect();
                let expect = option_return(&rr, &bb, boot[i], mode).unwrap();
                assert!(
                    (got.data()[i] - expect).abs() < 1e-12,
                    "{mode:?} window {i}"
                );
                assert!(w.steps.iter().all(|&s| tr.choice[s] == tr.choice[w.start]));
            }
        }
    }
}

#[test]
fn option_loss_depends_on_reward_and_termination_parameters() {
    let (nets, trs) = tiny_trajectories(2, 5, 1);
    let params = nets.init(&mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let hp = tiny_hp(2, 1);
    let tape = Tape::new();
    let theta_set = params.option_policy.clone().unwrap();
    let theta = theta_set.on_tape(&tape, true).unwrap();
    let er = params
        .option_reward
        .as_ref()
        .unwrap()
        .on_tape(&tape, true)
        .unwrap();
    let eb = params
        .option_termination
        .as_ref()
        .unwrap()
        .on_tape(&tape, true)
        .unwrap();
    let (loss, _, _) =
        intrinsic_option_loss(&nets, &theta, &theta_set, &er, &eb, &trs[0], &hp, None)
            .unwrap()
            .unwrap();
    let wrt: Vec<_> = er.iter().chain(&eb).copied().collect();
    let g = tape.grad(loss, &wrt, false).unwrap();
    assert!(g.detached.is_empty());
    assert!(g
        .grads
        .iter()
        .any(|v| v.value().data().iter().any(|&x| x != 0.0)));
}

#[test]
fn manager_loss_without_decisions_is_none_and_targets_include_cost() {
    let (nets, trs) = tiny_trajectories(0, 6, 1);
    let params = nets.init(&mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    let hp = tiny_hp(0, 1);
    let tr = &trs[0];
    let starts: Vec<usize> = (0..tr.len()).collect();
    let with = manager_targets(&nets, &params.manager, tr, &starts, &hp, 0.1).unwrap();
    let without = manager_targets(&nets, &params.manager, tr, &starts, &hp, 0.0).unwrap();
    for (s, (a, b)) in with.iter().zip(&without).enumerate() {
        // Without options every continuing step is a switch.
        let ws = windows(tr, &[s], hp.n_step, false);
        let mut disc = 1.0;
        let mut charged = 0.0;
        for &u in &ws[0].steps {
            disc *= hp.gamma;
            if !tr.done[u] {
                charged += disc * 0.1;
            }
        }
        assert!((b - a - charged).abs() < 1e-12);
    }
}

fn perturbed(set: &ParamSet, i: usize, h: f64) -> ParamSet {
    let mut flat = set.flatten();
    flat[i] += h;
    let mut out = set.clone();
    out.unflatten(&flat).unwrap();
    out
}

#[test]
fn recorded_meta_gradient_matches_replay_and_finite_differences() {
    for (options, inner) in [(1usize, 1usize), (2, 2)] {
        let hp = tiny_hp(options, inner);
        let mut learner = Learner::new(
            Method::Modac,
            hp.clone(),
            &tiny_spec(3),
            &tiny_source(),
            &tiny_source(),
            11,
        )
        .unwrap();
        learner.record = true;
        let report = (0..5)
            .map(|_| learner.iterate().unwrap())
            .find(|r| r.replay.is_some())
            .expect("a meta update with option steps");
        let replay = report.replay.unwrap();
        let (_, grads) = replay
            .objective(&learner.nets, &hp, &replay.eta_r, &replay.eta_b, true)
            .unwrap();
        let grads: Vec<f64> = grads
            .unwrap()
            .iter()
            .flat_map(|t| t.data().to_vec())
            .collect();
        let recorded: Vec<f64> = replay
            .gradient
            .iter()
            .flat_map(|t| t.data().to_vec())
            .collect();
        assert_eq!(grads.len(), recorded.len());
        for (a, b) in grads.iter().zip(&recorded) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        let biggest = grads.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        assert!(biggest > 1e-4, "meta-gradient is vanishing: {biggest}");
        let nr = replay.eta_r.num_params();
        let h = 1e-6;
        let mut checked = 0;
        for i in (0..grads.len()).step_by(5) {
            let eval = |sign: f64| {
                let (r, b) = if i < nr {
                    (perturbed(&replay.eta_r, i, sign * h), replay.eta_b.clone())
                } else {
                    (
                        replay.eta_r.clone(),
                        perturbed(&replay.eta_b, i - nr, sign * h),
                    )
                };
                replay
                    .objective(&learner.nets, &hp, &r, &b, false)
                    .unwrap()
                    .0
            };
            let fd = (eval(1.0) - eval(-1.0)) / (2.0 * h);
            let err = (fd - grads[i]).abs() / fd.abs().max(grads[i].abs()).max(1e-4);
            assert!(
                err < 1e-4,
                "K={options} L={inner} param {i}: fd {fd} vs {}",
                grads[i]
            );
            if grads[i].abs() > 1e-6 {
                checked += 1;
            }
        }
        assert!(checked > 5, "only {checked} informative entries");
    }
}

#[test]
fn differentiable_and_plain_inner_updates_agree() {
    let (nets, trs) = tiny_trajectories(2, 8, 1);
    let params = nets.init(&mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    let hp = tiny_hp(2, 1);
    let theta_set = params.option_policy.clone().unwrap();
    let run = |create: bool| {
        let tape = Tape::new();
        let theta = theta_set.on_tape(&tape, true).unwrap();
        let er = params
            .option_reward
            .as_ref()
            .unwrap()
            .on_tape(&tape, create)
            .unwrap();
        let eb = params
            .option_termination
            .as_ref()
            .unwrap()
            .on_tape(&tape, create)
            .unwrap();
        let (loss, _, _) =
            intrinsic_option_loss(&nets, &theta, &theta_set, &er, &eb, &trs[0], &hp, None)
                .unwrap()
                .unwrap();
        let g = tape.grad(loss, &theta, create).unwrap();
        let mut opt = crate::nets::RmsProp::new(&theta_set, hp.rmsprop);
        if create {
            let (next, _, _) = opt
                .differentiable_step(theta_set.names(), &theta, &g.grads, hp.lr_option, hp.clip)
                .unwrap();
            theta_set.with_values(&next).unwrap().flatten()
        } else {
            let mut p = theta_set.clone();
            let grads: Vec<Tensor> = g.grads.iter().map(|v| (*v.value()).clone()).collect();
            opt.step(&mut p, &grads, hp.lr_option, hp.clip).unwrap();
            p.flatten()
        }
    };
    let (a, b) = (run(true), run(false));
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-14);
    }
}

#[test]
fn zero_options_matches_flat_exactly() {
    let hp = HyperParams {
        switching_cost: 0.0,
        ..tiny_hp(0, 2)
    };
    let mut a = Learner::new(
        Method::Modac,
        hp.clone(),
        &tiny_spec(4),
        &tiny_source(),
        &tiny_source(),
        3,
    )
    .unwrap();
    let mut b = crate::baselines::flat(hp, &tiny_spec(4), &tiny_source(), 3).unwrap();
    for _ in 0..4 {
        let (ra, rb) = (a.iterate().unwrap(), b.iterate().unwrap());
        assert_eq!(ra.frames, rb.frames);
        assert_eq!(ra.returns, rb.returns);
        assert_eq!(ra.manager, rb.manager);
        assert_eq!(ra.usage, rb.usage);
    }
    assert_eq!(a.params.manager.flatten(), b.params.manager.flatten());
}

#[test]
fn every_method_runs_and_stays_finite() {
    for method in [
        Method::Modac,
        Method::Flat,
        Method::Mlsh,
        Method::OptionCritic,
    ] {
        let hp = tiny_hp(2, 2);
        let mut l =
            Learner::new(method, hp, &tiny_spec(4), &tiny_source(), &tiny_source(), 2).unwrap();
        for _ in 0..3 {
            let r = l.iterate().unwrap();
            assert!(r.manager.policy.is_finite() && r.manager.value.is_finite());
        }
        for set in l.params.sets() {
            assert!(set.flatten().iter().all(|v| v.is_finite()));
        }
        let t = l.for_transfer(&tiny_source(), 9).unwrap();
        assert_eq!(t.cost, 0.0);
        assert_eq!(t.params.option_policy, l.params.option_policy);
        assert_eq!(t.options_frozen, method != Method::Flat);
    }
}

#[test]
fn frozen_options_do_not_change_during_transfer() {
    let hp = tiny_hp(2, 2);
    let mut l = Learner::new(
        Method::Modac,
        hp,
        &tiny_spec(4),
        &tiny_source(),
        &tiny_source(),
        4,
    )
    .unwrap();
    l.iterate().unwrap();
    let mut t = l.for_transfer(&tiny_source(), 5).unwrap();
    let before = t.params.clone();
    for _ in 0..3 {
        let r = t.iterate().unwrap();
        assert_eq!(r.meta_grad_norm, 0.0);
    }
    assert_eq!(t.params.option_policy, before.option_policy);
    assert_eq!(t.params.option_reward, before.option_reward);
    assert_eq!(t.params.option_termination, before.option_termination);
    assert_ne!(t.params.manager, before.manager);
}
