use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::envs::{four_rooms, GoalConfig, TaskSource};
use crate::nets::{NetworkSpec, TorsoSpec};

fn spec() -> NetworkSpec {
    NetworkSpec {
        torso: TorsoSpec::Mlp { hidden: vec![16] },
        height: 13,
        width: 13,
        task_count: 0,
        task_embed: 16,
    }
}

fn source() -> TaskSource {
    let suite = four_rooms(&GoalConfig::default()).unwrap();
    TaskSource::Goals {
        layout: Arc::new(suite.layout),
        tasks: suite.train,
    }
}

fn run(options: usize, rule: TerminationRule, seed: u64, segments: usize) -> Vec<Trajectory> {
    let nets = AgentNets::new(&spec(), options, true, true);
    let params = nets.init(&mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let mut actor = Actor::new(&source(), 6, 30, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    (0..segments)
        .map(|_| actor.rollout(&nets, &params, 10, rule, &mut rng).unwrap())
        .collect()
}

#[test]
fn choice_indices_round_trip() {
    for k in 0..4 {
        for c in 0..k + 4 {
            let ch = Choice::decode(c, k);
            assert_eq!(ch.index(k), c);
            assert_eq!(ch.option().is_some(), c < k);
        }
    }
    assert_eq!(Choice::decode(3, 2), Choice::Primitive(1));
}

#[test]
fn usage_of_one_option_then_two_primitives() {
    let mut u = UsageCounts::new(1, 4);
    for (c, d) in [(0, true), (0, false), (0, false), (3, true), (2, true)] {
        u.record(c, d);
    }
    let s = u.stats();
    assert_eq!(s.histogram, vec![1.0 / 3.0, 0.0, 1.0 / 3.0, 1.0 / 3.0, 0.0]);
    assert_eq!(s.mean_option_len, Some(3.0));
    assert_eq!(s.option_step_frac, 0.6);
    let mut none = UsageCounts::new(2, 4);
    none.record(5, true);
    assert_eq!(none.stats().mean_option_len, None);
    assert_eq!(none.stats().option_pick_frac, 0.0);
}

#[test]
fn categorical_sampling_follows_cumulative_mass() {
    let p = [0.2, 0.0, 0.5, 0.3];
    assert_eq!(sample_categorical(&p, 0.0), 0);
    assert_eq!(sample_categorical(&p, 0.2), 2);
    assert_eq!(sample_categorical(&p, 0.69), 2);
    assert_eq!(sample_categorical(&p, 0.7), 3);
    assert_eq!(sample_categorical(&p, 0.999_999_999), 3);
}

/// The manager decides exactly at the first step of every option invocation
/// and at every primitive step.
#[test]
fn manager_decides_once_per_invocation() {
    for rule in [TerminationRule::Learned, TerminationRule::Fixed(3)] {
        let segs = run(2, rule, 5, 4);
        let b = segs[0].batch;
        let mut ended_prev = vec![true; b];
        for tr in &segs {
            for t in 0..tr.steps {
                for i in 0..b {
                    let s = t * b + i;
                    assert_eq!(tr.decision[s], ended_prev[i], "step {s}");
                    let primitive = tr.option_of(s).is_none();
                    if primitive {
                        assert_eq!(tr.switch[s], !tr.done[s]);
                    }
                    if tr.done[s] {
                        assert!(!tr.switch[s]);
                    }
                    ended_prev[i] = tr.switch[s] || tr.done[s];
                }
            }
        }
    }
}

#[test]
fn fixed_duration_options_run_exactly_that_long_unless_the_episode_ends() {
    let segs = run(2, TerminationRule::Fixed(3), 6, 6);
    let b = segs[0].batch;
    let mut len = vec![0usize; b];
    for tr in &segs {
        for t in 0..tr.steps {
            for i in 0..b {
                let s = t * b + i;
                if tr.option_of(s).is_some() {
                    len[i] = if tr.decision[s] { 1 } else { len[i] + 1 };
                    assert!(len[i] <= 3);
                    assert_eq!(tr.switch[s], len[i] == 3 && !tr.done[s]);
                }
            }
        }
    }
}

#[test]
fn without_options_every_step_is_a_primitive_decision() {
    let segs = run(0, TerminationRule::Learned, 7, 2);
    for tr in &segs {
        assert!(tr.decision.iter().all(|&d| d));
        assert!(tr.option_steps().is_empty());
        assert!(tr.choice.iter().zip(&tr.action).all(|(c, a)| c == a));
    }
}

#[test]
fn state_table_links_steps_to_next_states() {
    let segs = run(2, TerminationRule::Learned, 8, 3);
    for tr in &segs {
        let ml = tr.manager_obs.shape()[1];
        let row = |r: usize| &tr.manager_obs.data()[r * ml..(r + 1) * ml];
        let plane = ml / 3;
        for s in 0..tr.len() {
            let nr = tr.next_row[s];
            assert!(nr < tr.rows());
            if let Some(n) = tr.successor(s) {
                assert_eq!(nr, n);
            } else if tr.done[s] {
                assert!(nr >= tr.len() + tr.batch);
                if tr.reward[s] == 1.0 {
                    // Agent and goal coincide in the terminal state.
                    let r = row(nr);
                    let agent = r[..plane].iter().position(|&v| v == 1.0);
                    let goal = r[2 * plane..].iter().position(|&v| v == 1.0);
                    assert_eq!(agent, goal);
                }
            } else {
                assert_eq!(nr, tr.len() + s % tr.batch);
            }
            let opt = &tr.option_obs.data()[nr * 2 * plane..(nr + 1) * 2 * plane];
            assert_eq!(opt, &row(nr)[..2 * plane]);
        }
        let returns: usize = tr.done.iter().filter(|&&d| d).count();
        assert_eq!(returns, tr.finished.len());
    }
}

#[test]
fn rollouts_are_reproducible() {
    let a = run(2, TerminationRule::Learned, 9, 3);
    let b = run(2, TerminationRule::Learned, 9, 3);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.action, y.action);
        assert_eq!(x.choice, y.choice);
        assert_eq!(x.beta, y.beta);
        assert_eq!(x.manager_obs, y.manager_obs);
    }
}

#[test]
fn option_map_covers_every_open_cell() {
    let nets = AgentNets::new(&spec(), 2, true, true);
    let params = nets.init(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let layout = crate::envs::four_rooms_layout();
    let cells = option_map(&nets, &params, &layout).unwrap();
    assert_eq!(cells.len(), 2 * layout.open_cells().len());
    assert!(cells
        .iter()
        .all(|c| c.beta.unwrap() > 0.0 && c.beta.unwrap() < 1.0 && c.prob >= 0.25));
    let svg = option_map_svg(&layout, &cells, 2);
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}
