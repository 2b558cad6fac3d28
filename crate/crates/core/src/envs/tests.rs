use std::collections::{BTreeSet, VecDeque};
use std::sync::Arc;

use proptest::prelude::*;

use super::*;

fn four_rooms_source(tasks: Vec<TaskSpec>) -> TaskSource {
    TaskSource::Goals {
        layout: Arc::new(four_rooms_layout()),
        tasks,
    }
}

fn fixed_goal(goal: Cell) -> TaskSource {
    four_rooms_source(vec![TaskSpec {
        goal,
        phase: Phase::Test,
        id: 0,
    }])
}

#[test]
fn four_rooms_has_four_doorways() {
    let layout = four_rooms_layout();
    assert_eq!((layout.width(), layout.height()), (13, 13));
    let doors: BTreeSet<_> = layout.doorways().into_iter().collect();
    let expected: BTreeSet<_> = [(6, 3), (2, 6), (9, 7), (6, 10)]
        .into_iter()
        .map(|(x, y)| Cell::new(x, y))
        .collect();
    assert_eq!(doors, expected);
    let rooms: BTreeSet<_> = layout.rooms().into_iter().flatten().collect();
    assert_eq!(rooms.len(), 4);
}

#[test]
fn default_goal_sets_are_disjoint_and_train_spans_three_rooms() {
    let suite = four_rooms(&GoalConfig::default()).unwrap();
    let train: BTreeSet<_> = suite.train.iter().map(|t| t.goal).collect();
    let test: BTreeSet<_> = suite.test.iter().map(|t| t.goal).collect();
    assert!(train.is_disjoint(&test));
    let rooms = suite.layout.rooms();
    let room_of = |c: Cell| rooms[suite.layout.index(c)].unwrap();
    let train_rooms: BTreeSet<_> = train.iter().map(|&c| room_of(c)).collect();
    assert_eq!(train_rooms.len(), 3);
    let lower_left = room_of(Cell::new(1, 11));
    assert!(!train_rooms.contains(&lower_left));
    assert!(test.iter().any(|&c| room_of(c) == lower_left));
    assert!(suite
        .test
        .iter()
        .all(|t| t.phase == Phase::Test && t.id >= suite.train.len()));
}

#[test]
fn overlapping_or_walled_goals_are_rejected() {
    let overlap = GoalConfig {
        train: Some(vec![Cell::new(1, 1)]),
        test: Some(vec![Cell::new(1, 1)]),
    };
    assert!(four_rooms(&overlap).is_err());
    let wall = GoalConfig {
        train: Some(vec![Cell::new(0, 0)]),
        test: None,
    };
    assert!(four_rooms(&wall).is_err());
}

#[test]
fn grid_file_round_trips() {
    let suite = four_rooms(&GoalConfig::default()).unwrap();
    let text = suite.to_text();
    assert!(text.contains('T') && text.contains('E'));
    assert_eq!(TaskSuite::parse(&text).unwrap().layout, suite.layout);
    let parsed = TaskSuite::parse(&text).unwrap();
    let goals = |v: &[TaskSpec]| v.iter().map(|t| t.goal).collect::<BTreeSet<_>>();
    assert_eq!(goals(&parsed.train), goals(&suite.train));
    assert_eq!(goals(&parsed.test), goals(&suite.test));
}

#[test]
fn malformed_grid_files_are_rejected() {
    assert!(TaskSuite::parse("#####\n#T..#\n####\n").is_err());
    assert!(TaskSuite::parse("#####\n#T.x#\n#####\n").is_err());
    assert!(TaskSuite::parse("#####\nT...#\n#####\n").is_err());
    assert!(TaskSuite::parse("#####\n#T#E#\n#####\n").is_err());
    assert!(TaskSuite::parse("#####\n#.E.#\n#####\n").is_err());
    assert!(TaskSuite::parse("#####\n#T.E#\n#####\n").is_ok());
}

#[test]
fn observations_have_one_agent_and_hide_the_goal_from_options() {
    let source = four_rooms_source(four_rooms(&GoalConfig::default()).unwrap().train);
    let env = GridEnv::new(source, DEFAULT_EPISODE_CAP, env_rng(3, 0)).unwrap();
    let plane = 13 * 13;
    let manager = env.observation(true);
    let option = env.observation(false);
    assert_eq!(manager.len(), 3 * plane);
    assert_eq!(option.len(), 2 * plane);
    assert_eq!(manager[..plane].iter().sum::<f64>(), 1.0);
    assert_eq!(manager[2 * plane..].iter().sum::<f64>(), 1.0);
    assert_eq!(&manager[..2 * plane], &option[..]);
}

#[test]
fn same_seed_reproduces_start_and_goal() {
    let tasks = four_rooms(&GoalConfig::default()).unwrap().train;
    let a = GridEnv::new(four_rooms_source(tasks.clone()), 100, env_rng(9, 2)).unwrap();
    let b = GridEnv::new(four_rooms_source(tasks), 100, env_rng(9, 2)).unwrap();
    assert_eq!((a.agent(), a.task()), (b.agent(), b.task()));
    assert_ne!(a.agent(), a.task().goal);
}

#[test]
fn blocked_move_stays_put() {
    let mut env = GridEnv::new(fixed_goal(Cell::new(11, 11)), 100, env_rng(0, 0)).unwrap();
    for _ in 0..20 {
        if env.agent().y == 1 {
            break;
        }
        if env
            .layout()
            .is_wall(Cell::new(env.agent().x, env.agent().y - 1))
        {
            env.step(Action::East).unwrap();
        } else {
            env.step(Action::North).unwrap();
        }
    }
    let before = env.agent();
    assert_eq!(before.y, 1);
    let t = env.step(Action::North).unwrap();
    assert_eq!(env.agent(), before);
    assert_eq!(t.reward, 0.0);
}

#[test]
fn reaching_goal_pays_one_and_ends() {
    let layout = four_rooms_layout();
    let goal = Cell::new(3, 3);
    let dist = layout.distances(goal);
    let mut env = GridEnv::new(fixed_goal(goal), 100, env_rng(1, 0)).unwrap();
    let mut total = 0.0;
    loop {
        let here = dist[layout.index(env.agent())].unwrap();
        let a = Action::ALL
            .into_iter()
            .find(|&a| dist[layout.index(layout.move_from(env.agent(), a))] == Some(here - 1))
            .unwrap();
        let t = env.step(a).unwrap();
        total += t.reward;
        if t.done {
            assert!(t.reached_goal);
            assert_eq!(t.reward, 1.0);
            break;
        }
        assert_eq!(t.reward, 0.0);
    }
    assert_eq!(total, 1.0);
    assert!(env.step(Action::North).is_err());
}

#[test]
fn episode_cap_ends_with_zero_return() {
    // Moving north never reaches a goal on the bottom row.
    let mut env = GridEnv::new(fixed_goal(Cell::new(11, 11)), 100, env_rng(2, 0)).unwrap();
    let mut total = 0.0;
    let mut steps = 0;
    loop {
        let t = env.step(Action::North).unwrap();
        total += t.reward;
        steps += 1;
        if t.done {
            assert!(!t.reached_goal);
            break;
        }
    }
    assert_eq!(steps, 100);
    assert_eq!(total, 0.0);
}

#[test]
fn procedural_layouts_are_seeded_and_ordered_by_size() {
    let a = procedural_rooms(Difficulty::Simple, 5).unwrap();
    let b = procedural_rooms(Difficulty::Simple, 5).unwrap();
    assert_eq!(a, b);
    for seed in 0..20 {
        let s = procedural_rooms(Difficulty::Simple, seed).unwrap();
        let h = procedural_rooms(Difficulty::Hard, seed).unwrap();
        assert_eq!(
            (s.layout.width(), h.layout.width()),
            (PROCEDURAL_SIZE, PROCEDURAL_SIZE)
        );
        assert!(h.layout.open_cells().len() > s.layout.open_cells().len());
        let rooms: BTreeSet<_> = s.layout.rooms().into_iter().flatten().collect();
        assert!(rooms.len() <= 4);
    }
}

/// Independent reachability check: flood fill over open neighbours.
fn reachable_from(layout: &GridLayout, start: Cell) -> usize {
    let mut seen = BTreeSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(c) = queue.pop_front() {
        for (dx, dy) in [(0i64, 1i64), (1, 0), (0, -1), (-1, 0)] {
            let (x, y) = (c.x as i64 + dx, c.y as i64 + dy);
            if x < 0 || y < 0 || x >= layout.width() as i64 || y >= layout.height() as i64 {
                continue;
            }
            let n = Cell::new(x as usize, y as usize);
            if !layout.walls()[layout.index(n)] && seen.insert(n) {
                queue.push_back(n);
            }
        }
    }
    seen.len()
}

#[test]
fn trace_csv_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    let rows = vec![
        TraceRow {
            step: 0,
            x: 1,
            y: 2,
            action: 3,
            reward: 0.0,
            active_option: -1,
        },
        TraceRow {
            step: 1,
            x: 1,
            y: 1,
            action: 0,
            reward: 1.0,
            active_option: 2,
        },
    ];
    write_trace(&path, &rows).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("step,x,y,action,reward,active_option\n"));
    assert_eq!(read_trace(&path).unwrap(), rows);
}

#[test]
fn batch_rejects_wrong_action_count() {
    let source = fixed_goal(Cell::new(3, 3));
    let mut batch = EnvBatch::new(&source, 3, 100, 0).unwrap();
    assert!(batch.step_all(&[Action::North]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_goals_reachable_from_every_open_cell(seed in any::<u64>(), hard in any::<bool>()) {
        let difficulty = if hard { Difficulty::Hard } else { Difficulty::Simple };
        let inst = procedural_rooms(difficulty, seed).unwrap();
        prop_assert!(inst.layout.is_open(inst.goal));
        prop_assert_eq!(reachable_from(&inst.layout, inst.goal), inst.layout.open_cells().len());
    }

    #[test]
    fn batched_stepping_matches_sequential(seed in any::<u64>(), actions in proptest::collection::vec(0usize..4, 4 * 60)) {
        let source = four_rooms_source(four_rooms(&GoalConfig::default()).unwrap().train);
        let mut batch = EnvBatch::new(&source, 4, 30, seed).unwrap();
        let mut singles: Vec<GridEnv> = (0..4)
            .map(|i| GridEnv::new(source.clone(), 30, env_rng(seed, i)).unwrap())
            .collect();
        for chunk in actions.chunks(4) {
            let acts: Vec<Action> = chunk.iter().map(|&a| Action::from_index(a).unwrap()).collect();
            let batched = batch.step_all(&acts).unwrap();
            for (i, env) in singles.iter_mut().enumerate() {
                let t = env.step(acts[i]).unwrap();
                prop_assert_eq!(t, batched[i]);
                prop_assert_eq!(env.agent(), batch.envs[i].agent());
                prop_assert!(t.reward == 0.0 || (t.reward == 1.0 && env.agent() == env.task().goal));
                if t.done {
                    env.reset().unwrap();
                    batch.envs[i].reset().unwrap();
                }
            }
        }
    }
}
