use std::fs;
use std::path::Path;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::agent::{option_map, AgentNets, UsageCounts};
use crate::autodiff::Tensor;
use crate::envs::{Action, NUM_ACTIONS};
use crate::error::Error;
use crate::metalearn::Method;
use crate::nets::TorsoSpec;

/// Four rooms with a small MLP and budgets of a few iterations.
fn small(method: Method) -> RunConfig {
    let mut cfg = RunConfig {
        method,
        seeds: vec![0],
        train_frames: 1_280,
        transfer_frames: 640,
        usage_every: 640,
        ..RunConfig::default()
    };
    cfg.network.torso = TorsoSpec::Mlp { hidden: vec![8] };
    cfg.hp.batch = 4;
    cfg.hp.rollout_len = 20;
    cfg.hp.inner_steps = 2;
    cfg
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap()
}

#[test]
fn overrides_reach_nested_keys() {
    let cfg = RunConfig::from_toml(
        "",
        &["hp.switching_cost=0.1".into(), "method=\"flat\"".into()],
    )
    .unwrap();
    assert_eq!(cfg.hp.switching_cost, 0.1);
    assert_eq!(cfg.method, Method::Flat);
    // Bare words are taken as strings.
    let cfg = RunConfig::from_toml("", &["method=option_critic".into()]).unwrap();
    assert_eq!(cfg.method, Method::OptionCritic);
}

#[test]
fn bad_configs_are_config_errors() {
    for o in [
        "hp.no_such_key=1",
        "hp.gamma=2",
        "train_frames=0",
        "seeds=[]",
        "nonsense",
        "hp.lr_meta=-1",
    ] {
        let e = RunConfig::from_toml("", &[o.to_string()]).unwrap_err();
        assert!(matches!(e, Error::Config(_)), "{o}: {e}");
        assert_eq!(e.exit_code(), 2);
    }
    assert!(matches!(
        RunConfig::from_toml("[hp", &[]),
        Err(Error::Config(_))
    ));
}

#[test]
fn defaults_match_the_gridworld_setup() {
    let cfg = RunConfig::default();
    assert_eq!(cfg.hp.options, 4);
    assert_eq!(cfg.hp.switching_cost, 0.05);
    assert_eq!(cfg.train_frames, 2_000_000);
    assert_eq!(cfg.transfer_frames, 200_000);
    assert!(cfg.seeds.len() >= 5);
    assert_eq!(cfg.actors, 8);
    assert_eq!(cfg.hp.batch, 32);
    assert_eq!(cfg.hp.n_step, 20);
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = small(Method::Modac)
        .with_override("hp.entropy_option", "0.03")
        .unwrap();
    let back = RunConfig::from_toml(&cfg.to_toml(), &[]).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.hash(), cfg.hash());
    assert_ne!(cfg.hash(), small(Method::Modac).hash());
}

#[test]
fn header_follows_the_schema() {
    let h = metrics_header(8, Method::Modac);
    assert_eq!(
        h[..5],
        [
            "frames",
            "episode_return_mean",
            "episode_return_sem",
            "option_frac",
            "mean_option_len"
        ]
    );
    assert_eq!(h[5], "choice_hist_0");
    assert_eq!(h[12], "choice_hist_7");
    assert_eq!(h[13..], ["meta_grad_norm", "loss_policy", "loss_value"]);
    let b = metrics_header(8, Method::OptionCritic);
    assert_eq!(b.last().unwrap(), "baseline");
    assert_eq!(b[..b.len() - 1], h[..]);
}

#[test]
fn table_mean_is_elementwise() {
    let dir = tempfile::tempdir().unwrap();
    let a = Table {
        header: vec!["frames".into(), "r".into()],
        rows: vec![vec![1.0, f64::NAN], vec![2.0, 0.5], vec![3.0, 1.0]],
    };
    let b = Table {
        header: a.header.clone(),
        rows: vec![vec![1.0, 0.25], vec![2.0, 0.25]],
    };
    let m = Table::mean(&[a.clone(), b]).unwrap();
    assert_eq!(m.rows, vec![vec![1.0, 0.25], vec![2.0, 0.375]]);
    let p = dir.path().join("t.csv");
    a.write(&p).unwrap();
    let back = Table::read(&p).unwrap();
    assert!(back.rows[0][1].is_nan());
    assert_eq!(back.rows[2], a.rows[2]);
    assert!(matches!(back.column("nope"), Err(Error::MissingData(_))));
}

#[test]
fn usage_snapshots_cover_disjoint_spans() {
    let dir = tempfile::tempdir().unwrap();
    let mut log = UsageLog::create(&dir.path().join("u.csv"), 1, NUM_ACTIONS, 100).unwrap();
    let mut u = UsageCounts::new(1, NUM_ACTIONS);
    u.picks[0] = 2;
    u.picks[3] = 2;
    u.option_steps = 6;
    u.total_steps = 8;
    for f in [50, 100, 150, 260] {
        log.add(f, &u).unwrap();
    }
    log.finish(260).unwrap();
    let frames: Vec<u64> = log.snapshots.iter().map(|s| s.0).collect();
    assert_eq!(frames, vec![100, 260]);
    assert_eq!(log.snapshots[0].1.total_steps, 16);
    assert_eq!(log.snapshots[1].1.total_steps, 16);
    let t = Table::read(&dir.path().join("u.csv")).unwrap();
    for row in &t.rows {
        let s: f64 = row[1..=1 + NUM_ACTIONS].iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}

#[test]
fn paired_test_matches_hand_computation() {
    // Differences 1, 2, 3: mean 2, sd 1, t = 2 * sqrt(3).
    let t = paired_t_test(&[2.0, 4.0, 6.0], &[1.0, 2.0, 3.0]).unwrap();
    assert!((t.t - 2.0 * 3f64.sqrt()).abs() < 1e-12);
    // Upper tail of Student t with 2 degrees of freedom.
    let x = t.t;
    let p = 0.5 * (1.0 - x / (2.0 + x * x).sqrt());
    assert!((t.p_value - p).abs() < 1e-9, "{} vs {p}", t.p_value);
    assert!(t.significant(0.05));
    assert!(!paired_t_test(&[1.0, 2.0], &[1.0, 2.0])
        .unwrap()
        .significant(0.05));
    assert!(paired_t_test(&[1.0], &[0.0]).is_err());
}

#[test]
fn auc_counts_missing_points_as_zero() {
    assert_eq!(auc(&[f64::NAN, 0.5, 1.0]), 0.5);
    assert_eq!(auc(&[]), 0.0);
}

#[test]
fn band_spans_min_to_max() {
    let b = Band::from_series(&[
        (vec![1.0, 2.0], vec![0.0, 1.0]),
        (vec![1.0, 2.0], vec![1.0, f64::NAN]),
    ]);
    assert_eq!(b.mean, vec![0.5, 1.0]);
    assert_eq!(b.lo, vec![0.0, 1.0]);
    assert_eq!(b.hi, vec![1.0, 1.0]);
    assert_eq!(b.count, vec![2, 1]);
    let svg = curve_svg(&[("x".into(), b)], 2.0, "return");
    assert!(svg.contains("<polygon") && svg.contains("<polyline"));
}

#[test]
fn phases_write_what_their_records_claim() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(Method::Modac);
    let p = pipeline(&cfg, 3, dir.path()).unwrap();
    let train = RunRecord::load(&dir.path().join("train")).unwrap();
    assert_eq!(train, p.train.unwrap());
    assert_eq!(train.config_hash, cfg.hash());
    assert_eq!(train.checkpoints.len(), 1);
    assert!(train.summary.frames >= cfg.train_frames);
    let copied = RunConfig::load(Some(&dir.path().join("train/config.toml")), &[]).unwrap();
    assert_eq!(copied, cfg);
    let transfer = RunRecord::load(&dir.path().join("transfer")).unwrap();
    let tasks = cfg.tasks().unwrap();
    // Mean curve first, then one per test task.
    assert_eq!(transfer.metrics.len(), tasks.test.len() + 1);
    let per_task: Vec<Table> = transfer.metrics[1..]
        .iter()
        .map(|m| Table::read(m).unwrap())
        .collect();
    assert_eq!(
        Table::read(&transfer.metrics[0]).unwrap(),
        Table::mean(&per_task).unwrap()
    );
    let usage = Table::read(transfer.usage.as_ref().unwrap()).unwrap();
    assert_eq!(usage.rows.len(), 1);

    fs::remove_file(dir.path().join("train/metrics.csv")).unwrap();
    match RunRecord::load(&dir.path().join("train")) {
        Err(Error::MissingData(m)) => assert!(m[0].ends_with("metrics.csv")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn transfer_leaves_options_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(Method::Modac);
    let (_, learner) = train_phase(&cfg, 1, &dir.path().join("train")).unwrap();
    let before = option_hash(&learner.params);
    let reloaded = learner_from_checkpoint(&cfg, &dir.path().join("train/checkpoint"), 1).unwrap();
    assert_eq!(option_hash(&reloaded.params), before);
    transfer_phase(&cfg, &reloaded, 1, &dir.path().join("transfer")).unwrap();
    assert_eq!(option_hash(&reloaded.params), before);
}

#[test]
fn checkpoint_method_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(Method::Modac);
    train_phase(&cfg, 0, dir.path()).unwrap();
    let other = small(Method::OptionCritic);
    assert!(matches!(
        learner_from_checkpoint(&other, &dir.path().join("checkpoint"), 0),
        Err(Error::Checkpoint(_))
    ));
    assert_eq!(
        checkpoint_config(&dir.path().join("checkpoint")).unwrap(),
        cfg
    );
}

#[test]
fn single_value_sweep_equals_one_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(Method::Modac);
    let s = sweep(
        &cfg,
        "hp.switching_cost",
        &["0.05".into()],
        &dir.path().join("sweep"),
    )
    .unwrap();
    assert_eq!(s.rows.len(), 1);
    assert_eq!(s.aggregates.len(), 1);
    let p = pipeline(&cfg, 0, &dir.path().join("single")).unwrap();
    assert_eq!(s.rows[0].transfer_auc, p.transfer.summary.auc);
    let a = read(
        &dir.path()
            .join("sweep/hp.switching_cost=0.05/seed0/transfer/metrics_mean.csv"),
    );
    assert_eq!(
        a,
        read(&dir.path().join("single/transfer/metrics_mean.csv"))
    );
}

#[test]
fn sweep_rows_cover_values_and_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(Method::Flat);
    cfg.seeds = vec![0, 1];
    let values: Vec<String> = ["0.001", "0.003"].iter().map(|s| s.to_string()).collect();
    let s = sweep(&cfg, "hp.lr_manager", &values, dir.path()).unwrap();
    assert_eq!(s.rows.len(), 4);
    assert_eq!(s.aucs("0.003").len(), 2);
    let csv = read(&dir.path().join("summary.csv"));
    assert_eq!(csv.lines().count(), 1 + 4 + 2);
    assert!(matches!(
        sweep(&cfg, "hp.bogus", &values, dir.path()),
        Err(Error::Config(_))
    ));
}

#[test]
fn deterministic_runs_repeat_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(Method::Modac);
    pipeline(&cfg, 9, &dir.path().join("a")).unwrap();
    pipeline(&cfg, 9, &dir.path().join("b")).unwrap();
    for f in [
        "train/metrics.csv",
        "train/usage.csv",
        "transfer/metrics_mean.csv",
    ] {
        assert_eq!(
            read(&dir.path().join("a").join(f)),
            read(&dir.path().join("b").join(f)),
            "{f}"
        );
    }
}

#[test]
fn viz_writes_maps_with_one_arrow_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(Method::Modac);
    pipeline(&cfg, 0, &dir.path().join("run")).unwrap();
    let out = dir.path().join("viz");
    let files = viz(&[dir.path().join("run")], &out).unwrap();
    for name in [
        "curve_train.svg",
        "curve_transfer.svg",
        "option_map_modac.svg",
        "trace_modac.csv",
    ] {
        assert!(files.contains(&out.join(name)), "{name}");
    }
    assert!(files
        .iter()
        .any(|f| f.to_string_lossy().contains("usage_train_modac_")));
    // option,x,y,action,arrow,prob,beta
    let mut rd = csv::Reader::from_path(out.join("option_map_modac.csv")).unwrap();
    let rows: Vec<(usize, usize, usize, f64)> = rd
        .records()
        .map(|r| {
            let r = r.unwrap();
            (
                r[0].parse().unwrap(),
                r[1].parse().unwrap(),
                r[2].parse().unwrap(),
                r[6].parse().unwrap(),
            )
        })
        .collect();
    let layout = cfg.tasks().unwrap().layout;
    let open = layout.open_cells().len();
    assert_eq!(rows.len(), open * cfg.hp.options);
    let mut seen = std::collections::HashSet::new();
    for &(o, x, y, beta) in &rows {
        assert!(seen.insert((o, x, y)));
        assert!(beta > 0.0 && beta < 1.0);
    }
    let curve = read(&out.join("curve_transfer_modac.csv"));
    assert!(curve.starts_with("frames,mean,lo,hi,seeds"));
}

#[test]
fn viz_names_absent_runs() {
    let dir = tempfile::tempdir().unwrap();
    match viz(&[dir.path().join("nothing")], &dir.path().join("out")) {
        Err(Error::MissingData(m)) => assert!(m[0].contains("nothing")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn north_policy_maps_to_north_arrows() {
    let cfg = small(Method::Modac);
    let tasks = cfg.tasks().unwrap();
    let nets = AgentNets::new(&tasks.spec, 2, true, true);
    let mut params = nets.init(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let policy = params.option_policy.as_mut().unwrap();
    let names = policy.names().to_vec();
    for (i, name) in names.iter().enumerate() {
        let shape = policy.tensors()[i].shape().to_vec();
        let mut t = Tensor::zeros(&shape);
        if name == "head.b" {
            let mut data = t.data().to_vec();
            for o in 0..2 {
                data[o * NUM_ACTIONS + Action::North as usize] = 3.0;
            }
            t = Tensor::new(shape, data).unwrap();
        }
        policy.set(i, t).unwrap();
    }
    let cells = option_map(&nets, &params, &tasks.layout).unwrap();
    assert_eq!(cells.len(), 2 * tasks.layout.open_cells().len());
    assert!(cells.iter().all(|c| c.action == Action::North as usize));
}

#[test]
fn selftest_passes() {
    for c in selftest().unwrap() {
        assert!(c.passed, "{}: {}", c.name, c.detail);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn table_mean_of_copies_is_identity(vals in proptest::collection::vec(-10.0f64..10.0, 1..20), k in 1usize..5) {
        let t = Table {
            header: vec!["v".into()],
            rows: vals.iter().map(|&v| vec![v]).collect(),
        };
        let m = Table::mean(&vec![t.clone(); k]).unwrap();
        for (a, b) in m.rows.iter().zip(&t.rows) {
            prop_assert!((a[0] - b[0]).abs() <= 1e-12 * b[0].abs().max(1.0));
        }
    }

    #[test]
    fn paired_test_is_antisymmetric(d in proptest::collection::vec(-1.0f64..1.0, 3..10)) {
        let zero = vec![0.0; d.len()];
        let ab = paired_t_test(&d, &zero).unwrap();
        let neg: Vec<f64> = d.iter().map(|x| -x).collect();
        let ba = paired_t_test(&neg, &zero).unwrap();
        prop_assert!((ab.mean_diff + ba.mean_diff).abs() < 1e-12);
        if ab.t.is_finite() {
            prop_assert!((ab.p_value + ba.p_value - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn band_mean_lies_in_range(a in proptest::collection::vec(0.0f64..1.0, 4), b in proptest::collection::vec(0.0f64..1.0, 4)) {
        let f = vec![1.0, 2.0, 3.0, 4.0];
        let band = Band::from_series(&[(f.clone(), a), (f, b)]);
        for i in 0..4 {
            prop_assert!(band.lo[i] <= band.mean[i] + 1e-15 && band.mean[i] <= band.hi[i] + 1e-15);
        }
    }
}
