use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{hex_digest, RunConfig, Tasks};
use super::metrics::{MetricsWriter, Table, UsageLog};
use super::stats::auc;
use crate::agent::{AgentParams, UsageCounts};
use crate::error::{Error, Result};
use crate::metalearn::{derive_seed, IterationReport, Learner, Method};
use crate::nets::{checkpoint, ParamSet};

pub const RECORD: &str = "record.json";
const TRANSFER_SEED_BASE: u64 = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Train,
    Transfer,
}

/// Usage and return summary of a phase.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub frames: u64,
    /// Mean return over the metrics rows (of the averaged curve at
    /// transfer).
    pub auc: f64,
    /// Last recorded mean return.
    pub final_return: f64,
    /// Per transfer task: name and area under its curve.
    #[serde(default)]
    pub task_auc: Vec<(String, f64)>,
    /// Over the final usage snapshot at training, the whole phase at
    /// transfer.
    pub option_pick_frac: f64,
    pub option_step_frac: f64,
    /// 0 when no option was picked.
    pub mean_option_len: f64,
}

/// Files produced by one phase of one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub phase: Phase,
    pub method: Method,
    pub seed: u64,
    pub config_hash: String,
    pub metrics: Vec<PathBuf>,
    pub usage: Option<PathBuf>,
    pub checkpoints: Vec<PathBuf>,
    pub wall_seconds: f64,
    pub frames_per_second: f64,
    pub summary: PhaseSummary,
}

impl RunRecord {
    fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(RECORD);
        fs::write(&path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(&path, e))
    }

    /// Reads a record and checks that every file it names exists and
    /// parses.
    pub fn load(dir: &Path) -> Result<RunRecord> {
        let path = dir.join(RECORD);
        let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let rec: RunRecord = serde_json::from_slice(&text)?;
        let mut missing = Vec::new();
        for m in rec.metrics.iter().chain(&rec.usage) {
            if Table::read(m).is_err() {
                missing.push(m.display().to_string());
            }
        }
        for c in &rec.checkpoints {
            if checkpoint::load(c).is_err() {
                missing.push(c.display().to_string());
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingData(missing));
        }
        Ok(rec)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn check_finite(r: &IterationReport) -> Result<()> {
    let vals = [
        r.manager.policy,
        r.manager.value,
        r.option.policy,
        r.option.value,
        r.meta_grad_norm,
    ];
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite loss or gradient norm at frame {}",
            r.frames
        )));
    }
    if let Some((m, s)) = r.returns {
        if !m.is_finite() || !s.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite return at frame {}",
                r.frames
            )));
        }
    }
    Ok(())
}

fn check_params(p: &AgentParams) -> Result<()> {
    for set in p.sets() {
        if set.flatten().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite {} parameters",
                set.role().as_str()
            )));
        }
    }
    Ok(())
}

/// Hex SHA-256 over the bytes of every option set (policy, reward,
/// termination).
pub fn option_hash(p: &AgentParams) -> String {
    let mut bytes = Vec::new();
    for set in [&p.option_policy, &p.option_reward, &p.option_termination]
        .into_iter()
        .flatten()
    {
        bytes.extend(set.role().as_str().as_bytes());
        for v in set.flatten() {
            bytes.extend(v.to_le_bytes());
        }
    }
    hex_digest(&bytes)
}

/// Runs `learner` until it has consumed `frames`, logging each iteration.
fn drive(
    learner: &mut Learner,
    frames: u64,
    metrics: &mut MetricsWriter,
    mut usage: Option<&mut UsageLog>,
    total: &mut UsageCounts,
) -> Result<Vec<f64>> {
    let mut returns = Vec::new();
    while learner.frames() < frames {
        let r = learner.iterate()?;
        check_finite(&r)?;
        metrics.write(&r)?;
        if let Some(u) = usage.as_deref_mut() {
            u.add(r.frames, &r.usage)?;
        }
        for (a, b) in total.picks.iter_mut().zip(&r.usage.picks) {
            *a += b;
        }
        total.option_steps += r.usage.option_steps;
        total.total_steps += r.usage.total_steps;
        returns.push(r.returns.map_or(f64::NAN, |x| x.0));
    }
    check_params(&learner.params)?;
    if let Some(u) = usage {
        u.finish(learner.frames())?;
    }
    Ok(returns)
}

fn last_finite(xs: &[f64]) -> f64 {
    xs.iter()
        .rev()
        .copied()
        .find(|x| !x.is_nan())
        .unwrap_or(0.0)
}

/// Trains one seed in `dir`: config copy, metrics, usage snapshots, a
/// checkpoint and the run record.
pub fn train_phase(cfg: &RunConfig, seed: u64, dir: &Path) -> Result<(RunRecord, Learner)> {
    cfg.validate()?;
    create_dir(dir)?;
    let cfg_path = dir.join("config.toml");
    fs::write(&cfg_path, cfg.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
    let tasks = cfg.tasks()?;
    let mut learner = Learner::new(
        cfg.method,
        cfg.hp.clone(),
        &tasks.spec,
        &tasks.train,
        &tasks.validation,
        seed,
    )?;
    let start = Instant::now();
    let (options, actions) = (learner.nets.options, learner.nets.actions);
    let mut metrics =
        MetricsWriter::create(&dir.join("metrics.csv"), options + actions, cfg.method)?;
    let mut usage = UsageLog::create(&dir.join("usage.csv"), options, actions, cfg.usage_every)?;
    let mut total = UsageCounts::new(options, actions);
    let returns = drive(
        &mut learner,
        cfg.train_frames,
        &mut metrics,
        Some(&mut usage),
        &mut total,
    )?;
    let ckpt = save_checkpoint(cfg, &learner, seed, &dir.join("checkpoint"))?;
    let wall = start.elapsed().as_secs_f64();
    let last = usage
        .snapshots
        .last()
        .map(|(_, c)| c.stats())
        .unwrap_or_else(|| total.stats());
    let rec = RunRecord {
        phase: Phase::Train,
        method: cfg.method,
        seed,
        config_hash: cfg.hash(),
        metrics: vec![metrics.path().to_path_buf()],
        usage: Some(dir.join("usage.csv")),
        checkpoints: vec![ckpt],
        wall_seconds: wall,
        frames_per_second: learner.frames() as f64 / wall.max(1e-9),
        summary: PhaseSummary {
            frames: learner.frames(),
            auc: auc(&returns),
            final_return: last_finite(&returns),
            task_auc: Vec::new(),
            option_pick_frac: last.option_pick_frac,
            option_step_frac: last.option_step_frac,
            mean_option_len: last.mean_option_len.unwrap_or(0.0),
        },
    };
    rec.save(dir)?;
    Ok((rec, learner))
}

fn save_checkpoint(cfg: &RunConfig, learner: &Learner, seed: u64, dir: &Path) -> Result<PathBuf> {
    let meta = serde_json::json!({
        "method": cfg.method.as_str(),
        "seed": seed,
        "frames": learner.frames(),
        "options": learner.nets.options,
        "config": cfg.to_toml(),
    });
    checkpoint::save(dir, &learner.params.sets(), meta)?;
    Ok(dir.to_path_buf())
}

/// The config stored alongside a checkpoint.
pub fn checkpoint_config(dir: &Path) -> Result<RunConfig> {
    let ck = checkpoint::load(dir)?;
    let text = ck
        .meta
        .get("config")
        .and_then(|v| v.as_str())
        .ok_or_else(|| Error::Checkpoint(format!("{} stores no config", dir.display())))?;
    RunConfig::from_toml(text, &[])
}

/// Rebuilds a trained agent from a checkpoint written by [`train_phase`].
pub fn learner_from_checkpoint(cfg: &RunConfig, dir: &Path, seed: u64) -> Result<Learner> {
    let ck = checkpoint::load(dir)?;
    if let Some(m) = ck.meta.get("method").and_then(|v| v.as_str()) {
        if Method::parse(m)? != cfg.method {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds a {m} agent, config asks for {}",
                cfg.method.as_str()
            )));
        }
    }
    let tasks = cfg.tasks()?;
    let mut learner = Learner::new(
        cfg.method,
        cfg.hp.clone(),
        &tasks.spec,
        &tasks.train,
        &tasks.validation,
        seed,
    )?;
    let take = |current: &ParamSet| -> Result<ParamSet> {
        let loaded = ck.require(current.role())?;
        if !loaded.same_layout(current) {
            return Err(Error::Checkpoint(format!(
                "{} parameters do not match the configured network",
                current.role().as_str()
            )));
        }
        Ok(loaded.clone())
    };
    let p = &learner.params;
    let params = AgentParams {
        manager: take(&p.manager)?,
        option_policy: p.option_policy.as_ref().map(take).transpose()?,
        option_reward: p.option_reward.as_ref().map(take).transpose()?,
        option_termination: p.option_termination.as_ref().map(take).transpose()?,
    };
    learner.nets.check(&params)?;
    learner.params = params;
    Ok(learner)
}

/// Transfers the options of `trained` to every test task, each with a
/// freshly initialised manager and no switching cost. Writes one metrics
/// file per task plus their mean.
pub fn transfer_phase(
    cfg: &RunConfig,
    trained: &Learner,
    seed: u64,
    dir: &Path,
) -> Result<RunRecord> {
    create_dir(dir)?;
    let cfg_path = dir.join("config.toml");
    fs::write(&cfg_path, cfg.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
    let tasks: Tasks = cfg.tasks()?;
    let before = option_hash(&trained.params);
    let start = Instant::now();
    let (options, actions) = (trained.nets.options, trained.nets.actions);
    let mut usage = UsageLog::create(&dir.join("usage.csv"), options, actions, 0)?;
    let mut total = UsageCounts::new(options, actions);
    let mut paths = Vec::new();
    let mut task_auc = Vec::new();
    let mut frames = 0;
    for (i, (name, source)) in tasks.test.iter().enumerate() {
        let mut learner =
            trained.for_transfer(source, derive_seed(seed, TRANSFER_SEED_BASE + i as u64))?;
        let path = dir.join(format!("metrics_{name}.csv"));
        let mut metrics = MetricsWriter::create(&path, options + actions, cfg.method)?;
        // Usage of the whole phase goes to one snapshot.
        let returns = drive(
            &mut learner,
            cfg.transfer_frames,
            &mut metrics,
            None,
            &mut total,
        )?;
        if options > 0 && option_hash(&learner.params) != before {
            return Err(Error::Numeric(format!(
                "option parameters changed while transferring to {name}"
            )));
        }
        frames += learner.frames();
        task_auc.push((name.clone(), auc(&returns)));
        paths.push(path);
    }
    usage.add(frames, &total)?;
    usage.finish(frames)?;
    if option_hash(&trained.params) != before {
        return Err(Error::Numeric(
            "trained option parameters changed during transfer".into(),
        ));
    }
    let tables = paths
        .iter()
        .map(|p| Table::read(p))
        .collect::<Result<Vec<_>>>()?;
    let mean = Table::mean(&tables)?;
    let mean_path = dir.join("metrics_mean.csv");
    mean.write(&mean_path)?;
    let curve = mean.column("episode_return_mean")?;
    let stats = total.stats();
    let wall = start.elapsed().as_secs_f64();
    let mut metrics = vec![mean_path];
    metrics.extend(paths);
    let rec = RunRecord {
        phase: Phase::Transfer,
        method: cfg.method,
        seed,
        config_hash: cfg.hash(),
        metrics,
        usage: Some(dir.join("usage.csv")),
        checkpoints: Vec::new(),
        wall_seconds: wall,
        frames_per_second: frames as f64 / wall.max(1e-9),
        summary: PhaseSummary {
            frames,
            auc: auc(&curve),
            final_return: last_finite(&curve),
            task_auc,
            option_pick_frac: stats.option_pick_frac,
            option_step_frac: stats.option_step_frac,
            mean_option_len: stats.mean_option_len.unwrap_or(0.0),
        },
    };
    rec.save(dir)?;
    Ok(rec)
}

/// Train then transfer for one seed under `dir/train` and `dir/transfer`.
/// A flat agent has nothing to carry over, so it skips training and learns
/// each test task from scratch.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub train: Option<RunRecord>,
    pub transfer: RunRecord,
}

pub fn pipeline(cfg: &RunConfig, seed: u64, dir: &Path) -> Result<Pipeline> {
    if cfg.method == Method::Flat {
        let tasks = cfg.tasks()?;
        let fresh = Learner::new(
            cfg.method,
            cfg.hp.clone(),
            &tasks.spec,
            &tasks.train,
            &tasks.validation,
            seed,
        )?;
        let transfer = transfer_phase(cfg, &fresh, seed, &dir.join("transfer"))?;
        return Ok(Pipeline {
            train: None,
            transfer,
        });
    }
    let (train, learner) = train_phase(cfg, seed, &dir.join("train"))?;
    let transfer = transfer_phase(cfg, &learner, seed, &dir.join("transfer"))?;
    Ok(Pipeline {
        train: Some(train),
        transfer,
    })
}
