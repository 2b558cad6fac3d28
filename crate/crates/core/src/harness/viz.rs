use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use super::metrics::Table;
use super::plot::{curve_svg, Band};
use super::run::{checkpoint_config, learner_from_checkpoint, Phase, RunRecord, RECORD};
use crate::agent::{option_map, option_map_svg, usage_svg, write_option_map_csv, Actor};
use crate::envs::{write_trace, NUM_ACTIONS};
use crate::error::{Error, Result};

/// Run records found at `path`: the path itself, or the `train` and
/// `transfer` directories of a pipeline.
fn records_at(path: &Path) -> Result<Vec<(PathBuf, RunRecord)>> {
    if path.join(RECORD).exists() {
        return Ok(vec![(path.to_path_buf(), RunRecord::load(path)?)]);
    }
    let mut out = Vec::new();
    for sub in ["train", "transfer"] {
        let dir = path.join(sub);
        if dir.join(RECORD).exists() {
            out.push((dir.clone(), RunRecord::load(&dir)?));
        }
    }
    Ok(out)
}

fn write(path: &Path, text: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    files.push(path.to_path_buf());
    Ok(())
}

fn phase_name(p: Phase) -> &'static str {
    match p {
        Phase::Train => "train",
        Phase::Transfer => "transfer",
    }
}

/// Learning curves, usage histograms, option maps and an episode trace
/// for the runs under `runs`, written to `out`. Returns the files written.
pub fn viz(runs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    let mut records = Vec::new();
    let mut absent = Vec::new();
    for r in runs {
        let found = records_at(r)?;
        if found.is_empty() {
            absent.push(format!("run record under {}", r.display()));
        }
        records.extend(found);
    }
    if !absent.is_empty() {
        return Err(Error::MissingData(absent));
    }
    if records.is_empty() {
        return Err(Error::MissingData(vec!["run directories".into()]));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut files = Vec::new();

    // Curves grouped by phase, one band per method.
    let mut groups: BTreeMap<&str, BTreeMap<&str, Vec<(PathBuf, &RunRecord)>>> = BTreeMap::new();
    for (dir, rec) in &records {
        groups
            .entry(phase_name(rec.phase))
            .or_default()
            .entry(rec.method.as_str())
            .or_default()
            .push((dir.clone(), rec));
    }
    for (phase, methods) in &groups {
        let mut bands = Vec::new();
        let mut budget = 0.0f64;
        for (method, recs) in methods {
            let mut series = Vec::new();
            for (dir, rec) in recs {
                let path = rec.metrics.first().ok_or_else(|| {
                    Error::MissingData(vec![format!("metrics of {}", dir.display())])
                })?;
                let t = Table::read(path)?;
                let mut missing = Vec::new();
                for col in ["frames", "episode_return_mean"] {
                    if !t.header.iter().any(|h| h == col) {
                        missing.push(format!("{col} in {}", path.display()));
                    }
                }
                if !missing.is_empty() {
                    return Err(Error::MissingData(missing));
                }
                series.push((t.column("frames")?, t.column("episode_return_mean")?));
                let cfg_path = dir.join("config.toml");
                if let Ok(cfg) = RunConfig::load(Some(&cfg_path), &[]) {
                    let b = match rec.phase {
                        Phase::Train => cfg.train_frames,
                        Phase::Transfer => cfg.transfer_frames,
                    };
                    budget = budget.max(b as f64);
                }
            }
            let band = Band::from_series(&series);
            budget = budget.max(band.frames.last().copied().unwrap_or(0.0));
            write(
                &out.join(format!("curve_{phase}_{method}.csv")),
                &band.to_csv(),
                &mut files,
            )?;
            bands.push((method.to_string(), band));
        }
        write(
            &out.join(format!("curve_{phase}.svg")),
            &curve_svg(&bands, budget, "episode return"),
            &mut files,
        )?;
    }

    // Usage histograms of the first run of each method and phase.
    for (phase, methods) in &groups {
        for (method, recs) in methods {
            let Some(path) = recs.iter().find_map(|(_, r)| r.usage.clone()) else {
                continue;
            };
            let t = Table::read(&path)?;
            let hist: Vec<usize> = (0..t.header.len())
                .filter(|&i| t.header[i].starts_with("choice_hist_"))
                .collect();
            let options = hist.len().saturating_sub(NUM_ACTIONS);
            for row in &t.rows {
                let h: Vec<f64> = hist.iter().map(|&i| row[i]).collect();
                let name = format!("usage_{phase}_{method}_{}.svg", row[0]);
                write(&out.join(name), &usage_svg(&h, options), &mut files)?;
            }
        }
    }

    // Option maps and a trace from the first checkpoint of each method.
    let mut seen = Vec::new();
    for (_, rec) in &records {
        let Some(ck) = rec.checkpoints.first() else {
            continue;
        };
        if seen.contains(&rec.method) {
            continue;
        }
        seen.push(rec.method);
        let cfg = checkpoint_config(ck)?;
        let learner = learner_from_checkpoint(&cfg, ck, rec.seed)?;
        let tasks = cfg.tasks()?;
        let method = rec.method.as_str();
        if learner.nets.options > 0 {
            let cells = option_map(&learner.nets, &learner.params, &tasks.layout)?;
            let csv = out.join(format!("option_map_{method}.csv"));
            write_option_map_csv(&csv, &cells)?;
            files.push(csv);
            let svg = option_map_svg(&tasks.layout, &cells, learner.nets.options);
            write(
                &out.join(format!("option_map_{method}.svg")),
                &svg,
                &mut files,
            )?;
        }
        let mut actor = Actor::new(&tasks.train, 1, cfg.hp.episode_cap, rec.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(rec.seed);
        let rule = rec.method.termination_rule(&cfg.hp);
        let tr = actor.rollout(
            &learner.nets,
            &learner.params,
            cfg.hp.episode_cap,
            rule,
            &mut rng,
        )?;
        let mut rows = tr.trace(0, 0);
        if let Some(end) = tr.done.iter().position(|&d| d) {
            rows.truncate(end + 1);
        }
        let path = out.join(format!("trace_{method}.csv"));
        write_trace(&path, &rows)?;
        files.push(path);
    }
    Ok(files)
}
