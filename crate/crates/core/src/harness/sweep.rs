use std::fmt::Write;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::config::RunConfig;
use super::run::pipeline;
use super::stats::{mean, std_dev};
use crate::error::{Error, Result};

/// Transfer outcome of one pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub seed: u64,
    pub transfer_auc: f64,
    pub transfer_final: f64,
    pub transfer_option_pick_frac: f64,
    pub transfer_mean_option_len: f64,
    /// From the last usage snapshot of training; 0 without training.
    pub train_mean_option_len: f64,
}

/// Mean and standard deviation over seeds of one value.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepAggregate {
    pub value: String,
    pub seeds: usize,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub final_mean: f64,
    pub option_pick_frac_mean: f64,
    pub train_mean_option_len_mean: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSummary {
    pub axis: String,
    pub rows: Vec<SweepRow>,
    pub aggregates: Vec<SweepAggregate>,
}

impl SweepSummary {
    pub fn aggregate(&self, value: &str) -> Option<&SweepAggregate> {
        self.aggregates.iter().find(|a| a.value == value)
    }

    /// Per-seed transfer AUCs of one value, in seed order.
    pub fn aucs(&self, value: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.value == value)
            .map(|r| r.transfer_auc)
            .collect()
    }

    /// Per-seed rows followed by one `mean` row per value.
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "{},seed,transfer_auc,transfer_final,transfer_option_pick_frac,transfer_mean_option_len,train_mean_option_len,transfer_auc_std\n",
            self.axis
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},",
                r.value,
                r.seed,
                r.transfer_auc,
                r.transfer_final,
                r.transfer_option_pick_frac,
                r.transfer_mean_option_len,
                r.train_mean_option_len
            );
        }
        for a in &self.aggregates {
            let mean_of = |f: fn(&SweepRow) -> f64| {
                mean(
                    &self
                        .rows
                        .iter()
                        .filter(|r| r.value == a.value)
                        .map(f)
                        .collect::<Vec<_>>(),
                )
            };
            let _ = writeln!(
                s,
                "{},mean,{},{},{},{},{},{}",
                a.value,
                a.auc_mean,
                a.final_mean,
                a.option_pick_frac_mean,
                mean_of(|r| r.transfer_mean_option_len),
                a.train_mean_option_len_mean,
                a.auc_std
            );
        }
        s
    }
}

/// One train and transfer pipeline per value of `axis` and per seed of
/// `cfg`, each in `out/<axis>=<value>/seed<seed>`. Writes
/// `out/summary.csv`.
pub fn sweep(cfg: &RunConfig, axis: &str, values: &[String], out: &Path) -> Result<SweepSummary> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let configs = values
        .iter()
        .map(|v| cfg.with_override(axis, v).map(|c| (v.clone(), c)))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::Config(format!("axis `{axis}`: {e}")))?;
    let jobs: Vec<(String, RunConfig, u64)> = configs
        .iter()
        .flat_map(|(v, c)| c.seeds.iter().map(move |&s| (v.clone(), c.clone(), s)))
        .collect();
    let run = |(value, c, seed): &(String, RunConfig, u64)| -> Result<SweepRow> {
        let dir = out
            .join(format!("{axis}={value}"))
            .join(format!("seed{seed}"));
        let p = pipeline(c, *seed, &dir)?;
        Ok(SweepRow {
            value: value.clone(),
            seed: *seed,
            transfer_auc: p.transfer.summary.auc,
            transfer_final: p.transfer.summary.final_return,
            transfer_option_pick_frac: p.transfer.summary.option_pick_frac,
            transfer_mean_option_len: p.transfer.summary.mean_option_len,
            train_mean_option_len: p.train.map_or(0.0, |t| t.summary.mean_option_len),
        })
    };
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let rows = if cfg.deterministic || cfg.actors == 1 {
        jobs.iter().map(run).collect::<Result<Vec<_>>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.actors)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| jobs.par_iter().map(run).collect::<Result<Vec<_>>>())?
    };
    let aggregates = values
        .iter()
        .map(|v| {
            let mine: Vec<&SweepRow> = rows.iter().filter(|r| &r.value == v).collect();
            let col = |f: fn(&SweepRow) -> f64| mine.iter().map(|r| f(r)).collect::<Vec<_>>();
            SweepAggregate {
                value: v.clone(),
                seeds: mine.len(),
                auc_mean: mean(&col(|r| r.transfer_auc)),
                auc_std: std_dev(&col(|r| r.transfer_auc)),
                final_mean: mean(&col(|r| r.transfer_final)),
                option_pick_frac_mean: mean(&col(|r| r.transfer_option_pick_frac)),
                train_mean_option_len_mean: mean(&col(|r| r.train_mean_option_len)),
            }
        })
        .collect();
    let summary = SweepSummary {
        axis: axis.to_string(),
        rows,
        aggregates,
    };
    let path = out.join("summary.csv");
    fs::write(&path, summary.to_csv()).map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}
