use std::fs::File;
use std::path::{Path, PathBuf};

use crate::agent::UsageCounts;
use crate::error::{Error, Result};
use crate::metalearn::{IterationReport, Method};

/// Column names of a metrics file for `choices` manager choices.
pub fn metrics_header(choices: usize, method: Method) -> Vec<String> {
    let mut h: Vec<String> = [
        "frames",
        "episode_return_mean",
        "episode_return_sem",
        "option_frac",
        "mean_option_len",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend((0..choices).map(|i| format!("choice_hist_{i}")));
    h.extend(
        ["meta_grad_norm", "loss_policy", "loss_value"]
            .iter()
            .map(|s| s.to_string()),
    );
    if method.is_baseline() {
        h.push("baseline".into());
    }
    h
}

fn num(x: f64) -> String {
    format!("{x}")
}

/// One row per outer iteration. Returns are empty until an episode has
/// finished; the mean option length is 0 when no option was picked.
pub struct MetricsWriter {
    path: PathBuf,
    out: csv::Writer<File>,
    method: Method,
    choices: usize,
}

impl MetricsWriter {
    pub fn create(path: &Path, choices: usize, method: Method) -> Result<Self> {
        let mut out = csv::Writer::from_path(path)?;
        out.write_record(metrics_header(choices, method))?;
        Ok(MetricsWriter {
            path: path.to_path_buf(),
            out,
            method,
            choices,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write(&mut self, r: &IterationReport) -> Result<()> {
        let stats = r.usage.stats();
        if stats.histogram.len() != self.choices {
            return Err(Error::InvalidArgument(format!(
                "usage over {} choices written to a file with {}",
                stats.histogram.len(),
                self.choices
            )));
        }
        let mut row = vec![r.frames.to_string()];
        match r.returns {
            Some((m, s)) => row.extend([num(m), num(s)]),
            None => row.extend([String::new(), String::new()]),
        }
        row.push(num(stats.option_step_frac));
        row.push(num(stats.mean_option_len.unwrap_or(0.0)));
        row.extend(stats.histogram.iter().map(|&h| num(h)));
        row.extend([
            num(r.meta_grad_norm),
            num(r.manager.policy),
            num(r.manager.value),
        ]);
        if self.method.is_baseline() {
            row.push(self.method.as_str().to_string());
        }
        self.out.write_record(&row)?;
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Usage histograms at intervals: `frames,choice_hist_*`, one row per
/// snapshot, each over the picks since the previous snapshot.
pub struct UsageLog {
    path: PathBuf,
    out: csv::Writer<File>,
    every: u64,
    next: u64,
    counts: UsageCounts,
    pub snapshots: Vec<(u64, UsageCounts)>,
}

impl UsageLog {
    pub fn create(path: &Path, options: usize, actions: usize, every: u64) -> Result<Self> {
        let mut out = csv::Writer::from_path(path)?;
        let mut h = vec!["frames".to_string()];
        h.extend((0..options + actions).map(|i| format!("choice_hist_{i}")));
        h.extend(
            ["mean_option_len", "option_frac"]
                .iter()
                .map(|s| s.to_string()),
        );
        out.write_record(&h)?;
        Ok(UsageLog {
            path: path.to_path_buf(),
            out,
            every,
            next: every,
            counts: UsageCounts::new(options, actions),
            snapshots: Vec::new(),
        })
    }

    fn merge(&mut self, u: &UsageCounts) {
        for (a, b) in self.counts.picks.iter_mut().zip(&u.picks) {
            *a += b;
        }
        self.counts.option_steps += u.option_steps;
        self.counts.total_steps += u.total_steps;
    }

    pub fn add(&mut self, frames: u64, usage: &UsageCounts) -> Result<()> {
        self.merge(usage);
        if self.every > 0 && frames >= self.next {
            self.snapshot(frames)?;
            while self.next <= frames {
                self.next += self.every;
            }
        }
        Ok(())
    }

    /// Writes the pending counts, if any.
    pub fn finish(&mut self, frames: u64) -> Result<()> {
        if self.counts.total_steps > 0 {
            self.snapshot(frames)?;
        }
        Ok(())
    }

    fn snapshot(&mut self, frames: u64) -> Result<()> {
        let stats = self.counts.stats();
        let mut row = vec![frames.to_string()];
        row.extend(stats.histogram.iter().map(|&h| num(h)));
        row.push(num(stats.mean_option_len.unwrap_or(0.0)));
        row.push(num(stats.option_step_frac));
        self.out.write_record(&row)?;
        self.out.flush().map_err(|e| Error::io(&self.path, e))?;
        let fresh = UsageCounts::new(
            self.counts.options,
            self.counts.picks.len() - self.counts.options,
        );
        self.snapshots
            .push((frames, std::mem::replace(&mut self.counts, fresh)));
        Ok(())
    }
}

/// A metrics file read back as named numeric columns. Empty cells read as
/// `NaN`; text columns are dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Table> {
        let mut rd = csv::Reader::from_path(path)?;
        let full: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
        let keep: Vec<usize> = (0..full.len()).filter(|&i| full[i] != "baseline").collect();
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let row = keep
                .iter()
                .map(|&i| {
                    let cell = rec.get(i).unwrap_or("");
                    if cell.is_empty() {
                        Ok(f64::NAN)
                    } else {
                        cell.parse::<f64>().map_err(|_| {
                            Error::InvalidArgument(format!(
                                "{}: `{cell}` in column {} is not a number",
                                path.display(),
                                full[i]
                            ))
                        })
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Ok(Table {
            header: keep.into_iter().map(|i| full[i].clone()).collect(),
            rows,
        })
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingData(vec![format!("column {name}")]))?;
        Ok(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = csv::Writer::from_path(path)?;
        out.write_record(&self.header)?;
        for r in &self.rows {
            out.write_record(
                r.iter()
                    .map(|&x| if x.is_nan() { String::new() } else { num(x) }),
            )?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    /// Element-wise mean of tables with the same columns, truncated to the
    /// shortest. Missing cells are skipped; a cell missing everywhere stays
    /// missing.
    pub fn mean(tables: &[Table]) -> Result<Table> {
        let first = tables
            .first()
            .ok_or_else(|| Error::MissingData(vec!["tables to average".into()]))?;
        if tables.iter().any(|t| t.header != first.header) {
            return Err(Error::InvalidArgument(
                "averaged tables have different columns".into(),
            ));
        }
        let n = tables.iter().map(|t| t.rows.len()).min().unwrap_or(0);
        let rows = (0..n)
            .map(|r| {
                (0..first.header.len())
                    .map(|c| {
                        let vals: Vec<f64> = tables
                            .iter()
                            .map(|t| t.rows[r][c])
                            .filter(|x| !x.is_nan())
                            .collect();
                        if vals.is_empty() {
                            f64::NAN
                        } else {
                            vals.iter().sum::<f64>() / vals.len() as f64
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Table {
            header: first.header.clone(),
            rows,
        })
    }
}
