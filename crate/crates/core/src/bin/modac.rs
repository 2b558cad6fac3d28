use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use modac::harness::{
    checkpoint_config, learner_from_checkpoint, pipeline, selftest, sweep, train_phase,
    transfer_phase, viz, PhaseSummary, RunConfig,
};
use modac::Result;

/// Option discovery by meta-gradients on multi-task gridworlds.
#[derive(Parser)]
#[command(name = "modac", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run config; defaults apply to every missing key.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set hp.switching_cost=0.1`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Run only this seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref(), &self.overrides)?;
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train on the training tasks; one directory per seed.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Follow training with the transfer phase.
        #[arg(long)]
        transfer: bool,
    },
    /// Freeze the options of a checkpoint and learn each test task with a
    /// fresh manager.
    Transfer {
        /// Checkpoint directory written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the config stored in the checkpoint.
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and transfer once per value of one config key and per seed.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Dotted config key, e.g. `hp.switching_cost`.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Curves, usage histograms, option maps and a trace from run
    /// directories.
    Viz {
        /// Run directory: a phase directory or a train/transfer pair.
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Gradient and return oracle checks.
    Selftest,
}

fn report(label: &str, dir: &Path, s: &PhaseSummary) {
    println!(
        "{label} {}: frames={} auc={:.4} final_return={:.4} option_pick_frac={:.3} mean_option_len={:.2}",
        dir.display(),
        s.frames,
        s.auc,
        s.final_return,
        s.option_pick_frac,
        s.mean_option_len
    );
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train {
            config,
            out,
            transfer,
        } => {
            let cfg = config.load()?;
            for &seed in &cfg.seeds {
                let dir = out.join(format!("seed{seed}"));
                if transfer {
                    let p = pipeline(&cfg, seed, &dir)?;
                    if let Some(t) = &p.train {
                        report("train", &dir, &t.summary);
                    }
                    report("transfer", &dir, &p.transfer.summary);
                } else {
                    let (rec, _) = train_phase(&cfg, seed, &dir)?;
                    report("train", &dir, &rec.summary);
                }
            }
        }
        Command::Transfer {
            checkpoint,
            config,
            out,
        } => {
            let mut cfg = match &config.config {
                Some(_) => config.load()?,
                None => {
                    let mut c = checkpoint_config(&checkpoint)?;
                    for o in &config.overrides {
                        let (k, v) = modac::harness::split_override(o)?;
                        c = c.with_override(k, v)?;
                    }
                    c
                }
            };
            if let Some(s) = config.seed {
                cfg.seeds = vec![s];
            }
            for &seed in &cfg.seeds {
                let trained = learner_from_checkpoint(&cfg, &checkpoint, seed)?;
                let dir = out.join(format!("seed{seed}"));
                let rec = transfer_phase(&cfg, &trained, seed, &dir)?;
                report("transfer", &dir, &rec.summary);
            }
        }
        Command::Sweep {
            config,
            axis,
            values,
            out,
        } => {
            let cfg = config.load()?;
            let summary = sweep(&cfg, &axis, &values, &out)?;
            print!("{}", summary.to_csv());
        }
        Command::Viz { runs, out } => {
            for f in viz(&runs, &out)? {
                println!("{}", f.display());
            }
        }
        Command::Selftest => {
            let mut ok = true;
            for c in selftest()? {
                println!(
                    "{} {}: {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
                ok &= c.passed;
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
