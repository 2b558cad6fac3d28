use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::envs::{
    four_rooms, Difficulty, GoalConfig, GridLayout, TaskSource, TaskSuite, PROCEDURAL_SIZE,
};
use crate::error::{Error, Result};
use crate::metalearn::{HyperParams, Method};
use crate::nets::{NetworkSpec, TorsoSpec};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    #[default]
    FourRooms,
    /// Layout and goals read from `grid_file`.
    Grid,
    /// Simple generated rooms for training, generated mazes for transfer.
    Procedural,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub grid_file: Option<PathBuf>,
    /// Goal overrides for four rooms.
    pub goals: GoalConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub torso: TorsoSpec,
    pub task_embed: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            torso: TorsoSpec::default(),
            task_embed: 16,
        }
    }
}

/// Full description of one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub method: Method,
    pub seeds: Vec<u64>,
    pub train_frames: u64,
    /// Per test task.
    pub transfer_frames: u64,
    /// Frames between usage snapshots during training; 0 keeps only the
    /// final one.
    pub usage_every: u64,
    /// Forces sweeps to run their pipelines one after another.
    pub deterministic: bool,
    /// Parallel pipelines in a sweep.
    pub actors: usize,
    pub env: EnvConfig,
    pub network: NetConfig,
    pub hp: HyperParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            method: Method::Modac,
            seeds: vec![0, 1, 2, 3, 4],
            train_frames: 2_000_000,
            transfer_frames: 200_000,
            usage_every: 500_000,
            deterministic: true,
            actors: 8,
            env: EnvConfig::default(),
            network: NetConfig::default(),
            hp: HyperParams::default(),
        }
    }
}

/// Tasks of one experiment: where training and validation episodes come
/// from, and one source per transfer task.
#[derive(Clone, Debug)]
pub struct Tasks {
    pub train: TaskSource,
    pub validation: TaskSource,
    pub test: Vec<(String, TaskSource)>,
    /// Layout for option maps.
    pub layout: GridLayout,
    pub spec: NetworkSpec,
}

fn parse_value(raw: &str) -> toml::Value {
    let probe = format!("v = {raw}");
    match probe.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key was just parsed"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets a dotted `key` in a TOML document; missing tables are created.
pub fn set_key(doc: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed key `{key}`")));
    }
    let mut table = doc;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{part}` in `{key}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_value(raw));
    Ok(())
}

/// Splits `key=value`.
pub fn split_override(s: &str) -> Result<(&str, &str)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| Error::Config(format!("override `{s}` is not of the form key=value")))
}

impl RunConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        for o in overrides {
            let (k, v) = split_override(o)?;
            set_key(&mut doc, k, v)?;
        }
        let cfg: RunConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (or starts from defaults when `None`) and applies
    /// overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            // An unreadable config is a config error, not an I/O failure.
            Some(p) => {
                fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => String::new(),
        };
        let mut cfg = Self::from_toml(&text, overrides)?;
        // Relative grid files are resolved against the config's directory.
        if let (Some(p), Some(grid)) = (path, cfg.env.grid_file.clone()) {
            if grid.is_relative() {
                if let Some(parent) = p.parent() {
                    cfg.env.grid_file = Some(parent.join(grid));
                }
            }
        }
        Ok(cfg)
    }

    /// Same config with one more override.
    pub fn with_override(&self, key: &str, raw: &str) -> Result<Self> {
        let mut doc = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        set_key(&mut doc, key, raw)?;
        let text = toml::to_string(&doc).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_toml(&text, &[])
    }

    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        if self.train_frames == 0 || self.transfer_frames == 0 {
            return Err(Error::Config("frame budgets must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.actors == 0 {
            return Err(Error::Config("actors must be positive".into()));
        }
        if self.env.kind == EnvKind::Grid && self.env.grid_file.is_none() {
            return Err(Error::Config(
                "env.kind = \"grid\" needs env.grid_file".into(),
            ));
        }
        match &self.network.torso {
            TorsoSpec::Mlp { hidden } if hidden.contains(&0) => {
                return Err(Error::Config("mlp layer widths must be positive".into()))
            }
            TorsoSpec::Conv2 {
                filters,
                kernel,
                dense,
                ..
            } if *filters == 0 || *kernel == 0 || *dense == 0 => {
                return Err(Error::Config("conv2 sizes must be positive".into()))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Hex SHA-256 of the serialised config.
    pub fn hash(&self) -> String {
        hex_digest(self.to_toml().as_bytes())
    }

    fn suite(&self) -> Result<TaskSuite> {
        match self.env.kind {
            EnvKind::FourRooms => four_rooms(&self.env.goals),
            EnvKind::Grid => {
                let path = self.env.grid_file.as_ref().expect("validated");
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                TaskSuite::parse(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
            }
            EnvKind::Procedural => unreachable!("procedural suites have no fixed layout"),
        }
    }

    pub fn tasks(&self) -> Result<Tasks> {
        let spec = |layout: &GridLayout| NetworkSpec {
            torso: self.network.torso.clone(),
            height: layout.height(),
            width: layout.width(),
            task_count: 0,
            task_embed: self.network.task_embed,
        };
        if self.env.kind == EnvKind::Procedural {
            let layout = crate::envs::procedural_rooms(Difficulty::Simple, 0)?.layout;
            debug_assert_eq!(layout.width(), PROCEDURAL_SIZE);
            let simple = TaskSource::Procedural {
                difficulty: Difficulty::Simple,
            };
            return Ok(Tasks {
                train: simple.clone(),
                validation: simple,
                test: vec![(
                    "hard".to_string(),
                    TaskSource::Procedural {
                        difficulty: Difficulty::Hard,
                    },
                )],
                spec: spec(&layout),
                layout,
            });
        }
        let suite = self.suite()?;
        if suite.test.is_empty() {
            return Err(Error::Config("the layout has no test goals".into()));
        }
        let layout = Arc::new(suite.layout.clone());
        let train = TaskSource::Goals {
            layout: Arc::clone(&layout),
            tasks: suite.train.clone(),
        };
        let test = suite
            .test
            .iter()
            .map(|t| {
                (
                    format!("goal_{}_{}", t.goal.x, t.goal.y),
                    TaskSource::Goals {
                        layout: Arc::clone(&layout),
                        tasks: vec![*t],
                    },
                )
            })
            .collect();
        Ok(Tasks {
            validation: train.clone(),
            train,
            test,
            spec: spec(&suite.layout),
            layout: suite.layout,
        })
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
