//! Run configuration and the dataset registry.
//!
//! Both use the same flat text format: one `key = value` per line, `#`
//! starts a comment. Every run key is also a command-line flag
//! (`batch_size` ↔ `--batch-size`), and flags override file values.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::data::{generate_sine, load_csv, split_and_normalize, CsvSchema, DataError, SeriesDataset, SineSpec, SplitPolicy};
use crate::model::{ModelKind, StackConfig};
use crate::train::{Optimizer, TrainConfig};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "PURETS_OUT_DIR";
pub const SINE_DATASET: &str = "sine";
/// Horizons swept by `profile` when none are given.
pub const PROFILE_HORIZONS: [usize; 4] = [48, 168, 336, 720];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}:{line}: expected `key = value`")]
    Syntax { path: String, line: usize },
    #[error("unknown key: {0}")]
    UnknownKey(String),
    #[error("bad value for {key}: {value}")]
    Value { key: String, value: String },
    #[error("dataset not found: {0}")]
    DatasetNotFound(String),
    #[error("missing setting: {0}")]
    Missing(&'static str),
    #[error("invalid setting: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Parses `key = value` lines. Later duplicates win.
pub fn parse_key_values(text: &str, origin: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            path: origin.to_string(),
            line: i + 1,
        })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(ConfigError::Syntax {
                path: origin.to_string(),
                line: i + 1,
            });
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn read_text(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub dataset: Option<String>,
    pub data_dir: Option<PathBuf>,
    pub registry: Option<PathBuf>,
    pub split: Option<SplitPolicy>,
    pub model: ModelKind,
    pub depth: usize,
    pub hidden: Option<Vec<usize>>,
    pub per_channel: bool,
    /// Defaults to the horizon.
    pub window: Option<usize>,
    pub horizon: Option<usize>,
    pub train: TrainConfig,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub sine: SineSpec,
    /// Channel count for `profile`/`bench` when no dataset is named.
    pub features: usize,
    pub horizons: Vec<usize>,
    pub threads: usize,
    pub repeats: usize,
    pub warmup: usize,
    pub batch: usize,
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            data_dir: None,
            registry: None,
            split: None,
            model: ModelKind::PureTs,
            depth: 3,
            hidden: None,
            per_channel: false,
            window: None,
            horizon: None,
            train: TrainConfig::default(),
            seed: 0,
            out: None,
            sine: SineSpec::default(),
            features: 1,
            horizons: PROFILE_HORIZONS.to_vec(),
            threads: 1,
            repeats: 20,
            warmup: 3,
            batch: 32,
            checkpoint: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::Value {
        key: key.to_string(),
        value: value.to_string(),
    })
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, ConfigError> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s.trim()))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(ConfigError::Value {
            key: key.to_string(),
            value: value.to_string(),
        }),
    }
}

impl RunConfig {
    /// Every settable key, in help order.
    pub const KEYS: &'static [&'static str] = &[
        "dataset",
        "data_dir",
        "registry",
        "split",
        "model",
        "depth",
        "hidden",
        "per_channel",
        "window",
        "horizon",
        "lr",
        "epochs",
        "batch_size",
        "patience",
        "optimizer",
        "target_loss",
        "seed",
        "out",
        "sine_points",
        "sine_step",
        "sine_amplitude",
        "sine_phase",
        "sine_noise",
        "features",
        "horizons",
        "threads",
        "repeats",
        "warmup",
        "batch",
        "checkpoint",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "dataset" => self.dataset = Some(v.to_string()),
            "data_dir" => self.data_dir = Some(v.into()),
            "registry" => self.registry = Some(v.into()),
            "split" => {
                self.split = Some(v.parse().map_err(|_: DataError| ConfigError::Value {
                    key: key.into(),
                    value: v.into(),
                })?)
            }
            "model" => {
                self.model = v.parse().map_err(|_| ConfigError::Value {
                    key: key.into(),
                    value: v.into(),
                })?
            }
            "depth" => self.depth = parse(key, v)?,
            "hidden" => self.hidden = Some(parse_list(key, v)?),
            "per_channel" => self.per_channel = parse_bool(key, v)?,
            "window" => self.window = Some(parse(key, v)?),
            "horizon" => self.horizon = Some(parse(key, v)?),
            "lr" => self.train.learning_rate = parse(key, v)?,
            "epochs" => self.train.max_epochs = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "patience" => self.train.patience = parse(key, v)?,
            "optimizer" => {
                self.train.optimizer = match v {
                    "adam" => Optimizer::ADAM,
                    "sgd" => Optimizer::Sgd,
                    _ => {
                        return Err(ConfigError::Value {
                            key: key.into(),
                            value: v.into(),
                        })
                    }
                }
            }
            "target_loss" => self.train.target_loss = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "out" => self.out = Some(v.into()),
            "sine_points" => self.sine.n_points = parse(key, v)?,
            "sine_step" => self.sine.step = parse(key, v)?,
            "sine_amplitude" => self.sine.amplitude = parse(key, v)?,
            "sine_phase" => self.sine.phase = parse(key, v)?,
            "sine_noise" => self.sine.noise_std = parse(key, v)?,
            "features" => self.features = parse(key, v)?,
            "horizons" => self.horizons = parse_list(key, v)?,
            "threads" => self.threads = parse(key, v)?,
            "repeats" => self.repeats = parse(key, v)?,
            "warmup" => self.warmup = parse(key, v)?,
            "batch" => self.batch = parse(key, v)?,
            "checkpoint" => self.checkpoint = Some(v.into()),
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<(), ConfigError> {
        pairs.iter().try_for_each(|(k, v)| self.set(k, v))
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply(&parse_key_values(&read_text(path)?, &path.display().to_string())?)?;
        Ok(cfg)
    }

    /// The seed drives initialization, batch order and sine noise alike.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn sine_spec(&self) -> SineSpec {
        SineSpec {
            seed: self.seed,
            ..self.sine.clone()
        }
    }

    pub fn horizon(&self) -> Result<usize, ConfigError> {
        match self.horizon {
            Some(0) => Err(ConfigError::Invalid("horizon must be >= 1".into())),
            Some(h) => Ok(h),
            None => Err(ConfigError::Missing("horizon")),
        }
    }

    pub fn window(&self) -> Result<usize, ConfigError> {
        match self.window {
            Some(0) => Err(ConfigError::Invalid("window must be >= 1".into())),
            Some(t) => Ok(t),
            None => self.horizon(),
        }
    }

    pub fn stack_config(&self, horizon: usize, n_features: usize) -> Result<StackConfig, ConfigError> {
        let mut s = StackConfig::new(self.model, self.window()?, horizon, n_features).with_depth(self.depth);
        if let Some(h) = &self.hidden {
            s = s.with_hidden(h.clone());
        }
        s.per_channel = self.per_channel;
        s.widths().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(s)
    }

    /// Default output directory: the `out` key, then `$PURETS_OUT_DIR`, then `runs`.
    pub fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"))
    }

    pub fn registry(&self) -> Result<Registry, ConfigError> {
        let mut reg = match &self.registry {
            Some(p) => Registry::from_file(p)?,
            None => Registry::builtin(),
        };
        if let Some(d) = &self.data_dir {
            reg.data_dir = d.clone();
        }
        Ok(reg)
    }

    /// Loads, splits and normalizes the configured dataset.
    pub fn load_dataset(&self) -> Result<SeriesDataset, DatasetLoadError> {
        let name = self.dataset.as_deref().ok_or(ConfigError::Missing("dataset"))?;
        if name == SINE_DATASET {
            let raw = generate_sine(&self.sine_spec())?;
            let policy = self.split.unwrap_or(SplitPolicy::ratio(6.0, 2.0, 2.0));
            return Ok(split_and_normalize(&raw, &policy)?);
        }
        let reg = self.registry()?;
        let entry = reg.get(name).ok_or_else(|| ConfigError::DatasetNotFound(name.to_string()))?;
        let raw = load_csv(reg.resolve(entry), &entry.schema)?;
        Ok(split_and_normalize(&raw, &self.split.unwrap_or(entry.split))?)
    }
}

#[derive(Debug, Error)]
pub enum DatasetLoadError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistryEntry {
    pub path: PathBuf,
    pub schema: CsvSchema,
    pub split: SplitPolicy,
}

/// Dataset name → file, schema and split policy. Names are matched
/// case-insensitively.
#[derive(Debug, Clone, PartialEq)]
pub struct Registry {
    pub data_dir: PathBuf,
    pub entries: BTreeMap<String, RegistryEntry>,
}

impl Registry {
    /// The public benchmark sets under their usual file names, relative
    /// to `./data`. Files must have a header row.
    pub fn builtin() -> Self {
        let months = |t, v, te, g: &str| SplitPolicy::Months {
            train: t,
            val: v,
            test: te,
            granularity: g.parse().expect("valid granularity"),
        };
        let ratio = |t, v, te| SplitPolicy::ratio(t, v, te);
        let dated = CsvSchema::with_date();
        let plain = CsvSchema::values_only();
        let table = [
            ("etth1", "ETTh1.csv", &dated, months(12, 4, 4, "1h")),
            ("etth2", "ETTh2.csv", &dated, months(12, 4, 4, "1h")),
            ("ettm1", "ETTm1.csv", &dated, months(12, 4, 4, "15min")),
            ("weather", "weather.csv", &dated, months(28, 10, 10, "1h")),
            ("electricity", "electricity.csv", &dated, ratio(7.0, 1.0, 2.0)),
            ("electricity_short", "electricity.csv", &dated, ratio(6.0, 2.0, 2.0)),
            ("solar", "solar_AL.csv", &plain, ratio(6.0, 2.0, 2.0)),
            ("traffic", "traffic.csv", &plain, ratio(6.0, 2.0, 2.0)),
            ("exchange_rate", "exchange_rate.csv", &plain, ratio(6.0, 2.0, 2.0)),
        ];
        let entries = table
            .into_iter()
            .map(|(name, file, schema, split)| {
                (
                    name.to_string(),
                    RegistryEntry {
                        path: file.into(),
                        schema: schema.clone(),
                        split,
                    },
                )
            })
            .collect();
        Self {
            data_dir: PathBuf::from("data"),
            entries,
        }
    }

    /// Built-in entries overlaid with a registry file:
    ///
    /// ```text
    /// data_dir = /srv/ts
    /// etth1.path = ETT-small/ETTh1.csv
    /// mine.path = mine.csv
    /// mine.split = ratio:7/1/2
    /// mine.date_column = false
    /// mine.columns = load,temp
    /// ```
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let mut reg = Self::builtin();
        reg.apply(&parse_key_values(&read_text(path)?, &path.display().to_string())?)?;
        Ok(reg)
    }

    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<(), ConfigError> {
        for (key, value) in pairs {
            if key == "data_dir" {
                self.data_dir = value.into();
                continue;
            }
            let (name, field) = key.split_once('.').ok_or_else(|| ConfigError::UnknownKey(key.clone()))?;
            let bad = || ConfigError::Value {
                key: key.clone(),
                value: value.clone(),
            };
            let entry = self
                .entries
                .entry(name.to_ascii_lowercase())
                .or_insert_with(|| RegistryEntry {
                    path: PathBuf::new(),
                    schema: CsvSchema::with_date(),
                    split: SplitPolicy::ratio(7.0, 1.0, 2.0),
                });
            match field {
                "path" => entry.path = value.into(),
                "split" => entry.split = value.parse().map_err(|_| bad())?,
                "date_column" => entry.schema.date_column = parse_bool(key, value)?,
                "columns" => {
                    entry.schema.value_columns = Some(value.split(',').map(|c| c.trim().to_string()).collect())
                }
                "features" => entry.schema.n_features = Some(parse(key, value)?),
                _ => return Err(ConfigError::UnknownKey(key.clone())),
            }
        }
        if let Some((name, _)) = self.entries.iter().find(|(_, e)| e.path.as_os_str().is_empty()) {
            return Err(ConfigError::Invalid(format!("registry entry {name} has no path")));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&RegistryEntry> {
        self.entries.get(&name.to_ascii_lowercase())
    }

    pub fn resolve(&self, entry: &RegistryEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.data_dir.join(&entry.path)
        }
    }
}
