//! Command implementations behind the `purets` binary.
//!
//! Each command takes a resolved [`RunConfig`], writes its artifacts into
//! the output directory and returns a short human-readable summary.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::checkpoint::{self, CheckpointError};
use crate::config::{ConfigError, DatasetLoadError, RunConfig};
use crate::data::{make_windows, DataError, SeriesDataset, Split};
use crate::fsio::write_atomic;
use crate::metrics::{MetricError, MetricReport, OVER_FLUCTUATION_THRESHOLD};
use crate::model::{LinearStack, ModelError};
use crate::profile::{benchmark_inference, ProfileError, ProfileReport};
use crate::rng::RandomSource;
use crate::study::{self, StudyConfig, StudyError};
use crate::train::{predict_split, train, write_prediction_csv, TrainError};

/// Window used by `profile` when none is configured.
pub const PROFILE_WINDOW: usize = 336;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or usage; exit code 2.
    #[error("{0}")]
    Config(String),
    /// Anything that went wrong while running; exit code 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::TooShort { .. } | DataError::Split(_) | DataError::Invalid(_) => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<DatasetLoadError> for CliError {
    fn from(e: DatasetLoadError) -> Self {
        match e {
            DatasetLoadError::Config(e) => e.into(),
            DatasetLoadError::Data(e) => e.into(),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidConfig(_) | ModelError::Unsupported(_) | ModelError::EmptyStack => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Config(e.to_string()),
            TrainError::Data(d) => d.into(),
            TrainError::Model(m) => m.into(),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Runtime(e.to_string())
            }
        }
    )*};
}

runtime_from!(std::io::Error, MetricError, CheckpointError, StudyError);

impl From<ProfileError> for CliError {
    fn from(e: ProfileError) -> Self {
        match e {
            ProfileError::Model(m) => m.into(),
            _ => CliError::Config(e.to_string()),
        }
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn metric_line(m: &MetricReport) -> String {
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.6}"));
    let mut s = format!(
        "mse {:.6}  mae {:.6}  rse {}  corr {}  fluctuation {}  peak {}",
        m.mse,
        m.mae,
        opt(m.rse),
        opt(m.corr),
        opt(m.fluctuation_index),
        opt(m.peak_amplitude_ratio)
    );
    if m.is_over_fluctuating() {
        let _ = write!(s, "  [over-fluctuating: > {OVER_FLUCTUATION_THRESHOLD}]");
    }
    s
}

/// Test-split forecasts and metrics; also writes `metrics.json` and
/// `predictions.csv` into `dir`.
fn score_test_split(model: &LinearStack, ds: &SeriesDataset, dir: &Path) -> Result<MetricReport, CliError> {
    let test = make_windows(ds, Split::Test, model.input_window(), model.horizon(), 1)?;
    let (pred, truth) = predict_split(model, &test, 256)?;
    let report = MetricReport::compute(&pred, &truth)?;
    let mut json = report.to_json();
    json.push('\n');
    write_atomic(dir.join("metrics.json"), json.as_bytes())?;
    write_prediction_csv(dir.join("predictions.csv"), &pred, &truth, 0)?;
    Ok(report)
}

/// Trains a model and writes `model.ckpt`, `trace.csv`, `metrics.json`
/// and `predictions.csv`.
pub fn cmd_train(cfg: &RunConfig) -> Result<String, CliError> {
    let ds = cfg.load_dataset()?;
    let stack = cfg.stack_config(cfg.horizon()?, ds.n_features())?;
    let model = stack.build(&mut RandomSource::new(cfg.seed))?;
    let outcome = train(model, &ds, &cfg.train_config())?;
    let dir = cfg.out_dir();
    create_dir(&dir)?;
    let meta = serde_json::json!({ "run": cfg, "stack": stack });
    checkpoint::save(dir.join("model.ckpt"), &outcome.model, &meta)?;
    outcome.trace.write_csv(dir.join("trace.csv"))?;
    let report = score_test_split(&outcome.model, &ds, &dir)?;
    Ok(format!(
        "trained {} on {} for {} epochs (best {}{})\ntest {}\nwrote {}",
        stack.kind.as_str(),
        ds.name,
        outcome.trace.len(),
        outcome.best_epoch,
        if outcome.stopped_early { ", stopped early" } else { "" },
        metric_line(&report),
        dir.display()
    ))
}

/// Scores a saved checkpoint on the configured dataset's test split.
pub fn cmd_eval(cfg: &RunConfig) -> Result<String, CliError> {
    let path = cfg.checkpoint.as_ref().ok_or(ConfigError::Missing("checkpoint"))?;
    let (model, _) = checkpoint::load(path)?;
    let ds = cfg.load_dataset()?;
    if ds.n_features() != model.n_features() {
        return Err(CliError::Config(format!(
            "checkpoint expects {} channels, dataset {} has {}",
            model.n_features(),
            ds.name,
            ds.n_features()
        )));
    }
    let dir = cfg.out_dir();
    create_dir(&dir)?;
    let report = score_test_split(&model, &ds, &dir)?;
    Ok(format!("test {}\nwrote {}", metric_line(&report), dir.display()))
}

#[derive(Debug, Clone, Serialize)]
pub struct ProfileRow {
    pub horizon: usize,
    pub report: ProfileReport,
    /// Test MSE when a dataset was configured.
    pub mse: Option<f64>,
}

/// Counts and times one model per horizon; trains each when a dataset is
/// configured. Writes `profile.json` and `scatter.csv`.
pub fn cmd_profile(cfg: &RunConfig) -> Result<Vec<ProfileRow>, CliError> {
    let ds = match cfg.dataset {
        Some(_) => Some(cfg.load_dataset()?),
        None => None,
    };
    let n = ds.as_ref().map_or(cfg.features, SeriesDataset::n_features);
    if cfg.horizons.is_empty() {
        return Err(CliError::Config("horizons must not be empty".into()));
    }
    let mut run = cfg.clone();
    run.window = Some(cfg.window.unwrap_or(PROFILE_WINDOW));
    let dir = cfg.out_dir();
    create_dir(&dir)?;
    let mut rows = Vec::new();
    for &h in &cfg.horizons {
        if h == 0 {
            return Err(CliError::Config("horizons must be >= 1".into()));
        }
        let model = run.stack_config(h, n)?.build(&mut RandomSource::new(cfg.seed))?;
        let mse = match &ds {
            Some(ds) => {
                let trained = train(model.clone(), ds, &cfg.train_config())?.model;
                let test = make_windows(ds, Split::Test, trained.input_window(), h, 1)?;
                let (pred, truth) = predict_split(&trained, &test, 256)?;
                Some(crate::metrics::mse(&pred, &truth)?)
            }
            None => None,
        };
        let report = benchmark_inference(&model, cfg.batch, cfg.repeats, cfg.warmup, cfg.threads)?;
        rows.push(ProfileRow { horizon: h, report, mse });
    }
    let mut csv = String::from("horizon,parameters,macs,latency_seconds,mse\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{:e},{}",
            r.horizon,
            r.report.parameter_count,
            r.report.mac_count,
            r.report.mean_latency,
            r.mse.map_or(String::new(), |m| m.to_string())
        );
    }
    write_atomic(dir.join("scatter.csv"), csv.as_bytes())?;
    write_json(&dir.join("profile.json"), &rows)?;
    Ok(rows)
}

pub fn format_profile(rows: &[ProfileRow]) -> String {
    let mut s = String::from("horizon  parameters        MACs  latency(ms)  mse\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{:>7}  {:>10}  {:>10}  {:>11.4}  {}",
            r.horizon,
            r.report.parameter_count,
            r.report.mac_count,
            r.report.mean_latency * 1e3,
            r.mse.map_or("-".to_string(), |m| format!("{m:.6}"))
        );
    }
    s
}

/// Runs the five-condition sine study.
pub fn cmd_figure3(cfg: &RunConfig) -> Result<String, CliError> {
    let study_cfg = StudyConfig {
        sine: cfg.sine_spec(),
        split: cfg.split.unwrap_or(StudyConfig::default().split),
        window: cfg.window.unwrap_or(study::STUDY_WINDOW),
        train: cfg.train_config(),
        init_seed: cfg.seed,
    };
    let results = study::run_all(&study_cfg)?;
    let dir = cfg.out_dir();
    study::write_artifacts(&results, &dir)?;
    let mut s = String::new();
    for r in &results {
        let _ = writeln!(s, "({}) {}: {}", r.condition.id, r.condition.name, metric_line(&r.metrics));
    }
    let _ = write!(s, "wrote {}", dir.display());
    Ok(s)
}

/// Times inference for one model, from a checkpoint when given.
pub fn cmd_bench(cfg: &RunConfig) -> Result<ProfileReport, CliError> {
    let model = match &cfg.checkpoint {
        Some(p) => checkpoint::load(p)?.0,
        None => {
            let n = match cfg.dataset {
                Some(_) => cfg.load_dataset()?.n_features(),
                None => cfg.features,
            };
            cfg.stack_config(cfg.horizon()?, n)?.build(&mut RandomSource::new(cfg.seed))?
        }
    };
    let report = benchmark_inference(&model, cfg.batch, cfg.repeats, cfg.warmup, cfg.threads)?;
    let dir = cfg.out_dir();
    create_dir(&dir)?;
    write_json(&dir.join("bench.json"), &report)?;
    Ok(report)
}
