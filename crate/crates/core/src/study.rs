//! Synthetic sine study: how a linear stack fits `sin x` as the horizon,
//! depth and activation change.
//!
//! Five conditions, all with a 64-step input window:
//!
//! 1. one-step horizon, one linear layer
//! 2. 64-step horizon, two linear layers (the reference)
//! 3. 256-step horizon, two linear layers
//! 4. 64-step horizon, one linear layer
//! 5. 64-step horizon, two layers with a sigmoid between them

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{generate_sine, make_windows, split_and_normalize, SineSpec, Split, SplitPolicy};
use crate::metrics::{mse, MetricReport};
use crate::model::{LinearStack, ModelKind, StackConfig};
use crate::plot::{emit_line_plot, PlotError};
use crate::rng::RandomSource;
use crate::tensor::Tensor3;
use crate::train::{predict_split, train, write_prediction_csv, ConvergenceTrace, TrainConfig, TrainError};

pub const STUDY_WINDOW: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub id: u8,
    pub name: String,
    pub horizon: usize,
    pub depth: usize,
    pub kind: ModelKind,
}

pub fn conditions() -> Vec<Condition> {
    let c = |id, name: &str, horizon, depth, kind| Condition {
        id,
        name: name.into(),
        horizon,
        depth,
        kind,
    };
    vec![
        c(1, "one_step_linear", 1, 1, ModelKind::PureTs),
        c(2, "h64_two_layer_linear", 64, 2, ModelKind::PureTs),
        c(3, "h256_two_layer_linear", 256, 2, ModelKind::PureTs),
        c(4, "h64_one_layer_linear", 64, 1, ModelKind::PureTs),
        c(5, "h64_two_layer_sigmoid", 64, 2, ModelKind::SigmoidMlp),
    ]
}

/// Settings shared by every condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub sine: SineSpec,
    pub split: SplitPolicy,
    pub window: usize,
    pub train: TrainConfig,
    /// Seed for parameter initialization.
    pub init_seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            sine: SineSpec::default(),
            split: SplitPolicy::ratio(6.0, 2.0, 2.0),
            window: STUDY_WINDOW,
            train: TrainConfig::default(),
            init_seed: 0,
        }
    }
}

impl StudyConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.init_seed = seed;
        self.train.seed = seed;
        self
    }
}

#[derive(Debug, Clone)]
pub struct ConditionResult {
    pub condition: Condition,
    pub model: LinearStack,
    pub metrics: MetricReport,
    /// Test MSE of always predicting the train-split mean (zero after
    /// normalization).
    pub mean_predictor_mse: f64,
    pub trace: ConvergenceTrace,
    pub predictions: Tensor3,
    pub truth: Tensor3,
}

/// Trains and scores one condition on the normalized sine series.
pub fn run_condition(condition: &Condition, cfg: &StudyConfig) -> Result<ConditionResult, TrainError> {
    let ds = split_and_normalize(&generate_sine(&cfg.sine)?, &cfg.split)?;
    let stack = StackConfig::new(condition.kind, cfg.window, condition.horizon, 1).with_depth(condition.depth);
    let model = stack.build(&mut RandomSource::new(cfg.init_seed))?;
    let outcome = train(model, &ds, &cfg.train)?;
    let test = make_windows(&ds, Split::Test, cfg.window, condition.horizon, 1)?;
    let (predictions, truth) = predict_split(&outcome.model, &test, 256)?;
    let metrics = MetricReport::compute(&predictions, &truth).map_err(|e| TrainError::Config(e.to_string()))?;
    let train_mean = 0.0;
    let mean_predictor_mse = mse(&Tensor3::filled(truth.batch(), truth.axis1(), truth.axis2(), train_mean), &truth)
        .map_err(|e| TrainError::Config(e.to_string()))?;
    Ok(ConditionResult {
        condition: condition.clone(),
        model: outcome.model,
        metrics,
        mean_predictor_mse,
        trace: outcome.trace,
        predictions,
        truth,
    })
}

pub fn run_all(cfg: &StudyConfig) -> Result<Vec<ConditionResult>, TrainError> {
    conditions().iter().map(|c| run_condition(c, cfg)).collect()
}

#[derive(Debug, thiserror::Error)]
pub enum StudyError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Plot(#[from] PlotError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: Condition,
    pub metrics: MetricReport,
    pub mean_predictor_mse: f64,
    pub epochs: usize,
    pub final_train_loss: f64,
    pub best_val_loss: f64,
}

impl From<&ConditionResult> for ConditionSummary {
    fn from(r: &ConditionResult) -> Self {
        Self {
            condition: r.condition.clone(),
            metrics: r.metrics.clone(),
            mean_predictor_mse: r.mean_predictor_mse,
            epochs: r.trace.len(),
            final_train_loss: r.trace.train_loss.last().copied().unwrap_or(f64::NAN),
            best_val_loss: r.trace.best_val().unwrap_or(f64::NAN),
        }
    }
}

/// Writes per-condition predictions, traces and plots plus a combined
/// convergence plot and `summary.json`.
pub fn write_artifacts(results: &[ConditionResult], dir: &Path) -> Result<(), StudyError> {
    std::fs::create_dir_all(dir)?;
    for r in results {
        let stem = format!("condition{}_{}", r.condition.id, r.condition.name);
        write_prediction_csv(dir.join(format!("{stem}_predictions.csv")), &r.predictions, &r.truth, 0)?;
        r.trace.write_csv(dir.join(format!("{stem}_trace.csv")))?;
        let (pred, truth) = overlay_series(r);
        emit_line_plot(
            &[truth, pred],
            &["truth", "prediction"],
            &format!("condition {}: {}", r.condition.id, r.condition.name),
            dir.join(format!("{stem}.svg")),
        )?;
    }
    let longest = results.iter().map(|r| r.trace.len()).max().unwrap_or(0);
    if longest > 0 {
        // Pad shorter traces with their final value so every line spans the axis.
        let curves: Vec<Vec<f64>> = results
            .iter()
            .map(|r| {
                let mut v: Vec<f64> = r.trace.train_loss.iter().map(|l| l.max(1e-30).log10()).collect();
                let last = *v.last().unwrap_or(&0.0);
                v.resize(longest, last);
                v
            })
            .collect();
        let labels: Vec<String> = results.iter().map(|r| format!("({}) {}", r.condition.id, r.condition.name)).collect();
        let label_refs: Vec<&str> = labels.iter().map(String::as_str).collect();
        emit_line_plot(&curves, &label_refs, "log10 train loss per epoch", dir.join("convergence.svg"))?;
    }
    let summary: Vec<ConditionSummary> = results.iter().map(ConditionSummary::from).collect();
    crate::fsio::write_atomic(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("serializes").as_bytes(),
    )?;
    Ok(())
}

/// A continuous stretch of the test split: one-step conditions chain
/// consecutive windows, longer horizons show the first window.
fn overlay_series(r: &ConditionResult) -> (Vec<f64>, Vec<f64>) {
    if r.truth.axis1() == 1 {
        let n = r.truth.batch().min(256);
        (
            (0..n).map(|b| r.predictions.get(b, 0, 0)).collect(),
            (0..n).map(|b| r.truth.get(b, 0, 0)).collect(),
        )
    } else {
        (
            (0..r.truth.axis1()).map(|t| r.predictions.get(0, t, 0)).collect(),
            (0..r.truth.axis1()).map(|t| r.truth.get(0, t, 0)).collect(),
        )
    }
}
