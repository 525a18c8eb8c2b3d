//! Mini-batch training with MSE loss, SGD or Adam, early stopping on the
//! validation split and restoration of the best-validation parameters.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use log::debug;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{make_windows, DataError, SeriesDataset, Split, WindowSet};
use crate::fsio;
use crate::model::{LinearStack, ModelError};
use crate::rng::RandomSource;
use crate::tensor::{ShapeError, Tensor3};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("loss diverged at epoch {epoch}: {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    pub const ADAM: Optimizer = Optimizer::Adam {
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Stop as soon as validation loss is at or below this value.
    #[serde(default)]
    pub target_loss: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            max_epochs: 100,
            batch_size: 32,
            patience: 10,
            seed: 0,
            optimizer: Optimizer::ADAM,
            target_loss: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be >= 1".into()));
        }
        if self.patience == 0 {
            return Err(TrainError::Config("patience must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(TrainError::Config("max_epochs must be >= 1".into()));
        }
        if let Optimizer::Adam {
            beta1,
            beta2,
            epsilon,
        } = self.optimizer
        {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(epsilon > 0.0) {
                return Err(TrainError::Config(format!(
                    "bad Adam settings beta1={beta1} beta2={beta2} epsilon={epsilon}"
                )));
            }
        }
        Ok(())
    }
}

/// Mean squared error and its gradient `2 (pred − target) / count`.
pub fn mse_loss(pred: &Tensor3, target: &Tensor3) -> Result<(f64, Tensor3), ShapeError> {
    pred.check_same_shape(target)?;
    let count = pred.len() as f64;
    let mut grad = pred.clone();
    let mut sum = 0.0;
    for (g, t) in grad.data_mut().iter_mut().zip(target.data()) {
        let d = *g - t;
        sum += d * d;
        *g = 2.0 * d / count;
    }
    Ok((sum / count, grad))
}

/// First and second moment estimates for Adam, one buffer per parameter
/// buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(shapes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = shapes
            .into_iter()
            .map(|n| (vec![0.0; n], vec![0.0; n]))
            .unzip();
        Self { m, v, step: 0 }
    }
}

/// One bias-corrected Adam update over matching parameter and gradient
/// buffers.
pub fn adam_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
) {
    assert_eq!(params.len(), grads.len(), "parameter/gradient buffer count");
    assert_eq!(params.len(), state.m.len(), "parameter/state buffer count");
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        assert_eq!(p.len(), g.len());
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
}

pub fn sgd_step(params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) {
    for (p, g) in params.iter_mut().zip(grads) {
        for (pi, gi) in p.iter_mut().zip(g.iter()) {
            *pi -= lr * gi;
        }
    }
}

/// Per-epoch losses. `seconds` is wall-clock time since training started.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub seconds: Vec<f64>,
}

impl ConvergenceTrace {
    pub fn len(&self) -> usize {
        self.train_loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train_loss.is_empty()
    }

    pub fn best_val(&self) -> Option<f64> {
        self.val_loss.iter().copied().reduce(f64::min)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,seconds\n");
        for i in 0..self.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                i + 1,
                self.train_loss[i],
                self.val_loss[i],
                self.seconds[i]
            ));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        fsio::write_atomic(path, self.to_csv().as_bytes())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: LinearStack,
    pub trace: ConvergenceTrace,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Forecasts for every window of a split, batched, alongside the truth.
pub fn predict_split(
    model: &LinearStack,
    windows: &WindowSet<'_>,
    batch_size: usize,
) -> Result<(Tensor3, Tensor3), TrainError> {
    let mut preds = Vec::new();
    let mut truths = Vec::new();
    for batch in windows.batches(batch_size.max(1)) {
        preds.push(model.forward(&batch.inputs)?);
        truths.push(batch.targets);
    }
    Ok((Tensor3::concat_batch(&preds)?, Tensor3::concat_batch(&truths)?))
}

/// MSE over all windows of a split, on the normalized scale.
pub fn evaluate_loss(model: &LinearStack, windows: &WindowSet<'_>) -> Result<f64, TrainError> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for batch in windows.batches(256) {
        let pred = model.forward(&batch.inputs)?;
        let (loss, _) = mse_loss(&pred, &batch.targets)?;
        sum += loss * batch.targets.len() as f64;
        count += batch.targets.len();
    }
    Ok(sum / count as f64)
}

/// Trains `model` on the dataset's train split, monitoring the validation
/// split.
pub fn train(
    model: LinearStack,
    dataset: &SeriesDataset,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if dataset.n_features() != model.n_features() {
        return Err(TrainError::Config(format!(
            "model expects {} channels, dataset has {}",
            model.n_features(),
            dataset.n_features()
        )));
    }
    let (window, horizon) = (model.input_window(), model.horizon());
    let train_w = make_windows(dataset, Split::Train, window, horizon, 1)?;
    let val_w = make_windows(dataset, Split::Val, window, horizon, 1)?;

    let mut model = model;
    let mut rng = RandomSource::new(config.seed);
    let mut adam = AdamState::new(model.param_buffers().iter().map(|b| b.len()));
    let mut order: Vec<usize> = (0..train_w.len()).collect();
    let mut trace = ConvergenceTrace::default();
    let mut best = (f64::INFINITY, model.clone(), 0usize);
    let mut stale = 0usize;
    let mut stopped_early = false;
    let start = Instant::now();

    for epoch in 1..=config.max_epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch = train_w.batch(chunk);
            let (pred, cache) = match model.forward_cached(&batch.inputs) {
                Ok(v) => v,
                Err(ModelError::NonFinite { .. }) => {
                    return Err(TrainError::Diverged {
                        epoch,
                        loss: f64::NAN,
                    })
                }
                Err(e) => return Err(e.into()),
            };
            let (loss, grad_out) = mse_loss(&pred, &batch.targets)?;
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch, loss });
            }
            let grads = model.backward_cached(&cache, &grad_out)?;
            let grad_bufs = grads.buffers();
            let mut params = model.param_buffers_mut();
            match config.optimizer {
                Optimizer::Sgd => sgd_step(&mut params, &grad_bufs, config.learning_rate),
                Optimizer::Adam {
                    beta1,
                    beta2,
                    epsilon,
                } => adam_step(
                    &mut params,
                    &grad_bufs,
                    &mut adam,
                    config.learning_rate,
                    beta1,
                    beta2,
                    epsilon,
                ),
            }
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let train_loss = loss_sum / seen as f64;
        let val_loss = match evaluate_loss(&model, &val_w) {
            Ok(v) if v.is_finite() => v,
            Ok(v) => return Err(TrainError::Diverged { epoch, loss: v }),
            Err(TrainError::Model(ModelError::NonFinite { .. })) => {
                return Err(TrainError::Diverged {
                    epoch,
                    loss: f64::NAN,
                })
            }
            Err(e) => return Err(e),
        };
        trace.train_loss.push(train_loss);
        trace.val_loss.push(val_loss);
        trace.seconds.push(start.elapsed().as_secs_f64());
        debug!("epoch {epoch}: train {train_loss:.6e} val {val_loss:.6e}");

        if val_loss < best.0 {
            best = (val_loss, model.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
        }
        if val_loss <= config.target_loss {
            stopped_early = epoch < config.max_epochs;
            break;
        }
        if stale >= config.patience {
            stopped_early = true;
            break;
        }
    }

    let (_, best_model, best_epoch) = best;
    Ok(TrainOutcome {
        model: best_model,
        trace,
        best_epoch,
        stopped_early,
    })
}

/// Writes the first window's forecast next to the truth as CSV
/// (`step,channel,prediction,truth`).
pub fn write_prediction_csv(
    path: impl AsRef<Path>,
    pred: &Tensor3,
    truth: &Tensor3,
    window: usize,
) -> std::io::Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "step,channel,prediction,truth")?;
    for t in 0..truth.axis1() {
        for c in 0..truth.axis2() {
            writeln!(buf, "{},{},{},{}", t, c, pred.get(window, t, c), truth.get(window, t, c))?;
        }
    }
    fsio::write_atomic(path, &buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split_and_normalize, SplitPolicy};
    use crate::model::{ModelKind, StackConfig};
    use crate::tensor::Tensor2;

    #[test]
    fn mse_loss_hand_case() {
        let p = Tensor3::from_vec(1, 2, 1, vec![0.0, 2.0]).unwrap();
        let y = Tensor3::from_vec(1, 2, 1, vec![1.0, 1.0]).unwrap();
        let (loss, grad) = mse_loss(&p, &y).unwrap();
        assert_eq!(loss, 1.0);
        assert_eq!(grad.data(), &[-1.0, 1.0]);
        let (loss, grad) = mse_loss(&y, &y).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));
        assert!(mse_loss(&y, &Tensor3::zeros(1, 3, 1)).is_err());
    }

    #[test]
    fn mse_loss_matches_loop() {
        let mut rng = RandomSource::new(1);
        let p = Tensor3::from_vec(3, 4, 2, (0..24).map(|_| rng.normal(0.0, 1.0)).collect()).unwrap();
        let y = Tensor3::from_vec(3, 4, 2, (0..24).map(|_| rng.normal(0.0, 1.0)).collect()).unwrap();
        let (loss, _) = mse_loss(&p, &y).unwrap();
        let mut s = 0.0;
        for b in 0..3 {
            for t in 0..4 {
                for c in 0..2 {
                    s += (p.get(b, t, c) - y.get(b, t, c)).powi(2);
                }
            }
        }
        assert!((loss - s / 24.0).abs() < 1e-12);
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let mut p = vec![1.5, -2.0];
        let g = vec![0.0, 0.0];
        let mut st = AdamState::new([2]);
        for _ in 0..5 {
            adam_step(&mut [&mut p[..]], &[&g[..]], &mut st, 0.1, 0.9, 0.999, 1e-8);
        }
        assert_eq!(p, vec![1.5, -2.0]);
    }

    #[test]
    fn adam_first_step_scalar() {
        // m̂ = g = 1 and v̂ = g² = 1 after bias correction.
        let mut p = vec![0.0];
        let mut st = AdamState::new([1]);
        adam_step(&mut [&mut p[..]], &[&[1.0][..]], &mut st, 0.1, 0.9, 0.999, 1e-8);
        let m_hat = (0.1 * 1.0) / (1.0 - 0.9);
        let v_hat = (0.001 * 1.0) / (1.0 - 0.999);
        let expected = -0.1 * m_hat / (f64::sqrt(v_hat) + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
        assert!((p[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut w = vec![1.0];
        let mut st = AdamState::new([1]);
        for _ in 0..1000 {
            let g = [2.0 * w[0]];
            adam_step(&mut [&mut w[..]], &[&g[..]], &mut st, 0.05, 0.9, 0.999, 1e-8);
        }
        assert!(w[0].abs() < 1e-3, "{}", w[0]);
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            TrainConfig { learning_rate: 0.0, ..ok.clone() },
            TrainConfig { batch_size: 0, ..ok.clone() },
            TrainConfig { patience: 0, ..ok.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(TrainError::Config(_))));
        }
    }

    fn periodic_dataset(period: usize, rows: usize) -> SeriesDataset {
        let data = (0..rows).map(|i| ((i % period) as f64 * 1.3).sin() + 0.1 * (i % period) as f64).collect();
        let ds = SeriesDataset::from_values("periodic", vec!["x".into()], Tensor2::from_vec(rows, 1, data).unwrap()).unwrap();
        split_and_normalize(&ds, &SplitPolicy::ratio(6.0, 2.0, 2.0)).unwrap()
    }

    #[test]
    fn identity_task_stops_immediately() {
        // With period T, each target window repeats its input window.
        let ds = periodic_dataset(8, 400);
        let model = LinearStack::from_affine(Tensor2::identity(8), vec![0.0; 8], 1).unwrap();
        let out = train(model.clone(), &ds, &TrainConfig::default()).unwrap();
        assert_eq!(out.trace.len(), 1);
        assert!(out.trace.train_loss[0] < 1e-20);
        assert!(out.stopped_early);
        assert_eq!(out.model, model);
    }

    #[test]
    fn sgd_small_step_descends() {
        let ds = periodic_dataset(13, 400);
        let mut rng = RandomSource::new(3);
        let mut model = StackConfig::new(ModelKind::PureTs, 8, 4, 1).build(&mut rng).unwrap();
        let w = make_windows(&ds, Split::Train, 8, 4, 1).unwrap();
        let batch = w.batch(&(0..32).collect::<Vec<_>>());
        let (pred, cache) = model.forward_cached(&batch.inputs).unwrap();
        let (before, go) = mse_loss(&pred, &batch.targets).unwrap();
        let grads = model.backward_cached(&cache, &go).unwrap();
        assert!(grads.max_abs() > 0.0);
        sgd_step(&mut model.param_buffers_mut(), &grads.buffers(), 1e-6);
        let (after, _) = mse_loss(&model.forward(&batch.inputs).unwrap(), &batch.targets).unwrap();
        assert!(after < before, "{after} >= {before}");
    }

    #[test]
    fn training_is_deterministic_and_restores_best() {
        let ds = periodic_dataset(13, 600);
        let cfg = StackConfig::new(ModelKind::PureTsS, 16, 4, 1);
        let tc = TrainConfig {
            max_epochs: 8,
            seed: 5,
            learning_rate: 5e-3,
            ..TrainConfig::default()
        };
        let run = || {
            let m = cfg.build(&mut RandomSource::new(1)).unwrap();
            train(m, &ds, &tc).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.model, b.model);
        assert_eq!(a.trace.train_loss, b.trace.train_loss);
        assert_eq!(a.trace.val_loss, b.trace.val_loss);

        let val_w = make_windows(&ds, Split::Val, 16, 4, 1).unwrap();
        let final_val = evaluate_loss(&a.model, &val_w).unwrap();
        for v in &a.trace.val_loss {
            assert!(final_val <= *v);
        }
    }

    #[test]
    fn rejects_empty_split_and_channel_mismatch() {
        let ds = periodic_dataset(8, 40);
        let m = StackConfig::new(ModelKind::PureTs, 16, 8, 1).build_zeroed().unwrap();
        assert!(matches!(
            train(m, &ds, &TrainConfig::default()),
            Err(TrainError::Data(DataError::TooShort { .. }))
        ));
        let m = StackConfig::new(ModelKind::PureTs, 4, 2, 3).build_zeroed().unwrap();
        assert!(matches!(
            train(m, &ds, &TrainConfig::default()),
            Err(TrainError::Config(_))
        ));
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let ds = periodic_dataset(13, 400);
        let m = StackConfig::new(ModelKind::PureTs, 8, 4, 1)
            .build(&mut RandomSource::new(2))
            .unwrap();
        let tc = TrainConfig {
            optimizer: Optimizer::Sgd,
            learning_rate: 1e6,
            ..TrainConfig::default()
        };
        match train(m, &ds, &tc) {
            Err(TrainError::Diverged { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn trace_csv_layout() {
        let t = ConvergenceTrace {
            train_loss: vec![1.0, 0.5],
            val_loss: vec![2.0, 1.0],
            seconds: vec![0.1, 0.2],
        };
        let csv = t.to_csv();
        assert!(csv.starts_with("epoch,train_loss,val_loss,seconds\n1,1,2,0.1\n"));
        assert_eq!(t.best_val(), Some(1.0));
    }
}
