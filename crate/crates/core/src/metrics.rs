//! Forecast accuracy metrics and over-fluctuation diagnostics.
//!
//! All functions take predictions and ground truth shaped `(windows,
//! horizon, channels)`. MSE/MAE are the long-horizon benchmark metrics,
//! RSE/CORR the short-horizon ones.

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{ShapeError, Tensor3};

/// Fluctuation index above which summaries label a forecast
/// over-fluctuating.
pub const OVER_FLUCTUATION_THRESHOLD: f64 = 1.15;

pub const DEFAULT_PEAK_QUANTILE: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("no samples")]
    Empty,
    #[error("degenerate input: {0}")]
    Degenerate(&'static str),
    #[error("quantile must lie in (0, 1), got {0}")]
    Quantile(f64),
}

fn check(pred: &Tensor3, truth: &Tensor3) -> Result<(), MetricError> {
    pred.check_same_shape(truth)?;
    if truth.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

pub fn mse(pred: &Tensor3, truth: &Tensor3) -> Result<f64, MetricError> {
    check(pred, truth)?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(truth.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / truth.len() as f64)
}

pub fn mae(pred: &Tensor3, truth: &Tensor3) -> Result<f64, MetricError> {
    check(pred, truth)?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(truth.data())
        .map(|(p, t)| (p - t).abs())
        .sum();
    Ok(sum / truth.len() as f64)
}

/// Root relative squared error against the grand mean of `truth`.
pub fn rse(pred: &Tensor3, truth: &Tensor3) -> Result<f64, MetricError> {
    check(pred, truth)?;
    let n = truth.len() as f64;
    let mean = truth.data().iter().sum::<f64>() / n;
    let den: f64 = truth.data().iter().map(|t| (t - mean) * (t - mean)).sum();
    if den == 0.0 {
        return Err(MetricError::Degenerate("ground truth is constant"));
    }
    let num: f64 = pred
        .data()
        .iter()
        .zip(truth.data())
        .map(|(p, t)| (t - p) * (t - p))
        .sum();
    Ok(num.sqrt() / den.sqrt())
}

/// Pearson correlation per channel over every (window, step) position,
/// averaged over channels. Channels where either side has zero variance
/// are left out of the average.
pub fn corr(pred: &Tensor3, truth: &Tensor3) -> Result<f64, MetricError> {
    check(pred, truth)?;
    let n = truth.axis2();
    let m = (truth.batch() * truth.axis1()) as f64;
    let mut p_mean = vec![0.0; n];
    let mut t_mean = vec![0.0; n];
    for (i, (p, t)) in pred.data().iter().zip(truth.data()).enumerate() {
        p_mean[i % n] += p;
        t_mean[i % n] += t;
    }
    p_mean.iter_mut().for_each(|v| *v /= m);
    t_mean.iter_mut().for_each(|v| *v /= m);
    let mut cov = vec![0.0; n];
    let mut p_var = vec![0.0; n];
    let mut t_var = vec![0.0; n];
    for (i, (p, t)) in pred.data().iter().zip(truth.data()).enumerate() {
        let c = i % n;
        let dp = p - p_mean[c];
        let dt = t - t_mean[c];
        cov[c] += dp * dt;
        p_var[c] += dp * dp;
        t_var[c] += dt * dt;
    }
    let mut total = 0.0;
    let mut used = 0usize;
    for c in 0..n {
        if p_var[c] == 0.0 || t_var[c] == 0.0 {
            warn!("corr: channel {c} has zero variance; skipped");
            continue;
        }
        total += (cov[c] / (p_var[c].sqrt() * t_var[c].sqrt())).clamp(-1.0, 1.0);
        used += 1;
    }
    if used == 0 {
        return Err(MetricError::Degenerate("every channel has zero variance"));
    }
    Ok(total / used as f64)
}

fn total_variation(values: impl Iterator<Item = f64>) -> f64 {
    let mut prev: Option<f64> = None;
    let mut tv = 0.0;
    for v in values {
        if let Some(p) = prev {
            tv += (v - p).abs();
        }
        prev = Some(v);
    }
    tv
}

/// Mean over windows and channels of `TV(pred) / TV(truth)`, where `TV` is
/// the summed absolute step-to-step change along the horizon. Values above
/// 1 mean the forecast moves more than the truth does.
pub fn fluctuation_index(pred: &Tensor3, truth: &Tensor3) -> Result<f64, MetricError> {
    check(pred, truth)?;
    let (nb, horizon, n) = truth.shape();
    if horizon < 2 {
        return Err(MetricError::Degenerate("horizon shorter than 2 steps"));
    }
    let mut total = 0.0;
    let mut used = 0usize;
    for b in 0..nb {
        for c in 0..n {
            let tv_truth = total_variation((0..horizon).map(|t| truth.get(b, t, c)));
            if tv_truth == 0.0 {
                continue;
            }
            let tv_pred = total_variation((0..horizon).map(|t| pred.get(b, t, c)));
            total += tv_pred / tv_truth;
            used += 1;
        }
    }
    if used == 0 {
        return Err(MetricError::Degenerate("ground truth is flat in every window"));
    }
    Ok(total / used as f64)
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Mean `|pred|` over the positions where `|truth|` reaches its
/// `quantile`, divided by mean `|truth|` there. Below 1 means peaks are
/// under-fitted.
pub fn peak_amplitude_ratio(pred: &Tensor3, truth: &Tensor3, quantile: f64) -> Result<f64, MetricError> {
    check(pred, truth)?;
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(MetricError::Quantile(quantile));
    }
    let mut mags: Vec<f64> = truth.data().iter().map(|t| t.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let threshold = quantile_sorted(&mags, quantile);
    let mut p_sum = 0.0;
    let mut t_sum = 0.0;
    let mut count = 0usize;
    for (p, t) in pred.data().iter().zip(truth.data()) {
        if t.abs() >= threshold {
            p_sum += p.abs();
            t_sum += t.abs();
            count += 1;
        }
    }
    if count == 0 || t_sum == 0.0 {
        return Err(MetricError::Degenerate("no peak points above the quantile"));
    }
    Ok(p_sum / t_sum)
}

/// Every metric for one evaluation run. Metrics that are undefined for the
/// data (for example fluctuation on a one-step horizon) are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mse: f64,
    pub mae: f64,
    pub rse: Option<f64>,
    pub corr: Option<f64>,
    pub fluctuation_index: Option<f64>,
    pub peak_amplitude_ratio: Option<f64>,
    pub n_samples: usize,
}

impl MetricReport {
    pub fn compute(pred: &Tensor3, truth: &Tensor3) -> Result<Self, MetricError> {
        Self::compute_with_quantile(pred, truth, DEFAULT_PEAK_QUANTILE)
    }

    pub fn compute_with_quantile(
        pred: &Tensor3,
        truth: &Tensor3,
        quantile: f64,
    ) -> Result<Self, MetricError> {
        Ok(Self {
            mse: mse(pred, truth)?,
            mae: mae(pred, truth)?,
            rse: optional(rse(pred, truth))?,
            corr: optional(corr(pred, truth))?,
            fluctuation_index: optional(fluctuation_index(pred, truth))?,
            peak_amplitude_ratio: optional(peak_amplitude_ratio(pred, truth, quantile))?,
            n_samples: truth.batch(),
        })
    }

    pub fn is_over_fluctuating(&self) -> bool {
        self.fluctuation_index
            .is_some_and(|fi| fi > OVER_FLUCTUATION_THRESHOLD)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct serializes")
    }
}

fn optional(r: Result<f64, MetricError>) -> Result<Option<f64>, MetricError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(MetricError::Degenerate(_)) => Ok(None),
        Err(e) => Err(e),
    }
}
