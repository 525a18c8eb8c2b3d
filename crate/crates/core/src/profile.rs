//! Parameter counts, multiply-accumulate counts and inference timing.
//!
//! One MAC is one multiply-accumulate. Bias additions are not MACs; they
//! are reported separately as `add_count`. Axis permutations cost nothing.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AffineLayer, LinearStack, ModelError};
use crate::rng::RandomSource;
use crate::tensor::Tensor3;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("benchmark needs repeats >= 5 and warmup >= 1, got {repeats} and {warmup}")]
    Schedule { repeats: usize, warmup: usize },
    #[error("batch size must be at least 1")]
    EmptyBatch,
}

/// `Σ (out·in + out)` over the given layers.
pub fn count_layer_parameters<'a>(layers: impl IntoIterator<Item = &'a AffineLayer>) -> u64 {
    layers
        .into_iter()
        .map(|l| (l.out_dim() * l.in_dim() + l.out_dim()) as u64)
        .sum()
}

pub fn count_parameters(model: &LinearStack) -> u64 {
    count_layer_parameters(model.affine_layers())
}

/// MACs for one forward pass over `batch` windows: each temporal layer
/// costs `N · out · in` per window and the spatial layer `T' · N · N`.
pub fn count_macs(model: &LinearStack, batch: usize) -> u64 {
    let n = model.n_features() as u64;
    let temporal: u64 = model
        .temporal_layers()
        .iter()
        .map(|l| n * (l.out_dim() * l.in_dim()) as u64)
        .sum();
    let spatial = if model.spatial_layer().is_some() {
        model.horizon() as u64 * n * n
    } else {
        0
    };
    batch as u64 * (temporal + spatial)
}

/// Bias additions for one forward pass over `batch` windows.
pub fn count_adds(model: &LinearStack, batch: usize) -> u64 {
    let n = model.n_features() as u64;
    let temporal: u64 = model
        .temporal_layers()
        .iter()
        .map(|l| n * l.out_dim() as u64)
        .sum();
    let spatial = if model.spatial_layer().is_some() {
        model.horizon() as u64 * n
    } else {
        0
    };
    batch as u64 * (temporal + spatial)
}

pub fn shape_summary(model: &LinearStack) -> String {
    let mut dims: Vec<String> = vec![model.input_window().to_string()];
    dims.extend(model.temporal_layers().iter().map(|l| l.out_dim().to_string()));
    let mut s = format!("T:{} N:{}", dims.join("->"), model.n_features());
    if model.spatial_layer().is_some() {
        s.push_str(&format!(" spatial:{0}x{0}", model.n_features()));
    }
    if model.has_activation() {
        s.push_str(" sigmoid");
    }
    if model.temporal_layers().iter().any(|l| !l.is_shared()) {
        s.push_str(" per-channel");
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub parameter_count: u64,
    /// MACs for one forward pass at batch 1.
    pub mac_count: u64,
    pub add_count: u64,
    pub batch: usize,
    pub threads: usize,
    /// Seconds per forward pass over the whole batch.
    pub mean_latency: f64,
    pub latency_std: f64,
    pub samples: Vec<f64>,
    pub shape_summary: String,
}

/// Static counts only, no timing.
pub fn static_report(model: &LinearStack) -> ProfileReport {
    ProfileReport {
        parameter_count: count_parameters(model),
        mac_count: count_macs(model, 1),
        add_count: count_adds(model, 1),
        batch: 1,
        threads: 1,
        mean_latency: 0.0,
        latency_std: 0.0,
        samples: Vec::new(),
        shape_summary: shape_summary(model),
    }
}

/// Times `repeats` forward passes on a fixed random batch after `warmup`
/// untimed passes.
pub fn benchmark_inference(
    model: &LinearStack,
    batch: usize,
    repeats: usize,
    warmup: usize,
    threads: usize,
) -> Result<ProfileReport, ProfileError> {
    if repeats < 5 || warmup < 1 {
        return Err(ProfileError::Schedule { repeats, warmup });
    }
    if batch == 0 {
        return Err(ProfileError::EmptyBatch);
    }
    let mut rng = RandomSource::new(0);
    let len = batch * model.input_window() * model.n_features();
    let x = Tensor3::from_vec(
        batch,
        model.input_window(),
        model.n_features(),
        (0..len).map(|_| rng.normal(0.0, 1.0)).collect(),
    )
    .expect("sized");
    let threads = threads.max(1);
    let run = || {
        if threads == 1 {
            model.forward(&x)
        } else {
            model.forward_threaded(&x, threads)
        }
    };
    for _ in 0..warmup {
        std::hint::black_box(run()?);
    }
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        std::hint::black_box(run()?);
        // Clamp to the clock's resolution so the mean is never zero.
        samples.push(start.elapsed().as_secs_f64().max(1e-9));
    }
    let mean = samples.iter().sum::<f64>() / repeats as f64;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (repeats - 1) as f64;
    Ok(ProfileReport {
        batch,
        threads,
        mean_latency: mean,
        latency_std: var.sqrt(),
        samples,
        ..static_report(model)
    })
}
