//! Independent oracles shared by the integration tests. Nothing here calls
//! the library's kernels or metrics; everything is plain loops over the
//! public parameter buffers.

#![allow(dead_code)]

use purets::model::{Activation, AffineLayer, LinearStack, TemporalLayer};
use purets::tensor::{Tensor2, Tensor3};
use purets::train::mse_loss;
use purets::RandomSource;

pub fn random_tensor(rng: &mut RandomSource, b: usize, t: usize, n: usize) -> Tensor3 {
    Tensor3::from_vec(b, t, n, (0..b * t * n).map(|_| rng.normal(0.0, 1.0)).collect()).unwrap()
}

fn random_affine(rng: &mut RandomSource, in_dim: usize, out_dim: usize, activation: Activation) -> AffineLayer {
    let bound = 1.0 / (in_dim as f64).sqrt();
    let w = (0..in_dim * out_dim).map(|_| rng.uniform(-bound, bound)).collect();
    let b = (0..out_dim).map(|_| rng.uniform(-0.5, 0.5)).collect();
    AffineLayer::new(Tensor2::from_vec(out_dim, in_dim, w).unwrap(), b, activation).unwrap()
}

#[derive(Debug, Clone, Copy)]
pub struct StackShape {
    pub depth: usize,
    pub window: usize,
    pub horizon: usize,
    pub n_features: usize,
    pub sigmoid: bool,
    pub spatial: bool,
    pub per_channel: bool,
}

/// A random shape within depth ≤ 3, T ≤ 32, T' ≤ 16, N ≤ 4.
pub fn random_shape(rng: &mut RandomSource, sigmoid: bool, spatial: bool) -> StackShape {
    let depth = if sigmoid { rng.int_in(2, 3) } else { rng.int_in(1, 3) };
    StackShape {
        depth,
        window: rng.int_in(1, 32),
        horizon: rng.int_in(1, 16),
        n_features: rng.int_in(1, 4),
        sigmoid,
        spatial,
        per_channel: rng.next_f64() < 0.3,
    }
}

/// Builds a stack layer by layer with random hidden widths and biases.
pub fn random_stack(rng: &mut RandomSource, s: StackShape) -> LinearStack {
    let mut widths = vec![s.window];
    widths.extend((1..s.depth).map(|_| rng.int_in(1, 32)));
    widths.push(s.horizon);
    let temporal = (0..s.depth)
        .map(|k| {
            let act = if s.sigmoid && k + 1 < s.depth {
                Activation::Sigmoid
            } else {
                Activation::None
            };
            if s.per_channel {
                let units = (0..s.n_features)
                    .map(|_| random_affine(rng, widths[k], widths[k + 1], act))
                    .collect();
                TemporalLayer::per_channel(units).unwrap()
            } else {
                TemporalLayer::shared(random_affine(rng, widths[k], widths[k + 1], act))
            }
        })
        .collect();
    let spatial = s
        .spatial
        .then(|| random_affine(rng, s.n_features, s.n_features, Activation::None));
    LinearStack::from_layers(temporal, spatial, s.n_features).unwrap()
}

/// Scalar-loop forward pass: each channel's time series goes through the
/// temporal layers as a vector, then each forecast step is mixed across
/// channels.
pub fn naive_forward(model: &LinearStack, x: &Tensor3) -> Tensor3 {
    let (b, _, n) = x.shape();
    let h = model.horizon();
    let mut out = Tensor3::zeros(b, h, n);
    for bi in 0..b {
        for c in 0..n {
            let mut v: Vec<f64> = (0..x.axis1()).map(|t| x.get(bi, t, c)).collect();
            for layer in model.temporal_layers() {
                let unit = &layer.units()[if layer.is_shared() { 0 } else { c }];
                let mut next = vec![0.0; unit.out_dim()];
                for (r, slot) in next.iter_mut().enumerate() {
                    let mut acc = unit.bias[r];
                    for (k, vk) in v.iter().enumerate() {
                        acc += unit.weight.get(r, k) * vk;
                    }
                    *slot = match unit.activation {
                        Activation::Sigmoid => 1.0 / (1.0 + (-acc).exp()),
                        Activation::None => acc,
                    };
                }
                v = next;
            }
            for (t, val) in v.into_iter().enumerate() {
                out.set(bi, t, c, val);
            }
        }
    }
    if let Some(s) = model.spatial_layer() {
        let temporal = out.clone();
        for bi in 0..b {
            for t in 0..h {
                for r in 0..n {
                    let mut acc = s.bias[r];
                    for k in 0..n {
                        acc += s.weight.get(r, k) * temporal.get(bi, t, k);
                    }
                    out.set(bi, t, r, acc);
                }
            }
        }
    }
    out
}

fn loss_of(model: &LinearStack, x: &Tensor3, y: &Tensor3) -> f64 {
    mse_loss(&model.forward(x).unwrap(), y).unwrap().0
}

/// Largest relative error between backprop and central differences of the
/// MSE loss over every parameter. Relative error is
/// `|a − n| / max(|a|, |n|, floor)`; the floor keeps parameters with
/// near-zero gradient from dominating through rounding noise.
pub fn max_gradient_error(model: &LinearStack, x: &Tensor3, y: &Tensor3, eps: f64, floor: f64) -> f64 {
    let (pred, cache) = model.forward_cached(x).unwrap();
    let (_, g_out) = mse_loss(&pred, y).unwrap();
    let grads = model.backward_cached(&cache, &g_out).unwrap();
    let analytic: Vec<Vec<f64>> = grads.buffers().into_iter().map(<[f64]>::to_vec).collect();
    let mut probe = model.clone();
    let mut worst = 0.0_f64;
    for (bi, buf) in analytic.iter().enumerate() {
        for (i, &a) in buf.iter().enumerate() {
            let orig = probe.param_buffers()[bi][i];
            probe.param_buffers_mut()[bi][i] = orig + eps;
            let up = loss_of(&probe, x, y);
            probe.param_buffers_mut()[bi][i] = orig - eps;
            let down = loss_of(&probe, x, y);
            probe.param_buffers_mut()[bi][i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Direct-summation metric oracles over flat `(window, step, channel)`
/// arrays.
pub mod oracle {
    use purets::Tensor3;

    pub fn mse(p: &Tensor3, y: &Tensor3) -> f64 {
        let mut s = 0.0;
        for (a, b) in p.data().iter().zip(y.data()) {
            s += (a - b) * (a - b);
        }
        s / y.data().len() as f64
    }

    pub fn mae(p: &Tensor3, y: &Tensor3) -> f64 {
        let mut s = 0.0;
        for (a, b) in p.data().iter().zip(y.data()) {
            s += (a - b).abs();
        }
        s / y.data().len() as f64
    }

    pub fn rse(p: &Tensor3, y: &Tensor3) -> f64 {
        let n = y.data().len() as f64;
        let mean = y.data().iter().sum::<f64>() / n;
        let num: f64 = p.data().iter().zip(y.data()).map(|(a, b)| (b - a).powi(2)).sum();
        let den: f64 = y.data().iter().map(|b| (b - mean).powi(2)).sum();
        num.sqrt() / den.sqrt()
    }

    /// Two-pass Pearson per channel over every (window, step) cell,
    /// averaged over channels.
    pub fn corr(p: &Tensor3, y: &Tensor3) -> f64 {
        let (b, t, n) = y.shape();
        let mut total = 0.0;
        for c in 0..n {
            let ps: Vec<f64> = (0..b).flat_map(|i| (0..t).map(move |k| (i, k))).map(|(i, k)| p.get(i, k, c)).collect();
            let ys: Vec<f64> = (0..b).flat_map(|i| (0..t).map(move |k| (i, k))).map(|(i, k)| y.get(i, k, c)).collect();
            let m = ps.len() as f64;
            let pm = ps.iter().sum::<f64>() / m;
            let ym = ys.iter().sum::<f64>() / m;
            let cov: f64 = ps.iter().zip(&ys).map(|(a, b)| (a - pm) * (b - ym)).sum();
            let vp: f64 = ps.iter().map(|a| (a - pm).powi(2)).sum();
            let vy: f64 = ys.iter().map(|b| (b - ym).powi(2)).sum();
            total += cov / (vp.sqrt() * vy.sqrt());
        }
        total / n as f64
    }

    pub fn total_variation(s: &[f64]) -> f64 {
        s.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
    }
}
