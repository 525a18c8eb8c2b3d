//! Linear forecasting stacks.
//!
//! A [`LinearStack`] takes a `(batch, T, N)` window, swaps time and feature
//! axes, runs a chain of affine maps along the time axis (`T → … → T'`),
//! swaps back and optionally mixes channels with one `N × N` affine map.
//! PureTS, PureTS_S and the sigmoid contrast model are all configurations of
//! this one type (see [`ModelKind`]).
//!
//! Gradients are computed by hand in [`LinearStack::backward`]; there is no
//! autodiff tape.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RandomSource;
use crate::tensor::{
    batched_affine, batched_affine_by_lane, matmul, permute_time_feature, ShapeError, Tensor2,
    Tensor3,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("non-finite value produced by layer {layer}")]
    NonFinite { layer: String },
    #[error("unsupported model: {0}")]
    Unsupported(String),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("model has no temporal layers")]
    EmptyStack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    None,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: &mut Tensor3) {
        if self == Activation::Sigmoid {
            for v in x.data_mut() {
                *v = sigmoid(*v);
            }
        }
    }
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `activation(weight · v + bias)` with `weight` of shape `out_dim × in_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineLayer {
    pub weight: Tensor2,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl AffineLayer {
    pub fn new(weight: Tensor2, bias: Vec<f64>, activation: Activation) -> Result<Self, ModelError> {
        if bias.len() != weight.rows() {
            return Err(ShapeError::Affine {
                input: (0, 0, weight.cols()),
                weight: weight.shape(),
                bias: bias.len(),
            }
            .into());
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            weight: Tensor2::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// One step of the temporal chain. Holds a single affine map shared by all
/// channels, or one map per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalLayer {
    units: Vec<AffineLayer>,
}

impl TemporalLayer {
    pub fn shared(layer: AffineLayer) -> Self {
        Self { units: vec![layer] }
    }

    pub fn per_channel(units: Vec<AffineLayer>) -> Result<Self, ModelError> {
        let first = units.first().ok_or_else(|| {
            ModelError::InvalidConfig("per-channel layer needs at least one unit".into())
        })?;
        let dims = (first.in_dim(), first.out_dim(), first.activation);
        if units
            .iter()
            .any(|u| (u.in_dim(), u.out_dim(), u.activation) != dims)
        {
            return Err(ModelError::InvalidConfig(
                "per-channel units disagree on shape or activation".into(),
            ));
        }
        Ok(Self { units })
    }

    pub fn units(&self) -> &[AffineLayer] {
        &self.units
    }

    pub fn units_mut(&mut self) -> &mut [AffineLayer] {
        &mut self.units
    }

    pub fn is_shared(&self) -> bool {
        self.units.len() == 1
    }

    pub fn in_dim(&self) -> usize {
        self.units[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.units[0].out_dim()
    }

    pub fn activation(&self) -> Activation {
        self.units[0].activation
    }

    /// Forward along the last axis of a `(B, N, d)` tensor.
    fn apply(&self, x: &Tensor3, n_features: usize) -> Result<Tensor3, ShapeError> {
        let mut out = if self.is_shared() {
            let u = &self.units[0];
            batched_affine(x, &u.weight, &u.bias)?
        } else {
            batched_affine_by_lane(x, self.out_dim(), |lane| {
                let u = &self.units[lane % n_features];
                (&u.weight, u.bias.as_slice())
            })?
        };
        self.activation().apply(&mut out);
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    /// Activation-free temporal stack.
    #[serde(rename = "purets")]
    PureTs,
    /// Temporal stack followed by an `N × N` map over features.
    #[serde(rename = "purets_s")]
    PureTsS,
    /// Temporal stack with a sigmoid after every layer but the last.
    #[serde(rename = "sigmoid_mlp")]
    SigmoidMlp,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::PureTs => "purets",
            ModelKind::PureTsS => "purets_s",
            ModelKind::SigmoidMlp => "sigmoid_mlp",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "purets" | "pure_ts" => Ok(ModelKind::PureTs),
            "purets_s" | "pure_ts_s" => Ok(ModelKind::PureTsS),
            "sigmoid_mlp" | "sigmoid" => Ok(ModelKind::SigmoidMlp),
            other => Err(ModelError::InvalidConfig(format!("unknown model kind: {other}"))),
        }
    }
}

/// Everything needed to build a [`LinearStack`] of a given shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackConfig {
    pub kind: ModelKind,
    pub input_window: usize,
    pub horizon: usize,
    pub n_features: usize,
    pub depth: usize,
    /// Hidden widths, `depth - 1` of them. `None` means `max(T, T')` each.
    pub hidden: Option<Vec<usize>>,
    /// Learn one temporal map per channel instead of sharing it.
    #[serde(default)]
    pub per_channel: bool,
}

impl StackConfig {
    pub fn new(kind: ModelKind, input_window: usize, horizon: usize, n_features: usize) -> Self {
        Self {
            kind,
            input_window,
            horizon,
            n_features,
            depth: 3,
            hidden: None,
            per_channel: false,
        }
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = depth;
        self
    }

    pub fn with_hidden(mut self, hidden: Vec<usize>) -> Self {
        self.hidden = Some(hidden);
        self
    }

    /// Layer boundary widths `[T, h₁, …, T']`.
    pub fn widths(&self) -> Result<Vec<usize>, ModelError> {
        if self.input_window == 0 || self.horizon == 0 || self.n_features == 0 {
            return Err(ModelError::InvalidConfig(
                "window, horizon and feature count must be at least 1".into(),
            ));
        }
        if self.depth == 0 {
            return Err(ModelError::EmptyStack);
        }
        let hidden = match &self.hidden {
            Some(h) if h.len() != self.depth - 1 => {
                return Err(ModelError::InvalidConfig(format!(
                    "depth {} needs {} hidden widths, got {}",
                    self.depth,
                    self.depth - 1,
                    h.len()
                )))
            }
            Some(h) if h.contains(&0) => {
                return Err(ModelError::InvalidConfig("hidden width of 0".into()))
            }
            Some(h) => h.clone(),
            None => vec![self.input_window.max(self.horizon); self.depth - 1],
        };
        let mut w = Vec::with_capacity(self.depth + 1);
        w.push(self.input_window);
        w.extend(hidden);
        w.push(self.horizon);
        Ok(w)
    }

    /// Builds a zero-initialized stack with the configured shape.
    pub fn build_zeroed(&self) -> Result<LinearStack, ModelError> {
        let widths = self.widths()?;
        if self.kind == ModelKind::SigmoidMlp && self.depth < 2 {
            return Err(ModelError::InvalidConfig(
                "sigmoid model needs depth >= 2 (activation sits between layers)".into(),
            ));
        }
        let units = if self.per_channel { self.n_features } else { 1 };
        let temporal = widths
            .windows(2)
            .enumerate()
            .map(|(k, pair)| {
                let act = if self.kind == ModelKind::SigmoidMlp && k + 1 < self.depth {
                    Activation::Sigmoid
                } else {
                    Activation::None
                };
                TemporalLayer {
                    units: vec![AffineLayer::zeros(pair[0], pair[1], act); units],
                }
            })
            .collect();
        let spatial = (self.kind == ModelKind::PureTsS).then(|| {
            AffineLayer::zeros(self.n_features, self.n_features, Activation::None)
        });
        LinearStack::from_layers(temporal, spatial, self.n_features)
    }

    /// Builds a stack and draws its parameters from `rng`.
    pub fn build(&self, rng: &mut RandomSource) -> Result<LinearStack, ModelError> {
        Ok(self.build_zeroed()?.init_parameters(rng))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearStack {
    temporal: Vec<TemporalLayer>,
    spatial: Option<AffineLayer>,
    input_window: usize,
    horizon: usize,
    n_features: usize,
}

/// Intermediate values kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the permuted input `(B, N, T)`; `activations[k]`
    /// is the output of temporal layer `k - 1`.
    activations: Vec<Tensor3>,
    /// Temporal result permuted back to `(B, T', N)`, the spatial layer input.
    temporal_out: Tensor3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineGrad {
    pub weight: Tensor2,
    pub bias: Vec<f64>,
}

impl AffineGrad {
    fn zeros_like(layer: &AffineLayer) -> Self {
        Self {
            weight: Tensor2::zeros(layer.out_dim(), layer.in_dim()),
            bias: vec![0.0; layer.out_dim()],
        }
    }
}

/// Loss gradients laid out exactly like the parameters of a [`LinearStack`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub temporal: Vec<Vec<AffineGrad>>,
    pub spatial: Option<AffineGrad>,
}

impl GradientSet {
    /// Gradient buffers in the same order as [`LinearStack::param_buffers`].
    pub fn buffers(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in &self.temporal {
            for g in layer {
                out.push(g.weight.data());
                out.push(g.bias.as_slice());
            }
        }
        if let Some(g) = &self.spatial {
            out.push(g.weight.data());
            out.push(g.bias.as_slice());
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.buffers()
            .into_iter()
            .flatten()
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

impl LinearStack {
    /// Assembles a stack from explicit layers, checking that widths chain.
    pub fn from_layers(
        temporal: Vec<TemporalLayer>,
        spatial: Option<AffineLayer>,
        n_features: usize,
    ) -> Result<Self, ModelError> {
        let (first, last) = match (temporal.first(), temporal.last()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(ModelError::EmptyStack),
        };
        if n_features == 0 {
            return Err(ModelError::InvalidConfig("feature count must be at least 1".into()));
        }
        for (k, pair) in temporal.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(ModelError::InvalidConfig(format!(
                    "temporal layer {k} outputs {} but layer {} expects {}",
                    pair[0].out_dim(),
                    k + 1,
                    pair[1].in_dim()
                )));
            }
        }
        for (k, layer) in temporal.iter().enumerate() {
            if !layer.is_shared() && layer.units.len() != n_features {
                return Err(ModelError::InvalidConfig(format!(
                    "temporal layer {k} has {} units for {n_features} channels",
                    layer.units.len()
                )));
            }
        }
        if let Some(s) = &spatial {
            if s.in_dim() != n_features || s.out_dim() != n_features {
                return Err(ModelError::InvalidConfig(format!(
                    "spatial layer must be {n_features}x{n_features}, got {:?}",
                    s.weight.shape()
                )));
            }
        }
        Ok(Self {
            input_window: first.in_dim(),
            horizon: last.out_dim(),
            temporal,
            spatial,
            n_features,
        })
    }

    /// Depth-1 activation-free stack with a single shared `(weight, bias)`.
    pub fn from_affine(weight: Tensor2, bias: Vec<f64>, n_features: usize) -> Result<Self, ModelError> {
        let layer = AffineLayer::new(weight, bias, Activation::None)?;
        Self::from_layers(vec![TemporalLayer::shared(layer)], None, n_features)
    }

    pub fn input_window(&self) -> usize {
        self.input_window
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn depth(&self) -> usize {
        self.temporal.len()
    }

    pub fn temporal_layers(&self) -> &[TemporalLayer] {
        &self.temporal
    }

    pub fn temporal_layers_mut(&mut self) -> &mut [TemporalLayer] {
        &mut self.temporal
    }

    pub fn spatial_layer(&self) -> Option<&AffineLayer> {
        self.spatial.as_ref()
    }

    pub fn spatial_layer_mut(&mut self) -> Option<&mut AffineLayer> {
        self.spatial.as_mut()
    }

    pub fn has_activation(&self) -> bool {
        self.temporal
            .iter()
            .any(|l| l.activation() != Activation::None)
    }

    /// All affine layers in canonical order: temporal layers (units in
    /// channel order), then the spatial layer.
    pub fn affine_layers(&self) -> impl Iterator<Item = &AffineLayer> {
        self.temporal
            .iter()
            .flat_map(|l| l.units.iter())
            .chain(self.spatial.iter())
    }

    /// Parameter buffers in canonical order, weight before bias per layer.
    pub fn param_buffers(&self) -> Vec<&[f64]> {
        self.affine_layers()
            .flat_map(|l| [l.weight.data(), l.bias.as_slice()])
            .collect()
    }

    pub fn param_buffers_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.temporal {
            for u in &mut layer.units {
                out.push(u.weight.data_mut());
                out.push(u.bias.as_mut_slice());
            }
        }
        if let Some(s) = &mut self.spatial {
            out.push(s.weight.data_mut());
            out.push(s.bias.as_mut_slice());
        }
        out
    }

    /// Draws weights uniformly on `±1/√in_dim` and zeroes biases.
    pub fn init_parameters(mut self, rng: &mut RandomSource) -> Self {
        let init = |layer: &mut AffineLayer, rng: &mut RandomSource| {
            let bound = 1.0 / (layer.in_dim() as f64).sqrt();
            for w in layer.weight.data_mut() {
                *w = rng.uniform(-bound, bound);
            }
            layer.bias.iter_mut().for_each(|b| *b = 0.0);
        };
        for layer in &mut self.temporal {
            for u in &mut layer.units {
                init(u, rng);
            }
        }
        if let Some(s) = &mut self.spatial {
            init(s, rng);
        }
        self
    }

    fn check_input(&self, x: &Tensor3) -> Result<(), ModelError> {
        if x.axis1() != self.input_window || x.axis2() != self.n_features {
            return Err(ShapeError::Mismatch {
                expected: vec![x.batch(), self.input_window, self.n_features],
                actual: vec![x.batch(), x.axis1(), x.axis2()],
            }
            .into());
        }
        Ok(())
    }

    /// Maps a `(B, T, N)` window to a `(B, T', N)` forecast.
    pub fn forward(&self, x: &Tensor3) -> Result<Tensor3, ModelError> {
        self.forward_cached(x).map(|(y, _)| y)
    }

    pub fn forward_cached(&self, x: &Tensor3) -> Result<(Tensor3, ForwardCache), ModelError> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.temporal.len() + 1);
        activations.push(permute_time_feature(x));
        for (k, layer) in self.temporal.iter().enumerate() {
            let h = layer.apply(activations.last().expect("non-empty"), self.n_features)?;
            if !h.is_finite() {
                return Err(ModelError::NonFinite {
                    layer: format!("temporal[{k}]"),
                });
            }
            activations.push(h);
        }
        let temporal_out = permute_time_feature(activations.last().expect("non-empty"));
        let out = match &self.spatial {
            Some(s) => {
                let y = batched_affine(&temporal_out, &s.weight, &s.bias)?;
                if !y.is_finite() {
                    return Err(ModelError::NonFinite {
                        layer: "spatial".into(),
                    });
                }
                y
            }
            None => temporal_out.clone(),
        };
        Ok((
            out,
            ForwardCache {
                activations,
                temporal_out,
            },
        ))
    }

    /// Forward pass with the batch split across `threads` scoped threads.
    /// Output is identical to [`forward`](Self::forward).
    pub fn forward_threaded(&self, x: &Tensor3, threads: usize) -> Result<Tensor3, ModelError> {
        let threads = threads.max(1).min(x.batch().max(1));
        if threads == 1 {
            return self.forward(x);
        }
        let chunk = x.batch().div_ceil(threads);
        let parts: Vec<Result<Tensor3, ModelError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..x.batch())
                .step_by(chunk)
                .map(|start| {
                    let end = (start + chunk).min(x.batch());
                    let part = x.slice_batch(start, end);
                    scope.spawn(move || self.forward(&part))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("forward worker panicked"))
                .collect()
        });
        let parts = parts.into_iter().collect::<Result<Vec<_>, _>>()?;
        Ok(Tensor3::concat_batch(&parts)?)
    }

    /// Reverse-mode gradients of a scalar loss given `∂L/∂output`.
    pub fn backward(&self, x: &Tensor3, grad_out: &Tensor3) -> Result<GradientSet, ModelError> {
        let (_, cache) = self.forward_cached(x)?;
        self.backward_cached(&cache, grad_out)
    }

    pub fn backward_cached(
        &self,
        cache: &ForwardCache,
        grad_out: &Tensor3,
    ) -> Result<GradientSet, ModelError> {
        let batch = cache.temporal_out.batch();
        let expected = (batch, self.horizon, self.n_features);
        if grad_out.shape() != expected {
            return Err(ShapeError::Mismatch {
                expected: vec![expected.0, expected.1, expected.2],
                actual: vec![grad_out.batch(), grad_out.axis1(), grad_out.axis2()],
            }
            .into());
        }

        let (spatial_grad, grad_temporal_out) = match &self.spatial {
            Some(s) => {
                let (g, g_in) = affine_backward(
                    std::slice::from_ref(s),
                    &cache.temporal_out,
                    grad_out,
                    1,
                );
                (g.into_iter().next(), g_in)
            }
            None => (None, grad_out.clone()),
        };

        let mut grad = permute_time_feature(&grad_temporal_out);
        let mut temporal_grads = Vec::with_capacity(self.temporal.len());
        for (k, layer) in self.temporal.iter().enumerate().rev() {
            let input = &cache.activations[k];
            let output = &cache.activations[k + 1];
            if layer.activation() == Activation::Sigmoid {
                for (g, &a) in grad.data_mut().iter_mut().zip(output.data()) {
                    *g *= a * (1.0 - a);
                }
            }
            let (g, g_in) = affine_backward(&layer.units, input, &grad, self.n_features);
            temporal_grads.push(g);
            grad = g_in;
        }
        temporal_grads.reverse();
        Ok(GradientSet {
            temporal: temporal_grads,
            spatial: spatial_grad,
        })
    }

    /// The single affine map `(W, b)` equivalent to an activation-free,
    /// channel-shared temporal stack: `W = W_K···W_1`,
    /// `b = W_K(…(W_2 b_1 + b_2)…) + b_K`.
    pub fn collapse_to_affine(&self) -> Result<(Tensor2, Vec<f64>), ModelError> {
        if self.has_activation() {
            return Err(ModelError::Unsupported(
                "cannot collapse a stack with activations".into(),
            ));
        }
        if self.temporal.iter().any(|l| !l.is_shared()) {
            return Err(ModelError::Unsupported(
                "cannot collapse per-channel temporal layers into one map".into(),
            ));
        }
        if let Some(s) = &self.spatial {
            let identity = Tensor2::identity(self.n_features);
            if s.weight != identity || s.bias.iter().any(|&b| b != 0.0) {
                return Err(ModelError::Unsupported(
                    "cannot collapse a non-identity spatial layer into a temporal map".into(),
                ));
            }
        }
        let first = &self.temporal[0].units[0];
        let mut weight = first.weight.clone();
        let mut bias = first.bias.clone();
        for layer in &self.temporal[1..] {
            let u = &layer.units[0];
            weight = matmul(&u.weight, &weight)?;
            let b_col = Tensor2::from_vec(bias.len(), 1, bias)?;
            bias = matmul(&u.weight, &b_col)?
                .into_vec()
                .into_iter()
                .zip(&u.bias)
                .map(|(wb, b)| wb + b)
                .collect();
        }
        Ok((weight, bias))
    }
}

/// Backward through an affine map applied lane by lane over `(B, M, d_in)`.
/// Returns parameter gradients per unit and the gradient w.r.t. the input.
/// Accumulation runs in lane order, so results are reproducible bit for bit.
fn affine_backward(
    units: &[AffineLayer],
    input: &Tensor3,
    grad: &Tensor3,
    n_features: usize,
) -> (Vec<AffineGrad>, Tensor3) {
    let mut grads: Vec<AffineGrad> = units.iter().map(AffineGrad::zeros_like).collect();
    let d_in = input.axis2();
    let d_out = grad.axis2();
    let lanes = input.batch() * input.axis1();
    let mut grad_in = Tensor3::zeros(input.batch(), input.axis1(), d_in);
    let g_all = grad.data();
    let x_all = input.data();
    for lane in 0..lanes {
        let u = if units.len() == 1 { 0 } else { lane % n_features };
        let unit = &units[u];
        let acc = &mut grads[u];
        let g = &g_all[lane * d_out..(lane + 1) * d_out];
        let x = &x_all[lane * d_in..(lane + 1) * d_in];
        let gi = &mut grad_in.data_mut()[lane * d_in..(lane + 1) * d_in];
        for (r, &gr) in g.iter().enumerate() {
            if gr == 0.0 {
                continue;
            }
            acc.bias[r] += gr;
            let w_row = unit.weight.row(r);
            let dw_row = &mut acc.weight.data_mut()[r * d_in..(r + 1) * d_in];
            for c in 0..d_in {
                dw_row[c] += gr * x[c];
                gi[c] += gr * w_row[c];
            }
        }
    }
    (grads, grad_in)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_input(rng: &mut RandomSource, b: usize, t: usize, n: usize) -> Tensor3 {
        Tensor3::from_vec(b, t, n, (0..b * t * n).map(|_| rng.normal(0.0, 1.0)).collect()).unwrap()
    }

    fn with_random_biases(mut m: LinearStack, rng: &mut RandomSource) -> LinearStack {
        for buf in m.param_buffers_mut().into_iter().skip(1).step_by(2) {
            for b in buf {
                *b = rng.uniform(-0.5, 0.5);
            }
        }
        m
    }

    #[test]
    fn default_widths_avoid_bottleneck() {
        let cfg = StackConfig::new(ModelKind::PureTs, 96, 24, 7);
        assert_eq!(cfg.widths().unwrap(), vec![96, 96, 96, 24]);
        let cfg = StackConfig::new(ModelKind::PureTs, 24, 96, 7).with_depth(2);
        assert_eq!(cfg.widths().unwrap(), vec![24, 96, 96]);
    }

    #[test]
    fn config_validation() {
        let bad = StackConfig::new(ModelKind::PureTs, 8, 4, 1).with_hidden(vec![3]);
        assert!(matches!(bad.widths(), Err(ModelError::InvalidConfig(_))));
        let empty = StackConfig::new(ModelKind::PureTs, 8, 4, 1).with_depth(0);
        assert_eq!(empty.widths(), Err(ModelError::EmptyStack));
        let sig = StackConfig::new(ModelKind::SigmoidMlp, 8, 4, 1).with_depth(1);
        assert!(matches!(sig.build_zeroed(), Err(ModelError::InvalidConfig(_))));
        assert_eq!(
            LinearStack::from_layers(vec![], None, 3),
            Err(ModelError::EmptyStack)
        );
    }

    #[test]
    fn kinds_set_activations_and_spatial_layer() {
        let pure = StackConfig::new(ModelKind::PureTs, 8, 4, 3).build_zeroed().unwrap();
        assert!(!pure.has_activation());
        assert!(pure.spatial_layer().is_none());
        assert_eq!(pure.depth(), 3);

        let s = StackConfig::new(ModelKind::PureTsS, 8, 4, 3).build_zeroed().unwrap();
        assert_eq!(s.spatial_layer().unwrap().weight.shape(), (3, 3));

        let sig = StackConfig::new(ModelKind::SigmoidMlp, 8, 4, 3)
            .with_depth(2)
            .build_zeroed()
            .unwrap();
        let acts: Vec<_> = sig.temporal_layers().iter().map(|l| l.activation()).collect();
        assert_eq!(acts, vec![Activation::Sigmoid, Activation::None]);
    }

    #[test]
    fn identity_network_is_identity() {
        let layer = AffineLayer::new(Tensor2::identity(5), vec![0.0; 5], Activation::None).unwrap();
        let m = LinearStack::from_layers(vec![TemporalLayer::shared(layer)], None, 2).unwrap();
        let mut rng = RandomSource::new(1);
        let x = random_input(&mut rng, 3, 5, 2);
        assert_eq!(m.forward(&x).unwrap(), x);
    }

    #[test]
    fn zero_weight_network_outputs_last_bias() {
        let l1 = AffineLayer::new(Tensor2::zeros(3, 4), vec![1.0, 2.0, 3.0], Activation::None).unwrap();
        let l2 = AffineLayer::new(Tensor2::zeros(2, 3), vec![-0.5, 4.0], Activation::None).unwrap();
        let m = LinearStack::from_layers(
            vec![TemporalLayer::shared(l1), TemporalLayer::shared(l2)],
            None,
            3,
        )
        .unwrap();
        let mut rng = RandomSource::new(2);
        let y = m.forward(&random_input(&mut rng, 2, 4, 3)).unwrap();
        for b in 0..2 {
            for c in 0..3 {
                assert_eq!(y.get(b, 0, c), -0.5);
                assert_eq!(y.get(b, 1, c), 4.0);
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_shape_and_reports_non_finite() {
        let m = StackConfig::new(ModelKind::PureTs, 4, 2, 1).build_zeroed().unwrap();
        assert!(matches!(
            m.forward(&Tensor3::zeros(1, 5, 1)),
            Err(ModelError::Shape(_))
        ));
        let mut m = m;
        m.temporal_layers_mut()[1].units_mut()[0].bias[0] = f64::INFINITY;
        assert_eq!(
            m.forward(&Tensor3::zeros(1, 4, 1)),
            Err(ModelError::NonFinite {
                layer: "temporal[1]".into()
            })
        );
    }

    #[test]
    fn forward_equals_collapsed_affine() {
        let mut rng = RandomSource::new(17);
        let m = StackConfig::new(ModelKind::PureTs, 12, 5, 3).build(&mut rng).unwrap();
        let m = with_random_biases(m, &mut rng);
        let (w, b) = m.collapse_to_affine().unwrap();
        assert_eq!(w.shape(), (5, 12));
        for _ in 0..10 {
            let x = random_input(&mut rng, 2, 12, 3);
            let y = m.forward(&x).unwrap();
            let z = permute_time_feature(&batched_affine(&permute_time_feature(&x), &w, &b).unwrap());
            for (a, c) in y.data().iter().zip(z.data()) {
                assert!((a - c).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn collapse_of_depth_one_and_identities() {
        let mut rng = RandomSource::new(4);
        let m = StackConfig::new(ModelKind::PureTs, 6, 3, 1)
            .with_depth(1)
            .build(&mut rng)
            .unwrap();
        let m = with_random_biases(m, &mut rng);
        let (w, b) = m.collapse_to_affine().unwrap();
        let only = &m.temporal_layers()[0].units()[0];
        assert_eq!(w, only.weight);
        assert_eq!(b, only.bias);

        let id = || {
            TemporalLayer::shared(
                AffineLayer::new(Tensor2::identity(4), vec![0.0; 4], Activation::None).unwrap(),
            )
        };
        let m = LinearStack::from_layers(vec![id(), id()], None, 2).unwrap();
        let (w, b) = m.collapse_to_affine().unwrap();
        assert_eq!(w, Tensor2::identity(4));
        assert_eq!(b, vec![0.0; 4]);
    }

    #[test]
    fn collapse_rejects_activations() {
        let mut rng = RandomSource::new(4);
        let m = StackConfig::new(ModelKind::SigmoidMlp, 6, 3, 1)
            .with_depth(2)
            .build(&mut rng)
            .unwrap();
        assert!(matches!(m.collapse_to_affine(), Err(ModelError::Unsupported(_))));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut rng = RandomSource::new(5);
        let m = StackConfig::new(ModelKind::PureTsS, 6, 3, 2).build(&mut rng).unwrap();
        let x = random_input(&mut rng, 2, 6, 2);
        let g = m.backward(&x, &Tensor3::zeros(2, 3, 2)).unwrap();
        assert_eq!(g.max_abs(), 0.0);
        assert_eq!(g.buffers().len(), m.param_buffers().len());
        for (gb, pb) in g.buffers().iter().zip(m.param_buffers()) {
            assert_eq!(gb.len(), pb.len());
        }
    }

    #[test]
    fn single_layer_gradient_is_outer_product() {
        let mut rng = RandomSource::new(6);
        let m = StackConfig::new(ModelKind::PureTs, 4, 3, 1)
            .with_depth(1)
            .build(&mut rng)
            .unwrap();
        let x = random_input(&mut rng, 1, 4, 1);
        let go = random_input(&mut rng, 1, 3, 1);
        let g = m.backward(&x, &go).unwrap();
        let gw = &g.temporal[0][0].weight;
        for r in 0..3 {
            for c in 0..4 {
                assert_eq!(gw.get(r, c), go.data()[r] * x.data()[c]);
            }
        }
        assert_eq!(g.temporal[0][0].bias, go.data());
    }

    #[test]
    fn channels_are_independent_without_spatial_layer() {
        let mut rng = RandomSource::new(8);
        let m = StackConfig::new(ModelKind::PureTs, 8, 4, 3).build(&mut rng).unwrap();
        let x = random_input(&mut rng, 1, 8, 3);
        let base = m.forward(&x).unwrap();
        let mut bumped = x.clone();
        for t in 0..8 {
            let v = bumped.get(0, t, 1);
            bumped.set(0, t, 1, v + 0.37);
        }
        let y = m.forward(&bumped).unwrap();
        for t in 0..4 {
            assert_eq!(y.get(0, t, 0), base.get(0, t, 0));
            assert_eq!(y.get(0, t, 2), base.get(0, t, 2));
            assert_ne!(y.get(0, t, 1), base.get(0, t, 1));
        }
    }

    #[test]
    fn per_channel_layers_use_their_own_weights() {
        let mut rng = RandomSource::new(12);
        let mut cfg = StackConfig::new(ModelKind::PureTs, 5, 2, 2).with_depth(1);
        cfg.per_channel = true;
        let m = cfg.build(&mut rng).unwrap();
        assert_eq!(m.temporal_layers()[0].units().len(), 2);
        let x = random_input(&mut rng, 1, 5, 2);
        let y = m.forward(&x).unwrap();
        for c in 0..2 {
            let u = &m.temporal_layers()[0].units()[c];
            for r in 0..2 {
                let expect: f64 = (0..5).map(|t| u.weight.get(r, t) * x.get(0, t, c)).sum();
                assert!((y.get(0, r, c) - expect).abs() < 1e-12);
            }
        }
        assert!(matches!(m.collapse_to_affine(), Err(ModelError::Unsupported(_))));
    }

    #[test]
    fn threaded_forward_matches_serial() {
        let mut rng = RandomSource::new(13);
        let m = StackConfig::new(ModelKind::PureTsS, 16, 8, 3).build(&mut rng).unwrap();
        let x = random_input(&mut rng, 7, 16, 3);
        assert_eq!(m.forward_threaded(&x, 3).unwrap(), m.forward(&x).unwrap());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let cfg = StackConfig::new(ModelKind::PureTs, 100, 10, 1).with_depth(1);
        let a = cfg.build(&mut RandomSource::new(9)).unwrap();
        let b = cfg.build(&mut RandomSource::new(9)).unwrap();
        assert_eq!(a, b);
        let layer = &a.temporal_layers()[0].units()[0];
        assert!(layer.weight.data().iter().all(|w| w.abs() <= 0.1));
        assert!(layer.bias.iter().all(|&b| b == 0.0));
    }
}
