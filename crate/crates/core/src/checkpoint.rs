//! Model checkpoint files.
//!
//! Layout:
//!
//! ```text
//! magic    8 bytes  "PURETSCK"
//! version  u32 LE   1
//! hdr_len  u64 LE   length of the JSON header in bytes
//! header   JSON     layer table, activation flags, producing config
//! payload  f64 LE   every weight then bias buffer, in header order
//! ```
//!
//! The header lists each affine layer with its role (`temporal` or
//! `spatial`), temporal index, channel unit, shape, activation and the
//! offset of its weight and bias inside the payload (counted in values).

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsio;
use crate::model::{Activation, AffineLayer, LinearStack, ModelError, TemporalLayer};
use crate::tensor::Tensor2;

pub const MAGIC: &[u8; 8] = b"PURETSCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerRole {
    Temporal,
    Spatial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub role: LayerRole,
    pub index: usize,
    pub unit: usize,
    pub rows: usize,
    pub cols: usize,
    pub activation: Activation,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub n_features: usize,
    pub input_window: usize,
    pub horizon: usize,
    pub layers: Vec<LayerEntry>,
    pub n_values: usize,
    /// Free-form record of how the model was produced.
    pub config: serde_json::Value,
}

pub fn to_bytes(model: &LinearStack, config: &serde_json::Value) -> Vec<u8> {
    let mut layers = Vec::new();
    let mut payload: Vec<f64> = Vec::new();
    let mut push = |role: LayerRole, index: usize, unit: usize, l: &AffineLayer| {
        let weight_offset = payload.len();
        payload.extend_from_slice(l.weight.data());
        let bias_offset = payload.len();
        payload.extend_from_slice(&l.bias);
        layers.push(LayerEntry {
            role,
            index,
            unit,
            rows: l.out_dim(),
            cols: l.in_dim(),
            activation: l.activation,
            weight_offset,
            bias_offset,
        });
    };
    for (k, layer) in model.temporal_layers().iter().enumerate() {
        for (u, unit) in layer.units().iter().enumerate() {
            push(LayerRole::Temporal, k, u, unit);
        }
    }
    if let Some(s) = model.spatial_layer() {
        push(LayerRole::Spatial, 0, 0, s);
    }
    let header = Header {
        format: "purets-checkpoint".into(),
        version: VERSION,
        n_features: model.n_features(),
        input_window: model.input_window(),
        horizon: model.horizon(),
        n_values: payload.len(),
        layers,
        config: config.clone(),
    };
    let header_bytes = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(20 + header_bytes.len() + payload.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Splits a checkpoint into its header and raw payload values.
pub fn parse(bytes: &[u8]) -> Result<(Header, Vec<f64>), CheckpointError> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let hdr_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = &bytes[20..];
    if hdr_len > body.len() {
        return Err(CheckpointError::Corrupt("header runs past end of file".into()));
    }
    let header: Header = serde_json::from_slice(&body[..hdr_len])?;
    let payload = &body[hdr_len..];
    if payload.len() != header.n_values * 8 {
        return Err(CheckpointError::Corrupt(format!(
            "payload has {} bytes, header promises {} values",
            payload.len(),
            header.n_values
        )));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((header, values))
}

pub fn from_bytes(bytes: &[u8]) -> Result<(LinearStack, serde_json::Value), CheckpointError> {
    let (header, values) = parse(bytes)?;
    let take = |offset: usize, len: usize| -> Result<Vec<f64>, CheckpointError> {
        values
            .get(offset..offset + len)
            .map(<[f64]>::to_vec)
            .ok_or_else(|| CheckpointError::Corrupt(format!("buffer at {offset}+{len} out of range")))
    };
    let mut temporal: Vec<Vec<AffineLayer>> = Vec::new();
    let mut spatial = None;
    for e in &header.layers {
        let weight = Tensor2::from_vec(e.rows, e.cols, take(e.weight_offset, e.rows * e.cols)?)
            .map_err(ModelError::from)?;
        let layer = AffineLayer::new(weight, take(e.bias_offset, e.rows)?, e.activation)?;
        match e.role {
            LayerRole::Temporal => {
                if e.index == temporal.len() {
                    temporal.push(Vec::new());
                }
                let slot = temporal.get_mut(e.index).ok_or_else(|| {
                    CheckpointError::Corrupt(format!("temporal layer {} out of order", e.index))
                })?;
                if e.unit != slot.len() {
                    return Err(CheckpointError::Corrupt(format!(
                        "unit {} of layer {} out of order",
                        e.unit, e.index
                    )));
                }
                slot.push(layer);
            }
            LayerRole::Spatial => spatial = Some(layer),
        }
    }
    let temporal = temporal
        .into_iter()
        .map(|units| {
            if units.len() == 1 {
                Ok(TemporalLayer::shared(units.into_iter().next().expect("one unit")))
            } else {
                TemporalLayer::per_channel(units)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let model = LinearStack::from_layers(temporal, spatial, header.n_features)?;
    Ok((model, header.config))
}

pub fn save(path: impl AsRef<Path>, model: &LinearStack, config: &serde_json::Value) -> Result<(), CheckpointError> {
    fsio::write_atomic(path, &to_bytes(model, config))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<(LinearStack, serde_json::Value), CheckpointError> {
    from_bytes(&std::fs::read(path)?)
}
