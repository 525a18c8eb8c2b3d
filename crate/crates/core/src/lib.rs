//! Pure linear-layer models for long-horizon time-series forecasting.
//!
//! The crate covers the whole loop: load and window a series ([`data`]),
//! build a linear stack ([`model`]), fit it ([`train`]), score the
//! forecasts ([`metrics`]) and measure its cost ([`profile`]).

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod fsio;
pub mod metrics;
pub mod model;
pub mod plot;
pub mod profile;
pub mod rng;
pub mod study;
pub mod tensor;
pub mod train;

pub use data::{SeriesDataset, Split, SplitPolicy, WindowBatch};
pub use metrics::MetricReport;
pub use model::{LinearStack, ModelKind, StackConfig};
pub use rng::RandomSource;
pub use tensor::{Tensor2, Tensor3};
pub use train::{ConvergenceTrace, TrainConfig};
