//! Series ingestion, chronological splitting, z-score normalization and
//! sliding windows.
//!
//! Normalization statistics always come from the training split. Metrics
//! for the long-horizon benchmarks are reported on that normalized scale.

use std::f64::consts::PI;
use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RandomSource;
use crate::tensor::{Tensor2, Tensor3};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },
    #[error("ragged row {row}: expected {expected} fields, found {found}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("no data rows")]
    NoDataRows,
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("invalid split: {0}")]
    Split(String),
    #[error("{split} split has {len} rows, fewer than window {window} + horizon {horizon}")]
    TooShort {
        split: Split,
        len: usize,
        window: usize,
        horizon: usize,
    },
    #[error("dataset has not been split; call split_and_normalize first")]
    NotSplit,
    #[error("invalid value: {0}")]
    Invalid(String),
}

/// How a CSV file maps onto a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    /// First column is a timestamp and is kept as text, not parsed.
    pub date_column: bool,
    /// Value columns to keep, by header name. `None` keeps every
    /// non-date column in file order.
    pub value_columns: Option<Vec<String>>,
    /// Expected channel count, checked after parsing when set.
    pub n_features: Option<usize>,
}

impl CsvSchema {
    pub fn with_date() -> Self {
        Self {
            date_column: true,
            value_columns: None,
            n_features: None,
        }
    }

    pub fn values_only() -> Self {
        Self {
            date_column: false,
            value_columns: None,
            n_features: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// Sampling interval of a series, in minutes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Granularity {
    pub minutes: u32,
}

impl Granularity {
    pub const HOURLY: Granularity = Granularity { minutes: 60 };
    pub const QUARTER_HOUR: Granularity = Granularity { minutes: 15 };
    pub const TEN_MINUTES: Granularity = Granularity { minutes: 10 };
    pub const DAILY: Granularity = Granularity { minutes: 1440 };

    /// Rows in one 30-day month.
    pub fn rows_per_month(self) -> usize {
        (30 * 24 * 60 / self.minutes) as usize
    }
}

impl FromStr for Granularity {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        let (num, unit) = s.split_at(s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len()));
        let n: u32 = if num.is_empty() {
            1
        } else {
            num.parse()
                .map_err(|_| DataError::Invalid(format!("bad granularity: {s}")))?
        };
        let minutes = match unit {
            "min" | "m" | "t" => n,
            "h" | "hour" => n * 60,
            "d" | "day" => n * 1440,
            _ => return Err(DataError::Invalid(format!("bad granularity: {s}"))),
        };
        if minutes == 0 || (30 * 24 * 60) % minutes != 0 {
            return Err(DataError::Invalid(format!("bad granularity: {s}")));
        }
        Ok(Granularity { minutes })
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.minutes.is_multiple_of(1440) {
            write!(f, "{}d", self.minutes / 1440)
        } else if self.minutes.is_multiple_of(60) {
            write!(f, "{}h", self.minutes / 60)
        } else {
            write!(f, "{}min", self.minutes)
        }
    }
}

/// Chronological train/val/test split rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SplitPolicy {
    /// Whole 30-day months at the given granularity; rows past the test
    /// months are dropped.
    Months {
        train: usize,
        val: usize,
        test: usize,
        granularity: Granularity,
    },
    /// Proportions of the full length, e.g. 6/2/2.
    Ratio { train: f64, val: f64, test: f64 },
}

impl SplitPolicy {
    pub const ETT_HOURLY: SplitPolicy = SplitPolicy::Months {
        train: 12,
        val: 4,
        test: 4,
        granularity: Granularity::HOURLY,
    };

    pub fn ratio(train: f64, val: f64, test: f64) -> Self {
        SplitPolicy::Ratio { train, val, test }
    }

    /// `(train_end, val_end, test_end)` for a series of `len` rows.
    pub fn bounds(&self, len: usize) -> Result<SplitBounds, DataError> {
        let b = match *self {
            SplitPolicy::Months {
                train,
                val,
                test,
                granularity,
            } => {
                let rpm = granularity.rows_per_month();
                let train_end = train * rpm;
                let val_end = (train + val) * rpm;
                if val_end >= len {
                    return Err(DataError::Split(format!(
                        "{train}/{val}/{test} months at {granularity} need more than {val_end} rows, have {len}"
                    )));
                }
                SplitBounds {
                    train_end,
                    val_end,
                    test_end: ((train + val + test) * rpm).min(len),
                }
            }
            SplitPolicy::Ratio { train, val, test } => {
                if !(train > 0.0 && val > 0.0 && test >= 0.0) {
                    return Err(DataError::Split(format!(
                        "ratios must be positive: {train}/{val}/{test}"
                    )));
                }
                let total = train + val + test;
                SplitBounds {
                    train_end: (len as f64 * train / total).floor() as usize,
                    val_end: (len as f64 * (train + val) / total).floor() as usize,
                    test_end: len,
                }
            }
        };
        if b.train_end == 0 || b.train_end >= b.val_end || b.val_end > b.test_end {
            return Err(DataError::Split(format!(
                "degenerate bounds {b:?} for {len} rows"
            )));
        }
        Ok(b)
    }
}

impl FromStr for SplitPolicy {
    type Err = DataError;

    /// Parses `months:12/4/4@1h` or `ratio:6/2/2`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DataError::Invalid(format!("bad split policy: {s}"));
        let (kind, rest) = s.trim().split_once(':').ok_or_else(bad)?;
        let (parts, gran) = match rest.split_once('@') {
            Some((p, g)) => (p, Some(g.parse::<Granularity>()?)),
            None => (rest, None),
        };
        let nums: Vec<f64> = parts
            .split('/')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        let [a, b, c] = nums[..] else {
            return Err(bad());
        };
        match kind.trim() {
            "months" => {
                if [a, b, c].iter().any(|v| v.fract() != 0.0 || *v < 0.0) {
                    return Err(bad());
                }
                Ok(SplitPolicy::Months {
                    train: a as usize,
                    val: b as usize,
                    test: c as usize,
                    granularity: gran.unwrap_or(Granularity::HOURLY),
                })
            }
            "ratio" => Ok(SplitPolicy::Ratio {
                train: a,
                val: b,
                test: c,
            }),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitBounds {
    pub train_end: usize,
    pub val_end: usize,
    pub test_end: usize,
}

/// A multivariate series (rows are time steps, columns are channels).
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesDataset {
    pub name: String,
    pub columns: Vec<String>,
    pub timestamps: Option<Vec<String>>,
    raw: Tensor2,
    values: Tensor2,
    channel_means: Vec<f64>,
    channel_stds: Vec<f64>,
    bounds: Option<SplitBounds>,
}

impl SeriesDataset {
    /// Wraps raw values; no split or normalization yet.
    pub fn from_values(name: impl Into<String>, columns: Vec<String>, values: Tensor2) -> Result<Self, DataError> {
        if columns.len() != values.cols() {
            return Err(DataError::Schema(format!(
                "{} column names for {} channels",
                columns.len(),
                values.cols()
            )));
        }
        if values.rows() == 0 {
            return Err(DataError::NoDataRows);
        }
        Ok(Self {
            name: name.into(),
            columns,
            timestamps: None,
            raw: values.clone(),
            values,
            channel_means: Vec::new(),
            channel_stds: Vec::new(),
            bounds: None,
        })
    }

    pub fn len(&self) -> usize {
        self.raw.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.rows() == 0
    }

    pub fn n_features(&self) -> usize {
        self.raw.cols()
    }

    pub fn raw(&self) -> &Tensor2 {
        &self.raw
    }

    /// Standardized values once split, raw values before.
    pub fn values(&self) -> &Tensor2 {
        &self.values
    }

    pub fn channel_means(&self) -> &[f64] {
        &self.channel_means
    }

    pub fn channel_stds(&self) -> &[f64] {
        &self.channel_stds
    }

    pub fn split_bounds(&self) -> Option<SplitBounds> {
        self.bounds
    }

    pub fn is_normalized(&self) -> bool {
        self.bounds.is_some()
    }

    pub fn split_range(&self, split: Split) -> Result<Range<usize>, DataError> {
        let b = self.bounds.ok_or(DataError::NotSplit)?;
        Ok(match split {
            Split::Train => 0..b.train_end,
            Split::Val => b.train_end..b.val_end,
            Split::Test => b.val_end..b.test_end,
        })
    }

    /// Maps standardized values back to the raw scale. Works on any
    /// `(B, T, N)` tensor whose last axis is this dataset's channels.
    pub fn denormalize(&self, x: &Tensor3) -> Result<Tensor3, DataError> {
        if !self.is_normalized() {
            return Err(DataError::NotSplit);
        }
        let n = self.n_features();
        if x.axis2() != n {
            return Err(DataError::Schema(format!(
                "tensor has {} channels, dataset has {n}",
                x.axis2()
            )));
        }
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let c = i % n;
            *v = *v * self.channel_stds[c] + self.channel_means[c];
        }
        Ok(out)
    }

    /// Standardizes raw-scale values with this dataset's statistics.
    pub fn normalize(&self, x: &Tensor3) -> Result<Tensor3, DataError> {
        if !self.is_normalized() {
            return Err(DataError::NotSplit);
        }
        let n = self.n_features();
        if x.axis2() != n {
            return Err(DataError::Schema(format!(
                "tensor has {} channels, dataset has {n}",
                x.axis2()
            )));
        }
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let c = i % n;
            *v = (*v - self.channel_means[c]) / self.channel_stds[c];
        }
        Ok(out)
    }
}

/// Reads a comma-separated file with a header row.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<SeriesDataset, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    read_csv(file, name, schema)
}

/// [`load_csv`] over any reader.
pub fn read_csv(
    reader: impl std::io::Read,
    name: impl Into<String>,
    schema: &CsvSchema,
) -> Result<SeriesDataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| DataError::Parse {
            row: 1,
            col: 0,
            msg: e.to_string(),
        })?
        .iter()
        .map(str::to_owned)
        .collect();
    let first_value = usize::from(schema.date_column);
    if headers.len() <= first_value {
        return Err(DataError::Schema("header has no value columns".into()));
    }
    let selected: Vec<usize> = match &schema.value_columns {
        None => (first_value..headers.len()).collect(),
        Some(names) => names
            .iter()
            .map(|n| {
                headers
                    .iter()
                    .position(|h| h == n)
                    .ok_or_else(|| DataError::Schema(format!("column not found: {n}")))
            })
            .collect::<Result<_, _>>()?,
    };
    if let Some(expected) = schema.n_features {
        if expected != selected.len() {
            return Err(DataError::Schema(format!(
                "expected {expected} value columns, found {}",
                selected.len()
            )));
        }
    }

    let mut data = Vec::new();
    let mut stamps = schema.date_column.then(Vec::new);
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        // Line numbers are 1-based and the header is line 1.
        let line = i + 2;
        let rec = rec.map_err(|e| DataError::Parse {
            row: line,
            col: 0,
            msg: e.to_string(),
        })?;
        if rec.len() != headers.len() {
            return Err(DataError::Ragged {
                row: line,
                expected: headers.len(),
                found: rec.len(),
            });
        }
        if let Some(s) = stamps.as_mut() {
            s.push(rec[0].to_owned());
        }
        for &c in &selected {
            let cell = &rec[c];
            let v: f64 = cell.parse().map_err(|_| DataError::Parse {
                row: line,
                col: c + 1,
                msg: format!("not a number: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(DataError::Parse {
                    row: line,
                    col: c + 1,
                    msg: format!("non-finite value: {cell:?}"),
                });
            }
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(DataError::NoDataRows);
    }
    let columns = selected.iter().map(|&c| headers[c].clone()).collect();
    let values = Tensor2::from_vec(rows, selected.len(), data).expect("row count matches");
    let mut ds = SeriesDataset::from_values(name, columns, values)?;
    ds.timestamps = stamps;
    Ok(ds)
}

/// Sets split bounds and replaces values with per-channel z-scores computed
/// on the training rows. Zero-variance channels get `σ = 1`.
pub fn split_and_normalize(ds: &SeriesDataset, policy: &SplitPolicy) -> Result<SeriesDataset, DataError> {
    let bounds = policy.bounds(ds.len())?;
    let n = ds.n_features();
    let train_rows = bounds.train_end as f64;
    let mut means = vec![0.0; n];
    for r in 0..bounds.train_end {
        for (m, v) in means.iter_mut().zip(ds.raw.row(r)) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= train_rows);
    let mut stds = vec![0.0; n];
    for r in 0..bounds.train_end {
        for ((s, v), m) in stds.iter_mut().zip(ds.raw.row(r)).zip(&means) {
            *s += (v - m) * (v - m);
        }
    }
    for (c, s) in stds.iter_mut().enumerate() {
        *s = (*s / train_rows).sqrt();
        if *s <= f64::EPSILON * means[c].abs().max(1.0) {
            warn!(
                "{}: channel {} is constant on the train split; using std 1",
                ds.name, ds.columns[c]
            );
            *s = 1.0;
        }
    }
    let mut values = ds.raw.clone();
    for r in 0..values.rows() {
        for c in 0..n {
            let v = values.get(r, c);
            values.set(r, c, (v - means[c]) / stds[c]);
        }
    }
    Ok(SeriesDataset {
        values,
        channel_means: means,
        channel_stds: stds,
        bounds: Some(bounds),
        ..ds.clone()
    })
}

/// Paired inputs `(B, T, N)` and targets `(B, T', N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    pub inputs: Tensor3,
    pub targets: Tensor3,
}

/// Sliding windows over one split of a normalized dataset.
#[derive(Debug, Clone)]
pub struct WindowSet<'a> {
    ds: &'a SeriesDataset,
    split: Split,
    /// Absolute row index of each window's first input row.
    starts: Vec<usize>,
    window: usize,
    horizon: usize,
}

/// Enumerates every window start `s` in the split with `s + T + T'` inside
/// the split, stepping by `stride`.
pub fn make_windows(
    ds: &SeriesDataset,
    split: Split,
    window: usize,
    horizon: usize,
    stride: usize,
) -> Result<WindowSet<'_>, DataError> {
    if window == 0 || horizon == 0 || stride == 0 {
        return Err(DataError::Invalid(
            "window, horizon and stride must be at least 1".into(),
        ));
    }
    let range = ds.split_range(split)?;
    let len = range.len();
    if window + horizon > len {
        return Err(DataError::TooShort {
            split,
            len,
            window,
            horizon,
        });
    }
    let starts = (0..=len - window - horizon)
        .step_by(stride)
        .map(|s| range.start + s)
        .collect();
    Ok(WindowSet {
        ds,
        split,
        starts,
        window,
        horizon,
    })
}

impl<'a> WindowSet<'a> {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Absolute input and target row ranges of window `i`.
    pub fn rows(&self, i: usize) -> (Range<usize>, Range<usize>) {
        let s = self.starts[i];
        (s..s + self.window, s + self.window..s + self.window + self.horizon)
    }

    /// Gathers the listed windows into one batch.
    pub fn batch(&self, indices: &[usize]) -> WindowBatch {
        let n = self.ds.n_features();
        let values = self.ds.values.data();
        let mut inputs = Vec::with_capacity(indices.len() * self.window * n);
        let mut targets = Vec::with_capacity(indices.len() * self.horizon * n);
        for &i in indices {
            let (inp, tgt) = self.rows(i);
            inputs.extend_from_slice(&values[inp.start * n..inp.end * n]);
            targets.extend_from_slice(&values[tgt.start * n..tgt.end * n]);
        }
        WindowBatch {
            inputs: Tensor3::from_vec(indices.len(), self.window, n, inputs).expect("sized"),
            targets: Tensor3::from_vec(indices.len(), self.horizon, n, targets).expect("sized"),
        }
    }

    /// Every window, in chronological order.
    pub fn all(&self) -> WindowBatch {
        let idx: Vec<usize> = (0..self.len()).collect();
        self.batch(&idx)
    }

    /// Chronological batches of at most `batch_size` windows.
    pub fn batches(&self, batch_size: usize) -> impl Iterator<Item = WindowBatch> + '_ {
        let idx: Vec<usize> = (0..self.len()).collect();
        let size = batch_size.max(1);
        (0..self.len())
            .step_by(size)
            .map(move |s| self.batch(&idx[s..(s + size).min(idx.len())]))
    }
}

/// Parameters of a synthetic `amplitude · sin(phase + i·Δx) + noise` series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SineSpec {
    pub n_points: usize,
    pub step: f64,
    pub amplitude: f64,
    pub phase: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SineSpec {
    fn default() -> Self {
        Self {
            n_points: 4000,
            step: 2.0 * PI / 50.0,
            amplitude: 1.0,
            phase: 0.0,
            noise_std: 0.0,
            seed: 0,
        }
    }
}

pub fn generate_sine(spec: &SineSpec) -> Result<SeriesDataset, DataError> {
    if spec.n_points == 0 {
        return Err(DataError::NoDataRows);
    }
    if !(spec.step > 0.0) || !(spec.noise_std >= 0.0) {
        return Err(DataError::Invalid(format!(
            "sine step must be > 0 and noise_std >= 0, got {} and {}",
            spec.step, spec.noise_std
        )));
    }
    let mut rng = RandomSource::new(spec.seed);
    let data = (0..spec.n_points)
        .map(|i| {
            let clean = spec.amplitude * (spec.phase + i as f64 * spec.step).sin();
            if spec.noise_std > 0.0 {
                clean + rng.normal(0.0, spec.noise_std)
            } else {
                clean
            }
        })
        .collect();
    let values = Tensor2::from_vec(spec.n_points, 1, data).expect("single column");
    SeriesDataset::from_values("sine", vec!["sin".into()], values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(rows: usize) -> SeriesDataset {
        let data = (0..rows * 2).map(|v| v as f64).collect();
        SeriesDataset::from_values("toy", vec!["a".into(), "b".into()], Tensor2::from_vec(rows, 2, data).unwrap())
            .unwrap()
    }

    #[test]
    fn reads_toy_csv() {
        let text = "date,a,b\n2020-01-01 00:00:00,1,2\n2020-01-01 01:00:00,3,4\n2020-01-01 02:00:00,5,6\n";
        let ds = read_csv(text.as_bytes(), "toy", &CsvSchema::with_date()).unwrap();
        assert_eq!(ds.values().data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(ds.columns, vec!["a", "b"]);
        assert_eq!(ds.timestamps.as_ref().unwrap().len(), 3);
    }

    #[test]
    fn csv_error_paths() {
        let header_only = read_csv("date,a\n".as_bytes(), "x", &CsvSchema::with_date());
        assert!(matches!(header_only, Err(DataError::NoDataRows)));
        assert_eq!(header_only.unwrap_err().to_string(), "no data rows");

        let bad = read_csv("a,b\n1,2\n3,x\n".as_bytes(), "x", &CsvSchema::values_only());
        assert!(matches!(bad, Err(DataError::Parse { row: 3, col: 2, .. })), "{bad:?}");

        let ragged = read_csv("a,b\n1,2\n3\n".as_bytes(), "x", &CsvSchema::values_only());
        assert!(matches!(ragged, Err(DataError::Ragged { row: 3, .. })));

        let nan = read_csv("a\n1\nNaN\n".as_bytes(), "x", &CsvSchema::values_only());
        assert!(matches!(nan, Err(DataError::Parse { row: 3, .. })));

        let mut schema = CsvSchema::values_only();
        schema.n_features = Some(7);
        assert!(matches!(
            read_csv("a,b\n1,2\n".as_bytes(), "x", &schema),
            Err(DataError::Schema(_))
        ));

        assert!(matches!(
            load_csv("/definitely/not/here.csv", &schema),
            Err(DataError::Io { .. })
        ));
    }

    #[test]
    fn selects_named_columns() {
        let schema = CsvSchema {
            date_column: true,
            value_columns: Some(vec!["c".into(), "a".into()]),
            n_features: Some(2),
        };
        let ds = read_csv("t,a,b,c\nx,1,2,3\n".as_bytes(), "x", &schema).unwrap();
        assert_eq!(ds.values().data(), &[3.0, 1.0]);
    }

    #[test]
    fn ratio_and_month_bounds() {
        let b = SplitPolicy::ratio(6.0, 2.0, 2.0).bounds(100).unwrap();
        assert_eq!((b.train_end, b.val_end, b.test_end), (60, 80, 100));

        // 30-day months of 15-minute rows.
        let ettm1 = SplitPolicy::Months {
            train: 12,
            val: 4,
            test: 4,
            granularity: Granularity::QUARTER_HOUR,
        };
        let b = ettm1.bounds(69680).unwrap();
        assert_eq!(b.train_end, 12 * 30 * 24 * 4);
        assert_eq!(b.val_end, 16 * 30 * 24 * 4);
        assert_eq!(b.test_end, 20 * 30 * 24 * 4);

        let b = SplitPolicy::ETT_HOURLY.bounds(17420).unwrap();
        assert_eq!((b.train_end, b.val_end, b.test_end), (8640, 11520, 14400));
        assert!(SplitPolicy::ETT_HOURLY.bounds(5000).is_err());
    }

    #[test]
    fn parses_policies_and_granularities() {
        assert_eq!("ratio:6/2/2".parse::<SplitPolicy>().unwrap(), SplitPolicy::ratio(6.0, 2.0, 2.0));
        assert_eq!(
            "months:12/4/4@15min".parse::<SplitPolicy>().unwrap(),
            SplitPolicy::Months {
                train: 12,
                val: 4,
                test: 4,
                granularity: Granularity::QUARTER_HOUR
            }
        );
        assert_eq!("1h".parse::<Granularity>().unwrap(), Granularity::HOURLY);
        assert_eq!("10min".parse::<Granularity>().unwrap(), Granularity::TEN_MINUTES);
        assert_eq!("1d".parse::<Granularity>().unwrap().rows_per_month(), 30);
        assert!("months:12/4".parse::<SplitPolicy>().is_err());
        assert!("7s".parse::<Granularity>().is_err());
    }

    #[test]
    fn normalization_uses_train_stats_and_round_trips() {
        let ds = toy(100);
        let n = split_and_normalize(&ds, &SplitPolicy::ratio(6.0, 2.0, 2.0)).unwrap();
        // channel a = 0,2,...,118 on train rows; mean 59
        assert!((n.channel_means()[0] - 59.0).abs() < 1e-12);
        let train_col: Vec<f64> = (0..60).map(|r| n.values().get(r, 0)).collect();
        let mean: f64 = train_col.iter().sum::<f64>() / 60.0;
        let var: f64 = train_col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 60.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);

        let all = Tensor3::from_vec(1, 100, 2, n.values().data().to_vec()).unwrap();
        let back = n.denormalize(&all).unwrap();
        for (a, b) in back.data().iter().zip(ds.raw().data()) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn constant_channel_gets_unit_std() {
        let values = Tensor2::from_vec(10, 2, (0..10).flat_map(|i| [5.0, i as f64]).collect()).unwrap();
        let ds = SeriesDataset::from_values("c", vec!["k".into(), "v".into()], values).unwrap();
        let n = split_and_normalize(&ds, &SplitPolicy::ratio(6.0, 2.0, 2.0)).unwrap();
        assert_eq!(n.channel_stds()[0], 1.0);
        assert!((0..10).all(|r| n.values().get(r, 0) == 0.0));
    }

    #[test]
    fn window_counts_and_alignment() {
        let ds = split_and_normalize(&toy(50), &SplitPolicy::ratio(1.0, 1.0, 3.0)).unwrap();
        // train split is 10 rows
        let w = make_windows(&ds, Split::Train, 3, 2, 1).unwrap();
        assert_eq!(w.len(), 6);
        let b = w.all();
        for s in 0..w.len() - 3 {
            assert_eq!(b.targets.lane(s, 0), b.inputs.lane(s + 3, 0));
            assert_eq!(b.targets.lane(s, 1), b.inputs.lane(s + 3, 1));
        }
        let max_row = (0..w.len()).map(|i| w.rows(i).1.end).max().unwrap();
        assert!(max_row <= ds.split_bounds().unwrap().train_end);

        assert_eq!(make_windows(&ds, Split::Train, 3, 2, 2).unwrap().len(), 3);
        assert!(matches!(
            make_windows(&ds, Split::Train, 6, 5, 1),
            Err(DataError::TooShort { .. })
        ));
        assert!(matches!(
            make_windows(&toy(10), Split::Train, 3, 3, 1),
            Err(DataError::NotSplit)
        ));
    }

    #[test]
    fn infeasible_window_on_short_split() {
        let ds = split_and_normalize(&toy(25), &SplitPolicy::ratio(1.0, 1.0, 3.0)).unwrap();
        // 5 train rows
        assert!(make_windows(&ds, Split::Train, 3, 3, 1).is_err());
    }

    #[test]
    fn batches_cover_every_window_once() {
        let ds = split_and_normalize(&toy(50), &SplitPolicy::ratio(1.0, 1.0, 3.0)).unwrap();
        let w = make_windows(&ds, Split::Test, 4, 2, 1).unwrap();
        let sizes: Vec<usize> = w.batches(7).map(|b| b.inputs.batch()).collect();
        assert_eq!(sizes.iter().sum::<usize>(), w.len());
        assert!(sizes[..sizes.len() - 1].iter().all(|&s| s == 7));
    }

    #[test]
    fn quarter_period_sine() {
        let spec = SineSpec {
            n_points: 5,
            step: PI / 2.0,
            ..SineSpec::default()
        };
        let ds = generate_sine(&spec).unwrap();
        for (v, e) in ds.values().data().iter().zip([0.0, 1.0, 0.0, -1.0, 0.0]) {
            assert!((v - e).abs() < 1e-12);
        }
        assert_eq!(generate_sine(&spec).unwrap(), ds);
    }

    #[test]
    fn sine_bounded_and_noise_seeded() {
        let spec = SineSpec {
            amplitude: 2.5,
            phase: 0.3,
            ..SineSpec::default()
        };
        let ds = generate_sine(&spec).unwrap();
        assert!(ds.values().data().iter().all(|v| v.abs() <= 2.5));
        let noisy = SineSpec {
            noise_std: 0.1,
            seed: 4,
            ..spec.clone()
        };
        assert_eq!(generate_sine(&noisy).unwrap(), generate_sine(&noisy).unwrap());
        assert_ne!(generate_sine(&noisy).unwrap(), ds);
    }
}
