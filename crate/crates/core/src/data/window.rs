//! Chronological splits and sliding-window instances.

use std::ops::Range;
use std::sync::Arc;

use chrono::{Months, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::features::{standardize, time_features, Standardizer};
use super::RawSeries;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelInput};
use crate::numerics::{Shape, Tensor};

/// How the series is cut into train / validation / test spans.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitSpec {
    /// Calendar months counted from the first timestamp.
    Months { train: u32, val: u32, test: u32 },
    /// Fractions of the row count; the test span takes the remainder.
    Ratio { train: f64, val: f64 },
}

impl SplitSpec {
    pub const ETT: SplitSpec = SplitSpec::Months { train: 12, val: 4, test: 4 };
    pub const ECL: SplitSpec = SplitSpec::Months { train: 15, val: 3, test: 4 };
    pub const SYNTHETIC: SplitSpec = SplitSpec::Ratio { train: 0.7, val: 0.1 };

    pub fn bounds(&self, timestamps: &[NaiveDateTime]) -> Result<SplitBounds> {
        let len = timestamps.len();
        let (a, b, c) = match *self {
            SplitSpec::Months { train, val, test } => {
                let start = *timestamps.first().ok_or_else(|| Error::Data("empty series".into()))?;
                let cut = |months: u32| -> Result<usize> {
                    let edge = start
                        .checked_add_months(Months::new(months))
                        .ok_or_else(|| Error::Data(format!("cannot add {months} months to {start}")))?;
                    Ok(timestamps.partition_point(|t| *t < edge))
                };
                (cut(train)?, cut(train + val)?, cut(train + val + test)?)
            }
            SplitSpec::Ratio { train, val } => {
                if !(train > 0.0 && val >= 0.0 && train + val < 1.0) {
                    return Err(Error::Config(format!("bad split ratios {train} / {val}")));
                }
                let a = (len as f64 * train).floor() as usize;
                let b = a + (len as f64 * val).floor() as usize;
                (a, b, len)
            }
        };
        let bounds = SplitBounds {
            train: 0..a,
            val: a..b,
            test: b..c,
        };
        for (name, r) in bounds.named() {
            if r.is_empty() {
                return Err(Error::Data(format!("{name} split is empty ({len} rows, {self:?})")));
            }
        }
        Ok(bounds)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitBounds {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl SplitBounds {
    pub fn named(&self) -> [(&'static str, Range<usize>); 3] {
        [
            ("train", self.train.clone()),
            ("val", self.val.clone()),
            ("test", self.test.clone()),
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub history: usize,
    pub horizon: usize,
    pub stride: usize,
}

impl WindowSpec {
    pub fn new(history: usize, horizon: usize) -> Self {
        Self {
            history,
            horizon,
            stride: 1,
        }
    }

    pub fn total(&self) -> usize {
        self.history + self.horizon
    }
}

/// `floor((span - (T + tau)) / stride) + 1`, or 0 when the span is too short.
pub fn window_count(span: usize, spec: &WindowSpec) -> usize {
    if spec.stride == 0 || span < spec.total() || spec.total() == 0 {
        0
    } else {
        (span - spec.total()) / spec.stride + 1
    }
}

/// Absolute start rows of every window lying wholly inside `range`.
pub fn window_starts(range: Range<usize>, spec: &WindowSpec) -> Vec<usize> {
    (0..window_count(range.len(), spec))
        .map(|i| range.start + i * spec.stride)
        .collect()
}

/// Which columns are forecast; the rest become past-only predictors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    /// Target column names; empty selects every column.
    pub targets: Vec<String>,
    pub split: SplitSpec,
    pub window: WindowSpec,
}

#[derive(Debug)]
struct Prepared {
    values: Vec<f64>,
    channels: usize,
    marks: Vec<f64>,
    feature_count: usize,
    predictors: Vec<usize>,
    targets: Vec<usize>,
}

/// One batch: model-visible inputs plus the targets kept apart from them.
#[derive(Clone, Debug)]
pub struct Batch {
    pub input: ModelInput,
    /// `[N, T, O]` past targets (reconstruction labels).
    pub y: Tensor,
    /// `[N, tau, O]` future targets.
    pub y_prime: Tensor,
}

#[derive(Clone, Debug)]
pub struct WindowedDataset {
    source: Arc<Prepared>,
    pub starts: Vec<usize>,
    pub spec: WindowSpec,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    /// Series rows covered by instance `i`.
    pub fn rows(&self, i: usize) -> Range<usize> {
        self.starts[i]..self.starts[i] + self.spec.total()
    }

    pub fn instance(&self, i: usize) -> Result<Batch> {
        self.batch(&[i])
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        if indices.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let src = &*self.source;
        let (t, tau) = (self.spec.history, self.spec.horizon);
        let n = indices.len();
        let past_c = src.predictors.len() + src.targets.len();
        let o = src.targets.len();
        let f = src.feature_count;
        let mut past = Vec::with_capacity(n * t * past_c);
        let mut past_marks = Vec::with_capacity(n * t * f);
        let mut future_marks = Vec::with_capacity(n * tau * f);
        let mut y = Vec::with_capacity(n * t * o);
        let mut y_prime = Vec::with_capacity(n * tau * o);
        for &i in indices {
            let start = *self
                .starts
                .get(i)
                .ok_or_else(|| Error::Data(format!("instance {i} out of range ({})", self.len())))?;
            for r in start..start + t {
                let row = &src.values[r * src.channels..(r + 1) * src.channels];
                past.extend(src.predictors.iter().map(|&c| row[c]));
                past.extend(src.targets.iter().map(|&c| row[c]));
                y.extend(src.targets.iter().map(|&c| row[c]));
                past_marks.extend_from_slice(&src.marks[r * f..(r + 1) * f]);
            }
            for r in start + t..start + t + tau {
                let row = &src.values[r * src.channels..(r + 1) * src.channels];
                y_prime.extend(src.targets.iter().map(|&c| row[c]));
                future_marks.extend_from_slice(&src.marks[r * f..(r + 1) * f]);
            }
        }
        Ok(Batch {
            input: ModelInput {
                past: Tensor::new(Shape::new(n, t, past_c), past)?,
                past_marks: Tensor::new(Shape::new(n, t, f), past_marks)?,
                future: None,
                future_marks: Tensor::new(Shape::new(n, tau, f), future_marks)?,
            },
            y: Tensor::new(Shape::new(n, t, o), y)?,
            y_prime: Tensor::new(Shape::new(n, tau, o), y_prime)?,
        })
    }
}

/// Standardized series cut into windowed train / val / test sets.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: WindowedDataset,
    pub val: WindowedDataset,
    pub test: WindowedDataset,
    pub bounds: SplitBounds,
    pub stats: Standardizer,
    pub target_names: Vec<String>,
    pub target_channels: Vec<usize>,
    pub predictor_channels: Vec<usize>,
    pub time_feature_count: usize,
}

impl Dataset {
    pub fn prepare(series: &RawSeries, spec: &DatasetSpec) -> Result<Self> {
        let bounds = spec.split.bounds(&series.timestamps)?;
        let (scaled, stats) = standardize(series, bounds.train.clone())?;
        let target_channels: Vec<usize> = if spec.targets.is_empty() {
            (0..series.channels()).collect()
        } else {
            spec.targets
                .iter()
                .map(|n| series.channel_index(n))
                .collect::<Result<_>>()?
        };
        let predictor_channels: Vec<usize> = (0..series.channels())
            .filter(|c| !target_channels.contains(c))
            .collect();
        let feature_count = series.frequency.time_feature_count();
        let source = Arc::new(Prepared {
            values: scaled.values,
            channels: series.channels(),
            marks: time_features(&series.timestamps, feature_count),
            feature_count,
            predictors: predictor_channels.clone(),
            targets: target_channels.clone(),
        });
        let split = |name: &str, range: Range<usize>| -> Result<WindowedDataset> {
            let starts = window_starts(range.clone(), &spec.window);
            if starts.is_empty() {
                return Err(Error::Data(format!(
                    "{name} split of {} rows is shorter than one window of {}",
                    range.len(),
                    spec.window.total()
                )));
            }
            Ok(WindowedDataset {
                source: Arc::clone(&source),
                starts,
                spec: spec.window,
            })
        };
        Ok(Self {
            train: split("train", bounds.train.clone())?,
            val: split("val", bounds.val.clone())?,
            test: split("test", bounds.test.clone())?,
            target_names: target_channels.iter().map(|&c| series.names[c].clone()).collect(),
            bounds,
            stats,
            target_channels,
            predictor_channels,
            time_feature_count: feature_count,
        })
    }

    /// Model geometry matching this dataset, other fields at their defaults.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            time_features: self.time_feature_count,
            ..ModelConfig::new(
                self.train.spec.history,
                self.train.spec.horizon,
                self.predictor_channels.len(),
                self.target_channels.len(),
            )
        }
    }

    /// Maps standardized target values `[N, L, O]` back to raw units.
    pub fn destandardize_targets(&self, t: &Tensor) -> Tensor {
        let o = self.target_channels.len();
        let mut out = t.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = self.stats.invert(*v, self.target_channels[i % o]);
        }
        out
    }
}
