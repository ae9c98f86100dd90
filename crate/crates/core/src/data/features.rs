//! Calendar features and train-span standardization.

use std::ops::Range;

use chrono::{Datelike, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use super::RawSeries;
use crate::error::{Error, Result};

/// Calendar encodings of one instant, each mapped affinely onto
/// `[-0.5, 0.5]`: month, day of month, weekday (Monday lowest), hour, and
/// optionally minute.
pub fn time_features_at(ts: &NaiveDateTime, with_minute: bool) -> Vec<f64> {
    let mut f = vec![
        (ts.month0() as f64) / 11.0 - 0.5,
        (ts.day0() as f64) / 30.0 - 0.5,
        (ts.weekday().num_days_from_monday() as f64) / 6.0 - 0.5,
        (ts.hour() as f64) / 23.0 - 0.5,
    ];
    if with_minute {
        f.push(ts.minute() as f64 / 59.0 - 0.5);
    }
    f
}

/// Row-major `[len, count]` feature matrix for a run of timestamps.
pub fn time_features(timestamps: &[NaiveDateTime], count: usize) -> Vec<f64> {
    timestamps
        .iter()
        .flat_map(|ts| time_features_at(ts, count > 4))
        .collect()
}

/// Per-channel affine map fitted on the training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation.
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(series: &RawSeries, rows: Range<usize>) -> Result<Self> {
        if rows.is_empty() || rows.end > series.len() {
            return Err(Error::Data(format!(
                "training span {rows:?} is empty or exceeds {} rows",
                series.len()
            )));
        }
        let n = rows.len() as f64;
        let mut mean = Vec::with_capacity(series.channels());
        let mut std = Vec::with_capacity(series.channels());
        for c in 0..series.channels() {
            let m = rows.clone().map(|r| series.get(r, c)).sum::<f64>() / n;
            let var = rows.clone().map(|r| (series.get(r, c) - m).powi(2)).sum::<f64>() / n;
            let s = var.sqrt();
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::Data(format!(
                    "channel {:?} is constant over the training span",
                    series.names[c]
                )));
            }
            mean.push(m);
            std.push(s);
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, series: &RawSeries) -> RawSeries {
        let c = series.channels();
        let values = series
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % c]) / self.std[i % c])
            .collect();
        RawSeries {
            values,
            ..series.clone()
        }
    }

    pub fn invert(&self, value: f64, channel: usize) -> f64 {
        value * self.std[channel] + self.mean[channel]
    }

    pub fn invert_series(&self, series: &RawSeries) -> RawSeries {
        let c = series.channels();
        let values = series
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| self.invert(v, i % c))
            .collect();
        RawSeries {
            values,
            ..series.clone()
        }
    }
}

/// Standardizes every row with statistics from `train` rows only.
pub fn standardize(series: &RawSeries, train: Range<usize>) -> Result<(RawSeries, Standardizer)> {
    let stats = Standardizer::fit(series, train)?;
    Ok((stats.apply(series), stats))
}
