//! Seeded synthetic hourly series.

use std::f64::consts::TAU;

use chrono::{NaiveDate, TimeDelta};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Frequency, RawSeries};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    /// Daily plus half-amplitude weekly sinusoid.
    SumOfSines,
    /// Slow linear drift on top of the daily sinusoid.
    TrendSeason,
    /// Cumulative Gaussian steps.
    RandomWalk,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum-of-sines" => Ok(Self::SumOfSines),
            "trend-season" | "trend+season" => Ok(Self::TrendSeason),
            "random-walk" => Ok(Self::RandomWalk),
            _ => Err(Error::Config(format!(
                "unknown series kind {s:?}; expected sum-of-sines, trend-season or random-walk"
            ))),
        }
    }
}

/// Hourly series starting 2016-07-01 00:00 with one column, `value`.
/// Periodic terms use `t mod period` so noiseless output repeats exactly.
pub fn synth_series(kind: SynthKind, length: usize, noise_sigma: f64, seed: u64) -> Result<RawSeries> {
    let bad_sigma = || Error::Config(format!("noise sigma must be finite and non-negative, got {noise_sigma}"));
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(bad_sigma());
    }
    let noise = Normal::new(0.0, noise_sigma).map_err(|_| bad_sigma())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let daily = |t: usize| (TAU * (t % 24) as f64 / 24.0).sin();
    let weekly = |t: usize| (TAU * (t % 168) as f64 / 168.0).sin();
    let mut level = 0.0;
    let values: Vec<f64> = (0..length)
        .map(|t| {
            let e = noise.sample(&mut rng);
            match kind {
                SynthKind::SumOfSines => daily(t) + 0.5 * weekly(t) + e,
                SynthKind::TrendSeason => 0.001 * t as f64 + daily(t) + e,
                SynthKind::RandomWalk => {
                    level += e;
                    level
                }
            }
        })
        .collect();
    let start = NaiveDate::from_ymd_opt(2016, 7, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid start date");
    let timestamps = (0..length as i64).map(|h| start + TimeDelta::hours(h)).collect();
    RawSeries::new(timestamps, vec!["value".into()], values, Frequency::HOURLY)
}
