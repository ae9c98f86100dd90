//! Published optimal hyperparameters per dataset, horizon and setting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Univariate,
    Multivariate,
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "univariate" | "uni" | "s" => Ok(Self::Univariate),
            "multivariate" | "multi" | "m" => Ok(Self::Multivariate),
            _ => Err(Error::Config(format!("unknown setting {s:?}; expected univariate or multivariate"))),
        }
    }
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Univariate => "univariate",
            Self::Multivariate => "multivariate",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub dataset: &'static str,
    pub setting: Setting,
    pub horizon: usize,
    pub history: usize,
    pub weight_decay: f64,
    pub learning_rate: f64,
    pub alpha: f64,
    pub batch_size: usize,
    pub encoder_blocks: usize,
}

const fn row(
    dataset: &'static str,
    setting: Setting,
    horizon: usize,
    history: usize,
    weight_decay: f64,
    learning_rate: f64,
    alpha: f64,
    batch_size: usize,
    encoder_blocks: usize,
) -> Preset {
    Preset {
        dataset,
        setting,
        horizon,
        history,
        weight_decay,
        learning_rate,
        alpha,
        batch_size,
        encoder_blocks,
    }
}

use Setting::{Multivariate as M, Univariate as U};

#[rustfmt::skip]
pub const PRESETS: &[Preset] = &[
    // dataset, setting, horizon, history, weight decay, lr, alpha, batch, encoder blocks
    row("ETTh1", U, 24, 720, 0.0, 0.0001, 0.7, 32, 2),
    row("ETTh1", U, 48, 720, 0.0, 0.0001, 0.7, 16, 4),
    row("ETTh1", U, 168, 720, 0.0, 0.001, 0.7, 32, 4),
    row("ETTh1", U, 336, 720, 0.05, 0.0001, 0.1, 32, 4),
    row("ETTh1", U, 720, 720, 0.05, 0.0001, 0.7, 16, 2),
    row("ETTh2", U, 24, 48, 0.0, 0.0001, 0.7, 32, 2),
    row("ETTh2", U, 48, 96, 0.02, 0.0001, 0.3, 32, 4),
    row("ETTh2", U, 168, 336, 0.02, 0.001, 0.3, 32, 2),
    row("ETTh2", U, 336, 336, 0.09, 0.0001, 0.0, 32, 2),
    row("ETTh2", U, 720, 336, 0.09, 0.0001, 0.7, 16, 2),
    row("ETTm1", U, 24, 96, 0.02, 0.0001, 0.7, 32, 4),
    row("ETTm1", U, 48, 96, 0.02, 0.0001, 0.7, 32, 4),
    row("ETTm1", U, 96, 384, 0.02, 0.0001, 0.1, 32, 4),
    row("ETTm1", U, 288, 384, 0.02, 0.001, 0.7, 16, 2),
    row("ETTm1", U, 672, 384, 0.07, 0.001, 0.3, 16, 2),
    row("ECL", U, 48, 168, 0.0, 0.0001, 0.7, 16, 2),
    row("ECL", U, 168, 168, 0.01, 0.0001, 0.3, 16, 2),
    row("ECL", U, 336, 168, 0.01, 0.0001, 0.7, 16, 2),
    row("ECL", U, 720, 168, 0.0, 0.0001, 0.1, 16, 2),
    row("ECL", U, 960, 48, 0.0, 0.0001, 0.5, 16, 4),
    row("ETTh1", M, 24, 48, 0.0, 0.0001, 0.7, 32, 3),
    row("ETTh1", M, 48, 96, 0.02, 0.001, 0.5, 32, 2),
    row("ETTh1", M, 168, 168, 0.02, 0.001, 0.7, 32, 2),
    row("ETTh1", M, 336, 168, 0.0, 0.0001, 0.7, 32, 4),
    row("ETTh1", M, 720, 336, 0.05, 0.0001, 1.0, 16, 2),
    row("ETTh2", M, 24, 48, 0.0, 0.0001, 0.7, 32, 2),
    row("ETTh2", M, 48, 96, 0.02, 0.001, 0.0, 32, 4),
    row("ETTh2", M, 168, 336, 0.09, 0.001, 0.7, 32, 2),
    row("ETTh2", M, 336, 336, 0.07, 0.001, 0.3, 32, 2),
    row("ETTh2", M, 720, 336, 0.0, 0.0001, 0.0, 16, 2),
    row("ETTm1", M, 24, 672, 0.0, 0.0001, 0.7, 32, 2),
    row("ETTm1", M, 48, 96, 0.0, 0.0001, 0.7, 32, 4),
    row("ETTm1", M, 96, 384, 0.05, 0.0001, 0.7, 32, 4),
    row("ETTm1", M, 288, 672, 0.02, 0.001, 0.5, 16, 2),
    row("ETTm1", M, 672, 672, 0.02, 0.0001, 0.3, 16, 2),
    row("ECL", M, 48, 24, 0.0, 0.0001, 0.7, 16, 3),
    row("ECL", M, 168, 48, 0.0, 0.0001, 0.7, 16, 3),
    row("ECL", M, 336, 24, 0.0, 0.0001, 0.5, 16, 2),
    row("ECL", M, 720, 48, 0.0, 0.0001, 0.7, 16, 2),
    row("ECL", M, 960, 336, 0.0, 0.0001, 0.7, 16, 2),
];

/// Entries matching every given filter; dataset names compare case-insensitively.
pub fn find_presets(dataset: Option<&str>, horizon: Option<usize>, setting: Option<Setting>) -> Vec<&'static Preset> {
    PRESETS
        .iter()
        .filter(|p| dataset.is_none_or(|d| p.dataset.eq_ignore_ascii_case(d)))
        .filter(|p| horizon.is_none_or(|h| p.horizon == h))
        .filter(|p| setting.is_none_or(|s| p.setting == s))
        .collect()
}

pub fn preset(dataset: &str, horizon: usize, setting: Setting) -> Result<&'static Preset> {
    find_presets(Some(dataset), Some(horizon), Some(setting))
        .into_iter()
        .next()
        .ok_or_else(|| Error::Config(format!("no preset for {dataset} {setting} horizon {horizon}")))
}
