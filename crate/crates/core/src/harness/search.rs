//! Exhaustive hyperparameter grid, the three-variant ablation and the
//! distribution of winning reconstruction weights.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::results::ResultStore;
use super::train::{train, ExperimentRecord, TrainConfig};
use crate::data::{Dataset, DatasetSpec, RawSeries, WindowSpec};
use crate::error::{Error, Result};
use crate::model::{parameter_count, ModelConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub learning_rates: Vec<f64>,
    pub weight_decays: Vec<f64>,
    pub alphas: Vec<f64>,
    pub depths: Vec<usize>,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            learning_rates: vec![1e-3, 1e-4],
            weight_decays: vec![0.0, 0.02, 0.05],
            alphas: vec![0.0, 0.3, 0.5, 0.7, 1.0],
            depths: vec![2, 3, 4],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub alpha: f64,
    pub depth: usize,
}

impl Grid {
    /// One cell taken from existing configurations.
    pub fn singleton(model: &ModelConfig, train: &TrainConfig) -> Self {
        Self {
            learning_rates: vec![train.learning_rate],
            weight_decays: vec![train.weight_decay],
            alphas: vec![model.alpha],
            depths: vec![model.depth],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rates.is_empty() || self.weight_decays.is_empty() || self.alphas.is_empty() || self.depths.is_empty() {
            return Err(Error::Config("every grid axis needs at least one value".into()));
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<GridCell> {
        let mut out = Vec::new();
        for &learning_rate in &self.learning_rates {
            for &weight_decay in &self.weight_decays {
                for &alpha in &self.alphas {
                    for &depth in &self.depths {
                        out.push(GridCell {
                            learning_rate,
                            weight_decay,
                            alpha,
                            depth,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct GridResult {
    pub records: Vec<ExperimentRecord>,
    /// Index into `records` of the lowest best-validation loss; `None` if
    /// every cell diverged.
    pub best: Option<usize>,
}

impl GridResult {
    pub fn best_record(&self) -> Option<&ExperimentRecord> {
        self.best.map(|i| &self.records[i])
    }
}

/// Trains every cell of the grid; diverged cells keep their partial record.
pub fn grid_search(
    grid: &Grid,
    model: &ModelConfig,
    train_cfg: &TrainConfig,
    dataset: &Dataset,
    dataset_name: &str,
    store: Option<&ResultStore>,
) -> Result<GridResult> {
    grid.validate()?;
    let mut records = Vec::new();
    for cell in grid.cells() {
        let m = ModelConfig {
            alpha: cell.alpha,
            depth: cell.depth,
            ..model.clone()
        };
        let t = TrainConfig {
            learning_rate: cell.learning_rate,
            weight_decay: cell.weight_decay,
            ..train_cfg.clone()
        };
        let variant = format!(
            "lr={}_wd={}_alpha={}_depth={}",
            cell.learning_rate, cell.weight_decay, cell.alpha, cell.depth
        );
        let record = match train(&m, &t, dataset, dataset_name, &variant) {
            Ok(out) => out.record,
            Err(Error::Diverged(r)) => *r,
            Err(e) => return Err(e),
        };
        if let Some(s) = store {
            s.append(&record)?;
        }
        records.push(record);
    }
    let best = records
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.best_val_loss.map(|v| (i, v)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i);
    Ok(GridResult { records, best })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// Full model with the reconstruction term.
    Yformer,
    /// Forecast loss only.
    AlphaZero,
    /// No skip connections into the decoder.
    NoSkips,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Yformer, Variant::AlphaZero, Variant::NoSkips];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Yformer => "Yformer",
            Variant::AlphaZero => "Yformer (alpha=0)",
            Variant::NoSkips => "Yformer*",
        }
    }

    pub fn apply(self, cfg: ModelConfig) -> ModelConfig {
        match self {
            Variant::Yformer => cfg,
            Variant::AlphaZero => cfg.alpha_zero(),
            Variant::NoSkips => cfg.without_skips(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub horizon: usize,
    pub mse: f64,
    pub mae: f64,
    pub parameter_count: usize,
    pub diverged: bool,
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    /// Horizon-major, variants in `Variant::ALL` order.
    pub rows: Vec<AblationRow>,
    pub records: Vec<ExperimentRecord>,
}

/// Geometry from the dataset, architecture and loss weight from `template`.
pub fn fit_model_config(dataset: &Dataset, template: &ModelConfig) -> ModelConfig {
    let geometry = dataset.model_config();
    ModelConfig {
        history: geometry.history,
        horizon: geometry.horizon,
        predictors: geometry.predictors,
        targets: geometry.targets,
        future_predictors: 0,
        time_features: geometry.time_features,
        ..template.clone()
    }
}

/// Trains the three variants at every horizon with identical data, seed
/// and training settings.
#[allow(clippy::too_many_arguments)]
pub fn ablate(
    series: &RawSeries,
    spec: &DatasetSpec,
    horizons: &[usize],
    template: &ModelConfig,
    train_cfg: &TrainConfig,
    dataset_name: &str,
    store: Option<&ResultStore>,
) -> Result<AblationReport> {
    if horizons.is_empty() {
        return Err(Error::Config("ablation needs at least one horizon".into()));
    }
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for &horizon in horizons {
        let spec = DatasetSpec {
            window: WindowSpec {
                horizon,
                ..spec.window
            },
            ..spec.clone()
        };
        let dataset = Dataset::prepare(series, &spec)?;
        let base = fit_model_config(&dataset, template);
        for variant in Variant::ALL {
            let cfg = variant.apply(base.clone());
            let record = match train(&cfg, train_cfg, &dataset, dataset_name, variant.label()) {
                Ok(out) => out.record,
                Err(Error::Diverged(r)) => *r,
                Err(e) => return Err(e),
            };
            debug_assert_eq!(record.parameter_count, parameter_count(&cfg)?);
            if let Some(s) = store {
                s.append(&record)?;
            }
            rows.push(AblationRow {
                variant: variant.label().to_string(),
                horizon,
                mse: record.test.mse,
                mae: record.test.mae,
                parameter_count: record.parameter_count,
                diverged: record.diverged_epoch.is_some(),
            });
            records.push(record);
        }
    }
    if let Some(s) = store {
        s.write_summary(&records)?;
    }
    Ok(AblationReport { rows, records })
}

/// Winning reconstruction weight counts per horizon. Keys are the weights'
/// bit patterns so the map stays ordered and exact; use [`alpha_key`] to
/// look up a weight.
pub fn alpha_distribution(records: &[ExperimentRecord]) -> BTreeMap<usize, BTreeMap<AlphaKey, usize>> {
    let mut out: BTreeMap<usize, BTreeMap<AlphaKey, usize>> = BTreeMap::new();
    for r in records {
        *out.entry(r.model.horizon).or_default().entry(alpha_key(r.model.alpha)).or_default() += 1;
    }
    out
}

/// Totally ordered wrapper for a reconstruction weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AlphaKey(pub u64);

impl AlphaKey {
    pub fn value(self) -> f64 {
        f64::from_bits(self.0)
    }
}

pub fn alpha_key(alpha: f64) -> AlphaKey {
    // non-negative weights order the same as their bit patterns
    AlphaKey((alpha + 0.0).to_bits())
}

impl std::fmt::Display for AlphaKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.value())
    }
}

/// For each (dataset, horizon) group, the winner among the given grid
/// records by lowest best-validation loss.
pub fn select_winners(records: &[ExperimentRecord]) -> Vec<&ExperimentRecord> {
    let mut best: BTreeMap<(&str, usize), &ExperimentRecord> = BTreeMap::new();
    for r in records {
        let Some(v) = r.best_val_loss else { continue };
        let key = (r.dataset.as_str(), r.model.horizon);
        match best.get(&key) {
            Some(b) if b.best_val_loss.is_some_and(|bv| bv <= v) => {}
            _ => {
                best.insert(key, r);
            }
        }
    }
    best.into_values().collect()
}
