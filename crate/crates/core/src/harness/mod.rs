//! Training, hyperparameter search, ablations, published presets, result
//! persistence and the gradient suite.

pub mod gradcheck;
mod optim;
mod presets;
pub mod results;
mod search;
mod train;

pub use optim::{early_stopping_trace, Adam, AdamConfig, EarlyStopping, StopDecision};
pub use presets::{find_presets, preset, Preset, Setting, PRESETS};
pub use results::{ResultStore, SummaryRow};
pub use search::{
    ablate, alpha_distribution, alpha_key, fit_model_config, grid_search, select_winners, AblationReport,
    AblationRow, AlphaKey, Grid, GridCell, GridResult, Variant,
};
pub use train::{
    baselines, constant_forecast_metrics, evaluate, train, version_stamp, Baselines, EpochRecord, ExperimentRecord,
    TrainConfig, TrainOutcome,
};
