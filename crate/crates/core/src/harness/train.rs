//! Training loop, evaluation and naive baselines.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{Adam, AdamConfig, EarlyStopping, StopDecision};
use crate::attention::mix_seed;
use crate::data::{Batch, Dataset, WindowedDataset};
use crate::error::{Error, Result};
use crate::model::{combined_loss, metrics, MetricAccumulator, Metrics, ModelConfig, Yformer};
use crate::numerics::{ParamId, ParamStore, Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Caps optimizer steps per epoch (taken from the shuffled order).
    #[serde(default)]
    pub max_train_batches: Option<usize>,
    /// Caps windows used for validation and test evaluation.
    #[serde(default)]
    pub max_eval_windows: Option<usize>,
    /// Report test metrics in raw units instead of standardized ones.
    #[serde(default)]
    pub destandardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 0.0,
            batch_size: 32,
            max_epochs: 20,
            patience: 3,
            seed: 0,
            max_train_batches: None,
            max_eval_windows: None,
            destandardize: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config("batch size, epoch cap and patience must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::Config("learning rate and weight decay must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean combined loss over the epoch's optimizer steps.
    pub train_loss: f64,
    /// Forecast MSE on the validation windows.
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub variant: String,
    pub dataset: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were restored; 0 if none finished.
    pub best_epoch: usize,
    pub best_val_loss: Option<f64>,
    /// Epoch in which a non-finite loss aborted training.
    #[serde(default)]
    pub diverged_epoch: Option<usize>,
    pub test: Metrics,
    pub parameter_count: usize,
    pub wall_time_secs: f64,
    pub version: String,
}

impl ExperimentRecord {
    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    /// Equality ignoring wall-clock time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        let strip = |r: &Self| Self {
            wall_time_secs: 0.0,
            ..r.clone()
        };
        strip(self) == strip(other)
    }
}

pub fn version_stamp() -> String {
    format!("yformer {}", env!("CARGO_PKG_VERSION"))
}

pub struct TrainOutcome {
    pub record: ExperimentRecord,
    /// Parameters restored to the best validation epoch.
    pub model: Yformer,
}

fn eval_seed(seed: u64) -> u64 {
    mix_seed(seed, 0x5eed_e7a1)
}

fn eval_indices(set: &WindowedDataset, cap: Option<usize>) -> Vec<usize> {
    let n = cap.map_or(set.len(), |c| c.min(set.len()));
    if n == set.len() {
        return (0..n).collect();
    }
    // evenly spread so a cap still covers the whole span
    (0..n).map(|i| i * set.len() / n).collect()
}

/// Forecast metrics of `model` over (a spread subset of) `set`.
pub fn evaluate(
    model: &Yformer,
    dataset: &Dataset,
    set: &WindowedDataset,
    batch_size: usize,
    max_windows: Option<usize>,
    seed: u64,
    destandardize: bool,
) -> Result<Metrics> {
    let mut acc = MetricAccumulator::default();
    for chunk in eval_indices(set, max_windows).chunks(batch_size.max(1)) {
        let batch = set.batch(chunk)?;
        let (_, pred) = model.predict(&batch.input, seed)?;
        if destandardize {
            acc.update(&dataset.destandardize_targets(&batch.y_prime), &dataset.destandardize_targets(&pred))?;
        } else {
            acc.update(&batch.y_prime, &pred)?;
        }
    }
    Ok(acc.finish())
}

fn loss_and_grads(model: &Yformer, batch: Batch, seed: u64, alpha: f64) -> Result<(f64, Vec<(ParamId, Tensor)>)> {
    let mut g = model.graph();
    let out = model.forward(&mut g, &batch.input, seed)?;
    let y = g.constant(batch.y);
    let y_prime = g.constant(batch.y_prime);
    let loss = combined_loss(&mut g, &out, y, y_prime, alpha)?;
    let value = g.value(loss.total).item()?;
    if !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    g.backward(loss.total)?;
    let grads = g
        .param_grads()
        .into_iter()
        .filter_map(|(id, t)| t.map(|t| (id, t.clone())))
        .collect();
    Ok((value, grads))
}

fn diverged(mut record: ExperimentRecord, epoch: usize, started: Instant) -> Error {
    record.diverged_epoch = Some(epoch);
    record.wall_time_secs = started.elapsed().as_secs_f64();
    Error::Diverged(Box::new(record))
}

/// Trains with Adam and early stopping, restores the best validation
/// checkpoint and scores it on the test windows.
pub fn train(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    dataset: &Dataset,
    dataset_name: &str,
    variant: &str,
) -> Result<TrainOutcome> {
    train_cfg.validate()?;
    let started = Instant::now();
    let mut model = Yformer::new(model_cfg.clone())?;
    let mut adam = Adam::new(AdamConfig::new(train_cfg.learning_rate, train_cfg.weight_decay));
    let mut stopper = EarlyStopping::new(train_cfg.patience);
    let mut best_params: Option<ParamStore> = None;
    let mut record = ExperimentRecord {
        variant: variant.to_string(),
        dataset: dataset_name.to_string(),
        model: model_cfg.clone(),
        train: train_cfg.clone(),
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: None,
        diverged_epoch: None,
        test: Metrics::default(),
        parameter_count: model.parameter_count(),
        wall_time_secs: 0.0,
        version: version_stamp(),
    };
    let eval_seed = eval_seed(train_cfg.seed);

    for epoch in 1..=train_cfg.max_epochs {
        let mut order: Vec<usize> = (0..dataset.train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(train_cfg.seed, epoch as u64)));
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        let batches = order.chunks(train_cfg.batch_size);
        let cap = train_cfg.max_train_batches.unwrap_or(usize::MAX);
        for (b, chunk) in batches.take(cap).enumerate() {
            let batch = dataset.train.batch(chunk)?;
            let forward_seed = mix_seed(mix_seed(train_cfg.seed, epoch as u64), b as u64);
            let (value, grads) = match loss_and_grads(&model, batch, forward_seed, model_cfg.alpha) {
                Ok((v, grads)) if v.is_finite() => (v, grads),
                Ok(_) | Err(Error::NonFinite { .. }) => return Err(diverged(record, epoch, started)),
                Err(e) => return Err(e),
            };
            adam.step(&mut model.params, &grads);
            loss_sum += value;
            steps += 1;
        }
        let train_loss = loss_sum / steps.max(1) as f64;
        let val = match evaluate(&model, dataset, &dataset.val, train_cfg.batch_size, train_cfg.max_eval_windows, eval_seed, false) {
            Ok(m) if m.mse.is_finite() && train_loss.is_finite() => m,
            Ok(_) | Err(Error::NonFinite { .. }) => return Err(diverged(record, epoch, started)),
            Err(e) => return Err(e),
        };
        record.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss: val.mse,
        });
        match stopper.observe(val.mse) {
            StopDecision::Improved => best_params = Some(model.params.clone()),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }

    if let Some(best) = best_params {
        model.params = best;
    }
    record.best_epoch = stopper.best_epoch;
    record.best_val_loss = stopper.best;
    record.test = evaluate(
        &model,
        dataset,
        &dataset.test,
        train_cfg.batch_size,
        train_cfg.max_eval_windows,
        eval_seed,
        train_cfg.destandardize,
    )?;
    record.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(TrainOutcome { record, model })
}

/// Naive forecasts scored like the model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    /// Last observed target value held across the horizon.
    pub repeat_last: Metrics,
    /// Training-span mean of every target.
    pub train_mean: Metrics,
}

pub fn baselines(dataset: &Dataset, set: &WindowedDataset, max_windows: Option<usize>, destandardize: bool) -> Result<Baselines> {
    let mut last = MetricAccumulator::default();
    let mut mean = MetricAccumulator::default();
    for chunk in eval_indices(set, max_windows).chunks(256) {
        let batch = set.batch(chunk)?;
        let [n, t, o] = batch.y.dims();
        let tau = batch.y_prime.dims()[1];
        let mut repeat = Tensor::zeros(Shape::new(n, tau, o));
        for b in 0..n {
            for s in 0..tau {
                for c in 0..o {
                    repeat.set(b, s, c, batch.y.at(b, t - 1, c));
                }
            }
        }
        // standardized training mean is zero by construction
        let flat = Tensor::zeros(batch.y_prime.shape());
        let scale = |x: &Tensor| if destandardize { dataset.destandardize_targets(x) } else { x.clone() };
        let truth = scale(&batch.y_prime);
        last.update(&truth, &scale(&repeat))?;
        mean.update(&truth, &scale(&flat))?;
    }
    Ok(Baselines {
        repeat_last: last.finish(),
        train_mean: mean.finish(),
    })
}

/// Metrics of a forecast that is identical for every window.
pub fn constant_forecast_metrics(y_prime: &Tensor, value: f64) -> Result<Metrics> {
    metrics(y_prime, &Tensor::full(y_prime.shape(), value))
}
