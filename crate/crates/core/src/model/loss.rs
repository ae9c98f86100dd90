use serde::{Deserialize, Serialize};

use super::ForecastOutput;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub reconstruction: Var,
    pub forecast: Var,
}

/// `alpha * mse(y, y_past) + (1 - alpha) * mse(y', y_fut)`.
pub fn combined_loss(g: &mut Graph, output: &ForecastOutput, y: Var, y_prime: Var, alpha: f64) -> Result<LossTerms> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let reconstruction = g.mse(output.y_past, y)?;
    let forecast = g.mse(output.y_fut, y_prime)?;
    let a = g.scale(reconstruction, alpha);
    let b = g.scale(forecast, 1.0 - alpha);
    let total = g.add(a, b)?;
    Ok(LossTerms {
        total,
        reconstruction,
        forecast,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
}

/// Mean squared and mean absolute error over every time step and channel.
pub fn metrics(y_true: &Tensor, y_pred: &Tensor) -> Result<Metrics> {
    let mut acc = MetricAccumulator::default();
    acc.update(y_true, y_pred)?;
    Ok(acc.finish())
}

/// Running sums for [`metrics`] over many batches.
#[derive(Clone, Debug, Default)]
pub struct MetricAccumulator {
    squared: f64,
    absolute: f64,
    count: usize,
}

impl MetricAccumulator {
    pub fn update(&mut self, y_true: &Tensor, y_pred: &Tensor) -> Result<()> {
        if y_true.shape() != y_pred.shape() {
            return Err(Error::shape_mismatch("metrics", y_true.shape(), y_pred.shape()));
        }
        for (a, b) in y_true.data().iter().zip(y_pred.data()) {
            let e = a - b;
            self.squared += e * e;
            self.absolute += e.abs();
        }
        self.count += y_true.numel();
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(&self) -> Metrics {
        if self.count == 0 {
            return Metrics::default();
        }
        Metrics {
            mse: self.squared / self.count as f64,
            mae: self.absolute / self.count as f64,
        }
    }
}
