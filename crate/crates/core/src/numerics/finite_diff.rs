//! Central finite-difference oracle for checking reverse-mode gradients.
//!
//! The numeric side only ever evaluates forward values; it never reads a
//! gradient off the tape.

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-6;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Denominator floor for [`relative_error`]; below it errors are absolute.
pub const RELATIVE_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    /// `(tensor index, element index, analytic, numeric)` of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance && self.max_relative_error.is_finite()
    }

    pub fn merge(&mut self, other: &GradCheckReport) {
        self.checked += other.checked;
        if other.max_relative_error > self.max_relative_error || other.max_relative_error.is_nan() {
            self.max_relative_error = other.max_relative_error;
            self.worst = other.worst;
        }
    }

    fn record(&mut self, tensor: usize, element: usize, analytic: f64, numeric: f64) {
        self.checked += 1;
        let e = relative_error(analytic, numeric);
        if e > self.max_relative_error || e.is_nan() {
            self.max_relative_error = e;
            self.worst = Some((tensor, element, analytic, numeric));
        }
    }
}

/// Numeric gradient of a scalar function of several tensors.
pub fn central_difference<F>(f: F, inputs: &[Tensor], step: f64) -> Result<Vec<Tensor>>
where
    F: Fn(&[Tensor]) -> Result<f64>,
{
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for t in 0..inputs.len() {
        let mut grad = Tensor::zeros(inputs[t].shape());
        for e in 0..inputs[t].numel() {
            let orig = work[t].data()[e];
            work[t].data_mut()[e] = orig + step;
            let plus = f(&work)?;
            work[t].data_mut()[e] = orig - step;
            let minus = f(&work)?;
            work[t].data_mut()[e] = orig;
            grad.data_mut()[e] = (plus - minus) / (2.0 * step);
        }
        out.push(grad);
    }
    Ok(out)
}

/// Checks the gradient of `build` with respect to each of `inputs`.
pub fn check<F>(build: F, inputs: &[Tensor], step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let store = ParamStore::new();
    check_with_params(|g, vars| build(g, vars), inputs, &store, step)
}

/// Checks gradients with respect to `inputs` and every entry of `store`.
pub fn check_with_params<F>(
    build: F,
    inputs: &[Tensor],
    store: &ParamStore,
    step: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::with_params(store);
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let root = build(&mut g, &vars)?;
    g.backward(root)?;

    let mut analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    let param_grads = g.param_grads();
    let param_ids: Vec<_> = store.ids().collect();
    for &id in &param_ids {
        let grad = param_grads
            .iter()
            .find(|(pid, _)| *pid == id)
            .and_then(|(_, t)| t.cloned())
            .unwrap_or_else(|| Tensor::zeros(store.value(id).shape()));
        analytic.push(grad);
    }
    drop(g);

    let n_inputs = inputs.len();
    let mut all: Vec<Tensor> = inputs.to_vec();
    all.extend(param_ids.iter().map(|&id| store.value(id).clone()));

    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut perturbed = store.clone();
        for (k, &id) in param_ids.iter().enumerate() {
            *perturbed.value_mut(id) = values[n_inputs + k].clone();
        }
        let mut g = Graph::with_params(&perturbed);
        let vars: Vec<Var> = values[..n_inputs].iter().map(|t| g.constant(t.clone())).collect();
        let root = build(&mut g, &vars)?;
        g.value(root).item()
    };
    let numeric = central_difference(eval, &all, step)?;

    let mut report = GradCheckReport::default();
    for (t, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        if a.shape() != n.shape() {
            return Err(Error::shape_mismatch("gradcheck", a.shape(), n.shape()));
        }
        for (e, (&av, &nv)) in a.data().iter().zip(n.data()).enumerate() {
            report.record(t, e, av, nv);
        }
    }
    Ok(report)
}
