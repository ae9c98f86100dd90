//! Reverse-mode differentiation over rank-3 tensors.
//!
//! A [`Graph`] is a Wengert tape: every operation evaluates eagerly, appends
//! a node holding its value plus whatever the backward rule needs, and
//! returns a [`Var`] handle. [`Graph::backward`] walks the tape once in
//! reverse. A graph is confined to one thread and one backward pass.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Geometry of a 1-D convolution or transposed convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_size,
            stride,
            padding,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size == 0 || self.stride == 0 || self.in_channels == 0 || self.out_channels == 0
        {
            return Err(Error::Config(format!("invalid conv spec {self:?}")));
        }
        Ok(())
    }

    /// `floor((L + 2p - k) / s) + 1`, or `None` when the padded input is
    /// shorter than the kernel.
    pub fn output_len(&self, len: usize) -> Option<usize> {
        let padded = len + 2 * self.padding;
        (padded >= self.kernel_size && len > 0)
            .then(|| (padded - self.kernel_size) / self.stride + 1)
    }

    /// `(L - 1) s - 2p + k`, or `None` when that is not positive.
    pub fn transposed_output_len(&self, len: usize) -> Option<usize> {
        if len == 0 {
            return None;
        }
        let full = (len - 1) * self.stride + self.kernel_size;
        (full > 2 * self.padding).then(|| full - 2 * self.padding)
    }
}

/// Geometry of a 1-D max pool; padded slots behave as negative infinity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PoolSpec {
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
}

impl PoolSpec {
    pub fn new(kernel_size: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel_size,
            stride,
            padding,
        }
    }

    pub fn output_len(&self, len: usize) -> Option<usize> {
        let padded = len + 2 * self.padding;
        (self.kernel_size > 0 && self.stride > 0 && padded >= self.kernel_size && len > 0)
            .then(|| (padded - self.kernel_size) / self.stride + 1)
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Square(Var),
    Sum(Var),
    Mean(Var),
    Matmul(Var, Var),
    Transpose(Var),
    Softmax { x: Var, axis: usize },
    Conv1d { x: Var, w: Var, b: Var, spec: ConvSpec },
    ConvTranspose1d { x: Var, w: Var, b: Var, spec: ConvSpec },
    MaxPool { x: Var, argmax: Vec<usize> },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Elu { x: Var, alpha: f64 },
    Linear { x: Var, w: Var, b: Var },
    ConcatTime(Var, Var),
    ConcatChannels(Vec<Var>),
    SliceTime { x: Var, start: usize },
    SliceChannels { x: Var, start: usize },
    Gather { x: Var, rows: Vec<Vec<usize>> },
    Scatter { base: Var, rows: Var, index: Vec<Vec<usize>> },
    MeanTime(Var),
    CumMeanTime(Var),
    RepeatTime(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<'p> {
    nodes: Vec<Node>,
    params: Option<&'p ParamStore>,
    param_vars: HashMap<ParamId, Var>,
    grads: Option<Vec<Option<Tensor>>>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: None,
            param_vars: HashMap::new(),
            grads: None,
        }
    }

    /// A graph whose [`Graph::param`] leaves read from `params`.
    pub fn with_params(params: &'p ParamStore) -> Self {
        Self {
            params: Some(params),
            ..Self::new()
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Leaf that takes no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf that receives a gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf bound to a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.param_vars.get(&id) {
            return Ok(v);
        }
        let store = self
            .params
            .ok_or_else(|| Error::Config("graph has no parameter store attached".into()))?;
        let value = store.value(id).clone();
        let v = self.input(value);
        self.param_vars.insert(id, v);
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward root with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.as_ref()?.get(v.0)?.as_ref()
    }

    /// Gradients of every parameter leaf touched by this graph.
    pub fn param_grads(&self) -> Vec<(ParamId, Option<&Tensor>)> {
        let mut out: Vec<_> = self
            .param_vars
            .iter()
            .map(|(&id, &v)| (id, self.grad(v)))
            .collect();
        out.sort_by_key(|(id, _)| id.index());
        out
    }

    /// Drops gradients so that [`Graph::backward`] may run again.
    pub fn reset_grads(&mut self) {
        self.grads = None;
    }

    // ----------------------------------------------------------------------
    // elementwise

    fn broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let mut out = [0; 3];
        for d in 0..3 {
            let (x, y) = (sa.0[d], sb.0[d]);
            out[d] = if x == y || y == 1 {
                x
            } else if x == 1 {
                y
            } else {
                return Err(Error::shape_mismatch(op, sa, sb));
            };
        }
        Ok(Shape(out))
    }

    fn zip_broadcast(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let out_shape = self.broadcast(op_name, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let sa = bstrides(ta.shape());
        let sb = bstrides(tb.shape());
        let [n, l, c] = out_shape.0;
        let mut data = Vec::with_capacity(out_shape.numel());
        for i in 0..n {
            for j in 0..l {
                for k in 0..c {
                    let ia = i * sa[0] + j * sa[1] + k * sa[2];
                    let ib = i * sb[0] + j * sb[1] + k * sb[2];
                    data.push(f(ta.data()[ia], tb.data()[ib]));
                }
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(out_shape, data)?, op, rg))
    }

    /// Elementwise sum with size-1 broadcasting on any axis.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_broadcast("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_broadcast("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_broadcast("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|v| v * k);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, k), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v * v);
        let rg = self.rg(&[a]);
        self.push(value, Op::Square(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::scalar(t.sum() / t.numel().max(1) as f64);
        let rg = self.rg(&[a]);
        self.push(value, Op::Mean(a), rg)
    }

    /// Mean squared difference over every element.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape_mismatch("mse", self.shape(a), self.shape(b)));
        }
        let d = self.sub(a, b)?;
        let sq = self.square(d);
        Ok(self.mean(sq))
    }

    /// ELU: `x` for `x > 0`, `alpha (e^x - 1)` otherwise.
    pub fn elu(&mut self, x: Var, alpha: f64) -> Var {
        let value = self
            .value(x)
            .map(|v| if v > 0.0 { v } else { alpha * (v.exp() - 1.0) });
        let rg = self.rg(&[x]);
        self.push(value, Op::Elu { x, alpha }, rg)
    }

    // ----------------------------------------------------------------------
    // products

    /// Batched matrix product `[N,P,Q] x [N,Q,R] -> [N,P,R]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let [n, p, q] = sa.0;
        let [nb, qb, r] = sb.0;
        if n != nb || q != qb {
            return Err(Error::shape_mismatch("matmul", sa, sb));
        }
        let mut out = vec![0.0; n * p * r];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, n, p, q, r);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(Shape::new(n, p, r), out)?, Op::Matmul(a, b), rg))
    }

    /// Swaps the time and channel axes.
    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = transpose_last(t);
        let rg = self.rg(&[a]);
        self.push(value, Op::Transpose(a), rg)
    }

    /// Per-position affine map `x W + b` with `W: [1, C_in, C_out]`, `b: [1, 1, C_out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        let [n, l, cin] = sx.0;
        let [one, wi, cout] = sw.0;
        if one != 1 || wi != cin {
            return Err(Error::shape_mismatch("linear", sx, sw));
        }
        if sb.0 != [1, 1, cout] {
            return Err(Error::shape_mismatch("linear bias", sw, sb));
        }
        let rows = n * l;
        let mut out = Vec::with_capacity(rows * cout);
        for _ in 0..rows {
            out.extend_from_slice(self.value(b).data());
        }
        matmul_into(self.value(x).data(), self.value(w).data(), &mut out, 1, rows, cin, cout);
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(
            Tensor::new(Shape::new(n, l, cout), out)?,
            Op::Linear { x, w, b },
            rg,
        ))
    }

    // ----------------------------------------------------------------------
    // normalisation

    /// Softmax along `axis`; rejects non-finite inputs.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        if axis > 2 {
            return Err(Error::Shape(format!("softmax axis {axis} out of range")));
        }
        let t = self.value(x);
        if !t.all_finite() {
            return Err(Error::NonFinite { op: "softmax" });
        }
        let shape = t.shape();
        let mut out = t.data().to_vec();
        for (base, stride, len) in lines(shape, axis) {
            softmax_line(&mut out, base, stride, len, len);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { x, axis }, rg))
    }

    /// Softmax along the channel axis where row `r` (flattened over batch and
    /// time) only sees entries `0..=limits[r]`; the rest are exactly zero.
    pub fn masked_softmax(&mut self, x: Var, limits: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let shape = t.shape();
        let [n, l, c] = shape.0;
        if limits.len() != n * l {
            return Err(Error::Shape(format!(
                "masked_softmax: {} row limits for {shape}",
                limits.len()
            )));
        }
        let mut out = t.data().to_vec();
        for (r, &lim) in limits.iter().enumerate() {
            let visible = (lim + 1).min(c);
            if out[r * c..r * c + visible].iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { op: "masked_softmax" });
            }
            softmax_line(&mut out, r * c, 1, c, visible);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { x, axis: 2 }, rg))
    }

    /// Layer normalisation over channels with population variance.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let sx = self.shape(x);
        let c = sx.channels();
        if c == 0 {
            return Err(Error::Shape("layer_norm over zero channels".into()));
        }
        for p in [gamma, beta] {
            if self.shape(p).0 != [1, 1, c] {
                return Err(Error::shape_mismatch("layer_norm", sx, self.shape(p)));
            }
        }
        if eps <= 0.0 {
            return Err(Error::Config("layer_norm epsilon must be positive".into()));
        }
        let t = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = sx.numel() / c;
        let mut xhat = Vec::with_capacity(sx.numel());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(sx.numel());
        for row in t.chunks_exact(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for (k, v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                out.push(h * g[k] + b[k]);
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::new(sx, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    // ----------------------------------------------------------------------
    // convolution and pooling

    /// Zero-padded cross-correlation. `w: [C_out, C_in, K]`, `b: [1, 1, C_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, spec: ConvSpec) -> Result<Var> {
        spec.validate()?;
        let [n, l, cin] = self.shape(x).0;
        let (cout, k) = (spec.out_channels, spec.kernel_size);
        if cin != spec.in_channels || self.shape(w).0 != [cout, cin, k] {
            return Err(Error::shape_mismatch("conv1d", self.shape(x), self.shape(w)));
        }
        if self.shape(b).0 != [1, 1, cout] {
            return Err(Error::shape_mismatch("conv1d bias", self.shape(w), self.shape(b)));
        }
        let lout = spec.output_len(l).ok_or_else(|| {
            Error::Shape(format!(
                "conv1d: length {l} with padding {} is shorter than kernel {k}",
                spec.padding
            ))
        })?;
        let (xd, wd, bd) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut out = vec![0.0; n * lout * cout];
        for bi in 0..n {
            for t in 0..lout {
                let orow = &mut out[(bi * lout + t) * cout..(bi * lout + t + 1) * cout];
                orow.copy_from_slice(bd);
                for kk in 0..k {
                    let Some(pos) = (t * spec.stride + kk).checked_sub(spec.padding) else {
                        continue;
                    };
                    if pos >= l {
                        continue;
                    }
                    let xrow = &xd[(bi * l + pos) * cin..(bi * l + pos + 1) * cin];
                    for (o, acc) in orow.iter_mut().enumerate() {
                        let wrow = &wd[o * cin * k..(o + 1) * cin * k];
                        let mut s = 0.0;
                        for (i, xv) in xrow.iter().enumerate() {
                            s += wrow[i * k + kk] * xv;
                        }
                        *acc += s;
                    }
                }
            }
        }
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(
            Tensor::new(Shape::new(n, lout, cout), out)?,
            Op::Conv1d { x, w, b, spec },
            rg,
        ))
    }

    /// Fractionally strided convolution, the adjoint of [`Graph::conv1d`] on
    /// its input. `w: [C_in, C_out, K]`, `b: [1, 1, C_out]`.
    pub fn conv_transpose1d(&mut self, x: Var, w: Var, b: Var, spec: ConvSpec) -> Result<Var> {
        spec.validate()?;
        let [n, l, cin] = self.shape(x).0;
        let (cout, k) = (spec.out_channels, spec.kernel_size);
        if cin != spec.in_channels || self.shape(w).0 != [cin, cout, k] {
            return Err(Error::shape_mismatch(
                "conv_transpose1d",
                self.shape(x),
                self.shape(w),
            ));
        }
        if self.shape(b).0 != [1, 1, cout] {
            return Err(Error::shape_mismatch(
                "conv_transpose1d bias",
                self.shape(w),
                self.shape(b),
            ));
        }
        let lout = spec.transposed_output_len(l).ok_or_else(|| {
            Error::Shape(format!("conv_transpose1d: empty output for length {l}"))
        })?;
        let (xd, wd, bd) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut out = vec![0.0; n * lout * cout];
        for bi in 0..n {
            for t in 0..lout {
                out[(bi * lout + t) * cout..(bi * lout + t + 1) * cout].copy_from_slice(bd);
            }
            for t in 0..l {
                let xrow = &xd[(bi * l + t) * cin..(bi * l + t + 1) * cin];
                for kk in 0..k {
                    let Some(pos) = (t * spec.stride + kk).checked_sub(spec.padding) else {
                        continue;
                    };
                    if pos >= lout {
                        continue;
                    }
                    let orow = &mut out[(bi * lout + pos) * cout..(bi * lout + pos + 1) * cout];
                    for (i, xv) in xrow.iter().enumerate() {
                        let wrow = &wd[i * cout * k..(i + 1) * cout * k];
                        for (o, acc) in orow.iter_mut().enumerate() {
                            *acc += xv * wrow[o * k + kk];
                        }
                    }
                }
            }
        }
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(
            Tensor::new(Shape::new(n, lout, cout), out)?,
            Op::ConvTranspose1d { x, w, b, spec },
            rg,
        ))
    }

    /// Per-channel window maximum; ties go to the lowest index.
    pub fn maxpool1d(&mut self, x: Var, spec: PoolSpec) -> Result<Var> {
        let [n, l, c] = self.shape(x).0;
        if 2 * spec.padding > spec.kernel_size {
            return Err(Error::Config(format!(
                "maxpool padding {} exceeds half the kernel {}",
                spec.padding, spec.kernel_size
            )));
        }
        let lout = spec.output_len(l).ok_or_else(|| {
            Error::Shape(format!(
                "maxpool1d: length {l} with padding {} is shorter than kernel {}",
                spec.padding, spec.kernel_size
            ))
        })?;
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(n * lout * c);
        let mut argmax = Vec::with_capacity(n * lout * c);
        for bi in 0..n {
            for t in 0..lout {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_at = usize::MAX;
                    for m in 0..spec.kernel_size {
                        let Some(pos) = (t * spec.stride + m).checked_sub(spec.padding) else {
                            continue;
                        };
                        if pos >= l {
                            continue;
                        }
                        let i = (bi * l + pos) * c + ch;
                        if best_at == usize::MAX || xd[i] > best {
                            best = xd[i];
                            best_at = i;
                        }
                    }
                    out.push(best);
                    argmax.push(best_at);
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::new(Shape::new(n, lout, c), out)?,
            Op::MaxPool { x, argmax },
            rg,
        ))
    }

    // ----------------------------------------------------------------------
    // structural

    /// Joins along time: `a` fills `[0, L_a)`, `b` fills `[L_a, L_a + L_b)`.
    pub fn concat_time(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).concat_time(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::ConcatTime(a, b), rg))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Shape("concat_channels of nothing".into()))?;
        let [n, l, _] = self.shape(first).0;
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.batch() != n || s.len() != l {
                return Err(Error::shape_mismatch("concat_channels", self.shape(first), s));
            }
            total += s.channels();
        }
        let mut out = Vec::with_capacity(n * l * total);
        for row in 0..n * l {
            for &p in parts {
                let c = self.shape(p).channels();
                out.extend_from_slice(&self.value(p).data()[row * c..(row + 1) * c]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::new(Shape::new(n, l, total), out)?,
            Op::ConcatChannels(parts.to_vec()),
            rg,
        ))
    }

    pub fn slice_time(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let value = self.value(x).slice_time(start, len)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::SliceTime { x, start }, rg))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let value = self.value(x).slice_channels(start, width)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::SliceChannels { x, start }, rg))
    }

    /// Picks time rows per batch item: `rows[n]` lists the positions kept
    /// for item `n`; every item must keep the same count.
    pub fn gather_time(&mut self, x: Var, rows: Vec<Vec<usize>>) -> Result<Var> {
        let [n, l, c] = self.shape(x).0;
        let u = check_index(&rows, n, l)?;
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(n * u * c);
        for (bi, idx) in rows.iter().enumerate() {
            for &t in idx {
                out.extend_from_slice(&xd[(bi * l + t) * c..(bi * l + t + 1) * c]);
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::new(Shape::new(n, u, c), out)?,
            Op::Gather { x, rows },
            rg,
        ))
    }

    /// Copy of `base` with `base[n, index[n][r]] = rows[n, r]`.
    pub fn scatter_time(&mut self, base: Var, rows: Var, index: Vec<Vec<usize>>) -> Result<Var> {
        let [n, l, c] = self.shape(base).0;
        let u = check_index(&index, n, l)?;
        if self.shape(rows).0 != [n, u, c] {
            return Err(Error::shape_mismatch("scatter_time", self.shape(base), self.shape(rows)));
        }
        for idx in &index {
            let mut seen = idx.clone();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() != idx.len() {
                return Err(Error::Shape("scatter_time: repeated index".into()));
            }
        }
        let mut out = self.value(base).data().to_vec();
        let rd = self.value(rows).data();
        for (bi, idx) in index.iter().enumerate() {
            for (r, &t) in idx.iter().enumerate() {
                out[(bi * l + t) * c..(bi * l + t + 1) * c]
                    .copy_from_slice(&rd[(bi * u + r) * c..(bi * u + r + 1) * c]);
            }
        }
        let rg = self.rg(&[base, rows]);
        Ok(self.push(
            Tensor::new(Shape::new(n, l, c), out)?,
            Op::Scatter { base, rows, index },
            rg,
        ))
    }

    /// Mean over time: `[N, L, C] -> [N, 1, C]`.
    pub fn mean_time(&mut self, x: Var) -> Result<Var> {
        let [n, l, c] = self.shape(x).0;
        if l == 0 {
            return Err(Error::Shape("mean over an empty time axis".into()));
        }
        let xd = self.value(x).data();
        let mut out = vec![0.0; n * c];
        for bi in 0..n {
            for t in 0..l {
                for ch in 0..c {
                    out[bi * c + ch] += xd[(bi * l + t) * c + ch];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= l as f64);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(Shape::new(n, 1, c), out)?, Op::MeanTime(x), rg))
    }

    /// Running mean over time: position `t` holds the mean of `0..=t`.
    pub fn cummean_time(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let [n, l, c] = t.dims();
        let xd = t.data();
        let mut out = vec![0.0; n * l * c];
        for bi in 0..n {
            let mut acc = vec![0.0; c];
            for s in 0..l {
                for ch in 0..c {
                    let i = (bi * l + s) * c + ch;
                    acc[ch] += xd[i];
                    out[i] = acc[ch] / (s + 1) as f64;
                }
            }
        }
        let rg = self.rg(&[x]);
        let shape = t.shape();
        self.push(Tensor::new(shape, out).expect("same shape"), Op::CumMeanTime(x), rg)
    }

    /// Broadcasts `[N, 1, C]` to `[N, len, C]`.
    pub fn repeat_time(&mut self, x: Var, len: usize) -> Result<Var> {
        let [n, one, c] = self.shape(x).0;
        if one != 1 {
            return Err(Error::Shape(format!(
                "repeat_time expects a single step, got {}",
                self.shape(x)
            )));
        }
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(n * len * c);
        for bi in 0..n {
            for _ in 0..len {
                out.extend_from_slice(&xd[bi * c..(bi + 1) * c]);
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(Shape::new(n, len, c), out)?, Op::RepeatTime(x), rg))
    }

    // ----------------------------------------------------------------------
    // reverse pass

    /// Populates gradients of `root` with respect to every node that
    /// requires one. Errors if called twice without [`Graph::reset_grads`].
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.grads.is_some() {
            return Err(Error::AlreadyBackpropagated);
        }
        let shape = self.shape(root);
        if shape != Shape::SCALAR {
            return Err(Error::NotScalar(shape));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(go) = grads[i].take() else { continue };
            self.backprop_node(i, &go, &mut grads);
            grads[i] = Some(go);
        }
        self.grads = Some(grads);
        Ok(())
    }

    fn backprop_node(&self, i: usize, go: &Tensor, grads: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let g = go.data();
        let out_shape = nodes[i].value.shape();
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(nodes[i].op, Op::Sub(..)) { -1.0 } else { 1.0 };
                reduce_into(nodes, grads, *a, out_shape, |k| g[k]);
                reduce_into(nodes, grads, *b, out_shape, |k| sign * g[k]);
            }
            Op::Mul(a, b) => {
                let bv = broadcast_view(&nodes[b.0].value, out_shape);
                let av = broadcast_view(&nodes[a.0].value, out_shape);
                reduce_into(nodes, grads, *a, out_shape, |k| g[k] * bv(k));
                reduce_into(nodes, grads, *b, out_shape, |k| g[k] * av(k));
            }
            Op::Scale(a, k) => {
                if let Some(buf) = grad_buf(nodes, grads, *a) {
                    buf.iter_mut().zip(g).for_each(|(d, s)| *d += k * s);
                }
            }
            Op::Square(a) => {
                let x = nodes[a.0].value.data();
                if let Some(buf) = grad_buf(nodes, grads, *a) {
                    for (j, d) in buf.iter_mut().enumerate() {
                        *d += 2.0 * x[j] * g[j];
                    }
                }
            }
            Op::Sum(a) | Op::Mean(a) => {
                let scale = match nodes[i].op {
                    Op::Mean(_) => 1.0 / nodes[a.0].value.numel().max(1) as f64,
                    _ => 1.0,
                };
                if let Some(buf) = grad_buf(nodes, grads, *a) {
                    buf.iter_mut().for_each(|d| *d += g[0] * scale);
                }
            }
            Op::Matmul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let [n, p, q] = ta.dims();
                let r = tb.dims()[2];
                if nodes[a.0].requires_grad {
                    let bt = transpose_last(tb);
                    let mut tmp = vec![0.0; n * p * q];
                    matmul_into(g, bt.data(), &mut tmp, n, p, r, q);
                    add_to(grad_buf(nodes, grads, *a), &tmp);
                }
                if nodes[b.0].requires_grad {
                    let at = transpose_last(ta);
                    let mut tmp = vec![0.0; n * q * r];
                    matmul_into(at.data(), g, &mut tmp, n, q, p, r);
                    add_to(grad_buf(nodes, grads, *b), &tmp);
                }
            }
            Op::Transpose(a) => {
                let back = transpose_last(go);
                add_to(grad_buf(nodes, grads, *a), back.data());
            }
            Op::Softmax { x, axis } => {
                let y = nodes[i].value.data();
                if let Some(buf) = grad_buf(nodes, grads, *x) {
                    for (base, stride, len) in lines(out_shape, *axis) {
                        let dot: f64 = (0..len)
                            .map(|j| g[base + j * stride] * y[base + j * stride])
                            .sum();
                        for j in 0..len {
                            let k = base + j * stride;
                            buf[k] += y[k] * (g[k] - dot);
                        }
                    }
                }
            }
            Op::Conv1d { x, w, b, spec } => {
                conv1d_backward(nodes, grads, g, *x, *w, *b, spec, out_shape);
            }
            Op::ConvTranspose1d { x, w, b, spec } => {
                conv_transpose1d_backward(nodes, grads, g, *x, *w, *b, spec, out_shape);
            }
            Op::MaxPool { x, argmax } => {
                if let Some(buf) = grad_buf(nodes, grads, *x) {
                    for (k, &src) in argmax.iter().enumerate() {
                        buf[src] += g[k];
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = out_shape.channels();
                let gm = nodes[gamma.0].value.data();
                if let Some(buf) = grad_buf(nodes, grads, *x) {
                    for (r, is) in inv_std.iter().enumerate() {
                        let row = r * c..(r + 1) * c;
                        let (gr, hr) = (&g[row.clone()], &xhat[row.clone()]);
                        let mut mean_d = 0.0;
                        let mut mean_dh = 0.0;
                        for k in 0..c {
                            let d = gr[k] * gm[k];
                            mean_d += d;
                            mean_dh += d * hr[k];
                        }
                        mean_d /= c as f64;
                        mean_dh /= c as f64;
                        for k in 0..c {
                            let d = gr[k] * gm[k];
                            buf[r * c + k] += is * (d - mean_d - hr[k] * mean_dh);
                        }
                    }
                }
                if let Some(buf) = grad_buf(nodes, grads, *gamma) {
                    for (k, (gv, h)) in g.iter().zip(xhat).enumerate() {
                        buf[k % c] += gv * h;
                    }
                }
                if let Some(buf) = grad_buf(nodes, grads, *beta) {
                    for (k, gv) in g.iter().enumerate() {
                        buf[k % c] += gv;
                    }
                }
            }
            Op::Elu { x, alpha } => {
                let xv = nodes[x.0].value.data();
                if let Some(buf) = grad_buf(nodes, grads, *x) {
                    for (j, d) in buf.iter_mut().enumerate() {
                        let slope = if xv[j] > 0.0 { 1.0 } else { alpha * xv[j].exp() };
                        *d += slope * g[j];
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (tx, tw) = (&nodes[x.0].value, &nodes[w.0].value);
                let [n, l, cin] = tx.dims();
                let cout = tw.dims()[2];
                let rows = n * l;
                if nodes[x.0].requires_grad {
                    let wt = transpose_last(tw);
                    let mut tmp = vec![0.0; rows * cin];
                    matmul_into(g, wt.data(), &mut tmp, 1, rows, cout, cin);
                    add_to(grad_buf(nodes, grads, *x), &tmp);
                }
                if nodes[w.0].requires_grad {
                    let xt = transpose_last(&tx.clone().reshape(Shape::new(1, rows, cin)).expect("same size"));
                    let mut tmp = vec![0.0; cin * cout];
                    matmul_into(xt.data(), g, &mut tmp, 1, cin, rows, cout);
                    add_to(grad_buf(nodes, grads, *w), &tmp);
                }
                if let Some(buf) = grad_buf(nodes, grads, *b) {
                    for (k, gv) in g.iter().enumerate() {
                        buf[k % cout] += gv;
                    }
                }
            }
            Op::ConcatTime(a, b) => {
                let [n, la, c] = nodes[a.0].value.dims();
                let lb = nodes[b.0].value.dims()[1];
                let l = la + lb;
                if let Some(buf) = grad_buf(nodes, grads, *a) {
                    for bi in 0..n {
                        let src = &g[bi * l * c..(bi * l + la) * c];
                        add_slice(&mut buf[bi * la * c..(bi + 1) * la * c], src);
                    }
                }
                if let Some(buf) = grad_buf(nodes, grads, *b) {
                    for bi in 0..n {
                        let src = &g[(bi * l + la) * c..(bi + 1) * l * c];
                        add_slice(&mut buf[bi * lb * c..(bi + 1) * lb * c], src);
                    }
                }
            }
            Op::ConcatChannels(parts) => {
                let total = out_shape.channels();
                let rows = out_shape.numel() / total.max(1);
                let mut offset = 0;
                for p in parts {
                    let c = nodes[p.0].value.dims()[2];
                    if let Some(buf) = grad_buf(nodes, grads, *p) {
                        for r in 0..rows {
                            add_slice(
                                &mut buf[r * c..(r + 1) * c],
                                &g[r * total + offset..r * total + offset + c],
                            );
                        }
                    }
                    offset += c;
                }
            }
            Op::SliceTime { x, start } => {
                let [n, l, c] = nodes[x.0].value.dims();
                let len = out_shape.len();
                if let Some(buf) = grad_buf(nodes, grads, *x) {
                    for bi in 0..n {
                        let dst = (bi * l + start) * c;
                        add_slice(&mut buf[dst..dst + len * c], &g[bi * len * c..(bi + 1) * len * c]);
                    }
                }
            }
            Op::SliceChannels { x, start } => {
                let c = nodes[x.0].value.dims()[2];
                let w = out_shape.channels();
                if let Some(buf) = grad_buf(nodes, grads, *x) {
                    for (r, src) in g.chunks_exact(w.max(1)).enumerate() {
                        add_slice(&mut buf[r * c + start..r * c + start + w], src);
                    }
                }
            }
            Op::Gather { x, rows } => {
                let [_, l, c] = nodes[x.0].value.dims();
                let u = out_shape.len();
                if let Some(buf) = grad_buf(nodes, grads, *x) {
                    for (bi, idx) in rows.iter().enumerate() {
                        for (r, &t) in idx.iter().enumerate() {
                            add_slice(
                                &mut buf[(bi * l + t) * c..(bi * l + t + 1) * c],
                                &g[(bi * u + r) * c..(bi * u + r + 1) * c],
                            );
                        }
                    }
                }
            }
            Op::Scatter { base, rows, index } => {
                let [_, l, c] = out_shape.0;
                let u = nodes[rows.0].value.dims()[1];
                if let Some(buf) = grad_buf(nodes, grads, *base) {
                    let mut masked = g.to_vec();
                    for (bi, idx) in index.iter().enumerate() {
                        for &t in idx {
                            masked[(bi * l + t) * c..(bi * l + t + 1) * c].fill(0.0);
                        }
                    }
                    add_slice(buf, &masked);
                }
                if let Some(buf) = grad_buf(nodes, grads, *rows) {
                    for (bi, idx) in index.iter().enumerate() {
                        for (r, &t) in idx.iter().enumerate() {
                            add_slice(
                                &mut buf[(bi * u + r) * c..(bi * u + r + 1) * c],
                                &g[(bi * l + t) * c..(bi * l + t + 1) * c],
                            );
                        }
                    }
                }
            }
            Op::MeanTime(x) => {
                let [n, l, c] = nodes[x.0].value.dims();
                if let Some(buf) = grad_buf(nodes, grads, *x) {
                    for bi in 0..n {
                        for t in 0..l {
                            for ch in 0..c {
                                buf[(bi * l + t) * c + ch] += g[bi * c + ch] / l as f64;
                            }
                        }
                    }
                }
            }
            Op::CumMeanTime(x) => {
                let [n, l, c] = out_shape.0;
                if let Some(buf) = grad_buf(nodes, grads, *x) {
                    for bi in 0..n {
                        let mut acc = vec![0.0; c];
                        for t in (0..l).rev() {
                            for ch in 0..c {
                                let k = (bi * l + t) * c + ch;
                                acc[ch] += g[k] / (t + 1) as f64;
                                buf[k] += acc[ch];
                            }
                        }
                    }
                }
            }
            Op::RepeatTime(x) => {
                let [n, l, c] = out_shape.0;
                if let Some(buf) = grad_buf(nodes, grads, *x) {
                    for bi in 0..n {
                        for t in 0..l {
                            add_slice(
                                &mut buf[bi * c..(bi + 1) * c],
                                &g[(bi * l + t) * c..(bi * l + t + 1) * c],
                            );
                        }
                    }
                }
            }
        }
    }
}

// --------------------------------------------------------------------------
// kernels shared by forward and backward

fn bstrides(s: Shape) -> [usize; 3] {
    let st = s.strides();
    let mut out = [0; 3];
    for d in 0..3 {
        out[d] = if s.0[d] == 1 { 0 } else { st[d] };
    }
    out
}

fn broadcast_view(t: &Tensor, out: Shape) -> impl Fn(usize) -> f64 + '_ {
    let st = bstrides(t.shape());
    let [_, l, c] = out.0;
    move |k| {
        let (i, rem) = (k / (l * c), k % (l * c));
        let (j, m) = (rem / c, rem % c);
        t.data()[i * st[0] + j * st[1] + m * st[2]]
    }
}

/// Sums an output-shaped gradient down to `v`'s (possibly broadcast) shape.
fn reduce_into(
    nodes: &[Node],
    grads: &mut [Option<Tensor>],
    v: Var,
    out: Shape,
    g: impl Fn(usize) -> f64,
) {
    let st = bstrides(nodes[v.0].value.shape());
    let Some(buf) = grad_buf(nodes, grads, v) else {
        return;
    };
    let [n, l, c] = out.0;
    let mut k = 0;
    for i in 0..n {
        for j in 0..l {
            for m in 0..c {
                buf[i * st[0] + j * st[1] + m * st[2]] += g(k);
                k += 1;
            }
        }
    }
}

fn grad_buf<'a>(nodes: &[Node], grads: &'a mut [Option<Tensor>], v: Var) -> Option<&'a mut [f64]> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let slot = &mut grads[v.0];
    let t = slot.get_or_insert_with(|| Tensor::zeros(nodes[v.0].value.shape()));
    Some(t.data_mut())
}

fn add_to(buf: Option<&mut [f64]>, src: &[f64]) {
    if let Some(buf) = buf {
        add_slice(buf, src);
    }
}

fn add_slice(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// `out[b] += a[b] (p x q) * m[b] (q x r)`.
fn matmul_into(a: &[f64], m: &[f64], out: &mut [f64], n: usize, p: usize, q: usize, r: usize) {
    for b in 0..n {
        let ab = &a[b * p * q..(b + 1) * p * q];
        let mb = &m[b * q * r..(b + 1) * q * r];
        let ob = &mut out[b * p * r..(b + 1) * p * r];
        for i in 0..p {
            let orow = &mut ob[i * r..(i + 1) * r];
            for k in 0..q {
                let av = ab[i * q + k];
                if av == 0.0 {
                    continue;
                }
                let mrow = &mb[k * r..(k + 1) * r];
                for (o, mv) in orow.iter_mut().zip(mrow) {
                    *o += av * mv;
                }
            }
        }
    }
}

fn transpose_last(t: &Tensor) -> Tensor {
    let [n, l, c] = t.dims();
    let src = t.data();
    let mut out = vec![0.0; n * l * c];
    for b in 0..n {
        for i in 0..l {
            for j in 0..c {
                out[(b * c + j) * l + i] = src[(b * l + i) * c + j];
            }
        }
    }
    Tensor::new(Shape::new(n, c, l), out).expect("transpose preserves size")
}

/// `(base offset, stride, length)` of every line along `axis`.
fn lines(shape: Shape, axis: usize) -> Vec<(usize, usize, usize)> {
    let st = shape.strides();
    let dims = shape.0;
    let len = dims[axis];
    let others: Vec<usize> = (0..3).filter(|&d| d != axis).collect();
    let mut out = Vec::with_capacity(shape.numel() / len.max(1));
    for i in 0..dims[others[0]] {
        for j in 0..dims[others[1]] {
            out.push((i * st[others[0]] + j * st[others[1]], st[axis], len));
        }
    }
    out
}

/// Softmax of the first `visible` entries of a line; the remainder become 0.
fn softmax_line(buf: &mut [f64], base: usize, stride: usize, len: usize, visible: usize) {
    let max = (0..visible)
        .map(|j| buf[base + j * stride])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for j in 0..visible {
        let e = (buf[base + j * stride] - max).exp();
        buf[base + j * stride] = e;
        total += e;
    }
    for j in 0..len {
        let k = base + j * stride;
        buf[k] = if j < visible { buf[k] / total } else { 0.0 };
    }
}

fn check_index(rows: &[Vec<usize>], n: usize, l: usize) -> Result<usize> {
    if rows.len() != n {
        return Err(Error::Shape(format!("{} index lists for batch {n}", rows.len())));
    }
    let u = rows.first().map_or(0, Vec::len);
    for idx in rows {
        if idx.len() != u {
            return Err(Error::Shape("ragged time index".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&t| t >= l) {
            return Err(Error::Shape(format!("time index {bad} out of range for length {l}")));
        }
    }
    Ok(u)
}

#[allow(clippy::too_many_arguments)]
fn conv1d_backward(
    nodes: &[Node],
    grads: &mut [Option<Tensor>],
    g: &[f64],
    x: Var,
    w: Var,
    b: Var,
    spec: &ConvSpec,
    out: Shape,
) {
    let [n, l, cin] = nodes[x.0].value.dims();
    let [_, lout, cout] = out.0;
    let k = spec.kernel_size;
    let xd = nodes[x.0].value.data();
    let wd = nodes[w.0].value.data();
    let taps = |t: usize, kk: usize| {
        (t * spec.stride + kk)
            .checked_sub(spec.padding)
            .filter(|&p| p < l)
    };
    if let Some(buf) = grad_buf(nodes, grads, x) {
        for bi in 0..n {
            for t in 0..lout {
                let grow = &g[(bi * lout + t) * cout..(bi * lout + t + 1) * cout];
                for kk in 0..k {
                    let Some(pos) = taps(t, kk) else { continue };
                    let dst = &mut buf[(bi * l + pos) * cin..(bi * l + pos + 1) * cin];
                    for (o, gv) in grow.iter().enumerate() {
                        let wrow = &wd[o * cin * k..(o + 1) * cin * k];
                        for (i, d) in dst.iter_mut().enumerate() {
                            *d += wrow[i * k + kk] * gv;
                        }
                    }
                }
            }
        }
    }
    if let Some(buf) = grad_buf(nodes, grads, w) {
        for bi in 0..n {
            for t in 0..lout {
                let grow = &g[(bi * lout + t) * cout..(bi * lout + t + 1) * cout];
                for kk in 0..k {
                    let Some(pos) = taps(t, kk) else { continue };
                    let xrow = &xd[(bi * l + pos) * cin..(bi * l + pos + 1) * cin];
                    for (o, gv) in grow.iter().enumerate() {
                        for (i, xv) in xrow.iter().enumerate() {
                            buf[(o * cin + i) * k + kk] += gv * xv;
                        }
                    }
                }
            }
        }
    }
    if let Some(buf) = grad_buf(nodes, grads, b) {
        for (j, gv) in g.iter().enumerate() {
            buf[j % cout] += gv;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_transpose1d_backward(
    nodes: &[Node],
    grads: &mut [Option<Tensor>],
    g: &[f64],
    x: Var,
    w: Var,
    b: Var,
    spec: &ConvSpec,
    out: Shape,
) {
    let [n, l, cin] = nodes[x.0].value.dims();
    let [_, lout, cout] = out.0;
    let k = spec.kernel_size;
    let xd = nodes[x.0].value.data();
    let wd = nodes[w.0].value.data();
    let taps = |t: usize, kk: usize| {
        (t * spec.stride + kk)
            .checked_sub(spec.padding)
            .filter(|&p| p < lout)
    };
    if let Some(buf) = grad_buf(nodes, grads, x) {
        for bi in 0..n {
            for t in 0..l {
                let dst = &mut buf[(bi * l + t) * cin..(bi * l + t + 1) * cin];
                for kk in 0..k {
                    let Some(pos) = taps(t, kk) else { continue };
                    let grow = &g[(bi * lout + pos) * cout..(bi * lout + pos + 1) * cout];
                    for (i, d) in dst.iter_mut().enumerate() {
                        let wrow = &wd[i * cout * k..(i + 1) * cout * k];
                        for (o, gv) in grow.iter().enumerate() {
                            *d += wrow[o * k + kk] * gv;
                        }
                    }
                }
            }
        }
    }
    if let Some(buf) = grad_buf(nodes, grads, w) {
        for bi in 0..n {
            for t in 0..l {
                let xrow = &xd[(bi * l + t) * cin..(bi * l + t + 1) * cin];
                for kk in 0..k {
                    let Some(pos) = taps(t, kk) else { continue };
                    let grow = &g[(bi * lout + pos) * cout..(bi * lout + pos + 1) * cout];
                    for (i, xv) in xrow.iter().enumerate() {
                        for (o, gv) in grow.iter().enumerate() {
                            buf[(i * cout + o) * k + kk] += xv * gv;
                        }
                    }
                }
            }
        }
    }
    if let Some(buf) = grad_buf(nodes, grads, b) {
        for (j, gv) in g.iter().enumerate() {
            buf[j % cout] += gv;
        }
    }
}
