use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Extents of a rank-3 tensor laid out as (batch, time, channel).
///
/// Lower-rank data uses leading extents of 1: a scalar is `[1, 1, 1]`, a
/// row vector `[1, 1, n]`, a matrix `[1, rows, cols]`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Shape(pub [usize; 3]);

impl Shape {
    pub const SCALAR: Shape = Shape([1, 1, 1]);

    pub fn new(n: usize, l: usize, c: usize) -> Self {
        Shape([n, l, c])
    }

    pub fn batch(&self) -> usize {
        self.0[0]
    }

    pub fn len(&self) -> usize {
        self.0[1]
    }

    pub fn channels(&self) -> usize {
        self.0[2]
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.numel() == 0
    }

    pub(crate) fn strides(&self) -> [usize; 3] {
        [self.0[1] * self.0[2], self.0[2], 1]
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}x{}x{}]", self.0[0], self.0[1], self.0[2])
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Dense row-major fp64 array of rank at most 3.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if shape.numel() != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape} holds {} values, got {}",
                shape.numel(),
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_dims(dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        Self::new(Shape(dims), data)
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Shape::SCALAR,
            data: vec![value],
        }
    }

    /// `[1, 1, n]` row vector.
    pub fn vector(values: Vec<f64>) -> Self {
        Self {
            shape: Shape::new(1, 1, values.len()),
            data: values,
        }
    }

    /// `[1, rows, cols]` matrix from equal-length rows.
    pub fn matrix(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged matrix rows".into()));
        }
        Ok(Self {
            shape: Shape::new(1, rows.len(), cols),
            data: rows.concat(),
        })
    }

    pub fn randn<R: Rng + ?Sized>(shape: Shape, rng: &mut R) -> Self {
        let data = (0..shape.numel())
            .map(|_| StandardNormal.sample(rng))
            .collect();
        Self { shape, data }
    }

    pub fn uniform<R: Rng + ?Sized>(shape: Shape, low: f64, high: f64, rng: &mut R) -> Self {
        let data = (0..shape.numel())
            .map(|_| rng.random_range(low..high))
            .collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn dims(&self) -> [usize; 3] {
        self.shape.0
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn offset(&self, n: usize, l: usize, c: usize) -> usize {
        let [_, len, ch] = self.shape.0;
        (n * len + l) * ch + c
    }

    #[inline]
    pub fn at(&self, n: usize, l: usize, c: usize) -> f64 {
        self.data[self.offset(n, l, c)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, l: usize, c: usize, value: f64) {
        let i = self.offset(n, l, c);
        self.data[i] = value;
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::NotScalar(self.shape))
        }
    }

    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {} into {shape}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape_mismatch("dot", self.shape, other.shape));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies positions `[start, start + len)` of the time axis.
    pub fn slice_time(&self, start: usize, len: usize) -> Result<Self> {
        let [n, l, c] = self.shape.0;
        if start + len > l {
            return Err(Error::Shape(format!(
                "time slice {start}..{} out of range for {}",
                start + len,
                self.shape
            )));
        }
        let mut data = Vec::with_capacity(n * len * c);
        for b in 0..n {
            let from = self.offset(b, start, 0);
            data.extend_from_slice(&self.data[from..from + len * c]);
        }
        Ok(Self {
            shape: Shape::new(n, len, c),
            data,
        })
    }

    /// Copies channels `[start, start + width)`.
    pub fn slice_channels(&self, start: usize, width: usize) -> Result<Self> {
        let [n, l, c] = self.shape.0;
        if start + width > c {
            return Err(Error::Shape(format!(
                "channel slice {start}..{} out of range for {}",
                start + width,
                self.shape
            )));
        }
        let mut data = Vec::with_capacity(n * l * width);
        for row in self.data.chunks_exact(c.max(1)).take(n * l) {
            data.extend_from_slice(&row[start..start + width]);
        }
        Ok(Self {
            shape: Shape::new(n, l, width),
            data,
        })
    }

    /// Joins along the time axis, `self` first.
    pub fn concat_time(&self, other: &Tensor) -> Result<Self> {
        let [n, la, c] = self.shape.0;
        let [nb, lb, cb] = other.shape.0;
        if n != nb || c != cb {
            return Err(Error::shape_mismatch("concat_time", self.shape, other.shape));
        }
        let mut data = Vec::with_capacity(n * (la + lb) * c);
        for b in 0..n {
            data.extend_from_slice(&self.data[b * la * c..(b + 1) * la * c]);
            data.extend_from_slice(&other.data[b * lb * c..(b + 1) * lb * c]);
        }
        Ok(Self {
            shape: Shape::new(n, la + lb, c),
            data,
        })
    }

    /// Stacks `[1, L, C]` items into `[N, L, C]`.
    pub fn stack_batch(items: &[Tensor]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Shape("cannot stack an empty batch".into()))?;
        let [_, l, c] = first.dims();
        let mut data = Vec::with_capacity(items.len() * l * c);
        for t in items {
            if t.dims() != [1, l, c] {
                return Err(Error::shape_mismatch("stack_batch", first.shape, t.shape));
            }
            data.extend_from_slice(&t.data);
        }
        Ok(Self {
            shape: Shape::new(items.len(), l, c),
            data,
        })
    }

    /// Prepends `pad` copies of each batch item's first time step.
    pub fn pad_time_front(&self, pad: usize) -> Self {
        if pad == 0 {
            return self.clone();
        }
        let [n, l, c] = self.shape.0;
        let mut data = Vec::with_capacity(n * (l + pad) * c);
        for b in 0..n {
            let item = &self.data[b * l * c..(b + 1) * l * c];
            let first = if l > 0 { &item[..c] } else { &[][..] };
            for _ in 0..pad {
                if first.len() == c {
                    data.extend_from_slice(first);
                } else {
                    data.extend(std::iter::repeat_n(0.0, c));
                }
            }
            data.extend_from_slice(item);
        }
        Self {
            shape: Shape::new(n, l + pad, c),
            data,
        }
    }

    /// Appends `pad` copies of the last time step of every batch item.
    pub fn pad_time_back(&self, pad: usize) -> Self {
        if pad == 0 {
            return self.clone();
        }
        let [n, l, c] = self.shape.0;
        let mut data = Vec::with_capacity(n * (l + pad) * c);
        for b in 0..n {
            let item = &self.data[b * l * c..(b + 1) * l * c];
            data.extend_from_slice(item);
            let last = if l > 0 { &item[(l - 1) * c..] } else { &[][..] };
            for _ in 0..pad {
                if last.len() == c {
                    data.extend_from_slice(last);
                } else {
                    data.extend(std::iter::repeat_n(0.0, c));
                }
            }
        }
        Self {
            shape: Shape::new(n, l + pad, c),
            data,
        }
    }
}
