//! Dense batch x channels x length arrays, layer primitives and their
//! gradient rules.

mod gradcheck;
mod layers;
pub mod ops;

pub use gradcheck::{grad_check, GradCheckReport};
pub use layers::{BatchNorm1d, Conv1d, GlobalAvgPool, Layer, Linear, MaxPool1d, Relu};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Row-major `[batch, channels, length]` array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<S> {
    batch: usize,
    channels: usize,
    length: usize,
    data: Vec<S>,
}

impl<S: Scalar> Tensor3<S> {
    pub fn zeros(batch: usize, channels: usize, length: usize) -> Self {
        Tensor3 {
            batch,
            channels,
            length,
            data: vec![S::zero(); batch * channels * length],
        }
    }

    pub fn from_vec(batch: usize, channels: usize, length: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != batch * channels * length {
            return Err(Error::shape(
                "tensor",
                format!(
                    "{} values for shape ({batch}, {channels}, {length})",
                    data.len()
                ),
            ));
        }
        Ok(Tensor3 {
            batch,
            channels,
            length,
            data,
        })
    }

    pub fn from_fn(
        batch: usize,
        channels: usize,
        length: usize,
        mut f: impl FnMut(usize, usize, usize) -> S,
    ) -> Self {
        let mut data = Vec::with_capacity(batch * channels * length);
        for b in 0..batch {
            for c in 0..channels {
                for t in 0..length {
                    data.push(f(b, c, t));
                }
            }
        }
        Tensor3 {
            batch,
            channels,
            length,
            data,
        }
    }

    /// A `[batch, features]` matrix stored with length 1.
    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let features = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != features) {
            return Err(Error::shape("tensor", "ragged rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::from_vec(rows.len(), features, 1, data)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.batch, self.channels, self.length)
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn index(&self, b: usize, c: usize, t: usize) -> usize {
        (b * self.channels + c) * self.length + t
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, t: usize) -> S {
        self.data[self.index(b, c, t)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, t: usize, v: S) {
        let i = self.index(b, c, t);
        self.data[i] = v;
    }

    /// Samples of one `(batch, channel)` row.
    pub fn row(&self, b: usize, c: usize) -> &[S] {
        let start = self.index(b, c, 0);
        &self.data[start..start + self.length]
    }

    /// The contiguous `[channels, length]` block of one batch item.
    pub fn item(&self, b: usize) -> &[S] {
        let n = self.channels * self.length;
        &self.data[b * n..(b + 1) * n]
    }

    /// Rows of a length-1 tensor as `[batch][channels]`.
    pub fn to_rows(&self) -> Vec<Vec<S>> {
        (0..self.batch)
            .map(|b| (0..self.channels).map(|c| self.get(b, c, 0)).collect())
            .collect()
    }

    /// Copies batch items `indices` into a new tensor.
    pub fn select_batch(&self, indices: &[usize]) -> Self {
        let n = self.channels * self.length;
        let mut data = Vec::with_capacity(indices.len() * n);
        for &b in indices {
            data.extend_from_slice(self.item(b));
        }
        Tensor3 {
            batch: indices.len(),
            channels: self.channels,
            length: self.length,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor3 {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    /// Same shape, new values.
    pub fn with_data(&self, data: Vec<S>) -> Self {
        assert_eq!(data.len(), self.data.len());
        Tensor3 { data, ..*self }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Tensor3 { data, ..*self })
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A named parameter array with its gradient accumulator.
///
/// Non-trainable arrays (batch-norm running statistics) share the type so
/// that weight serialization can enumerate everything in one pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<S> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<S>,
    pub grad: Vec<S>,
    pub trainable: bool,
}

impl<S: Scalar> Param<S> {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<S>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![S::zero(); value.len()];
        Param {
            name: name.into(),
            shape,
            value,
            grad,
            trainable: true,
        }
    }

    pub fn filled(name: impl Into<String>, shape: Vec<usize>, v: S) -> Self {
        let n = shape.iter().product();
        Self::new(name, shape, vec![v; n])
    }

    pub fn buffer(name: impl Into<String>, shape: Vec<usize>, v: S) -> Self {
        Param {
            trainable: false,
            ..Self::filled(name, shape, v)
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = S::zero());
    }
}
