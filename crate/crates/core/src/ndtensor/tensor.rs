use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::TensorError;
use crate::scalar::Scalar;

/// Dense row-major tensor with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    values: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], values: Vec<T>) -> Result<Self, TensorError> {
        if shape.contains(&0) {
            return Err(TensorError::InvalidShape(shape.to_vec()));
        }
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(TensorError::ShapeMismatch {
                op: "new",
                left: shape.to_vec(),
                right: vec![values.len()],
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            values,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            values: vec![v; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(v: T) -> Self {
        Self::full(&[1], v)
    }

    pub fn vector(values: &[T]) -> Self {
        Self {
            shape: vec![values.len()],
            values: values.to_vec(),
            requires_grad: false,
            grad: None,
        }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(TensorError::InvalidShape(vec![rows.len(), cols]));
        }
        Self::new(&[rows.len(), cols], rows.concat())
    }

    /// Samples every entry from `N(0, std²)`.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("std must be finite and non-negative");
        let n = shape.iter().product();
        let values = (0..n).map(|_| T::lit(normal.sample(rng))).collect();
        Self {
            shape: shape.to_vec(),
            values,
            requires_grad: false,
            grad: None,
        }
    }

    /// Marks the tensor as a differentiation target.
    pub fn requiring_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    /// `(rows, cols)` view: a vector is a single row.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            s => (s[..s.len() - 1].iter().product(), s[s.len() - 1]),
        }
    }

    pub fn row(&self, i: usize) -> &[T] {
        let (_, c) = self.dims2();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let (_, c) = self.dims2();
        &mut self.values[i * c..(i + 1) * c]
    }

    /// Appends rows to a matrix, keeping the column count.
    pub fn push_rows(&mut self, rows: &[T]) -> Result<(), TensorError> {
        let (r, c) = self.dims2();
        if self.shape.len() != 2 || !rows.len().is_multiple_of(c) {
            return Err(TensorError::ShapeMismatch {
                op: "push_rows",
                left: self.shape.clone(),
                right: vec![rows.len()],
            });
        }
        self.values.extend_from_slice(rows);
        self.shape = vec![r + rows.len() / c, c];
        if let Some(g) = &mut self.grad {
            g.resize(self.values.len(), T::zero());
        }
        Ok(())
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[T]) -> Result<(), TensorError> {
        if g.len() != self.values.len() {
            return Err(TensorError::ShapeMismatch {
                op: "accumulate_grad",
                left: self.shape.clone(),
                right: vec![g.len()],
            });
        }
        match &mut self.grad {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(b, &x)| *b += x),
            None => self.grad = Some(g.to_vec()),
        }
        Ok(())
    }

    pub fn set_grad(&mut self, g: Vec<T>) -> Result<(), TensorError> {
        self.grad = None;
        self.accumulate_grad(&g)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn l2_norm(&self) -> T {
        l2_norm(&self.values)
    }

    /// Converts every element to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|v| U::lit(v.as_f64())).collect(),
            requires_grad: self.requires_grad,
            grad: self
                .grad
                .as_ref()
                .map(|g| g.iter().map(|v| U::lit(v.as_f64())).collect()),
        }
    }
}

pub(crate) fn l2_norm<T: Scalar>(xs: &[T]) -> T {
    xs.iter().map(|&v| v * v).sum::<T>().sqrt()
}

/// Row-wise `exp(α·z) / Σ exp(α·z)` over the last axis, max-shifted.
pub fn softmax_scaled<T: Scalar>(z: &Tensor<T>, alpha: T) -> Result<Tensor<T>, TensorError> {
    if !(alpha > T::zero()) {
        return Err(TensorError::NonPositiveAlpha(alpha.as_f64()));
    }
    let (rows, cols) = z.dims2();
    let mut out = Vec::with_capacity(z.len());
    for r in 0..rows {
        softmax_row_into(&z.values()[r * cols..(r + 1) * cols], alpha, &mut out);
    }
    Tensor::new(z.shape(), out)
}

pub(crate) fn softmax_row_into<T: Scalar>(row: &[T], alpha: T, out: &mut Vec<T>) {
    let max = row
        .iter()
        .fold(T::neg_infinity(), |m, &v| if v > m { v } else { m });
    let start = out.len();
    let mut sum = T::zero();
    for &v in row {
        let e = (alpha * (v - max)).exp();
        sum += e;
        out.push(e);
    }
    for p in &mut out[start..] {
        *p /= sum;
    }
}

/// Shannon entropy in nats of a probability vector.
pub fn entropy<T: Scalar>(p: &[T]) -> T {
    p.iter()
        .filter(|&&v| v > T::zero())
        .map(|&v| -v * v.ln())
        .sum()
}
