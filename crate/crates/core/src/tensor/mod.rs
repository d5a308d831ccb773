//! Dense float64 tensors and a tape-based reverse-mode autodiff engine.
//!
//! [`Tensor`] is a plain value: a shape and row-major data. Differentiable
//! computation happens on a [`Tape`], which records every operation applied
//! to [`Var`] handles and replays them in reverse on [`Tape::backward`].

mod checkpoint;
mod tape;

pub use checkpoint::{read_checkpoint_map, write_checkpoint_map, TensorRecord};
pub use tape::{Gradients, Tape, Var};

use std::cell::Cell;

use ndarray::ArrayView2;
use rand::Rng;

use crate::error::{dim_err, Error, Result};

thread_local! {
    static MULTIPLIES: Cell<u64> = const { Cell::new(0) };
}

/// Counts scalar multiplications performed by matrix products on this thread.
pub mod multiply_counter {
    use super::MULTIPLIES;

    pub fn reset() {
        MULTIPLIES.with(|c| c.set(0));
    }

    pub fn get() -> u64 {
        MULTIPLIES.with(|c| c.get())
    }

    pub(crate) fn add(n: u64) {
        MULTIPLIES.with(|c| c.set(c.get() + n));
    }
}

/// Dense n-dimensional array of `f64` in row-major order.
///
/// `requires_grad` marks learnable tensors; `grad` is filled by
/// [`Gradients::write_into`] after a backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return dim_err(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn scalar(value: f64) -> Self {
        Self::full(&[1], value)
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Self {
            shape: vec![n],
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(&[rows, cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
    pub fn uniform_fan_in<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut t = Self::zeros(shape);
        for v in &mut t.data {
            *v = rng.gen_range(-bound..=bound);
        }
        t
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return dim_err(format!("item() on tensor of shape {:?}", self.shape));
        }
        Ok(self.data[0])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    /// Rows and columns of a 2-D tensor; a 1-D tensor is treated as one row.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [n] => Ok((1, *n)),
            [r, c] => Ok((*r, *c)),
            s => dim_err(format!("expected a matrix, got shape {s:?}")),
        }
    }

    pub fn at2(&self, row: usize, col: usize) -> f64 {
        let cols = *self.shape.last().unwrap_or(&1);
        self.data[row * cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let cols = *self.shape.last().unwrap_or(&1);
        &self.data[row * cols..(row + 1) * cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return dim_err(format!(
                "cannot compare shapes {:?} and {:?}",
                self.shape, other.shape
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Plain matrix product without tape recording.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return dim_err(format!(
                "matmul inner dimensions differ: {:?} x {:?}",
                self.shape, other.shape
            ));
        }
        let data = gemm(&self.data, m, k, false, &other.data, n, false)?;
        Tensor::new(&[m, n], data)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::new(&[c, r], out)
    }

    pub(crate) fn check_finite(self, op: &'static str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite { op })
        }
    }
}

/// `op(A) · op(B)` where `A` is stored `m×k` (or `k×m` if transposed) and the
/// result is `m×n`.
pub(crate) fn gemm(
    a: &[f64],
    m: usize,
    k: usize,
    a_t: bool,
    b: &[f64],
    n: usize,
    b_t: bool,
) -> Result<Vec<f64>> {
    let a_view = if a_t {
        ArrayView2::from_shape((k, m), a).map(|v| v.reversed_axes())
    } else {
        ArrayView2::from_shape((m, k), a)
    }
    .map_err(|e| Error::Dimension(e.to_string()))?;
    let b_view = if b_t {
        ArrayView2::from_shape((n, k), b).map(|v| v.reversed_axes())
    } else {
        ArrayView2::from_shape((k, n), b)
    }
    .map_err(|e| Error::Dimension(e.to_string()))?;
    multiply_counter::add((m * k * n) as u64);
    let out = a_view.dot(&b_view);
    Ok(out.as_standard_layout().iter().copied().collect())
}

/// Splits `shape` around `axis` into (outer, axis length, inner) extents.
pub(crate) fn axis_extents(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return dim_err(format!("axis {axis} out of range for shape {shape:?}"));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(&[2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn identity_matmul() {
        let v = Tensor::matrix(2, 1, vec![2.0, 3.0]).unwrap();
        let out = Tensor::identity(2).matmul(&v).unwrap();
        assert_eq!(out.data(), &[2.0, 3.0]);
    }

    #[test]
    fn hand_matmul() {
        let a = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let ones = Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap();
        assert_eq!(a.matmul(&ones).unwrap().data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        assert!(matches!(a.matmul(&b), Err(Error::Dimension(_))));
    }

    #[test]
    fn transposed_gemm_matches_explicit_transpose() {
        let a = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::matrix(2, 2, vec![1.0, -1.0, 0.5, 2.0]).unwrap();
        let via_flag = gemm(a.data(), 3, 2, true, b.data(), 2, false).unwrap();
        let explicit = a.transpose().unwrap().matmul(&b).unwrap();
        assert_eq!(via_flag, explicit.data());
    }

    #[test]
    fn counter_tracks_products() {
        multiply_counter::reset();
        let a = Tensor::zeros(&[3, 4]);
        let b = Tensor::zeros(&[4, 5]);
        a.matmul(&b).unwrap();
        assert_eq!(multiply_counter::get(), 60);
    }
}
