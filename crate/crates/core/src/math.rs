//! Dense numeric kernel.
//!
//! Storage types ([`Vector`], [`Matrix`]) hold 32-bit reals and reject
//! non-finite entries at construction. All reductions accumulate in 64-bit.
//! [`Mat64`] is the 64-bit working matrix used by loss kernels and by the
//! finite-difference oracle.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MathError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("shape mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("empty vector or matrix")]
    Empty,
    #[error("non-finite entry at index {0}")]
    NonFinite(usize),
    #[error("invalid huber delta {0}; must be > 0")]
    InvalidDelta(f64),
    #[error("invalid finite-difference step {0}; must be > 0")]
    InvalidStep(f64),
    #[error("oracle failure: objective returned non-finite value at coordinate {0}")]
    OracleNonFinite(usize),
}

fn check_finite<I: IntoIterator<Item = f64>>(values: I) -> Result<(), MathError> {
    for (idx, v) in values.into_iter().enumerate() {
        if !v.is_finite() {
            return Err(MathError::NonFinite(idx));
        }
    }
    Ok(())
}

/// A finite, non-empty vector of 32-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector {
    data: Vec<f32>,
}

impl Vector {
    pub fn new(data: Vec<f32>) -> Result<Self, MathError> {
        if data.is_empty() {
            return Err(MathError::Empty);
        }
        check_finite(data.iter().map(|&v| v as f64))?;
        Ok(Self { data })
    }

    /// Rounds 64-bit values to storage precision.
    pub fn from_f64(data: &[f64]) -> Result<Self, MathError> {
        Self::new(data.iter().map(|&v| v as f32).collect())
    }

    pub fn zeros(dim: usize) -> Result<Self, MathError> {
        Self::new(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.data
    }
}

/// Row-major matrix of finite 32-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, MathError> {
        if rows == 0 || cols == 0 {
            return Err(MathError::Empty);
        }
        if rows * cols != data.len() {
            return Err(MathError::DimMismatch(rows * cols, data.len()));
        }
        check_finite(data.iter().map(|&v| v as f64))?;
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self, MathError> {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self, MathError> {
        let cols = rows.first().map(Vec::len).ok_or(MathError::Empty)?;
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(MathError::DimMismatch(cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn to_f64(&self) -> Mat64 {
        Mat64 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v as f64).collect(),
        }
    }
}

/// 64-bit working matrix. Not validated on construction; callers that
/// expose results convert back through [`Mat64::to_matrix`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mat64 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat64 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, MathError> {
        if rows * cols != data.len() {
            return Err(MathError::DimMismatch(rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn same_shape(&self, other: &Mat64) -> Result<(), MathError> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(MathError::ShapeMismatch(
                self.rows, self.cols, other.rows, other.cols,
            ));
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn add_scaled(&mut self, other: &Mat64, factor: f64) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_matrix(&self) -> Result<Matrix, MathError> {
        Matrix::new(
            self.rows,
            self.cols,
            self.data.iter().map(|&v| v as f32).collect(),
        )
    }
}

pub fn dot(a: &Vector, b: &Vector) -> Result<f64, MathError> {
    if a.dim() != b.dim() {
        return Err(MathError::DimMismatch(a.dim(), b.dim()));
    }
    Ok(a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| x as f64 * y as f64)
        .sum())
}

pub fn l2_norm(a: &Vector) -> f64 {
    a.as_slice()
        .iter()
        .map(|&x| (x as f64) * (x as f64))
        .sum::<f64>()
        .sqrt()
}

#[inline]
pub fn dot64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm64(a: &[f64]) -> f64 {
    dot64(a, a).sqrt()
}

/// Euclidean distance between two equal-length slices.
#[inline]
pub fn dist64(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Huber penalty on the scalar residual `a - b`.
pub fn huber(a: f64, b: f64, delta: f64) -> Result<f64, MathError> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(MathError::InvalidDelta(delta));
    }
    Ok(huber_unchecked(a, b, delta))
}

#[inline]
pub(crate) fn huber_unchecked(a: f64, b: f64, delta: f64) -> f64 {
    let r = (a - b).abs();
    if r <= delta {
        0.5 * r * r
    } else {
        delta * (r - 0.5 * delta)
    }
}

/// Derivative of `huber(a, b, delta)` with respect to `b`.
#[inline]
pub(crate) fn huber_grad_b(a: f64, b: f64, delta: f64) -> f64 {
    (b - a).clamp(-delta, delta)
}

/// Softmax of `scale * scores`, computed with max-subtraction.
pub fn softmax_scaled(scores: &Vector, scale: f64) -> Vector {
    let out = softmax64(&scores.to_f64(), scale);
    Vector::from_f64(&out).expect("softmax output is finite and non-empty")
}

pub fn softmax64(scores: &[f64], scale: f64) -> Vec<f64> {
    let scaled: Vec<f64> = scores.iter().map(|&s| s * scale).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|&s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Central finite-difference gradient of `f` at `x` with step `h`.
pub fn finite_diff_grad<F>(f: F, x: &[f64], h: f64) -> Result<Vec<f64>, MathError>
where
    F: Fn(&[f64]) -> f64,
{
    if !(h > 0.0) || !h.is_finite() {
        return Err(MathError::InvalidStep(h));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        let orig = probe[k];
        probe[k] = orig + h;
        let plus = f(&probe);
        probe[k] = orig - h;
        let minus = f(&probe);
        probe[k] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(MathError::OracleNonFinite(k));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let scale = norm64(analytic).max(norm64(numeric)).max(floor);
    diff / scale
}
