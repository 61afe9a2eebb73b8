//! Dense row-major matrices and token sequences.

use num_traits::Float;

use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Row vector times matrix: `x (1 x rows) * self -> 1 x cols`.
    pub fn left_mul(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.rows);
        let mut out = vec![T::zero(); self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            for (o, &m) in out.iter_mut().zip(self.row(i)) {
                *o = *o + xi * m;
            }
        }
        out
    }

    /// Row vector times transpose: `y (1 x cols) * self^T -> 1 x rows`.
    pub fn left_mul_transpose(&self, y: &[T]) -> Vec<T> {
        debug_assert_eq!(y.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), y)).collect()
    }

    /// `self += scale * a^T b` for row vectors `a` (len rows) and `b` (len cols).
    pub fn add_outer(&mut self, a: &[T], b: &[T], scale: T) {
        for (i, &ai) in a.iter().enumerate() {
            let s = ai * scale;
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (m, &bj) in row.iter_mut().zip(b) {
                *m = *m + s * bj;
            }
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| Float::max(m, Float::abs(a - b)))
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// `L x dim` visual token grid, one token per row.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence<T>(Matrix<T>);

impl<T: Scalar> TokenSequence<T> {
    pub fn new(len: usize, dim: usize, data: Vec<T>) -> Result<Self> {
        if len == 0 || dim == 0 {
            return Err(Error::Empty("token sequence needs at least one token of positive dim"));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("token entry {i} is not finite")));
        }
        Ok(Self(Matrix::new(len, dim, data)?))
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Dimension("tokens differ in dim".into()));
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    pub fn len(&self) -> usize {
        self.0.rows
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows == 0
    }

    pub fn dim(&self) -> usize {
        self.0.cols
    }

    pub fn token(&self, i: usize) -> &[T] {
        self.0.row(i)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &[T]> {
        self.0.data.chunks(self.0.cols)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0.data
    }

    pub fn as_matrix(&self) -> &Matrix<T> {
        &self.0
    }

    pub(crate) fn matrix_mut(&mut self) -> &mut Matrix<T> {
        &mut self.0
    }

    pub(crate) fn from_matrix_unchecked(m: Matrix<T>) -> Self {
        Self(m)
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.0.max_abs_diff(&other.0)
    }
}
