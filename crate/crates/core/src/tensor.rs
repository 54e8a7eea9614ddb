//! Dense tensors, matrices, and the multilinear kernels HOOI is built from.
//!
//! All storage is row-major `f64` (last index fastest). A mode-`m` unfolding
//! puts dimension `m` on the rows and flattens the remaining dimensions in
//! ascending order, row-major, onto the columns.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Highest tensor order supported by the kernels.
pub const MAX_ORDER: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} does not describe {len} elements")]
    ShapeMismatch { shape: Vec<usize>, len: usize },
    #[error("tensor order {0} is outside the supported range 1..={MAX_ORDER}")]
    UnsupportedOrder(usize),
    #[error("zero-sized dimension in shape {0:?}")]
    ZeroDimension(Vec<usize>),
    #[error("mode {mode} is out of range for an order-{order} tensor")]
    ModeOutOfRange { mode: usize, order: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("factor matrix has more rows ({rows}) than columns ({cols})")]
    FactorTooTall { rows: usize, cols: usize },
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        if rows * cols != data.len() {
            return Err(TensorError::ShapeMismatch {
                shape: vec![rows, cols],
                len: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, TensorError> {
        if self.cols != other.rows {
            return Err(TensorError::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix, TensorError> {
        if self.rows != other.rows {
            return Err(TensorError::DimensionMismatch(format!(
                "cannot multiply ({}x{})ᵀ by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, a) in a_row.iter().enumerate() {
                if *a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn scale(&self, alpha: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * alpha).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix, TensorError> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix, TensorError> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix, TensorError> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(TensorError::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    /// Copies the first `k` columns.
    pub fn leading_columns(&self, k: usize) -> Matrix {
        Matrix::from_fn(self.rows, k, |i, j| self.get(i, j))
    }

    /// Largest absolute entry of `selfᵀ·self − I`, the orthonormality defect of the columns.
    pub fn column_orthonormality_defect(&self) -> f64 {
        let g = self.t_matmul(self).expect("square gram");
        let mut worst = 0.0f64;
        for i in 0..g.rows {
            for j in 0..g.cols {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g.get(i, j) - target).abs());
            }
        }
        worst
    }

    pub fn into_tensor(self) -> DenseTensor {
        DenseTensor {
            shape: vec![self.rows, self.cols],
            data: self.data,
        }
    }
}

/// Factor matrix `U` of shape `r × n` with `r ≤ n`; rows span the retained subspace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorMatrix(Matrix);

impl FactorMatrix {
    pub fn new(m: Matrix) -> Result<Self, TensorError> {
        if m.rows > m.cols {
            return Err(TensorError::FactorTooTall {
                rows: m.rows,
                cols: m.cols,
            });
        }
        if m.rows == 0 {
            return Err(TensorError::ZeroDimension(vec![m.rows, m.cols]));
        }
        Ok(Self(m))
    }

    /// First `rank` rows of the `n × n` identity.
    pub fn identity_prefix(rank: usize, n: usize) -> Self {
        Self(Matrix::from_fn(
            rank,
            n,
            |i, j| if i == j { 1.0 } else { 0.0 },
        ))
    }

    /// The retained rank `r`.
    pub fn rank(&self) -> usize {
        self.0.rows
    }

    /// The original dimension `n`.
    pub fn dim(&self) -> usize {
        self.0.cols
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    /// `max |U·Uᵀ − I|`.
    pub fn row_orthonormality_defect(&self) -> f64 {
        self.0.transpose().column_orthonormality_defect()
    }
}

/// N-dimensional dense tensor, order 1 through [`MAX_ORDER`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        validate_shape(&shape)?;
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::ShapeMismatch {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self, TensorError> {
        validate_shape(&shape)?;
        let n = shape.iter().product();
        Ok(Self {
            shape,
            data: vec![0.0; n],
        })
    }

    pub fn from_fn(
        shape: Vec<usize>,
        mut f: impl FnMut(&[usize]) -> f64,
    ) -> Result<Self, TensorError> {
        validate_shape(&shape)?;
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..n {
            data.push(f(&idx));
            for d in (0..shape.len()).rev() {
                idx[d] += 1;
                if idx[d] < shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(Self { shape, data })
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.shape.len()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
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

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index order mismatch");
        index.iter().zip(&self.shape).fold(0, |acc, (i, n)| {
            assert!(i < n, "index out of bounds");
            acc * n + i
        })
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], v: f64) {
        let o = self.offset(index);
        self.data[o] = v;
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_norm(self)
    }

    pub fn sub(&self, other: &DenseTensor) -> Result<DenseTensor, TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::DimensionMismatch(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(DenseTensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    /// Reinterprets an order-2 tensor as a matrix.
    pub fn to_matrix(&self) -> Result<Matrix, TensorError> {
        if self.order() != 2 {
            return Err(TensorError::DimensionMismatch(format!(
                "expected an order-2 tensor, got shape {:?}",
                self.shape
            )));
        }
        Matrix::from_vec(self.shape[0], self.shape[1], self.data.clone())
    }
}

fn validate_shape(shape: &[usize]) -> Result<(), TensorError> {
    if shape.is_empty() || shape.len() > MAX_ORDER {
        return Err(TensorError::UnsupportedOrder(shape.len()));
    }
    if shape.contains(&0) {
        return Err(TensorError::ZeroDimension(shape.to_vec()));
    }
    Ok(())
}

fn check_mode(order: usize, mode: usize) -> Result<(), TensorError> {
    if mode >= order {
        return Err(TensorError::ModeOutOfRange { mode, order });
    }
    Ok(())
}

/// Splits `shape` around `mode` into (product before, size at, product after).
fn split_at_mode(shape: &[usize], mode: usize) -> (usize, usize, usize) {
    let before = shape[..mode].iter().product();
    let after = shape[mode + 1..].iter().product();
    (before, shape[mode], after)
}

pub(crate) fn norm2(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Mode-`mode` unfolding: an `n_mode × (∏ other dims)` matrix.
pub fn unfold(t: &DenseTensor, mode: usize) -> Result<Matrix, TensorError> {
    check_mode(t.order(), mode)?;
    let (before, n, after) = split_at_mode(&t.shape, mode);
    let cols = before * after;
    let mut out = vec![0.0; n * cols];
    for a in 0..before {
        for i in 0..n {
            let src = &t.data[(a * n + i) * after..(a * n + i + 1) * after];
            let dst = &mut out[i * cols + a * after..i * cols + (a + 1) * after];
            dst.copy_from_slice(src);
        }
    }
    Matrix::from_vec(n, cols, out)
}

/// Inverse of [`unfold`].
pub fn fold(m: &Matrix, mode: usize, shape: &[usize]) -> Result<DenseTensor, TensorError> {
    validate_shape(shape)?;
    check_mode(shape.len(), mode)?;
    let (before, n, after) = split_at_mode(shape, mode);
    if m.rows() != n || m.cols() != before * after {
        return Err(TensorError::DimensionMismatch(format!(
            "a {}x{} matrix cannot fold into shape {:?} along mode {}",
            m.rows(),
            m.cols(),
            shape,
            mode
        )));
    }
    let cols = m.cols();
    let mut data = vec![0.0; n * cols];
    for a in 0..before {
        for i in 0..n {
            let src = &m.data()[i * cols + a * after..i * cols + (a + 1) * after];
            data[(a * n + i) * after..(a * n + i + 1) * after].copy_from_slice(src);
        }
    }
    DenseTensor::new(shape.to_vec(), data)
}

/// Which side of the matrix is contracted against the tensor in [`mode_product`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Contraction {
    /// Contract over the matrix rows: `out(.., c, ..) = Σ_r t(.., r, ..)·u(r, c)`.
    /// This is the reconstruction direction `Γ ×ᵢ Uⁱ` with `Uⁱ` shaped `rᵢ × nᵢ`.
    Rows,
    /// Contract over the matrix columns: `out(.., r, ..) = Σ_c t(.., c, ..)·u(r, c)`.
    /// This is the projection direction `T ×ᵢ (Uⁱ)ᵀ`.
    Cols,
}

/// Mode-`mode` product of `t` with `u`; `contraction` picks which axis of `u` is summed.
pub fn mode_product(
    t: &DenseTensor,
    u: &Matrix,
    mode: usize,
    contraction: Contraction,
) -> Result<DenseTensor, TensorError> {
    check_mode(t.order(), mode)?;
    let (before, n, after) = split_at_mode(&t.shape, mode);
    let (contracted, kept) = match contraction {
        Contraction::Rows => (u.rows(), u.cols()),
        Contraction::Cols => (u.cols(), u.rows()),
    };
    if contracted != n {
        return Err(TensorError::DimensionMismatch(format!(
            "mode {} has size {} but the matrix contracts over {}",
            mode, n, contracted
        )));
    }
    let mut out = vec![0.0; before * kept * after];
    for a in 0..before {
        for i in 0..n {
            let src = &t.data[(a * n + i) * after..(a * n + i + 1) * after];
            for j in 0..kept {
                let w = match contraction {
                    Contraction::Rows => u.get(i, j),
                    Contraction::Cols => u.get(j, i),
                };
                if w == 0.0 {
                    continue;
                }
                let dst = &mut out[(a * kept + j) * after..(a * kept + j + 1) * after];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }
    let mut shape = t.shape.clone();
    shape[mode] = kept;
    DenseTensor::new(shape, out)
}

pub fn frobenius_norm(t: &DenseTensor) -> f64 {
    norm2(&t.data)
}
