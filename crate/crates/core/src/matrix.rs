//! Dense matrices and quantization granularity descriptors.

use std::fmt;

use crate::error::{Error, Result};

/// Storage width of a matrix's source data.
///
/// Values are always held in f64 internally; a `Single` matrix is one whose
/// every value is exactly representable in f32 (e.g. it was loaded from a
/// 32-bit weight file), so narrowing it back is lossless.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Single,
    Double,
}

/// Row-major dense matrix of finite floats.
///
/// Rows are the input dimension (`d_in`) for weight matrices and the token
/// dimension (`d_t`) for activation matrices; columns are output channels
/// or input features respectively.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    precision: Precision,
}

impl DenseMatrix {
    /// Build a double-precision matrix, validating shape and finiteness.
    pub fn from_f64(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::validate(rows, cols, &values)?;
        Ok(Self {
            rows,
            cols,
            values,
            precision: Precision::Double,
        })
    }

    /// Build a single-precision matrix from 32-bit data (widened losslessly).
    pub fn from_f32(rows: usize, cols: usize, values: &[f32]) -> Result<Self> {
        let wide: Vec<f64> = values.iter().map(|&v| v as f64).collect();
        Self::validate(rows, cols, &wide)?;
        Ok(Self {
            rows,
            cols,
            values: wide,
            precision: Precision::Single,
        })
    }

    fn validate(rows: usize, cols: usize, values: &[f64]) -> Result<()> {
        if rows == 0 || cols == 0 {
            return Err(Error::ShapeMismatch {
                context: format!("matrix dimensions {rows}x{cols} must be non-zero"),
            });
        }
        let expected = rows.checked_mul(cols).ok_or_else(|| Error::ShapeMismatch {
            context: format!("matrix dimensions {rows}x{cols} overflow"),
        })?;
        if values.len() != expected {
            return Err(Error::ShapeMismatch {
                context: format!(
                    "value count {} does not match {rows}x{cols}",
                    values.len()
                ),
            });
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "matrix values".to_string(),
            });
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access to the raw values. Callers must keep entries finite.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    /// Narrow to f32 storage order (used by the 32-bit weight container).
    pub fn to_f32_vec(&self) -> Vec<f32> {
        self.values.iter().map(|&v| v as f32).collect()
    }

    /// `self (m x k) * rhs (k x n)`.
    pub fn matmul(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != rhs.rows {
            return Err(Error::ShapeMismatch {
                context: format!(
                    "matmul {}x{} * {}x{}",
                    self.rows, self.cols, rhs.rows, rhs.cols
                ),
            });
        }
        let (m, k, n) = (self.rows, self.cols, rhs.cols);
        let mut out = vec![0.0f64; m * n];
        for i in 0..m {
            let a_row = &self.values[i * k..(i + 1) * k];
            let o_row = &mut out[i * n..(i + 1) * n];
            for (p, &a) in a_row.iter().enumerate() {
                let b_row = &rhs.values[p * n..(p + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        DenseMatrix::from_f64(m, n, out)
    }

    /// `self (m x k) * rhs^T (n x k)` -> m x n.
    pub fn matmul_transpose(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != rhs.cols {
            return Err(Error::ShapeMismatch {
                context: format!(
                    "matmul_transpose {}x{} * ({}x{})^T",
                    self.rows, self.cols, rhs.rows, rhs.cols
                ),
            });
        }
        let (m, k, n) = (self.rows, self.cols, rhs.rows);
        let mut out = vec![0.0f64; m * n];
        for i in 0..m {
            let a_row = &self.values[i * k..(i + 1) * k];
            for j in 0..n {
                let b_row = &rhs.values[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for (&a, &b) in a_row.iter().zip(b_row) {
                    acc += a * b;
                }
                out[i * n + j] = acc;
            }
        }
        DenseMatrix::from_f64(m, n, out)
    }

    /// `self^T (k x m) * rhs (k x n)` -> m x n.
    pub fn transposed_matmul(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != rhs.rows {
            return Err(Error::ShapeMismatch {
                context: format!(
                    "transposed_matmul ({}x{})^T * {}x{}",
                    self.rows, self.cols, rhs.rows, rhs.cols
                ),
            });
        }
        let (k, m, n) = (self.rows, self.cols, rhs.cols);
        let mut out = vec![0.0f64; m * n];
        for p in 0..k {
            let a_row = &self.values[p * m..(p + 1) * m];
            let b_row = &rhs.values[p * n..(p + 1) * n];
            for (i, &a) in a_row.iter().enumerate() {
                let o_row = &mut out[i * n..(i + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        DenseMatrix::from_f64(m, n, out)
    }
}

/// Scope over which one scaling factor (and threshold) is shared.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Granularity {
    PerTensor,
    PerChannel,
    PerGroup { group_size: usize },
}

impl Granularity {
    /// Group-wise granularity. Group size must be positive and divisible by
    /// 4 so that 4-blocks never straddle a group boundary.
    pub fn per_group(group_size: usize) -> Result<Self> {
        if group_size == 0 {
            return Err(Error::Granularity {
                reason: "group_size must be positive".to_string(),
            });
        }
        if !group_size.is_multiple_of(4) {
            return Err(Error::Granularity {
                reason: format!("group_size {group_size} must be divisible by 4"),
            });
        }
        Ok(Granularity::PerGroup { group_size })
    }

    /// Check compatibility with an input dimension.
    pub fn validate_for(&self, d_in: usize) -> Result<()> {
        if let Granularity::PerGroup { group_size } = self {
            if !d_in.is_multiple_of(*group_size) {
                return Err(Error::Granularity {
                    reason: format!("d_in {d_in} is not divisible by group_size {group_size}"),
                });
            }
        }
        Ok(())
    }

    /// Number of scale scopes along one column.
    pub fn groups_per_column(&self, d_in: usize) -> usize {
        match self {
            Granularity::PerGroup { group_size } => d_in / group_size,
            _ => 1,
        }
    }

    /// Total number of scales for a `d_in x d_out` tensor.
    pub fn scale_count(&self, d_in: usize, d_out: usize) -> usize {
        match self {
            Granularity::PerTensor => 1,
            Granularity::PerChannel => d_out,
            Granularity::PerGroup { group_size } => d_out * (d_in / group_size),
        }
    }

    /// Index of the scale covering element `(row, col)`.
    ///
    /// Group scales are laid out column-major: all groups of column 0, then
    /// column 1, matching the packing order.
    #[inline]
    pub fn scale_index(&self, row: usize, col: usize, d_in: usize) -> usize {
        match self {
            Granularity::PerTensor => 0,
            Granularity::PerChannel => col,
            Granularity::PerGroup { group_size } => {
                col * (d_in / group_size) + row / group_size
            }
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Granularity::PerTensor => write!(f, "tensor"),
            Granularity::PerChannel => write!(f, "channel"),
            Granularity::PerGroup { group_size } => write!(f, "group:{group_size}"),
        }
    }
}
