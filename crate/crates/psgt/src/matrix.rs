//! Row-major feature matrix.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MatrixError {
    #[error("row {row} has {got} columns, expected {expected}")]
    RowLength { row: usize, expected: usize, got: usize },
    #[error("cannot infer column count from an empty row set")]
    Empty,
}

/// Dense row-major matrix of `f64` features. Column count is fixed at
/// construction; every row pushed must match it.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Creates an empty matrix with `cols` columns. Panics if `cols` is 0.
    pub fn new(cols: usize) -> Self {
        assert!(cols > 0, "a matrix needs at least one column");
        Matrix { cols, data: Vec::new() }
    }

    pub fn with_capacity(cols: usize, rows: usize) -> Self {
        assert!(cols > 0, "a matrix needs at least one column");
        Matrix { cols, data: Vec::with_capacity(cols * rows) }
    }

    /// Builds a matrix from row slices, inferring the column count from the
    /// first row.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, MatrixError> {
        let first = rows.first().ok_or(MatrixError::Empty)?;
        let mut m = Matrix::with_capacity(first.len(), rows.len());
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m.cols {
                return Err(MatrixError::RowLength { row: i, expected: m.cols, got: row.len() });
            }
            m.data.extend_from_slice(row);
        }
        Ok(m)
    }

    /// Appends one row. Panics on a column-count mismatch; builders inside
    /// the crate always push fixed-width rows.
    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.cols, "row width must match the matrix");
        self.data.extend_from_slice(row);
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.cols
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    /// Returns a new matrix with `other`'s rows appended below `self`'s.
    /// Panics if the column counts differ.
    pub fn vstack(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "vstack needs matching column counts");
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Matrix { cols: self.cols, data }
    }
}
