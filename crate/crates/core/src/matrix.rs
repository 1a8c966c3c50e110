use std::fmt;

use crate::error::{Error, Result};

/// Dense `rows x cols` 0/1 matrix. Rows index classes (clusters), columns
/// index clients.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMatrix {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl BinaryMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![false; rows * cols],
        }
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![true; rows * cols],
        }
    }

    /// Build from row-major rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            bits: rows.iter().flatten().map(|&b| b != 0).collect(),
        })
    }

    /// Build from per-client columns of length `rows`.
    pub fn from_columns(rows: usize, columns: &[Vec<bool>]) -> Result<Self> {
        let mut out = Self::zeros(rows, columns.len());
        for (j, col) in columns.iter().enumerate() {
            if col.len() != rows {
                return Err(Error::shape("column length does not match row count"));
            }
            for (i, &b) in col.iter().enumerate() {
                out.set(i, j, b);
            }
        }
        Ok(out)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.bits[i * self.cols + j] = v;
    }

    pub fn row_sum(&self, i: usize) -> usize {
        self.bits[i * self.cols..(i + 1) * self.cols]
            .iter()
            .filter(|&&b| b)
            .count()
    }

    pub fn col_sum(&self, j: usize) -> usize {
        (0..self.rows).filter(|&i| self.get(i, j)).count()
    }

    pub fn row_sums(&self) -> Vec<usize> {
        (0..self.rows).map(|i| self.row_sum(i)).collect()
    }

    pub fn col_sums(&self) -> Vec<usize> {
        (0..self.cols).map(|j| self.col_sum(j)).collect()
    }

    pub fn sum(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn column(&self, j: usize) -> Vec<bool> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// Members (column indices) of row `i`.
    pub fn row_members(&self, i: usize) -> Vec<usize> {
        (0..self.cols).filter(|&j| self.get(i, j)).collect()
    }

    /// True if every 1 in `self` is also a 1 in `other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn complement(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    /// Keep only the listed columns, in order.
    pub fn select_columns(&self, cols: &[usize]) -> Self {
        let columns: Vec<Vec<bool>> = cols.iter().map(|&j| self.column(j)).collect();
        Self::from_columns(self.rows, &columns).expect("columns share the row count")
    }

    /// Compact form `row;row;...` with each row written as 0/1 digits.
    pub fn to_compact(&self) -> String {
        (0..self.rows)
            .map(|i| {
                (0..self.cols)
                    .map(|j| if self.get(i, j) { '1' } else { '0' })
                    .collect::<String>()
            })
            .collect::<Vec<_>>()
            .join(";")
    }
}

impl fmt::Debug for BinaryMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "BinaryMatrix {}x{}", self.rows, self.cols)?;
        for i in 0..self.rows {
            let row: String = (0..self.cols)
                .map(|j| if self.get(i, j) { '1' } else { '.' })
                .collect();
            writeln!(f, "  {row}")?;
        }
        Ok(())
    }
}
