//! Sparse CSR matrix and sparse-dense products.

use super::{DenseMatrix, NumericError};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseCsr {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f32>,
}

impl SparseCsr {
    /// Validates the CSR invariants: offsets nondecreasing with final offset
    /// equal to nnz, every column index in bounds, and within-row indices
    /// strictly increasing.
    pub fn new(
        rows: usize,
        cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f32>,
    ) -> Result<Self, NumericError> {
        if row_offsets.len() != rows + 1 {
            return Err(NumericError::InvalidCsr(format!(
                "row_offsets length {} for {} rows",
                row_offsets.len(),
                rows
            )));
        }
        if row_offsets[0] != 0 {
            return Err(NumericError::InvalidCsr("first offset must be 0".into()));
        }
        if col_indices.len() != values.len() {
            return Err(NumericError::InvalidCsr(format!(
                "{} col_indices vs {} values",
                col_indices.len(),
                values.len()
            )));
        }
        if *row_offsets.last().unwrap() != col_indices.len() {
            return Err(NumericError::InvalidCsr(format!(
                "final offset {} != nnz {}",
                row_offsets.last().unwrap(),
                col_indices.len()
            )));
        }
        for w in row_offsets.windows(2) {
            if w[1] < w[0] {
                return Err(NumericError::InvalidCsr("offsets decrease".into()));
            }
        }
        for r in 0..rows {
            let row = &col_indices[row_offsets[r]..row_offsets[r + 1]];
            for (k, &c) in row.iter().enumerate() {
                if c >= cols {
                    return Err(NumericError::InvalidCsr(format!(
                        "column index {c} out of bounds for {cols} cols"
                    )));
                }
                if k > 0 && row[k - 1] >= c {
                    return Err(NumericError::InvalidCsr(format!(
                        "row {r} indices not strictly increasing"
                    )));
                }
            }
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(NumericError::NonFinite { op: "csr_new" });
        }
        Ok(Self {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Builds from an edge list; duplicate coordinates have their values summed.
    pub fn from_edges(
        rows: usize,
        cols: usize,
        edges: &[(usize, usize, f32)],
    ) -> Result<Self, NumericError> {
        for &(r, c, _) in edges {
            if r >= rows || c >= cols {
                return Err(NumericError::InvalidCsr(format!(
                    "edge ({r}, {c}) out of bounds for {rows}x{cols}"
                )));
            }
        }
        let mut sorted: Vec<_> = edges.to_vec();
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut merged: Vec<(usize, usize, f32)> = Vec::with_capacity(sorted.len());
        for (r, c, v) in sorted {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        let mut row_offsets = vec![0usize; rows + 1];
        for &(r, _, _) in &merged {
            row_offsets[r + 1] += 1;
        }
        for i in 0..rows {
            row_offsets[i + 1] += row_offsets[i];
        }
        let col_indices = merged.iter().map(|e| e.1).collect();
        let values = merged.iter().map(|e| e.2).collect();
        Self::new(rows, cols, row_offsets, col_indices, values)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Column indices and values of one row.
    pub fn row_entries(&self, r: usize) -> (&[usize], &[f32]) {
        let span = self.row_offsets[r]..self.row_offsets[r + 1];
        (&self.col_indices[span.clone()], &self.values[span])
    }

    /// Weighted out-degree of every row.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|r| self.row_entries(r).1.iter().map(|&v| v as f64).sum())
            .collect()
    }

    pub fn transpose(&self) -> SparseCsr {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.col_indices {
            counts[c + 1] += 1;
        }
        for i in 0..self.cols {
            counts[i + 1] += counts[i];
        }
        let row_offsets = counts.clone();
        let mut col_indices = vec![0usize; self.nnz()];
        let mut values = vec![0.0f32; self.nnz()];
        let mut cursor = counts;
        for r in 0..self.rows {
            let (cols, vals) = self.row_entries(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let pos = cursor[c];
                col_indices[pos] = r;
                values[pos] = v;
                cursor[c] += 1;
            }
        }
        SparseCsr {
            rows: self.cols,
            cols: self.rows,
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && *self == self.transpose()
    }

    /// `self * dense`, accumulating each output entry in f64.
    pub fn spmm(&self, dense: &DenseMatrix) -> Result<DenseMatrix, NumericError> {
        if self.cols != dense.rows() {
            return Err(NumericError::ShapeMismatch {
                op: "spmm",
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: dense.rows(),
                rhs_cols: dense.cols(),
            });
        }
        let mut out = DenseMatrix::zeros(self.rows, dense.cols());
        let mut acc = vec![0.0f64; dense.cols()];
        for r in 0..self.rows {
            acc.iter_mut().for_each(|a| *a = 0.0);
            let (cols, vals) = self.row_entries(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let v = v as f64;
                for (j, &x) in dense.row(c).iter().enumerate() {
                    acc[j] += v * x as f64;
                }
            }
            let out_row = out.row_mut(r);
            for (j, &a) in acc.iter().enumerate() {
                out_row[j] = a as f32;
            }
        }
        Ok(out)
    }
}
