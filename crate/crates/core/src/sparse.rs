//! Compressed sparse row matrices with real values.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Real-valued CSR matrix. Column indices within a row are strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from per-row `(column, value)` entries. Each row is sorted by column;
    /// duplicate columns within a row are rejected.
    pub fn from_row_entries(rows: usize, cols: usize, entries: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        if entries.len() != rows {
            return Err(Error::shape(
                "csr",
                format!("{} row entry lists for {rows} rows", entries.len()),
            ));
        }
        let mut indptr = Vec::with_capacity(rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for (r, mut row) in entries.into_iter().enumerate() {
            row.sort_by_key(|&(c, _)| c);
            for w in row.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(Error::shape("csr", format!("duplicate column {} in row {r}", w[0].0)));
                }
            }
            for (c, v) in row {
                if c >= cols {
                    return Err(Error::shape("csr", format!("column {c} out of range in row {r}")));
                }
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Ok(CsrMatrix {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    /// All-zero matrix of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CsrMatrix {
            rows,
            cols,
            indptr: vec![0; rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Iterates the stored `(column, value)` pairs of row `r`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    /// Value at `(r, c)`, zero when not stored.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.indptr[r]..self.indptr[r + 1];
        match self.indices[span.clone()].binary_search(&c) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows, self.cols));
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                out[[r, c]] = v;
            }
        }
        out
    }

    /// `self · h`.
    pub fn mul_dense(&self, h: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if h.nrows() != self.cols {
            return Err(Error::shape(
                "spmm",
                format!("{}x{} sparse times {}x{} dense", self.rows, self.cols, h.nrows(), h.ncols()),
            ));
        }
        let mut out = Array2::zeros((self.rows, h.ncols()));
        for r in 0..self.rows {
            let mut out_row = out.row_mut(r);
            for (c, v) in self.row(r) {
                out_row.scaled_add(v, &h.row(c));
            }
        }
        Ok(out)
    }

    /// `selfᵀ · g`, the adjoint used when back-propagating through [`CsrMatrix::mul_dense`].
    pub fn transpose_mul_dense(&self, g: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if g.nrows() != self.rows {
            return Err(Error::shape(
                "spmm_transpose",
                format!("{}x{} sparse (transposed) times {}x{}", self.rows, self.cols, g.nrows(), g.ncols()),
            ));
        }
        let mut out = Array2::zeros((self.cols, g.ncols()));
        for r in 0..self.rows {
            let g_row = g.row(r);
            for (c, v) in self.row(r) {
                out.row_mut(c).scaled_add(v, &g_row);
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut entries = vec![Vec::new(); self.cols];
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                entries[c].push((r, v));
            }
        }
        CsrMatrix::from_row_entries(self.cols, self.rows, entries).expect("transpose of valid csr is valid")
    }
}
