//! Compressed sparse row matrices and sparse-dense products.
//!
//! Row-parallel kernels write disjoint output rows, so results do not depend
//! on the thread count. Transposed products scatter sequentially.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::parallel;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Work (nnz x dense columns) below which kernels stay on the calling thread.
const PAR_THRESHOLD: usize = 1 << 16;

/// Sparse matrix in CSR layout. Column indices are sorted within each row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix<T> {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> CsrMatrix<T> {
    /// Builds from raw CSR arrays, validating structure.
    pub fn new(rows: usize, cols: usize, indptr: Vec<usize>, indices: Vec<usize>, values: Vec<T>) -> Result<Self> {
        if indptr.len() != rows + 1 || indptr[0] != 0 || *indptr.last().unwrap() != indices.len() {
            return Err(Error::shape("csr", "bad row pointer"));
        }
        if indices.len() != values.len() {
            return Err(Error::shape("csr", "indices/values length differ"));
        }
        for r in 0..rows {
            if indptr[r] > indptr[r + 1] {
                return Err(Error::shape("csr", "row pointer not monotone"));
            }
            let row = &indices[indptr[r]..indptr[r + 1]];
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::shape("csr", format!("row {r} columns not strictly sorted")));
            }
            if row.last().is_some_and(|&c| c >= cols) {
                return Err(Error::shape("csr", format!("row {r} column out of range")));
            }
        }
        Ok(CsrMatrix {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    /// Builds from a dense tensor, keeping exact non-zeros.
    pub fn from_dense(t: &Tensor<T>) -> Self {
        let mut indptr = Vec::with_capacity(t.rows() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for r in 0..t.rows() {
            for (c, &v) in t.row(r).iter().enumerate() {
                if v != T::zero() {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            rows: t.rows(),
            cols: t.cols(),
            indptr,
            indices,
            values,
        }
    }

    pub fn to_dense(&self) -> Tensor<T> {
        let mut t = Tensor::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                t.set(r, c, v);
            }
        }
        t
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
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// `(column, value)` pairs of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    /// Value at `(r, c)`, zero when not stored.
    pub fn get(&self, r: usize, c: usize) -> T {
        let span = self.indptr[r]..self.indptr[r + 1];
        match self.indices[span.clone()].binary_search(&c) {
            Ok(i) => self.values[span.start + i],
            Err(_) => T::zero(),
        }
    }

    /// Keeps the entries for which `keep(row, col, value)` holds.
    pub fn filter(&self, mut keep: impl FnMut(usize, usize, T) -> bool) -> CsrMatrix<T> {
        let mut indptr = Vec::with_capacity(self.rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                if keep(r, c, v) {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            rows: self.rows,
            cols: self.cols,
            indptr,
            indices,
            values,
        }
    }

    /// Row `i` of the result is row `perm[i]` of `self`.
    pub fn permute_rows(&self, perm: &[usize]) -> Result<CsrMatrix<T>> {
        if perm.len() != self.rows {
            return Err(Error::shape("permute_rows", "permutation length"));
        }
        let mut indptr = Vec::with_capacity(self.rows + 1);
        let mut indices = Vec::with_capacity(self.nnz());
        let mut values = Vec::with_capacity(self.nnz());
        indptr.push(0);
        for &src in perm {
            let span = self.indptr[src]..self.indptr[src + 1];
            indices.extend_from_slice(&self.indices[span.clone()]);
            values.extend_from_slice(&self.values[span]);
            indptr.push(indices.len());
        }
        Ok(CsrMatrix {
            rows: self.rows,
            cols: self.cols,
            indptr,
            indices,
            values,
        })
    }

    /// Keeps only the listed rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> CsrMatrix<T> {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for &src in rows {
            let span = self.indptr[src]..self.indptr[src + 1];
            indices.extend_from_slice(&self.indices[span.clone()]);
            values.extend_from_slice(&self.values[span]);
            indptr.push(indices.len());
        }
        CsrMatrix {
            rows: rows.len(),
            cols: self.cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn cast<U: Real>(&self) -> CsrMatrix<U> {
        CsrMatrix {
            rows: self.rows,
            cols: self.cols,
            indptr: self.indptr.clone(),
            indices: self.indices.clone(),
            values: self.values.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

/// Sparse-dense product `S @ B`.
pub fn spmm<T: Real>(s: &CsrMatrix<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if s.cols != b.rows() {
        return Err(Error::shape("spmm", format!("{}x{} @ {:?}", s.rows, s.cols, b.shape())));
    }
    let c = b.cols();
    let mut out = Tensor::zeros(s.rows, c);
    if c == 0 {
        return Ok(out);
    }
    let row_kernel = |r: usize, dst: &mut [T]| {
        for k in s.indptr[r]..s.indptr[r + 1] {
            let v = s.values[k];
            let src = b.row(s.indices[k]);
            for (d, &x) in dst.iter_mut().zip(src) {
                *d = *d + v * x;
            }
        }
    };
    if s.nnz() * c >= PAR_THRESHOLD && parallel::threads() > 1 {
        parallel::pool().install(|| {
            out.data_mut()
                .par_chunks_mut(c)
                .enumerate()
                .for_each(|(r, dst)| row_kernel(r, dst));
        });
    } else {
        out.data_mut()
            .chunks_mut(c)
            .enumerate()
            .for_each(|(r, dst)| row_kernel(r, dst));
    }
    Ok(out)
}

/// Transposed sparse-dense product `S^T @ G`.
pub fn spmm_t<T: Real>(s: &CsrMatrix<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
    if s.rows != g.rows() {
        return Err(Error::shape("spmm_t", format!("({}x{})^T @ {:?}", s.rows, s.cols, g.shape())));
    }
    let c = g.cols();
    let mut out = Tensor::zeros(s.cols, c);
    for r in 0..s.rows {
        let src = g.row(r);
        for k in s.indptr[r]..s.indptr[r + 1] {
            let v = s.values[k];
            let dst = out.row_mut(s.indices[k]);
            for (d, &x) in dst.iter_mut().zip(src) {
                *d = *d + v * x;
            }
        }
    }
    Ok(out)
}
