//! Compressed sparse row matrices.

use rayon::prelude::*;

const PAR_ROWS: usize = 16_384;

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Square `n×n` matrix from `(row, col, value)` triplets. Duplicates are
    /// summed in input order, so the result is independent of how the
    /// triplets were produced as long as their order is fixed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; n + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().expect("entry exists") += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            indptr[i + 1] += indptr[i];
        }
        Self { n, indptr, indices, values }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map(|k| vals[k]).unwrap_or(0.0)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).1.iter().sum()
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        let row = |i: usize| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum::<f64>()
        };
        if self.n >= PAR_ROWS {
            y.par_iter_mut().enumerate().for_each(|(i, yi)| *yi = row(i));
        } else {
            y.iter_mut().enumerate().for_each(|(i, yi)| *yi = row(i));
        }
    }

    /// Exact structural and numerical symmetry (missing entries count as 0).
    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).all(|(&j, &v)| self.get(j, i) == v)
        })
    }

    /// Keeps only the entries for which `keep(row, col)` holds.
    pub fn filter(&self, keep: impl Fn(usize, usize) -> bool) -> CsrMatrix {
        let mut indptr = vec![0usize; self.n + 1];
        let mut indices = Vec::with_capacity(self.nnz());
        let mut values = Vec::with_capacity(self.nnz());
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if keep(i, j) {
                    indices.push(j);
                    values.push(v);
                }
            }
            indptr[i + 1] = indices.len();
        }
        CsrMatrix { n: self.n, indptr, indices, values }
    }

    /// Replaces row `i` by the `i`-th unit row. Expects `filter` to have
    /// removed every entry of that row beforehand except possibly the
    /// diagonal.
    pub(crate) fn set_unit_rows(&self, unit: &[bool]) -> CsrMatrix {
        let mut indptr = vec![0usize; self.n + 1];
        let mut indices = Vec::with_capacity(self.nnz());
        let mut values = Vec::with_capacity(self.nnz());
        for i in 0..self.n {
            if unit[i] {
                indices.push(i);
                values.push(1.0);
            } else {
                let (cols, vals) = self.row(i);
                indices.extend_from_slice(cols);
                values.extend_from_slice(vals);
            }
            indptr[i + 1] = indices.len();
        }
        CsrMatrix { n: self.n, indptr, indices, values }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    if a.len() >= PAR_ROWS {
        // Fixed-size chunks keep the reduction order independent of the
        // thread count.
        a.par_chunks(4096)
            .zip(b.par_chunks(4096))
            .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u * v).sum::<f64>())
            .collect::<Vec<_>>()
            .iter()
            .sum()
    } else {
        a.iter().zip(b).map(|(u, v)| u * v).sum()
    }
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
