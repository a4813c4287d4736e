//! Sparse symmetric storage and an envelope (profile) Cholesky factorization.
//!
//! Crossbar node numbering keeps every nonzero within a band of width
//! `2 * min(rows, cols)` of the diagonal, so the envelope holds all fill-in
//! and the factorization cost is `O(n * band^2)`.

use crate::error::{Error, Result};

/// Compressed sparse row matrix holding both triangles.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            col_idx.push(c);
            values.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterate `(col, value)` over row `i`, columns ascending.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(c, v)| v * x[c]).sum()).collect()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| (v - self.get(j, i)).abs() <= tol * v.abs().max(1e-300)))
    }

    /// Lower half-bandwidth: `max(i - j)` over stored entries.
    pub fn half_bandwidth(&self) -> usize {
        (0..self.n)
            .filter_map(|i| self.row(i).next().map(|(j, _)| i.saturating_sub(j)))
            .max()
            .unwrap_or(0)
    }
}

/// `L` factor of `A = L L^T` in row-envelope storage.
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    n: usize,
    first: Vec<usize>,
    offset: Vec<usize>,
    data: Vec<f64>,
}

/// Upper bound on envelope entries before refusing to factor (16 GiB).
const MAX_ENVELOPE: usize = 1 << 31;

impl EnvelopeCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.dim();
        let mut first = Vec::with_capacity(n);
        let mut offset = Vec::with_capacity(n + 1);
        offset.push(0usize);
        for i in 0..n {
            let f = a.row(i).next().map_or(i, |(j, _)| j.min(i));
            first.push(f);
            let next = offset[i]
                .checked_add(i - f + 1)
                .filter(|&t| t <= MAX_ENVELOPE)
                .ok_or_else(|| Error::Resource(format!("envelope of a {n}-unknown system exceeds {MAX_ENVELOPE} entries")))?;
            offset.push(next);
        }
        let mut data = vec![0.0; offset[n]];
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j <= i {
                    data[offset[i] + j - first[i]] = v;
                }
            }
        }

        for i in 0..n {
            let fi = first[i];
            let (done, rest) = data.split_at_mut(offset[i]);
            let row_i = &mut rest[..i - fi + 1];
            for k in fi..i {
                let fk = first[k];
                let start = fi.max(fk);
                let row_k = &done[offset[k]..offset[k] + k - fk + 1];
                let li = &row_i[start - fi..k - fi];
                let lk = &row_k[start - fk..k - fk];
                let dot: f64 = li.iter().zip(lk).map(|(a, b)| a * b).sum();
                row_i[k - fi] = (row_i[k - fi] - dot) / row_k[k - fk];
            }
            let sq: f64 = row_i[..i - fi].iter().map(|v| v * v).sum();
            let d = row_i[i - fi] - sq;
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Numeric(format!(
                    "matrix is not positive definite: pivot {d:e} at unknown {i} of {n}"
                )));
            }
            row_i[i - fi] = d.sqrt();
        }
        Ok(Self { n, first, offset, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn envelope_len(&self) -> usize {
        self.data.len()
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n {
            return Err(Error::Contract(format!(
                "right-hand side of length {} for a {}-unknown factor",
                b.len(),
                self.n
            )));
        }
        let mut y = b.to_vec();
        for i in 0..self.n {
            let fi = self.first[i];
            let row = &self.data[self.offset[i]..self.offset[i + 1]];
            let dot: f64 = row[..i - fi].iter().zip(&y[fi..i]).map(|(a, b)| a * b).sum();
            y[i] = (y[i] - dot) / row[i - fi];
        }
        for i in (0..self.n).rev() {
            let fi = self.first[i];
            let row = &self.data[self.offset[i]..self.offset[i + 1]];
            let xi = y[i] / row[i - fi];
            y[i] = xi;
            for (yp, l) in y[fi..i].iter_mut().zip(&row[..i - fi]) {
                *yp -= l * xi;
            }
        }
        Ok(y)
    }
}
