//! Fast single-column solves against a fixed background.
//!
//! Eliminating each column's source-line chain leaves a dense admittance
//! `E_k` on that column's bit-line nodes; the bit-line planes then form a
//! block-tridiagonal system coupled only through the wire segments. Sweeping
//! from both edges reduces everything outside column `j` to an admittance
//! `Y_j` and a Norton transfer `T_j` from the drivers, both computed once.
//! Probing column `j` with new cells then costs one dense `rows x rows`
//! Cholesky instead of a full mesh factorization.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::tech::CrossbarGeometry;

use super::network::series_conductance;
use super::ConductanceGrid;

#[derive(Debug, Clone)]
pub struct ColumnProbe {
    rows: usize,
    cols: usize,
    g_line: f64,
    r_access: f64,
    /// `Y_j`: admittance of the rest of the array seen from `BL(·, j)`.
    admittance: Vec<DMatrix<f64>>,
    /// `T_j`: Norton current at `BL(·, j)` per volt of each driver.
    transfer: Vec<DMatrix<f64>>,
}

fn singular(what: &str, col: usize) -> Error {
    Error::Numeric(format!("{what} is not positive definite at column {col}"))
}

/// `y (A + y I)^{-1} A`: admittance `A` seen through a series link `y`.
fn through_link(a: &DMatrix<f64>, y: f64, col: usize) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let shifted = a + DMatrix::identity(n, n) * y;
    let chol = Cholesky::new(shifted).ok_or_else(|| singular("link reduction", col))?;
    let mut out = chol.solve(a) * y;
    symmetrize(&mut out);
    Ok(out)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for k in 0..i {
            let s = 0.5 * (m[(i, k)] + m[(k, i)]);
            m[(i, k)] = s;
            m[(k, i)] = s;
        }
    }
}

impl ColumnProbe {
    /// Prepare probes against `background`, whose cells stay in place for
    /// every column except the probed one.
    pub fn new(background: &ConductanceGrid, geom: &CrossbarGeometry) -> Result<Self> {
        geom.validate()?;
        let (rows, cols) = (background.rows(), background.cols());
        let r_access = geom.r_access;
        if geom.r_line == 0.0 {
            return Ok(Self {
                rows,
                cols,
                g_line: f64::INFINITY,
                r_access,
                admittance: Vec::new(),
                transfer: Vec::new(),
            });
        }
        let g = 1.0 / geom.r_line;
        let column_admittance: Vec<DMatrix<f64>> = (0..cols)
            .map(|k| {
                let d: Vec<f64> = (0..rows)
                    .map(|i| series_conductance(background.get(i, k), r_access))
                    .collect();
                sl_reduced_admittance(&d, g)
            })
            .collect();

        let eye = DMatrix::<f64>::identity(rows, rows);
        let mut transfer = Vec::with_capacity(cols);
        let mut left = Vec::with_capacity(cols);
        let mut l_k = &eye * g;
        let mut t_k = &eye * g;
        for k in 0..cols {
            left.push(l_k.clone());
            transfer.push(t_k.clone());
            if k + 1 < cols {
                let a_k = &l_k + &column_admittance[k];
                let chol = Cholesky::new(&a_k + &eye * g).ok_or_else(|| singular("left sweep", k))?;
                t_k = chol.solve(&t_k) * g;
                let mut next = chol.solve(&a_k) * g;
                symmetrize(&mut next);
                l_k = next;
            }
        }

        let mut right = vec![DMatrix::<f64>::zeros(rows, rows); cols];
        for k in (1..cols).rev() {
            let m = &right[k] + &column_admittance[k];
            right[k - 1] = through_link(&m, g, k)?;
        }

        let admittance = left.into_iter().zip(right).map(|(l, r)| l + r).collect();
        Ok(Self {
            rows,
            cols,
            g_line: g,
            r_access,
            admittance,
            transfer,
        })
    }

    /// Probes against a background where every device has conductance `g`.
    pub fn uniform(g: f64, geom: &CrossbarGeometry) -> Result<Self> {
        Self::new(&ConductanceGrid::uniform(geom.rows, geom.cols, g)?, geom)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Sense current of column `col` when its devices are replaced by
    /// `cells` (siemens) and the rows are driven by `v` (volts).
    pub fn column_current(&self, col: usize, cells: &[f64], v: &[f64]) -> Result<f64> {
        if col >= self.cols {
            return Err(Error::Contract(format!("column {col} outside a {}-column crossbar", self.cols)));
        }
        if cells.len() != self.rows || v.len() != self.rows {
            return Err(Error::Contract(format!(
                "probe needs {} cells and drives, got {} and {}",
                self.rows,
                cells.len(),
                v.len()
            )));
        }
        let d: Vec<f64> = cells.iter().map(|&c| series_conductance(c, self.r_access)).collect();
        if self.g_line.is_infinite() {
            return Ok(d.iter().zip(v).map(|(a, b)| a * b).sum());
        }
        let e = sl_reduced_admittance(&d, self.g_line);
        let system = &self.admittance[col] + &e;
        let rhs = &self.transfer[col] * DVector::from_column_slice(v);
        let chol = Cholesky::new(system).ok_or_else(|| singular("probe system", col))?;
        let x = chol.solve(&rhs);
        // Current entering the column from its bit-line nodes equals the
        // current leaving at the sense node.
        let mut total = 0.0;
        for k in 0..self.rows {
            total += e.column(k).sum() * x[k];
        }
        Ok(total)
    }
    /// Row `col` of the drive-to-current map with that column's devices set
    /// to `cells`: `I_col = Σ_i a_i V_i`. With `cells` equal to the
    /// background column this is exact for the background grid itself.
    pub fn transfer_row(&self, col: usize, cells: &[f64]) -> Result<Vec<f64>> {
        if col >= self.cols || cells.len() != self.rows {
            return Err(Error::Contract(format!(
                "transfer row {col} with {} cells on a {}x{} crossbar",
                cells.len(),
                self.rows,
                self.cols
            )));
        }
        let d: Vec<f64> = cells.iter().map(|&c| series_conductance(c, self.r_access)).collect();
        if self.g_line.is_infinite() {
            return Ok(d);
        }
        let e = sl_reduced_admittance(&d, self.g_line);
        let system = &self.admittance[col] + &e;
        let chol = Cholesky::new(system).ok_or_else(|| singular("probe system", col))?;
        let load = DVector::from_iterator(self.rows, (0..self.rows).map(|k| e.column(k).sum()));
        let u = chol.solve(&load);
        Ok((self.transfer[col].transpose() * u).iter().copied().collect())
    }
}

/// Admittance on one column's bit-line nodes after eliminating its
/// source-line chain: `E = D − D T^{-1} D`, where `T` is the grounded chain
/// Laplacian plus the cell conductances `D`.
fn sl_reduced_admittance(d: &[f64], g: f64) -> DMatrix<f64> {
    let n = d.len();
    // Thomas factorization of T: diag g·(1 + [i > 0]) + d_i, off-diagonal −g.
    let diag: Vec<f64> = (0..n)
        .map(|i| g * if i > 0 { 2.0 } else { 1.0 } + d[i])
        .collect();
    let mut c_prime = vec![0.0; n];
    let mut denom = vec![0.0; n];
    denom[0] = diag[0];
    for i in 1..n {
        c_prime[i - 1] = -g / denom[i - 1];
        denom[i] = diag[i] + g * c_prime[i - 1];
    }

    let mut e = DMatrix::<f64>::zeros(n, n);
    let mut y = vec![0.0; n];
    for k in 0..n {
        if d[k] == 0.0 {
            continue;
        }
        // Solve T y = e_k.
        y.fill(0.0);
        y[k] = 1.0;
        y[0] /= denom[0];
        for i in 1..n {
            y[i] = (y[i] + g * y[i - 1]) / denom[i];
        }
        for i in (0..n - 1).rev() {
            y[i] -= c_prime[i] * y[i + 1];
        }
        for i in 0..n {
            e[(i, k)] = -d[i] * d[k] * y[i];
        }
        e[(k, k)] += d[k];
    }
    symmetrize(&mut e);
    e
}
