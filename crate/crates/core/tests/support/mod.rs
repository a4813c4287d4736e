//! Independent references shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use xbar_core::circuit::ConductanceGrid;
use xbar_core::matrix::Matrix;
use xbar_core::rng;

/// Dense modified nodal analysis of a crossbar, written from the circuit
/// description without sharing code with the library.
///
/// Nodes: bit-line `BL(i,j)`, source-line `SL(i,j)`, a mid node `M(i,j)`
/// between device and access resistor, and one driver node per row held by
/// an ideal voltage source. Returns the sense currents of each column.
pub fn dense_mna(v: &[f64], g: &Matrix, r_line: f64, r_access: f64) -> Vec<f64> {
    let (rows, cols) = (g.rows(), g.cols());
    let n = rows * cols;
    let bl = |i: usize, j: usize| i * cols + j;
    let sl = |i: usize, j: usize| n + i * cols + j;
    let mid = |i: usize, j: usize| 2 * n + i * cols + j;
    let drv = |i: usize| 3 * n + i;
    let branch = |i: usize| 3 * n + rows + i;
    let size = 3 * n + 2 * rows;
    let mut a = DMatrix::<f64>::zeros(size, size);
    let mut b = DVector::<f64>::zeros(size);
    let gl = 1.0 / r_line;
    let stamp = |a: &mut DMatrix<f64>, p: Option<usize>, q: Option<usize>, y: f64| {
        if let Some(p) = p {
            a[(p, p)] += y;
        }
        if let Some(q) = q {
            a[(q, q)] += y;
        }
        if let (Some(p), Some(q)) = (p, q) {
            a[(p, q)] -= y;
            a[(q, p)] -= y;
        }
    };
    for i in 0..rows {
        stamp(&mut a, Some(drv(i)), Some(bl(i, 0)), gl);
        for j in 0..cols {
            if j + 1 < cols {
                stamp(&mut a, Some(bl(i, j)), Some(bl(i, j + 1)), gl);
            }
            if i + 1 < rows {
                stamp(&mut a, Some(sl(i, j)), Some(sl(i + 1, j)), gl);
            } else {
                stamp(&mut a, Some(sl(i, j)), None, gl);
            }
            let gd = g.get(i, j);
            if r_access > 0.0 {
                stamp(&mut a, Some(bl(i, j)), Some(mid(i, j)), gd);
                stamp(&mut a, Some(mid(i, j)), Some(sl(i, j)), 1.0 / r_access);
            } else {
                stamp(&mut a, Some(bl(i, j)), Some(sl(i, j)), gd);
                // Unused mid node pinned to ground.
                stamp(&mut a, Some(mid(i, j)), None, 1.0);
            }
        }
        // Voltage source: V(drv) = v_i, branch current enters the driver node.
        a[(drv(i), branch(i))] += 1.0;
        a[(branch(i), drv(i))] += 1.0;
        b[branch(i)] = v[i];
    }
    let x = a.lu().solve(&b).expect("MNA system is nonsingular");
    (0..cols).map(|j| x[sl(rows - 1, j)] * gl).collect()
}

/// `Σ_i v_i g_ij`, one column at a time.
pub fn straight_mvm(v: &[f64], g: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; g.cols()];
    for (j, slot) in out.iter_mut().enumerate() {
        for (i, vi) in v.iter().enumerate() {
            *slot += vi * g.get(i, j);
        }
    }
    out
}

pub fn random_grid(rows: usize, cols: usize, g_lo: f64, g_hi: f64, seed: u64) -> ConductanceGrid {
    let mut r = rng::stream(seed, "test-grid", &[]);
    ConductanceGrid::new(Matrix::from_fn(rows, cols, |_, _| r.random_range(g_lo..=g_hi))).unwrap()
}

pub fn random_drives(rows: usize, v_max: f64, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, "test-drives", &[]);
    (0..rows).map(|_| r.random_range(0.0..=v_max)).collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
