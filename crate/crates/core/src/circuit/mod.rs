//! Crossbar current solvers.
//!
//! [`ideal_mvm`] is the Kirchhoff dot product `I_j = Σ_i v_i G_ij`.
//! [`CrossbarSolver`] solves the full resistive mesh with lumped line
//! resistance on every bit-line and source-line segment. [`ColumnProbe`] is a
//! fast path for the characterization campaign, where only one column
//! differs from a fixed background.

mod network;
mod probe;
pub mod sparse;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::tech::{CrossbarGeometry, TechnologyProfile};

pub use network::{build_network, series_conductance, write_node_voltages, NodalSystem, NodeLayout, Plane};
pub use probe::ColumnProbe;
use sparse::EnvelopeCholesky;

/// `rows x cols` device conductances in siemens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConductanceGrid(Matrix);

impl ConductanceGrid {
    pub fn new(g: Matrix) -> Result<Self> {
        if let Some(bad) = g.as_slice().iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::Domain(format!("conductance {bad} is not finite and non-negative")));
        }
        if g.rows() == 0 || g.cols() == 0 {
            return Err(Error::Domain("empty conductance grid".into()));
        }
        Ok(Self(g))
    }

    pub fn uniform(rows: usize, cols: usize, g: f64) -> Result<Self> {
        Self::new(Matrix::filled(rows, cols, g))
    }

    /// Every entry within `[1/r_off, 1/r_on]` up to rounding.
    pub fn check_technology(&self, tech: &TechnologyProfile) -> Result<()> {
        let (lo, hi) = (tech.g_off() * (1.0 - 1e-12), tech.g_on() * (1.0 + 1e-12));
        match self.0.as_slice().iter().find(|&&g| g < lo || g > hi) {
            Some(g) => Err(Error::Domain(format!(
                "conductance {g:e} S outside the {} range [{:e}, {:e}]",
                tech.name,
                tech.g_off(),
                tech.g_on()
            ))),
            None => Ok(()),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.0.cols()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

/// Bit-line drive voltages.
#[derive(Debug, Clone, PartialEq)]
pub struct DriveVector(Vec<f64>);

impl DriveVector {
    pub fn new(v: Vec<f64>) -> Result<Self> {
        if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
            return Err(Error::Domain(format!("drive voltage {bad} is not finite")));
        }
        Ok(Self(v))
    }

    /// Drive restricted to the DAC range `[0, v_max]`.
    pub fn bounded(v: Vec<f64>, v_max: f64) -> Result<Self> {
        if let Some(bad) = v.iter().find(|x| !(0.0..=v_max).contains(*x)) {
            return Err(Error::Domain(format!("drive voltage {bad} outside [0, {v_max}]")));
        }
        Self::new(v)
    }

    pub fn uniform(rows: usize, v: f64) -> Self {
        Self(vec![v; rows])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Sense-line output currents in amperes, one per column.
pub type ColumnCurrents = Vec<f64>;

fn check_dims(v: &DriveVector, g: &ConductanceGrid) -> Result<()> {
    if v.len() != g.rows() {
        return Err(Error::Contract(format!(
            "drive vector of length {} for a crossbar with {} rows",
            v.len(),
            g.rows()
        )));
    }
    Ok(())
}

/// Ideal crossbar output: `I_j = Σ_i v_i G_ij`.
pub fn ideal_mvm(v: &DriveVector, g: &ConductanceGrid) -> Result<ColumnCurrents> {
    check_dims(v, g)?;
    g.matrix().vec_mul(v.as_slice())
}

/// Node voltages and terminal currents of one mesh solve.
#[derive(Debug, Clone)]
pub struct MeshSolution {
    pub column_currents: ColumnCurrents,
    pub driver_currents: Vec<f64>,
    /// Node voltages in [`NodeLayout`] order; empty for ideal wires.
    pub node_voltages: Vec<f64>,
    /// `‖A x − b‖ / ‖b‖`.
    pub relative_residual: f64,
}

/// Relative residual above which a solve is reported as failed.
pub const RESIDUAL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone)]
enum SolverKind {
    /// `r_line = 0`: every bit-line sits at its driver voltage and every
    /// source-line at 0 V, so each cell sees the full drive.
    IdealWires { series: Matrix },
    Mesh {
        layout: NodeLayout,
        matrix: sparse::CsrMatrix,
        factor: EnvelopeCholesky,
        g_line: f64,
    },
}

/// Factored crossbar mesh. Factor once per conductance grid, then solve for
/// any number of drive vectors.
#[derive(Debug, Clone)]
pub struct CrossbarSolver {
    rows: usize,
    cols: usize,
    kind: SolverKind,
}

impl CrossbarSolver {
    pub fn new(g: &ConductanceGrid, geom: &CrossbarGeometry) -> Result<Self> {
        geom.validate()?;
        let (rows, cols) = (g.rows(), g.cols());
        let kind = if geom.r_line == 0.0 {
            let series = g.matrix().map(|x| series_conductance(x, geom.r_access));
            SolverKind::IdealWires { series }
        } else {
            let (layout, matrix, g_line) = network::assemble_matrix(g, geom)?;
            let factor = EnvelopeCholesky::factor(&matrix)?;
            SolverKind::Mesh {
                layout,
                matrix,
                factor,
                g_line,
            }
        };
        Ok(Self { rows, cols, kind })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn layout(&self) -> Option<&NodeLayout> {
        match &self.kind {
            SolverKind::Mesh { layout, .. } => Some(layout),
            SolverKind::IdealWires { .. } => None,
        }
    }

    pub fn solve(&self, v: &DriveVector) -> Result<MeshSolution> {
        if v.len() != self.rows {
            return Err(Error::Contract(format!(
                "drive vector of length {} for a crossbar with {} rows",
                v.len(),
                self.rows
            )));
        }
        match &self.kind {
            SolverKind::IdealWires { series } => {
                let column_currents = series.vec_mul(v.as_slice())?;
                let driver_currents = (0..self.rows)
                    .map(|i| v.as_slice()[i] * series.row(i).iter().sum::<f64>())
                    .collect();
                Ok(MeshSolution {
                    column_currents,
                    driver_currents,
                    node_voltages: Vec::new(),
                    relative_residual: 0.0,
                })
            }
            SolverKind::Mesh {
                layout,
                matrix,
                factor,
                g_line,
            } => {
                let b = network::assemble_rhs(v, layout, *g_line);
                let x = factor.solve(&b)?;
                let ax = matrix.mul_vec(&x);
                let num: f64 = ax.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
                let den: f64 = b.iter().map(|q| q * q).sum::<f64>().sqrt();
                let relative_residual = if den > 0.0 { num / den } else { num };
                if !(relative_residual <= RESIDUAL_TOLERANCE) {
                    return Err(Error::Numeric(format!(
                        "mesh solve residual {relative_residual:e} exceeds {RESIDUAL_TOLERANCE:e} \
                         ({} unknowns, envelope {})",
                        layout.unknowns(),
                        factor.envelope_len()
                    )));
                }
                let sys = NodalSystem {
                    layout: *layout,
                    matrix: matrix.clone(),
                    rhs: Vec::new(),
                    g_line: *g_line,
                };
                Ok(MeshSolution {
                    column_currents: sys.column_currents(&x),
                    driver_currents: sys.driver_currents(v.as_slice(), &x),
                    node_voltages: x,
                    relative_residual,
                })
            }
        }
    }
}

/// Column currents of the crossbar with line and access resistance.
pub fn solve_nonideal(v: &DriveVector, g: &ConductanceGrid, geom: &CrossbarGeometry) -> Result<ColumnCurrents> {
    check_dims(v, g)?;
    Ok(CrossbarSolver::new(g, geom)?.solve(v)?.column_currents)
}

/// Drive-to-current map `I = A V` of one fixed grid.
///
/// The mesh is linear in its drives, so after one reduction every MVM on the
/// same devices is a dense `cols × rows` product. Equal to
/// [`CrossbarSolver::solve`] up to rounding.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrix(Matrix);

impl TransferMatrix {
    pub fn new(g: &ConductanceGrid, geom: &CrossbarGeometry) -> Result<Self> {
        let probe = ColumnProbe::new(g, geom)?;
        let mut a = Matrix::zeros(g.cols(), g.rows());
        for j in 0..g.cols() {
            let cells: Vec<f64> = (0..g.rows()).map(|i| g.get(i, j)).collect();
            a.row_mut(j).copy_from_slice(&probe.transfer_row(j, &cells)?);
        }
        Ok(Self(a))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn apply(&self, v: &[f64]) -> Result<ColumnCurrents> {
        if v.len() != self.0.cols() {
            return Err(Error::Contract(format!(
                "{} drives for a {}-row crossbar",
                v.len(),
                self.0.cols()
            )));
        }
        Ok((0..self.0.rows())
            .map(|j| self.0.row(j).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }
}
