//! Nodal equations of the resistive crossbar mesh.
//!
//! Two node planes: bit-line nodes `BL(i, j)` chained left to right with the
//! row driver `v_i` one segment left of column 0, and source-line nodes
//! `SL(i, j)` chained top to bottom with the 0 V sense node one segment below
//! the last row. Each cell couples `BL(i, j)` to `SL(i, j)` through its device
//! in series with the access resistance.

use std::io::Write;

use crate::error::{Error, Result};
use crate::tech::CrossbarGeometry;

use super::sparse::CsrMatrix;
use super::{ConductanceGrid, DriveVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Plane {
    BitLine,
    SourceLine,
}

impl Plane {
    pub fn label(self) -> &'static str {
        match self {
            Plane::BitLine => "BL",
            Plane::SourceLine => "SL",
        }
    }
}

/// Node numbering. The shorter crossbar dimension runs fastest so the
/// matrix half-bandwidth stays at `2 * min(rows, cols)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeLayout {
    pub rows: usize,
    pub cols: usize,
    column_major: bool,
}

impl NodeLayout {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        rows.checked_mul(cols)
            .and_then(|c| c.checked_mul(2))
            .ok_or_else(|| Error::Resource(format!("{rows}x{cols} crossbar overflows the node count")))?;
        Ok(Self {
            rows,
            cols,
            column_major: rows <= cols,
        })
    }

    pub fn unknowns(&self) -> usize {
        2 * self.rows * self.cols
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, plane: Plane) -> usize {
        let site = if self.column_major {
            j * self.rows + i
        } else {
            i * self.cols + j
        };
        2 * site + usize::from(plane == Plane::SourceLine)
    }
}

/// Series conductance of a device with its access resistor.
#[inline]
pub fn series_conductance(g: f64, r_access: f64) -> f64 {
    if g <= 0.0 {
        0.0
    } else {
        1.0 / (1.0 / g + r_access)
    }
}

/// Sparse nodal system `A x = b` for one crossbar and one drive vector.
#[derive(Debug, Clone)]
pub struct NodalSystem {
    pub layout: NodeLayout,
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub g_line: f64,
}

impl NodalSystem {
    /// Current sunk by the sense node at each column foot.
    pub fn column_currents(&self, x: &[f64]) -> Vec<f64> {
        let last = self.layout.rows - 1;
        (0..self.layout.cols)
            .map(|j| self.g_line * x[self.layout.index(last, j, Plane::SourceLine)])
            .collect()
    }

    /// Current sourced by each row driver.
    pub fn driver_currents(&self, v: &[f64], x: &[f64]) -> Vec<f64> {
        (0..self.layout.rows)
            .map(|i| self.g_line * (v[i] - x[self.layout.index(i, 0, Plane::BitLine)]))
            .collect()
    }
}

pub(crate) fn assemble_matrix(g: &ConductanceGrid, geom: &CrossbarGeometry) -> Result<(NodeLayout, CsrMatrix, f64)> {
    if !(geom.r_line > 0.0) {
        return Err(Error::Domain(
            "nodal mesh needs r_line > 0; ideal wires collapse every line to a single node".into(),
        ));
    }
    let (rows, cols) = (g.rows(), g.cols());
    let layout = NodeLayout::new(rows, cols)?;
    let gl = 1.0 / geom.r_line;
    let mut t = Vec::with_capacity(layout.unknowns() * 5);
    let link = |a: usize, b: usize, y: f64, t: &mut Vec<(usize, usize, f64)>| {
        t.push((a, a, y));
        t.push((b, b, y));
        t.push((a, b, -y));
        t.push((b, a, -y));
    };
    for i in 0..rows {
        for j in 0..cols {
            let bl = layout.index(i, j, Plane::BitLine);
            let sl = layout.index(i, j, Plane::SourceLine);
            link(bl, sl, series_conductance(g.get(i, j), geom.r_access), &mut t);
            if j == 0 {
                t.push((bl, bl, gl));
            } else {
                link(layout.index(i, j - 1, Plane::BitLine), bl, gl, &mut t);
            }
            if i == rows - 1 {
                t.push((sl, sl, gl));
            } else {
                link(sl, layout.index(i + 1, j, Plane::SourceLine), gl, &mut t);
            }
        }
    }
    Ok((layout, CsrMatrix::from_triplets(layout.unknowns(), t), gl))
}

pub(crate) fn assemble_rhs(v: &DriveVector, layout: &NodeLayout, g_line: f64) -> Vec<f64> {
    let mut b = vec![0.0; layout.unknowns()];
    for (i, &vi) in v.as_slice().iter().enumerate() {
        b[layout.index(i, 0, Plane::BitLine)] = g_line * vi;
    }
    b
}

/// Assemble the nodal equations of the crossbar mesh under drive `v`.
pub fn build_network(v: &DriveVector, g: &ConductanceGrid, geom: &CrossbarGeometry) -> Result<NodalSystem> {
    super::check_dims(v, g)?;
    let (layout, matrix, g_line) = assemble_matrix(g, geom)?;
    let rhs = assemble_rhs(v, &layout, g_line);
    Ok(NodalSystem {
        layout,
        matrix,
        rhs,
        g_line,
    })
}

/// Write node voltages as `row,col,plane,volts` CSV.
pub fn write_node_voltages<W: Write>(layout: &NodeLayout, x: &[f64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["row", "col", "plane", "volts"])?;
    for i in 0..layout.rows {
        for j in 0..layout.cols {
            for plane in [Plane::BitLine, Plane::SourceLine] {
                w.write_record([
                    i.to_string(),
                    j.to_string(),
                    plane.label().to_string(),
                    format!("{:e}", x[layout.index(i, j, plane)]),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
