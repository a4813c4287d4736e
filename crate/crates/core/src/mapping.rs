//! Mapping trained weights onto crossbar tiles.
//!
//! A layer's `neurons × fan_in` weight matrix is transposed into a
//! `fan_in × neurons` matrix whose column `j` feeds output neuron (or
//! feature map) `j`. Signed weights are split into two non-negative
//! matrices `W⁺ − W⁻`, normalized by one per-layer scale and converted to
//! conductances, `W⁺` on one crossbar and `W⁻` on its twin.
//!
//! Conductances are kept in logical column order; the column permutation is
//! metadata, and [`TileSet::physical_tile`] materializes a tile as the
//! hardware would hold it. Padding sits at `G_off` with zero drive, in the
//! bottom rows and the rightmost columns.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::circuit::ConductanceGrid;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::NetworkParams;
use crate::tech::{conductance_to_weight, weight_to_conductance, CrossbarGeometry, Fingerprint, TechnologyProfile};

/// `fan_in × neurons` matrix of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FlattenedLayerMatrix {
    pub layer: usize,
    pub matrix: Matrix,
}

/// Kernels as columns: a `(out, in, kh, kw)` tensor stored as an
/// `out × in·kh·kw` matrix becomes `in·kh·kw × out`; a dense `out × in`
/// matrix becomes `in × out`.
pub fn flatten_kernels(layer: usize, weights: &Matrix) -> FlattenedLayerMatrix {
    FlattenedLayerMatrix {
        layer,
        matrix: weights.transpose(),
    }
}

pub fn unflatten_kernels(flat: &FlattenedLayerMatrix) -> Matrix {
    flat.matrix.transpose()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DifferentialPair {
    pub positive: Matrix,
    pub negative: Matrix,
    /// Largest `|w|` of the layer, 1 for an all-zero layer.
    pub scale: f64,
}

/// `W⁺ = max(M, 0)`, `W⁻ = max(−M, 0)`.
pub fn split_differential(m: &FlattenedLayerMatrix) -> DifferentialPair {
    let max = m.matrix.as_slice().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    DifferentialPair {
        positive: m.matrix.map(|v| v.max(0.0)),
        negative: m.matrix.map(|v| (-v).max(0.0)),
        scale: if max > 0.0 { max } else { 1.0 },
    }
}

/// Bijection from logical column to physical column, with its inverse.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct ColumnPermutation {
    forward: Vec<usize>,
    inverse: Vec<usize>,
}

impl ColumnPermutation {
    pub fn identity(n: usize) -> Self {
        Self {
            forward: (0..n).collect(),
            inverse: (0..n).collect(),
        }
    }

    /// `forward[k]` is the physical column of logical column `k`.
    pub fn new(forward: Vec<usize>) -> Result<Self> {
        let n = forward.len();
        let mut inverse = vec![usize::MAX; n];
        for (k, &p) in forward.iter().enumerate() {
            if p >= n {
                return Err(Error::Contract(format!("logical column {k} mapped to {p}, outside 0..{n}")));
            }
            if inverse[p] != usize::MAX {
                return Err(Error::Contract(format!(
                    "physical column {p} assigned twice (logical {} and {k})",
                    inverse[p]
                )));
            }
            inverse[p] = k;
        }
        Ok(Self { forward, inverse })
    }

    /// Permutation placing `order[0]` at physical column 0, `order[1]` at 1, ...
    pub fn from_order(order: &[usize]) -> Result<Self> {
        let mut forward = vec![usize::MAX; order.len()];
        for (p, &k) in order.iter().enumerate() {
            if k >= order.len() || forward[k] != usize::MAX {
                return Err(Error::Contract(format!("order is not a permutation of 0..{}", order.len())));
            }
            forward[k] = p;
        }
        Self::new(forward)
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn physical(&self, logical: usize) -> usize {
        self.forward[logical]
    }

    pub fn logical(&self, physical: usize) -> usize {
        self.inverse[physical]
    }

    pub fn forward(&self) -> &[usize] {
        &self.forward
    }

    pub fn inverse(&self) -> &[usize] {
        &self.inverse
    }

    pub fn is_identity(&self) -> bool {
        self.forward.iter().enumerate().all(|(k, &p)| k == p)
    }

    pub fn inverted(&self) -> Self {
        Self {
            forward: self.inverse.clone(),
            inverse: self.forward.clone(),
        }
    }

    /// Number of logical columns whose physical position differs from `other`.
    pub fn moved_columns(&self, other: &ColumnPermutation) -> usize {
        self.forward.iter().zip(&other.forward).filter(|(a, b)| a != b).count()
    }
}

impl TryFrom<Vec<usize>> for ColumnPermutation {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ColumnPermutation> for Vec<usize> {
    fn from(p: ColumnPermutation) -> Self {
        p.forward
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

/// One layer laid out over a grid of crossbar pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileSet {
    pub layer: usize,
    pub fingerprint: Fingerprint,
    /// Largest `|w|` of the layer; normalized weights are `w / weight_scale`.
    pub weight_scale: f64,
    /// `fan_in × neurons` conductances of `W⁺`, logical column order, no padding.
    pub positive: Matrix,
    pub negative: Matrix,
    pub permutation: ColumnPermutation,
}

impl TileSet {
    pub fn logical_rows(&self) -> usize {
        self.positive.rows()
    }

    pub fn logical_cols(&self) -> usize {
        self.positive.cols()
    }

    pub fn geometry(&self) -> &CrossbarGeometry {
        &self.fingerprint.geometry
    }

    pub fn technology(&self) -> &TechnologyProfile {
        &self.fingerprint.technology
    }

    /// Row blocks × column blocks.
    pub fn grid(&self) -> (usize, usize) {
        let g = self.geometry();
        (self.logical_rows().div_ceil(g.rows), self.logical_cols().div_ceil(g.cols))
    }

    pub fn conductances(&self, polarity: Polarity) -> &Matrix {
        match polarity {
            Polarity::Positive => &self.positive,
            Polarity::Negative => &self.negative,
        }
    }

    /// Same tiles, different column placement.
    pub fn apply_permutation(&self, perm: &ColumnPermutation) -> Result<TileSet> {
        if perm.len() != self.logical_cols() {
            return Err(Error::Contract(format!(
                "permutation over {} columns for a layer with {}",
                perm.len(),
                self.logical_cols()
            )));
        }
        Ok(TileSet {
            permutation: perm.clone(),
            ..self.clone()
        })
    }

    /// Tile `(block_row, block_col)` of one polarity in physical layout:
    /// physical column `q` of block `c` holds logical column
    /// `permutation.logical(c·cols + q)`, padding at `G_off`.
    pub fn physical_tile(&self, block_row: usize, block_col: usize, polarity: Polarity) -> Result<ConductanceGrid> {
        let (nr, nc) = self.grid();
        if block_row >= nr || block_col >= nc {
            return Err(Error::Contract(format!(
                "tile ({block_row}, {block_col}) outside the {nr}x{nc} grid"
            )));
        }
        let g = self.geometry();
        let src = self.conductances(polarity);
        let g_off = self.technology().g_off();
        let m = Matrix::from_fn(g.rows, g.cols, |i, q| {
            let row = block_row * g.rows + i;
            let col = block_col * g.cols + q;
            if row < self.logical_rows() && col < self.logical_cols() {
                src.get(row, self.permutation.logical(col))
            } else {
                g_off
            }
        });
        ConductanceGrid::new(m)
    }

    /// Signed weights implied by `G⁺ − G⁻`, logical order.
    pub fn reconstruct_weights(&self) -> FlattenedLayerMatrix {
        let tech = self.technology();
        let s = self.weight_scale;
        let m = Matrix::from_fn(self.logical_rows(), self.logical_cols(), |i, j| {
            (conductance_to_weight(self.positive.get(i, j), tech) - conductance_to_weight(self.negative.get(i, j), tech)) * s
        });
        FlattenedLayerMatrix {
            layer: self.layer,
            matrix: m,
        }
    }

    /// `layer,tile_row,tile_col,polarity,row,col,conductance` in physical layout.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["layer", "tile_row", "tile_col", "polarity", "row", "col", "conductance"])?;
        let (nr, nc) = self.grid();
        for r in 0..nr {
            for c in 0..nc {
                for (pol, name) in [(Polarity::Positive, "positive"), (Polarity::Negative, "negative")] {
                    let t = self.physical_tile(r, c, pol)?;
                    for i in 0..t.rows() {
                        for q in 0..t.cols() {
                            w.write_record([
                                self.layer.to_string(),
                                r.to_string(),
                                c.to_string(),
                                name.to_string(),
                                i.to_string(),
                                q.to_string(),
                                t.get(i, q).to_string(),
                            ])?;
                        }
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Normalize a differential pair by its shared scale and convert it to conductances.
pub fn tile(pair: &DifferentialPair, layer: usize, geom: &CrossbarGeometry, tech: &TechnologyProfile) -> Result<TileSet> {
    geom.validate()?;
    tech.validate()?;
    if pair.positive.rows() != pair.negative.rows() || pair.positive.cols() != pair.negative.cols() {
        return Err(Error::Contract("W+ and W- shapes differ".into()));
    }
    if !(pair.scale > 0.0 && pair.scale.is_finite()) {
        return Err(Error::Domain(format!("weight scale {} must be positive", pair.scale)));
    }
    let conv = |m: &Matrix| -> Result<Matrix> {
        let mut out = Matrix::zeros(m.rows(), m.cols());
        for i in 0..m.rows() {
            for (o, &w) in out.row_mut(i).iter_mut().zip(m.row(i)) {
                *o = weight_to_conductance((w / pair.scale).min(1.0), tech)?;
            }
        }
        Ok(out)
    };
    Ok(TileSet {
        layer,
        fingerprint: Fingerprint::new(tech, geom),
        weight_scale: pair.scale,
        positive: conv(&pair.positive)?,
        negative: conv(&pair.negative)?,
        permutation: ColumnPermutation::identity(pair.positive.cols()),
    })
}

/// Every layer of `params` flattened, split and tiled in naive column order.
pub fn map_network(params: &NetworkParams, geom: &CrossbarGeometry, tech: &TechnologyProfile) -> Result<Vec<TileSet>> {
    params.validate()?;
    params
        .layers
        .iter()
        .enumerate()
        .map(|(l, p)| tile(&split_differential(&flatten_kernels(l, &p.weights)), l, geom, tech))
        .collect()
}
