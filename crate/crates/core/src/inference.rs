//! Forward passes through crossbar-mapped layers.
//!
//! Each layer's linear part runs on its tiles: inputs are scaled into
//! `[0, v_max]` by the layer input's maximum, every tile pair produces
//! `W⁺` and `W⁻` column currents, the pair difference is accumulated over
//! row blocks, and the result is scaled back to weight units in logical
//! column order. Biases and activations stay digital.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::circuit::TransferMatrix;
use crate::error::{Error, Result};
use crate::error_model::ColumnErrorModel;
use crate::mapping::{ColumnPermutation, Polarity, TileSet};
use crate::matrix::Matrix;
use crate::nn::{self, LabeledDataset, LayerParams, LinearBackend, NetworkParams};
use crate::rng;

#[derive(Debug, Clone, Copy)]
pub enum InferenceMode<'a> {
    /// Kirchhoff sum `I = Σ V G` on every column.
    Ideal,
    /// `max(0, m I + c + N(0, σ))` per physical column, fresh draws on every MVM.
    Statistical {
        model: &'a ColumnErrorModel,
        noise_seed: u64,
    },
    /// Resistive mesh with line and access resistance.
    FullCircuit,
}

impl InferenceMode<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            InferenceMode::Ideal => "ideal",
            InferenceMode::Statistical { .. } => "statistical",
            InferenceMode::FullCircuit => "full-circuit",
        }
    }
}

/// Trained parameters together with the tiles of every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MappedNetwork {
    pub params: NetworkParams,
    pub tiles: Vec<TileSet>,
}

impl MappedNetwork {
    pub fn new(params: NetworkParams, tiles: Vec<TileSet>) -> Result<Self> {
        params.validate()?;
        if tiles.len() != params.num_layers() {
            return Err(Error::Contract(format!(
                "{} tile sets for {} layers",
                tiles.len(),
                params.num_layers()
            )));
        }
        for (l, (t, spec)) in tiles.iter().zip(&params.arch.layers).enumerate() {
            if t.layer != l || t.logical_rows() != spec.fan_in() || t.logical_cols() != spec.neurons() {
                return Err(Error::Contract(format!("tile set {l} does not match layer {l}")));
            }
        }
        if tiles.windows(2).any(|w| w[0].fingerprint != w[1].fingerprint) {
            return Err(Error::Contract("layers were mapped with different technologies or geometries".into()));
        }
        Ok(Self { params, tiles })
    }

    pub fn permutations(&self) -> Vec<ColumnPermutation> {
        self.tiles.iter().map(|t| t.permutation.clone()).collect()
    }

    pub fn with_permutations(&self, perms: &[ColumnPermutation]) -> Result<Self> {
        if perms.len() != self.tiles.len() {
            return Err(Error::Contract(format!(
                "{} permutations for {} layers",
                perms.len(),
                self.tiles.len()
            )));
        }
        Ok(Self {
            params: self.params.clone(),
            tiles: self
                .tiles
                .iter()
                .zip(perms)
                .map(|(t, p)| t.apply_permutation(p))
                .collect::<Result<_>>()?,
        })
    }
}

/// Per-layer bookkeeping of one or more forward passes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerStats {
    /// `Σ |Î − I|` over every crossbar column current.
    pub abs_current_error: f64,
    pub currents: u64,
    /// Currents clamped from a negative draw to zero.
    pub clamped: u64,
}

impl LayerStats {
    pub fn mean_abs_current_error(&self) -> f64 {
        if self.currents == 0 {
            0.0
        } else {
            self.abs_current_error / self.currents as f64
        }
    }

    fn merge(&mut self, o: &LayerStats) {
        self.abs_current_error += o.abs_current_error;
        self.currents += o.currents;
        self.clamped += o.clamped;
    }
}

/// Runs a [`MappedNetwork`] in one [`InferenceMode`].
pub struct InferenceEngine<'a> {
    net: &'a MappedNetwork,
    mode: InferenceMode<'a>,
    /// Full-circuit mode: `[W⁺, W⁻]` transfer matrices per layer, per tile (row-major).
    transfers: Vec<Vec<[TransferMatrix; 2]>>,
}

impl<'a> InferenceEngine<'a> {
    pub fn new(net: &'a MappedNetwork, mode: InferenceMode<'a>) -> Result<Self> {
        if let InferenceMode::Statistical { model, .. } = mode {
            for t in &net.tiles {
                model.fingerprint().ensure_matches(&t.fingerprint)?;
            }
        }
        let transfers = match mode {
            InferenceMode::FullCircuit => net
                .tiles
                .iter()
                .map(|t| {
                    let (nr, nc) = t.grid();
                    let mut out = Vec::with_capacity(nr * nc);
                    for r in 0..nr {
                        for c in 0..nc {
                            let pos = TransferMatrix::new(&t.physical_tile(r, c, Polarity::Positive)?, t.geometry())?;
                            let neg = TransferMatrix::new(&t.physical_tile(r, c, Polarity::Negative)?, t.geometry())?;
                            out.push([pos, neg]);
                        }
                    }
                    Ok(out)
                })
                .collect::<Result<_>>()?,
            _ => Vec::new(),
        };
        Ok(Self { net, mode, transfers })
    }

    pub fn network(&self) -> &MappedNetwork {
        self.net
    }

    pub fn mode(&self) -> &InferenceMode<'a> {
        &self.mode
    }

    /// Noise stream of sample `index`; `None` outside statistical mode.
    fn sample_rng(&self, index: usize) -> Option<ChaCha8Rng> {
        match self.mode {
            InferenceMode::Statistical { noise_seed, .. } => Some(rng::stream(noise_seed, "noise", &[index as u64])),
            _ => None,
        }
    }

    /// Column currents of tile `(block_row, block_col)` of `layer` for the
    /// drives `v` of that tile's rows (at most `geometry.rows` values, the
    /// remaining padded rows at 0 V). Returns `[W⁺, W⁻]` currents of the
    /// occupied physical columns, in physical order.
    pub fn tile_currents<R: Rng + ?Sized>(
        &self,
        layer: usize,
        block_row: usize,
        block_col: usize,
        v: &[f64],
        rng: Option<&mut R>,
        stats: &mut LayerStats,
    ) -> Result<[Vec<f64>; 2]> {
        let t = self
            .net
            .tiles
            .get(layer)
            .ok_or_else(|| Error::Contract(format!("no layer {layer}")))?;
        let geom = t.geometry();
        let (nr, nc) = t.grid();
        if block_row >= nr || block_col >= nc {
            return Err(Error::Contract(format!("tile ({block_row}, {block_col}) outside the {nr}x{nc} grid")));
        }
        let row0 = block_row * geom.rows;
        let rows = (t.logical_rows() - row0).min(geom.rows);
        if v.len() != rows {
            return Err(Error::Contract(format!("tile has {rows} active rows, got {} drives", v.len())));
        }
        let col0 = block_col * geom.cols;
        let cols = (t.logical_cols() - col0).min(geom.cols);
        let mut rng = rng;
        let mut out = [Vec::with_capacity(cols), Vec::with_capacity(cols)];
        for (slot, pol) in [Polarity::Positive, Polarity::Negative].into_iter().enumerate() {
            let g = t.conductances(pol);
            let ideal: Vec<f64> = (0..cols)
                .map(|q| {
                    let k = t.permutation.logical(col0 + q);
                    (0..rows).map(|i| v[i] * g.get(row0 + i, k)).sum()
                })
                .collect();
            let actual = match self.mode {
                InferenceMode::Ideal => ideal.clone(),
                InferenceMode::Statistical { model, .. } => {
                    let r = rng
                        .as_deref_mut()
                        .ok_or_else(|| Error::Contract("statistical mode needs a noise stream".into()))?;
                    ideal
                        .iter()
                        .enumerate()
                        .map(|(q, &i)| {
                            let raw = model.sample_raw(i, q, r);
                            if raw < 0.0 {
                                stats.clamped += 1;
                                0.0
                            } else {
                                raw
                            }
                        })
                        .collect()
                }
                InferenceMode::FullCircuit => {
                    let mut padded = vec![0.0; geom.rows];
                    padded[..rows].copy_from_slice(v);
                    let mut all = self.transfers[layer][block_row * nc + block_col][slot].apply(&padded)?;
                    all.truncate(cols);
                    all
                }
            };
            for (a, b) in actual.iter().zip(&ideal) {
                stats.abs_current_error += (a - b).abs();
            }
            stats.currents += cols as u64;
            out[slot] = actual;
        }
        Ok(out)
    }

    /// Pre-activations (without bias) of `layer` for each row of `patches`,
    /// `positions × neurons` in logical column order.
    pub fn noisy_layer_mvm<R: Rng + ?Sized>(
        &self,
        layer: usize,
        patches: &Matrix,
        mut rng: Option<&mut R>,
        stats: &mut LayerStats,
    ) -> Result<Matrix> {
        let t = &self.net.tiles[layer];
        if patches.cols() != t.logical_rows() {
            return Err(Error::Contract(format!(
                "layer {layer} expects inputs of length {}, got {}",
                t.logical_rows(),
                patches.cols()
            )));
        }
        let geom = t.geometry();
        let x_max = patches.as_slice().iter().copied().fold(0.0, f64::max);
        if let Some(v) = patches.as_slice().iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::Domain(format!("crossbar drives must be non-negative, layer {layer} got {v}")));
        }
        let x_scale = if x_max > 0.0 { x_max } else { 1.0 };
        let to_volts = geom.v_max / x_scale;
        let tech = t.technology();
        let to_weight = t.weight_scale / ((tech.g_on() - tech.g_off()) * to_volts);
        let (nr, nc) = t.grid();
        let mut out = Matrix::zeros(patches.rows(), t.logical_cols());
        let mut v = Vec::with_capacity(geom.rows);
        for p in 0..patches.rows() {
            let x = patches.row(p);
            for c in 0..nc {
                let col0 = c * geom.cols;
                for r in 0..nr {
                    let row0 = r * geom.rows;
                    let rows = (t.logical_rows() - row0).min(geom.rows);
                    v.clear();
                    v.extend(x[row0..row0 + rows].iter().map(|xi| xi * to_volts));
                    let [pos, neg] = self.tile_currents(layer, r, c, &v, rng.as_deref_mut(), stats)?;
                    let row = out.row_mut(p);
                    for (q, (a, b)) in pos.iter().zip(&neg).enumerate() {
                        row[t.permutation.logical(col0 + q)] += a - b;
                    }
                }
            }
            for y in out.row_mut(p) {
                *y *= to_weight;
            }
        }
        Ok(out)
    }

    /// Forward pass of sample `index` (which selects its noise stream).
    pub fn forward(&self, index: usize, input: &[f64]) -> Result<(nn::ForwardTrace, Vec<LayerStats>)> {
        let mut backend = Backend {
            engine: self,
            rng: self.sample_rng(index),
            stats: vec![LayerStats::default(); self.net.tiles.len()],
        };
        let trace = nn::forward_with(&self.net.params, input, &mut backend)?;
        Ok((trace, backend.stats))
    }

    pub fn scores(&self, index: usize, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(index, input)?.0.post.pop().unwrap())
    }

    /// Accuracy on `split` plus per-layer statistics.
    pub fn evaluate(&self, split: &LabeledDataset) -> Result<(f64, Vec<LayerStats>)> {
        let mut totals = vec![LayerStats::default(); self.net.tiles.len()];
        let acc = nn::evaluate_accuracy(&self.net.params, split, |_, i, x| {
            let (trace, stats) = self.forward(i, x)?;
            for (t, s) in totals.iter_mut().zip(&stats) {
                t.merge(s);
            }
            Ok(trace.scores().to_vec())
        })?;
        Ok((acc, totals))
    }

    pub fn accuracy(&self, split: &LabeledDataset) -> Result<f64> {
        nn::evaluate_accuracy(&self.net.params, split, |_, i, x| self.scores(i, x))
    }
}

struct Backend<'e, 'a> {
    engine: &'e InferenceEngine<'a>,
    rng: Option<ChaCha8Rng>,
    stats: Vec<LayerStats>,
}

impl LinearBackend for Backend<'_, '_> {
    fn linear(&mut self, layer: usize, _params: &LayerParams, patches: &Matrix) -> Result<Matrix> {
        self.engine
            .noisy_layer_mvm(layer, patches, self.rng.as_mut(), &mut self.stats[layer])
    }
}

/// One evaluation row: mode, technology, seed, accuracy and per-layer current error.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub strategy: String,
    pub mode: String,
    pub technology: String,
    pub seed: u64,
    pub accuracy: f64,
    pub layer_stats: Vec<LayerStats>,
}

impl EvalReport {
    pub fn clamp_rate(&self) -> f64 {
        let (c, n) = self
            .layer_stats
            .iter()
            .fold((0u64, 0u64), |(c, n), s| (c + s.clamped, n + s.currents));
        if n == 0 {
            0.0
        } else {
            c as f64 / n as f64
        }
    }

    pub fn write_csv<W: std::io::Write>(reports: &[EvalReport], out: W) -> Result<()> {
        let layers = reports.iter().map(|r| r.layer_stats.len()).max().unwrap_or(0);
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = ["strategy", "mode", "technology", "seed", "accuracy", "clamp_rate"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((0..layers).map(|l| format!("layer{l}_mean_abs_current_error")));
        w.write_record(&header)?;
        for r in reports {
            let mut rec = vec![
                r.strategy.clone(),
                r.mode.clone(),
                r.technology.clone(),
                r.seed.to_string(),
                r.accuracy.to_string(),
                r.clamp_rate().to_string(),
            ];
            rec.extend(r.layer_stats.iter().map(|s| s.mean_abs_current_error().to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::map_network;
    use crate::nn::{Activation, Architecture, LayerSpec};
    use crate::tech::{CrossbarGeometry, TechnologyProfile};

    fn small_net(geom: &CrossbarGeometry) -> MappedNetwork {
        let arch = Architecture::new(vec![
            LayerSpec::conv(1, 3, (4, 4), (2, 2), Activation::Relu),
            LayerSpec::dense(27, 5, Activation::Relu),
            LayerSpec::dense(5, 3, Activation::None),
        ])
        .unwrap();
        let params = NetworkParams::init(arch, 9);
        let tiles = map_network(&params, geom, &TechnologyProfile::taox()).unwrap();
        MappedNetwork::new(params, tiles).unwrap()
    }

    fn input(seed: u64) -> Vec<f64> {
        let mut r = rng::stream(seed, "input", &[]);
        (0..16).map(|_| r.random_range(0.0..1.0)).collect()
    }

    #[test]
    fn ideal_mode_matches_digital() {
        let geom = CrossbarGeometry::default().with_size(8, 4);
        let net = small_net(&geom);
        let eng = InferenceEngine::new(&net, InferenceMode::Ideal).unwrap();
        for s in 0..5 {
            let x = input(s);
            let a = eng.scores(0, &x).unwrap();
            let b = nn::forward(&net.params, &x).unwrap().post.pop().unwrap();
            for (u, w) in a.iter().zip(&b) {
                assert!((u - w).abs() <= 1e-9 * (1.0 + w.abs()), "{u} vs {w}");
            }
        }
    }

    #[test]
    fn identity_model_equals_ideal_bitwise() {
        let geom = CrossbarGeometry::default().with_size(8, 4);
        let net = small_net(&geom);
        let model = ColumnErrorModel::identity(net.tiles[0].fingerprint.clone());
        let ideal = InferenceEngine::new(&net, InferenceMode::Ideal).unwrap();
        let stat = InferenceEngine::new(
            &net,
            InferenceMode::Statistical {
                model: &model,
                noise_seed: 4,
            },
        )
        .unwrap();
        let x = input(1);
        assert_eq!(ideal.scores(0, &x).unwrap(), stat.scores(0, &x).unwrap());
    }

    #[test]
    fn fingerprint_mismatch_rejected() {
        let geom = CrossbarGeometry::default().with_size(8, 4);
        let net = small_net(&geom);
        let other = crate::tech::Fingerprint::new(&TechnologyProfile::pcm(), &geom);
        let model = ColumnErrorModel::identity(other);
        let mode = InferenceMode::Statistical {
            model: &model,
            noise_seed: 0,
        };
        assert!(matches!(InferenceEngine::new(&net, mode), Err(Error::Contract(_))));
    }

    #[test]
    fn noise_is_reproducible_per_sample() {
        let geom = CrossbarGeometry::default().with_size(8, 4);
        let net = small_net(&geom);
        let mut model = ColumnErrorModel::identity(net.tiles[0].fingerprint.clone());
        model.sigma = vec![1e-6; 4];
        let eng = InferenceEngine::new(
            &net,
            InferenceMode::Statistical {
                model: &model,
                noise_seed: 4,
            },
        )
        .unwrap();
        let x = input(2);
        assert_eq!(eng.scores(3, &x).unwrap(), eng.scores(3, &x).unwrap());
        assert_ne!(eng.scores(3, &x).unwrap(), eng.scores(4, &x).unwrap());
    }

    #[test]
    fn full_circuit_runs_on_small_tiles() {
        let geom = CrossbarGeometry::default().with_size(8, 4);
        let net = small_net(&geom);
        let full = InferenceEngine::new(&net, InferenceMode::FullCircuit).unwrap();
        let ideal = InferenceEngine::new(&net, InferenceMode::Ideal).unwrap();
        let x = input(3);
        let (a, stats) = full.forward(0, &x).unwrap();
        let b = ideal.scores(0, &x).unwrap();
        assert!(stats.iter().all(|s| s.abs_current_error > 0.0));
        for (u, w) in a.scores().iter().zip(&b) {
            assert!((u - w).abs() < 0.1 * (1.0 + w.abs()));
        }
    }
}
