//! Sensitivity ranking and column remapping.
//!
//! A neuron's sensitivity is the accumulated magnitude of `∂L/∂z` over a
//! set of samples, averaged over feature-map cells for convolutions. Ranking
//! sorts each layer's neurons by decreasing sensitivity, and rank `r` is
//! stored at physical column `r`, where line-resistance error is smallest.
//!
//! * [`srs`] ranks once over the whole training split.
//! * [`drs`] ranks every mini-batch separately, scores each candidate by
//!   noisy validation accuracy and keeps the best one.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::error_model::ColumnErrorModel;
use crate::inference::{InferenceEngine, InferenceMode, MappedNetwork};
use crate::mapping::ColumnPermutation;
use crate::nn::{backward, forward, LabeledDataset, NetworkParams};

/// Accumulated `|δ|` per output neuron (per feature map for convolutions).
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityScores {
    pub layers: Vec<Vec<f64>>,
    pub samples: usize,
}

/// Sum over samples of `|∂L/∂z|` per neuron; convolution scores average
/// the cells of each feature map first.
pub fn accumulate_sensitivity(params: &NetworkParams, inputs: &[Vec<f64>], labels: &[usize]) -> Result<SensitivityScores> {
    if inputs.is_empty() || inputs.len() != labels.len() {
        return Err(Error::Contract(format!(
            "sensitivity needs matching non-empty inputs and labels, got {} and {}",
            inputs.len(),
            labels.len()
        )));
    }
    let mut layers: Vec<Vec<f64>> = params.arch.layers.iter().map(|s| vec![0.0; s.neurons()]).collect();
    for (x, &y) in inputs.iter().zip(labels) {
        let trace = forward(params, x)?;
        let (_, deltas) = backward(params, &trace, y)?;
        for ((acc, d), spec) in layers.iter_mut().zip(&deltas.layers).zip(&params.arch.layers) {
            let positions = spec.positions();
            for (o, slot) in acc.iter_mut().enumerate() {
                let cells = &d[o * positions..(o + 1) * positions];
                *slot += cells.iter().map(|v| v.abs()).sum::<f64>() / positions as f64;
            }
        }
    }
    Ok(SensitivityScores {
        layers,
        samples: inputs.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Naive,
    Srs,
    Drs,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Naive => "naive",
            Strategy::Srs => "srs",
            Strategy::Drs => "drs",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Strategy::Naive),
            "srs" => Ok(Strategy::Srs),
            "drs" => Ok(Strategy::Drs),
            other => Err(Error::Config(format!("unknown strategy {other:?} (naive, srs, drs)"))),
        }
    }
}

/// Per-layer logical→physical column maps.
#[derive(Debug, Clone, PartialEq)]
pub struct RankAssignment {
    pub layers: Vec<ColumnPermutation>,
    pub strategy: Strategy,
    /// Mini-batch that produced a DRS rank.
    pub iteration: Option<usize>,
    pub validation_accuracy: Option<f64>,
}

impl RankAssignment {
    pub fn naive(params: &NetworkParams) -> Self {
        Self {
            layers: params
                .arch
                .layers
                .iter()
                .map(|s| ColumnPermutation::identity(s.neurons()))
                .collect(),
            strategy: Strategy::Naive,
            iteration: None,
            validation_accuracy: None,
        }
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{RANK_MAGIC}")?;
        writeln!(out, "strategy = {}", self.strategy)?;
        if let Some(i) = self.iteration {
            writeln!(out, "iteration = {i}")?;
        }
        if let Some(a) = self.validation_accuracy {
            writeln!(out, "validation_accuracy = {a}")?;
        }
        writeln!(out, "layer,logical,physical")?;
        for (l, p) in self.layers.iter().enumerate() {
            for (k, &phys) in p.forward().iter().enumerate() {
                writeln!(out, "{l},{k},{phys}")?;
            }
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let bad = |d: String| Error::format("rank file", d);
        let mut lines = input.lines();
        match lines.next() {
            Some(Ok(l)) if l.trim() == RANK_MAGIC => {}
            _ => return Err(bad("missing header line".into())),
        }
        let (mut strategy, mut iteration, mut validation_accuracy) = (None, None, None);
        loop {
            let line = lines.next().ok_or_else(|| bad("missing column table".into()))??;
            let line = line.trim();
            if line == "layer,logical,physical" {
                break;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected `key = value`, got {line:?}")))?;
            let v = v.trim();
            match k.trim() {
                "strategy" => strategy = Some(v.parse::<Strategy>()?),
                "iteration" => iteration = Some(v.parse().map_err(|e| bad(format!("iteration: {e}")))?),
                "validation_accuracy" => {
                    validation_accuracy = Some(v.parse().map_err(|e| bad(format!("validation_accuracy: {e}")))?)
                }
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
        let mut maps: Vec<Vec<usize>> = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<usize> = line
                .split(',')
                .map(|s| s.trim().parse().map_err(|e| bad(format!("{line:?}: {e}"))))
                .collect::<Result<_>>()?;
            let [l, k, p] = f[..] else {
                return Err(bad(format!("expected 3 fields, got {line:?}")));
            };
            if l == maps.len() {
                maps.push(Vec::new());
            }
            if l + 1 != maps.len() || k != maps[l].len() {
                return Err(bad(format!("rows out of order at {line:?}")));
            }
            maps[l].push(p);
        }
        Ok(Self {
            layers: maps.into_iter().map(ColumnPermutation::new).collect::<Result<_>>()?,
            strategy: strategy.ok_or_else(|| bad("missing strategy".into()))?,
            iteration,
            validation_accuracy,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

const RANK_MAGIC: &str = "# xbar rank assignment v1";

/// Logical columns in decreasing score order; equal scores keep ascending index.
pub fn rank_order(scores: &[f64]) -> Result<Vec<usize>> {
    if let Some(v) = scores.iter().find(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("sensitivity score {v} is not finite")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    Ok(order)
}

/// Most sensitive neuron to physical column 0, next to column 1, and so on.
pub fn evaluate_rank(scores: &SensitivityScores) -> Result<RankAssignment> {
    Ok(RankAssignment {
        layers: scores
            .layers
            .iter()
            .map(|s| ColumnPermutation::from_order(&rank_order(s)?))
            .collect::<Result<_>>()?,
        strategy: Strategy::Srs,
        iteration: None,
        validation_accuracy: None,
    })
}

/// Static remapping: one ranking over the entire training split.
pub fn srs(params: &NetworkParams, train: &LabeledDataset) -> Result<RankAssignment> {
    evaluate_rank(&accumulate_sensitivity(params, &train.inputs, &train.labels)?)
}

/// Crossbar column rewrites needed to go from `from` to `to`: every moved
/// logical column is reprogrammed on both polarities of every row block.
pub fn column_writes(net: &MappedNetwork, from: &[ColumnPermutation], to: &[ColumnPermutation]) -> usize {
    net.tiles
        .iter()
        .zip(from.iter().zip(to))
        .map(|(t, (a, b))| a.moved_columns(b) * t.grid().0 * 2)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrsIteration {
    pub iteration: usize,
    pub validation_accuracy: f64,
    /// Column rewrites relative to the previous iteration's mapping.
    pub writes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrsOutcome {
    pub best: RankAssignment,
    pub trace: Vec<DrsIteration>,
}

impl DrsOutcome {
    pub fn total_writes(&self) -> usize {
        self.trace.iter().map(|t| t.writes).sum()
    }

    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "validation_accuracy", "writes"])?;
        for t in &self.trace {
            w.write_record([
                t.iteration.to_string(),
                t.validation_accuracy.to_string(),
                t.writes.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Dynamic remapping. Mini-batches are taken in dataset order; each batch's
/// own scores give a candidate rank whose noisy validation accuracy (one
/// fixed noise seed for all candidates) decides whether it replaces the
/// best so far. The first candidate is always recorded; later ones must be
/// strictly better.
pub fn drs(
    net: &MappedNetwork,
    train: &LabeledDataset,
    validation: &LabeledDataset,
    batch_size: usize,
    model: &ColumnErrorModel,
    noise_seed: u64,
) -> Result<DrsOutcome> {
    if batch_size == 0 {
        return Err(Error::Config("DRS batch size must be at least 1".into()));
    }
    if train.is_empty() || validation.is_empty() {
        return Err(Error::Contract("DRS needs non-empty training and validation splits".into()));
    }
    let mut best: Option<RankAssignment> = None;
    let mut trace = Vec::new();
    let mut current = net.permutations();
    for (iteration, (xs, ys)) in train
        .inputs
        .chunks(batch_size)
        .zip(train.labels.chunks(batch_size))
        .enumerate()
    {
        let scores = accumulate_sensitivity(&net.params, xs, ys)?;
        let mut candidate = evaluate_rank(&scores)?;
        let mapped = net.with_permutations(&candidate.layers)?;
        let engine = InferenceEngine::new(&mapped, InferenceMode::Statistical { model, noise_seed })?;
        let acc = engine.accuracy(validation)?;
        let writes = column_writes(net, &current, &candidate.layers);
        current.clone_from(&candidate.layers);
        trace.push(DrsIteration {
            iteration,
            validation_accuracy: acc,
            writes,
        });
        log::debug!("drs iteration {iteration}: validation accuracy {acc:.4}, {writes} column writes");
        if best.as_ref().is_none_or(|b| acc > b.validation_accuracy.unwrap()) {
            candidate.strategy = Strategy::Drs;
            candidate.iteration = Some(iteration);
            candidate.validation_accuracy = Some(acc);
            best = Some(candidate);
        }
    }
    Ok(DrsOutcome {
        best: best.unwrap(),
        trace,
    })
}
