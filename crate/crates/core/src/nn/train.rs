//! Mini-batch SGD and accuracy evaluation.

use rand::seq::SliceRandom;

use super::{argmax, backward, cross_entropy, forward, Gradients, NetworkParams};
use crate::error::{Error, Result};
use crate::nn::LabeledDataset;
use crate::rng;
use crate::tech::TrainingConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Clean accuracy of the returned parameters on the training split.
    pub final_train_accuracy: f64,
}

/// Plain SGD on the mean gradient of each mini-batch. The sample order is
/// reshuffled every epoch from the `"batch-order"` stream of `seed`.
pub fn train(
    mut params: NetworkParams,
    data: &LabeledDataset,
    config: &TrainingConfig,
    seed: u64,
) -> Result<(NetworkParams, TrainReport)> {
    params.validate()?;
    data.check_compatible(&params.arch)?;
    if data.is_empty() {
        return Err(Error::Contract("training split is empty".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::stream(seed, "batch-order", &[epoch as u64]));
        let mut loss = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let mut acc = Gradients::zeros_like(&params);
            for &i in batch {
                let trace = forward(&params, &data.inputs[i])?;
                let l = cross_entropy(trace.scores(), data.labels[i]);
                if !l.is_finite() {
                    return Err(Error::Numeric(format!("loss diverged to {l} in epoch {epoch}")));
                }
                loss += l;
                correct += usize::from(argmax(trace.scores()) == data.labels[i]);
                let (g, _) = backward(&params, &trace, data.labels[i])?;
                acc.add_assign(&g);
            }
            let step = config.learning_rate / batch.len() as f64;
            if step == 0.0 {
                continue;
            }
            for (p, (gw, gb)) in params.layers.iter_mut().zip(acc.weights.iter().zip(&acc.bias)) {
                let rows = p.weights.rows();
                for r in 0..rows {
                    for (w, g) in p.weights.row_mut(r).iter_mut().zip(gw.row(r)) {
                        *w -= step * g;
                    }
                }
                for (b, g) in p.bias.iter_mut().zip(gb) {
                    *b -= step * g;
                }
            }
        }
        let stats = EpochStats {
            epoch,
            mean_loss: loss / data.len() as f64,
            train_accuracy: correct as f64 / data.len() as f64,
        };
        log::debug!(
            "epoch {epoch}: loss {:.5} train accuracy {:.4}",
            stats.mean_loss,
            stats.train_accuracy
        );
        epochs.push(stats);
    }
    let final_train_accuracy = clean_accuracy(&params, data)?;
    Ok((
        params,
        TrainReport {
            epochs,
            final_train_accuracy,
        },
    ))
}

/// Fraction of samples whose arg-max score equals the label. `forward_fn`
/// receives the parameters, the sample index within `split` and the input.
pub fn evaluate_accuracy<F>(params: &NetworkParams, split: &LabeledDataset, mut forward_fn: F) -> Result<f64>
where
    F: FnMut(&NetworkParams, usize, &[f64]) -> Result<Vec<f64>>,
{
    if split.is_empty() {
        return Err(Error::Contract("cannot evaluate accuracy on an empty split".into()));
    }
    let mut correct = 0usize;
    for (i, (x, &y)) in split.inputs.iter().zip(&split.labels).enumerate() {
        let scores = forward_fn(params, i, x)?;
        correct += usize::from(argmax(&scores) == y);
    }
    Ok(correct as f64 / split.len() as f64)
}

/// Clean digital accuracy.
pub fn clean_accuracy(params: &NetworkParams, split: &LabeledDataset) -> Result<f64> {
    evaluate_accuracy(params, split, |p, _, x| Ok(forward(p, x)?.scores().to_vec()))
}
