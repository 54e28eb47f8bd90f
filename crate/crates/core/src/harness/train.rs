//! Minibatch training with Adam.
//!
//! Per-example gradients are computed in parallel and summed in example
//! order, so a run is bit-identical with or without the `parallel` feature.

use diffcore::{Adam, Gradients, Graph, ParamStore};
use rand::seq::SliceRandom;

use crate::data::Example;
use crate::error::{OcrlError, Result};
use crate::model::Model;
use crate::par;
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch: usize,
    pub adam: Adam,
    pub shuffle_seed: u64,
}

/// Loss and gradients of one example.
pub fn example_gradients(model: &Model, store: &ParamStore, ex: &Example) -> Result<(f64, Gradients)> {
    let mut g = Graph::new();
    let (l, _) = model.loss(&mut g, store, &ex.tokens, &ex.video, ex.label)?;
    let loss = g.value(l).item();
    Ok((loss, g.backward(l, store)?))
}

/// Mean loss and mean gradient over `batch`.
pub fn batch_gradients(model: &Model, store: &ParamStore, batch: &[&Example]) -> Result<(f64, Gradients)> {
    let parts = par::map(batch, |ex| example_gradients(model, store, ex));
    let mut total = Gradients::zeros(store);
    let mut loss = 0.0;
    for part in parts {
        let (l, g) = part?;
        loss += l;
        total.accumulate(&g);
    }
    let scale = 1.0 / batch.len().max(1) as f64;
    total.scale(scale);
    Ok((loss * scale, total))
}

/// Visiting order of epoch `epoch`; depends only on the seed and epoch.
pub fn epoch_order(n: usize, shuffle_seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeds::rng(seeds::derive_index(shuffle_seed, "epoch", epoch as u64)));
    order
}

/// Trains from epoch `history.len()` up to `opts.epochs`, pushing the mean
/// training loss of each epoch onto `history` and calling `on_epoch` after
/// each one.
pub fn train<F>(
    model: &Model,
    store: &mut ParamStore,
    examples: &[Example],
    opts: &TrainOptions,
    history: &mut Vec<f64>,
    mut on_epoch: F,
) -> Result<()>
where
    F: FnMut(&ParamStore, &[f64]) -> Result<()>,
{
    if examples.is_empty() {
        return Err(OcrlError::Data("no training examples".into()));
    }
    if opts.batch == 0 {
        return Err(OcrlError::Config("batch must be at least 1".into()));
    }
    for epoch in history.len()..opts.epochs {
        let order = epoch_order(examples.len(), opts.shuffle_seed, epoch);
        let mut sum = 0.0;
        for (b, chunk) in order.chunks(opts.batch).enumerate() {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let (loss, grads) = batch_gradients(model, store, &batch)?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(OcrlError::NonFiniteLoss { epoch, batch: b, loss });
            }
            store.adam_step(&grads, &opts.adam)?;
            sum += loss * batch.len() as f64;
        }
        history.push(sum / examples.len() as f64);
        on_epoch(store, history)?;
    }
    Ok(())
}
