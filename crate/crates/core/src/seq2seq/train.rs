//! Minibatch maximum-likelihood training with dev-based early stopping.

use rayon::prelude::*;

use super::model::Seq2Seq;
use crate::autodiff::{adam_step, clip_global_norm, AdamState, Tape, Tensor, TrainHyper};
use crate::corpus::{Bitext, Sentence};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Scores a model on held-out data; higher is better.
pub type DevScorer<'a> = dyn Fn(&Seq2Seq) -> Result<f64> + Sync + 'a;

/// Keeps the best-scoring checkpoint and stops after `patience` epochs
/// without improvement. The untrained model (epoch 0) is a candidate too.
pub struct EarlyStopping<'a> {
    pub patience: usize,
    pub scorer: Box<DevScorer<'a>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sentence negative log-likelihood over the epoch; `None` for epoch 0.
    pub train_loss: Option<f64>,
    pub dev_score: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Seq2Seq,
    pub adam: AdamState,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    /// Pairs skipped because a side exceeds the length limit.
    pub skipped: usize,
}

/// Gradient of the summed NLL over `pairs`, computed as independent chunks
/// whose gradients are added in chunk order. Returns (loss, gradients).
pub fn batch_gradient(
    model: &Seq2Seq,
    pairs: &[(&Sentence, &Sentence)],
    chunk_size: usize,
    dropout: f64,
    rng: &RngStream,
) -> Result<(f64, Vec<Tensor>)> {
    let parts: Vec<Result<(f64, Vec<Tensor>)>> = pairs
        .par_chunks(chunk_size)
        .enumerate()
        .map(|(c, chunk)| {
            let mut tape = Tape::new(&model.params);
            let mut r = rng.child(c as u64);
            let loss = model.chunk_loss(&mut tape, chunk, Some((dropout, &mut r)));
            let value = tape.value(loss).data()[0];
            Ok((value, tape.backward(loss)?))
        })
        .collect();
    let mut total = 0.0;
    let mut grads: Option<Vec<Tensor>> = None;
    for part in parts {
        let (l, g) = part?;
        total += l;
        match grads.as_mut() {
            None => grads = Some(g),
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&g) {
                    a.add_assign(b);
                }
            }
        }
    }
    Ok((total, grads.ok_or(Error::Empty("batch"))?))
}

/// Trains `model` on `data`. Pairs longer than `min(hyper.max_len,
/// model.max_len())` on either side are dropped. Each epoch shuffles with
/// `rng.derive("epoch{e}")`. Adam state starts fresh.
pub fn train_mle(
    model: &Seq2Seq,
    data: &Bitext,
    hyper: &TrainHyper,
    stopper: Option<&EarlyStopping>,
    rng: &RngStream,
) -> Result<TrainOutcome> {
    hyper.validate()?;
    let limit = hyper.max_len.min(model.max_len());
    let pairs: Vec<(&Sentence, &Sentence)> = data
        .pairs
        .iter()
        .filter(|(x, y)| x.len() <= limit && y.len() <= limit)
        .map(|(x, y)| (x, y))
        .collect();
    if pairs.is_empty() {
        return Err(Error::Empty("training bitext"));
    }
    let skipped = data.len() - pairs.len();
    if skipped > 0 {
        log::warn!("skipping {skipped} training pairs longer than {limit} tokens");
    }

    let mut current = model.clone();
    let mut adam = AdamState::new(hyper.adam, &current.params);
    let mut best = (current.clone(), adam.clone(), 0usize);
    let mut best_score = f64::NEG_INFINITY;
    let mut stale = 0;
    let mut history = Vec::with_capacity(hyper.max_epochs + 1);

    let dev0 = stopper.map(|s| (s.scorer)(&current)).transpose()?;
    if let Some(score) = dev0 {
        best_score = score;
    }
    history.push(EpochRecord {
        epoch: 0,
        train_loss: None,
        dev_score: dev0,
    });

    for epoch in 1..=hyper.max_epochs {
        let stream = rng.derive(&format!("epoch{epoch}"));
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        stream.derive("shuffle").shuffle(&mut order);
        let dropout_stream = stream.derive("dropout");
        let mut epoch_loss = 0.0;
        for (b, idx) in order.chunks(hyper.batch_size).enumerate() {
            let batch: Vec<(&Sentence, &Sentence)> = idx.iter().map(|&i| pairs[i]).collect();
            let (loss, mut grads) = batch_gradient(
                &current,
                &batch,
                hyper.chunk_size,
                hyper.dropout,
                &dropout_stream.child(b as u64),
            )?;
            epoch_loss += loss;
            let scale = 1.0 / batch.len() as f64;
            for g in grads.iter_mut() {
                g.scale(scale);
            }
            clip_global_norm(&mut grads, hyper.clip_norm);
            adam_step(&mut current.params, &grads, &mut adam, hyper.l2_weight)?;
        }
        let train_loss = epoch_loss / pairs.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        let dev_score = stopper.map(|s| (s.scorer)(&current)).transpose()?;
        log::info!("epoch {epoch}: train loss {train_loss:.4}, dev {dev_score:?}");
        history.push(EpochRecord {
            epoch,
            train_loss: Some(train_loss),
            dev_score,
        });
        match (stopper, dev_score) {
            (Some(s), Some(score)) => {
                if score > best_score {
                    best_score = score;
                    best = (current.clone(), adam.clone(), epoch);
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= s.patience {
                        break;
                    }
                }
            }
            _ => best = (current.clone(), adam.clone(), epoch),
        }
    }
    let (model, adam, best_epoch) = best;
    Ok(TrainOutcome {
        model,
        adam,
        history,
        best_epoch,
        skipped,
    })
}
