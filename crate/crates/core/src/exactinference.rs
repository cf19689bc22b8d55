//! Exact quantities that the sentence-level categorical prior makes
//! computable: marginal likelihood, posterior over the prior's support,
//! inclusive KL, and the sleep objective (exact and Monte Carlo).

use std::sync::Arc;

use rayon::prelude::*;

use crate::autodiff::kernels::log_softmax_into;
use crate::corpus::{Sentence, Vocabulary};
use crate::error::{Error, Result};
use crate::langmodel::{lm_log_prob, EmpiricalLM};
use crate::rng::RngStream;
use crate::seq2seq::{DecodeConfig, Seq2Seq};
use crate::wakesleep::sleep_phase;

/// `log Σ exp(v)`; −∞ for an empty slice.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[derive(Clone, Debug)]
pub struct PosteriorTable {
    pub y: Sentence,
    /// The LM support, in LM order.
    pub support: Vec<Sentence>,
    /// log p_θ(y | x_k) + log p(x_k).
    pub log_joint: Vec<f64>,
    pub posterior: Vec<f64>,
    /// log Σ_k exp(log_joint_k), the marginal log-likelihood of y.
    pub log_normalizer: f64,
}

fn log_joint(p: &Seq2Seq, lm: &EmpiricalLM, y: &Sentence) -> Result<Vec<f64>> {
    let pairs: Vec<(&Sentence, &Sentence)> = lm.support.iter().map(|x| (x, y)).collect();
    let lik = p.log_probs(&pairs)?;
    Ok(lm
        .support
        .iter()
        .zip(lik)
        .map(|(x, l)| {
            // every support sentence has positive prior mass
            l + lm_log_prob(lm, x).finite().expect("support sentence")
        })
        .collect())
}

/// log p(y) = log Σ_k p_θ(y | x_k) p(x_k).
pub fn marginal_log_likelihood(p: &Seq2Seq, lm: &EmpiricalLM, y: &Sentence) -> Result<f64> {
    Ok(log_sum_exp(&log_joint(p, lm, y)?))
}

pub fn exact_posterior(p: &Seq2Seq, lm: &EmpiricalLM, y: &Sentence) -> Result<PosteriorTable> {
    let lj = log_joint(p, lm, y)?;
    let z = log_sum_exp(&lj);
    Ok(PosteriorTable {
        y: y.clone(),
        support: lm.support.clone(),
        posterior: lj.iter().map(|l| (l - z).exp()).collect(),
        log_joint: lj,
        log_normalizer: z,
    })
}

/// KL(p(x|y) ‖ q_φ(x|y)) over the LM support. Zero-posterior terms are dropped.
pub fn inclusive_kl(p: &Seq2Seq, lm: &EmpiricalLM, q: &Seq2Seq, y: &Sentence) -> Result<f64> {
    let table = exact_posterior(p, lm, y)?;
    let pairs: Vec<(&Sentence, &Sentence)> = lm.support.iter().map(|x| (y, x)).collect();
    let lq = q.log_probs(&pairs)?;
    let mut kl = 0.0;
    for k in 0..lm.len() {
        let post = table.posterior[k];
        if post > 0.0 {
            kl += post * ((table.log_joint[k] - table.log_normalizer) - lq[k]);
        }
    }
    Ok(kl)
}

/// Uniformly weighted mean of the per-sentence inclusive KL.
pub fn mean_inclusive_kl(p: &Seq2Seq, lm: &EmpiricalLM, q: &Seq2Seq, ys: &[Sentence]) -> Result<f64> {
    if ys.is_empty() {
        return Err(Error::Empty("conditioning sentences"));
    }
    let v: Result<Vec<f64>> = ys.par_iter().map(|y| inclusive_kl(p, lm, q, y)).collect();
    Ok(v?.iter().sum::<f64>() / ys.len() as f64)
}

/// Σ_k p_θ(y | x_k) q_φ(x_k | y) over the LM support (prior ignored).
pub fn autoencoder_objective(p: &Seq2Seq, q: &Seq2Seq, y: &Sentence, lm: &EmpiricalLM) -> Result<f64> {
    let fwd: Vec<(&Sentence, &Sentence)> = lm.support.iter().map(|x| (x, y)).collect();
    let bwd: Vec<(&Sentence, &Sentence)> = lm.support.iter().map(|x| (y, x)).collect();
    let lp = p.log_probs(&fwd)?;
    let lq = q.log_probs(&bwd)?;
    Ok(lp.iter().zip(&lq).map(|(a, b)| (a + b).exp()).sum())
}

/// Every output that sampling from `model` given `x` can produce under
/// length limit `max_len`, with its log-probability under that sampler.
/// Outputs that reach the limit end in a forced EOS and carry the mass of
/// their prefix; the masses sum to one.
pub fn enumerate_outputs(model: &Seq2Seq, x: &Sentence, max_len: usize) -> Vec<(Sentence, f64)> {
    let vt = model.config.trg_vocab;
    let h = model.config.dims.hidden;
    let enc = model.encode(&[x]);
    let mut out = Vec::new();
    // (prefix, log mass, state)
    let mut frontier: Vec<(Vec<usize>, f64, Vec<f64>)> = vec![(Vec::new(), 0.0, enc.s0.clone())];
    let mut lp = vec![0.0; vt];
    while !frontier.is_empty() {
        let depth = frontier[0].0.len();
        if depth + 1 >= max_len {
            for (mut prefix, mass, _) in frontier {
                prefix.push(0);
                out.push((Sentence::from_ids_unchecked(prefix), mass));
            }
            break;
        }
        let rows = vec![0; frontier.len()];
        let states: Vec<f64> = frontier.iter().flat_map(|f| f.2.iter().copied()).collect();
        let prev: Vec<usize> = frontier
            .iter()
            .map(|f| f.0.last().copied().unwrap_or(model.start_token()))
            .collect();
        let (s, logits) = model.step(&enc, &rows, &states, &prev);
        let mut next = Vec::new();
        for (k, (prefix, mass, _)) in frontier.iter().enumerate() {
            log_softmax_into(&logits[k * vt..(k + 1) * vt], &mut lp);
            let mut done = prefix.clone();
            done.push(0);
            out.push((Sentence::from_ids_unchecked(done), mass + lp[0]));
            for (t, &l) in lp.iter().enumerate().skip(1) {
                let mut p = prefix.clone();
                p.push(t);
                next.push((p, mass + l, s[k * h..(k + 1) * h].to_vec()));
            }
        }
        frontier = next;
    }
    out
}

/// E_{x∼p(x), y∼p_θ(·|x)} [log q_φ(x | y)] by enumeration of every output
/// the sampler can produce with `max_len`.
pub fn exact_sleep_objective(p: &Seq2Seq, lm: &EmpiricalLM, q: &Seq2Seq, max_len: usize) -> Result<f64> {
    let terms: Result<Vec<f64>> = (0..lm.len())
        .into_par_iter()
        .map(|k| {
            let x = &lm.support[k];
            let outs = enumerate_outputs(p, x, max_len);
            let pairs: Vec<(&Sentence, &Sentence)> = outs.iter().map(|(y, _)| (y, x)).collect();
            let lq = q.log_probs(&pairs)?;
            let inner: f64 = outs.iter().zip(&lq).map(|((_, m), l)| m.exp() * l).sum();
            Ok(lm.prob(k) * inner)
        })
        .collect();
    Ok(terms?.iter().sum())
}

/// (1/M) Σ log q_φ(x̃ | ỹ) over `m` pairs dreamt by the sleep phase with
/// ancestral sampling from `p`. Estimates [`exact_sleep_objective`].
pub fn mc_sleep_objective(
    p: &Seq2Seq,
    lm: &EmpiricalLM,
    trg_vocab: &Arc<Vocabulary>,
    q: &Seq2Seq,
    m: usize,
    rng: &RngStream,
) -> Result<f64> {
    if m == 0 {
        return Err(Error::Config("mc_sleep_objective needs at least one sample".into()));
    }
    let dreamt = sleep_phase(p, lm, trg_vocab, m, &DecodeConfig::sample(p.max_len()), rng)?;
    let pairs: Vec<(&Sentence, &Sentence)> = dreamt.pairs.iter().map(|(x, y)| (y, x)).collect();
    let lq: Result<Vec<Vec<f64>>> = pairs.par_chunks(256).map(|c| q.log_probs(c)).collect();
    Ok(lq?.iter().flatten().sum::<f64>() / m as f64)
}
