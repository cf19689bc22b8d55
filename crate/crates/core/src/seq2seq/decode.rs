//! Greedy, ancestral-sampling and beam-search decoding.
//!
//! Every mode emits at most `max_len` tokens: if no EOS has been produced
//! after `max_len - 1` tokens, EOS is appended.

use rayon::prelude::*;

use super::model::Seq2Seq;
use crate::autodiff::kernels::{log_softmax_into, softmax_into};
use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    /// Per-step argmax (the Viterbi-style approximation); ties go to the lowest id.
    Greedy,
    /// Ancestral sampling from each step's softmax.
    Sample,
    /// Width-`beam_width` search over cumulative log-probability, no length normalization.
    Beam,
}

impl DecodeMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(DecodeMode::Greedy),
            "sample" => Ok(DecodeMode::Sample),
            "beam" => Ok(DecodeMode::Beam),
            _ => Err(Error::Config(format!("unknown decode mode {s:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DecodeMode::Greedy => "greedy",
            DecodeMode::Sample => "sample",
            DecodeMode::Beam => "beam",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodeConfig {
    pub mode: DecodeMode,
    pub beam_width: usize,
    pub max_len: usize,
    pub temperature: f64,
}

impl DecodeConfig {
    pub fn greedy(max_len: usize) -> Self {
        Self {
            mode: DecodeMode::Greedy,
            beam_width: 1,
            max_len,
            temperature: 1.0,
        }
    }

    pub fn sample(max_len: usize) -> Self {
        Self {
            mode: DecodeMode::Sample,
            ..Self::greedy(max_len)
        }
    }

    pub fn beam(width: usize, max_len: usize) -> Self {
        Self {
            mode: DecodeMode::Beam,
            beam_width: width,
            ..Self::greedy(max_len)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 || self.max_len == 0 {
            return Err(Error::Config("beam_width and max_len must be at least 1".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        Ok(())
    }
}

/// Sentences decoded together in one batch by [`decode_corpus`].
pub const DECODE_BATCH: usize = 32;

/// Decodes one sentence. `rng` is only consumed in sample mode.
pub fn decode(model: &Seq2Seq, x: &Sentence, cfg: &DecodeConfig, rng: &mut RngStream) -> Sentence {
    match cfg.mode {
        DecodeMode::Beam => beam_search(model, x, cfg.beam_width, cfg.max_len),
        _ => decode_batch(model, &[x], cfg, std::slice::from_mut(rng))
            .pop()
            .expect("one output per input"),
    }
}

/// Decodes a corpus. Sentence `i` samples from `stream.child(i)`, and batches
/// are fixed runs of [`DECODE_BATCH`] sentences, so the output does not depend
/// on how many worker threads run.
pub fn decode_corpus(model: &Seq2Seq, xs: &[Sentence], cfg: &DecodeConfig, stream: &RngStream) -> Vec<Sentence> {
    match cfg.mode {
        DecodeMode::Beam => xs
            .par_iter()
            .map(|x| beam_search(model, x, cfg.beam_width, cfg.max_len))
            .collect(),
        _ => xs
            .par_chunks(DECODE_BATCH)
            .enumerate()
            .flat_map_iter(|(b, chunk)| {
                let refs: Vec<&Sentence> = chunk.iter().collect();
                let mut rngs: Vec<RngStream> = (0..chunk.len())
                    .map(|i| stream.child((b * DECODE_BATCH + i) as u64))
                    .collect();
                decode_batch(model, &refs, cfg, &mut rngs)
            })
            .collect(),
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Greedy or sampled decoding of a batch, one rng per row.
fn decode_batch(model: &Seq2Seq, xs: &[&Sentence], cfg: &DecodeConfig, rngs: &mut [RngStream]) -> Vec<Sentence> {
    let eos = 0;
    let vt = model.config.trg_vocab;
    let h = model.config.dims.hidden;
    let enc = model.encode(xs);
    let n = xs.len();
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut alive: Vec<usize> = (0..n).collect();
    let mut states = enc.s0.clone();
    let mut prev = vec![model.start_token(); n];
    let mut buf = vec![0.0; vt];
    let mut scaled = vec![0.0; vt];
    for t in 0..cfg.max_len {
        if alive.is_empty() {
            break;
        }
        if t + 1 == cfg.max_len {
            for &i in &alive {
                out[i].push(eos);
            }
            break;
        }
        let (s, logits) = model.step(&enc, &alive, &states, &prev);
        let mut next_alive = Vec::with_capacity(alive.len());
        let mut next_states = Vec::with_capacity(s.len());
        let mut next_prev = Vec::with_capacity(alive.len());
        for (k, &i) in alive.iter().enumerate() {
            let row = &logits[k * vt..(k + 1) * vt];
            let tok = match cfg.mode {
                DecodeMode::Sample => {
                    for (o, &l) in scaled.iter_mut().zip(row) {
                        *o = l / cfg.temperature;
                    }
                    softmax_into(&scaled, &mut buf);
                    rngs[i].categorical(&buf)
                }
                _ => {
                    log_softmax_into(row, &mut buf);
                    argmax(&buf)
                }
            };
            out[i].push(tok);
            if tok != eos {
                next_alive.push(i);
                next_states.extend_from_slice(&s[k * h..(k + 1) * h]);
                next_prev.push(tok);
            }
        }
        alive = next_alive;
        states = next_states;
        prev = next_prev;
    }
    out.into_iter().map(Sentence::from_ids_unchecked).collect()
}

struct Hyp {
    tokens: Vec<usize>,
    score: f64,
    state: Vec<f64>,
}

/// Beam search. The score of every finished hypothesis equals its
/// `log_prob`, including forced EOS at the length limit.
pub fn beam_search(model: &Seq2Seq, x: &Sentence, width: usize, max_len: usize) -> Sentence {
    let eos = 0;
    let vt = model.config.trg_vocab;
    let h = model.config.dims.hidden;
    let enc = model.encode(&[x]);
    let mut alive = vec![Hyp {
        tokens: Vec::new(),
        score: 0.0,
        state: enc.s0.clone(),
    }];
    let mut finished: Vec<(Vec<usize>, f64)> = Vec::new();
    let mut lp = vec![0.0; vt];
    for t in 0..max_len {
        if alive.is_empty() || finished.len() >= width {
            break;
        }
        let best_done = finished.iter().map(|f| f.1).fold(f64::NEG_INFINITY, f64::max);
        if alive.iter().all(|hy| hy.score <= best_done) {
            break;
        }
        let rows = vec![0; alive.len()];
        let states: Vec<f64> = alive.iter().flat_map(|hy| hy.state.iter().copied()).collect();
        let prev: Vec<usize> = alive
            .iter()
            .map(|hy| hy.tokens.last().copied().unwrap_or(model.start_token()))
            .collect();
        let (s, logits) = model.step(&enc, &rows, &states, &prev);
        if t + 1 == max_len {
            for (k, hy) in alive.iter().enumerate() {
                log_softmax_into(&logits[k * vt..(k + 1) * vt], &mut lp);
                let mut toks = hy.tokens.clone();
                toks.push(eos);
                finished.push((toks, hy.score + lp[eos]));
            }
            break;
        }
        let mut cands: Vec<(f64, usize, usize)> = Vec::with_capacity(alive.len() * vt);
        for (k, hy) in alive.iter().enumerate() {
            log_softmax_into(&logits[k * vt..(k + 1) * vt], &mut lp);
            for (tok, &l) in lp.iter().enumerate() {
                cands.push((hy.score + l, k, tok));
            }
        }
        let keep = width - finished.len();
        cands.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .expect("finite scores")
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        let mut next = Vec::with_capacity(keep);
        for &(score, k, tok) in cands.iter().take(keep) {
            let mut toks = alive[k].tokens.clone();
            toks.push(tok);
            if tok == eos {
                finished.push((toks, score));
            } else {
                next.push(Hyp {
                    tokens: toks,
                    score,
                    state: s[k * h..(k + 1) * h].to_vec(),
                });
            }
        }
        alive = next;
    }
    let mut best: Option<&(Vec<usize>, f64)> = None;
    for f in &finished {
        if best.is_none_or(|b| f.1 > b.1) {
            best = Some(f);
        }
    }
    let tokens = best.map(|b| b.0.clone()).unwrap_or_else(|| vec![eos]);
    Sentence::from_ids_unchecked(tokens)
}
