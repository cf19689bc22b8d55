//! Parameter layout and the two forward paths of the encoder-decoder:
//! a differentiable one on the tape (training) and a tape-free one
//! (scoring and decoding). Both call the same kernels.

use std::fmt;

use crate::autodiff::kernels::{self, attention, gru_step};
use crate::autodiff::tensor::{gemm, matmul};
use crate::autodiff::{dropout_mask, Tape, Tensor, Var};
use crate::corpus::{Sentence, Vocabulary};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Which way a model translates. The forward translator and the inference
/// network share one architecture and differ only in direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    /// source → target, p(y | x)
    Forward,
    /// target → source, q(x | y)
    Backward,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Direction::Forward),
            "backward" => Ok(Direction::Backward),
            _ => Err(Error::Config(format!("unknown direction {s:?}"))),
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Layer sizes. Desk-scale defaults; the reference recipe used embedding 500
/// and hidden 1024.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub embed: usize,
    pub hidden: usize,
    pub attention: usize,
    pub max_len: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            embed: 32,
            hidden: 64,
            attention: 64,
            max_len: 30,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub dims: ModelDims,
    /// Input-side vocabulary size (EOS included).
    pub src_vocab: usize,
    /// Output-side vocabulary size (EOS included).
    pub trg_vocab: usize,
}

pub(crate) const SRC_EMB: usize = 0;
pub(crate) const ENC_FW_W: usize = 1;
pub(crate) const ENC_FW_B: usize = 2;
pub(crate) const ENC_FW_U: usize = 3;
pub(crate) const ENC_BW_W: usize = 4;
pub(crate) const ENC_BW_B: usize = 5;
pub(crate) const ENC_BW_U: usize = 6;
pub(crate) const INIT_W: usize = 7;
pub(crate) const INIT_B: usize = 8;
/// Output vocabulary plus one extra row used as the start symbol.
pub(crate) const TRG_EMB: usize = 9;
pub(crate) const ATT_WQ: usize = 10;
pub(crate) const ATT_UK: usize = 11;
pub(crate) const ATT_B: usize = 12;
pub(crate) const ATT_V: usize = 13;
pub(crate) const DEC_WE: usize = 14;
pub(crate) const DEC_WC: usize = 15;
pub(crate) const DEC_B: usize = 16;
pub(crate) const DEC_U: usize = 17;
pub(crate) const OUT_W: usize = 18;
pub(crate) const OUT_B: usize = 19;

pub const PARAM_NAMES: [&str; 20] = [
    "src_embed",
    "enc_fw_w",
    "enc_fw_b",
    "enc_fw_u",
    "enc_bw_w",
    "enc_bw_b",
    "enc_bw_u",
    "init_w",
    "init_b",
    "trg_embed",
    "att_wq",
    "att_uk",
    "att_b",
    "att_v",
    "dec_we",
    "dec_wc",
    "dec_b",
    "dec_u",
    "out_w",
    "out_b",
];

impl ModelConfig {
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let ModelDims {
            embed: e,
            hidden: h,
            attention: a,
            ..
        } = self.dims;
        let (vs, vt) = (self.src_vocab, self.trg_vocab);
        vec![
            vec![vs, e],
            vec![e, 3 * h],
            vec![3 * h],
            vec![h, 3 * h],
            vec![e, 3 * h],
            vec![3 * h],
            vec![h, 3 * h],
            vec![h, h],
            vec![h],
            vec![vt + 1, e],
            vec![h, a],
            vec![2 * h, a],
            vec![a],
            vec![a, 1],
            vec![e, 3 * h],
            vec![2 * h, 3 * h],
            vec![3 * h],
            vec![h, 3 * h],
            vec![h + 2 * h + e, vt],
            vec![vt],
        ]
    }

    fn bos(&self) -> usize {
        self.trg_vocab
    }
}

/// Attention encoder-decoder with a bidirectional GRU encoder and a
/// single-layer GRU decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct Seq2Seq {
    pub config: ModelConfig,
    pub direction: Direction,
    pub params: Vec<Tensor>,
    pub src_vocab_hash: String,
    pub trg_vocab_hash: String,
}

impl Seq2Seq {
    /// Fresh model: Glorot-uniform matrices, small uniform embeddings, zero biases.
    pub fn new(
        dims: ModelDims,
        direction: Direction,
        src_vocab: &Vocabulary,
        trg_vocab: &Vocabulary,
        rng: &RngStream,
    ) -> Self {
        let config = ModelConfig {
            dims,
            src_vocab: src_vocab.len(),
            trg_vocab: trg_vocab.len(),
        };
        let mut rng = rng.derive("init");
        let params = config
            .param_shapes()
            .into_iter()
            .enumerate()
            .map(|(i, shape)| {
                let n: usize = shape.iter().product();
                let bound = match (i, shape.len()) {
                    (SRC_EMB | TRG_EMB, _) => 0.1,
                    (_, 1) => 0.0,
                    _ => (6.0 / (shape[0] + shape[1]) as f64).sqrt(),
                };
                let data = (0..n)
                    .map(|_| {
                        if bound == 0.0 {
                            0.0
                        } else {
                            (rng.uniform() * 2.0 - 1.0) * bound
                        }
                    })
                    .collect();
                Tensor::new(shape, data).expect("sized from shape")
            })
            .collect();
        Self {
            config,
            direction,
            params,
            src_vocab_hash: src_vocab.hash(),
            trg_vocab_hash: trg_vocab.hash(),
        }
    }

    pub fn max_len(&self) -> usize {
        self.config.dims.max_len
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn fits(&self, s: &Sentence) -> bool {
        s.len() <= self.max_len()
    }

    pub(crate) fn check_len(&self, s: &Sentence) -> Result<()> {
        if self.fits(s) {
            Ok(())
        } else {
            Err(Error::Overlong {
                len: s.len(),
                max_len: self.max_len(),
            })
        }
    }

    /// Summed negative log-likelihood of a chunk of (input, output) pairs on
    /// `tape`. Dropout is applied to embeddings and to the output-layer input
    /// when `dropout` is given.
    pub fn chunk_loss(
        &self,
        tape: &mut Tape,
        pairs: &[(&Sentence, &Sentence)],
        dropout: Option<(f64, &mut RngStream)>,
    ) -> Var {
        let d = self.config.dims;
        let h = d.hidden;
        let n = pairs.len();
        let (mut dropout_p, mut drop_rng) = match dropout {
            Some((p, r)) if p > 0.0 => (p, Some(r)),
            _ => (0.0, None),
        };
        if drop_rng.is_none() {
            dropout_p = 0.0;
        }
        let mut drop = |tape: &mut Tape, v: Var| -> Var {
            match drop_rng.as_deref_mut() {
                Some(rng) if dropout_p > 0.0 => {
                    let shape = tape.value(v).shape().to_vec();
                    tape.mul_const(v, dropout_mask(&shape, dropout_p, rng))
                }
                _ => v,
            }
        };

        // encoder, time-major
        let lengths: Vec<usize> = pairs.iter().map(|(x, _)| x.len()).collect();
        let tx = *lengths.iter().max().expect("nonempty chunk");
        let mut src_ids = Vec::with_capacity(tx * n);
        for t in 0..tx {
            for (x, _) in pairs {
                src_ids.push(x.ids().get(t).copied().unwrap_or(0));
            }
        }
        let src_emb = tape.param(SRC_EMB);
        let emb = tape.gather(src_emb, src_ids);
        let emb = drop(tape, emb);
        let enc = |tape: &mut Tape, w: usize, b: usize| {
            let (w, b) = (tape.param(w), tape.param(b));
            let xw = tape.matmul(emb, w);
            tape.add_bias(xw, b)
        };
        let xp_fw = enc(tape, ENC_FW_W, ENC_FW_B);
        let xp_bw = enc(tape, ENC_BW_W, ENC_BW_B);
        let (u_fw, u_bw) = (tape.param(ENC_FW_U), tape.param(ENC_BW_U));
        let masks: Vec<Vec<f64>> = (0..tx)
            .map(|t| lengths.iter().map(|&l| if t < l { 1.0 } else { 0.0 }).collect())
            .collect();
        let zero = tape.input(Tensor::zeros(&[n, h]));
        let mut fw = Vec::with_capacity(tx);
        let mut state = zero;
        for (t, mask) in masks.iter().enumerate() {
            let xp = tape.slice_rows(xp_fw, t * n, n);
            state = tape.gru(xp, state, u_fw, Some(mask.clone()));
            fw.push(state);
        }
        let mut bw = vec![zero; tx];
        state = zero;
        for t in (0..tx).rev() {
            let xp = tape.slice_rows(xp_bw, t * n, n);
            state = tape.gru(xp, state, u_bw, Some(masks[t].clone()));
            bw[t] = state;
        }
        let annotations: Vec<Var> = (0..tx).map(|t| tape.concat_cols(vec![fw[t], bw[t]])).collect();
        let values = tape.stack_rows(annotations);
        let (uk, ab) = (tape.param(ATT_UK), tape.param(ATT_B));
        let keys = tape.matmul(values, uk);
        let keys = tape.add_bias(keys, ab);
        let (iw, ib) = (tape.param(INIT_W), tape.param(INIT_B));
        let s0 = tape.matmul(bw[0], iw);
        let s0 = tape.add_bias(s0, ib);
        let mut s = tape.tanh(s0);

        // decoder with teacher forcing
        let ty = pairs.iter().map(|(_, y)| y.len()).max().expect("nonempty chunk");
        let bos = self.config.bos();
        let mut prev_ids = Vec::with_capacity(ty * n);
        let mut targets = Vec::with_capacity(ty * n);
        let mut weights = Vec::with_capacity(ty * n);
        for t in 0..ty {
            for (_, y) in pairs {
                let prev = if t == 0 {
                    bos
                } else {
                    y.ids().get(t - 1).copied().unwrap_or(0)
                };
                prev_ids.push(prev);
                targets.push(y.ids().get(t).copied().unwrap_or(0));
                weights.push(if t < y.len() { 1.0 } else { 0.0 });
            }
        }
        let trg_emb = tape.param(TRG_EMB);
        let yemb = tape.gather(trg_emb, prev_ids);
        let yemb = drop(tape, yemb);
        let (we, db) = (tape.param(DEC_WE), tape.param(DEC_B));
        let ye = tape.matmul(yemb, we);
        let ye = tape.add_bias(ye, db);
        let (wq, v, wc, du) = (
            tape.param(ATT_WQ),
            tape.param(ATT_V),
            tape.param(DEC_WC),
            tape.param(DEC_U),
        );
        let rows: Vec<usize> = (0..n).collect();
        let mut states = Vec::with_capacity(ty);
        let mut contexts = Vec::with_capacity(ty);
        for t in 0..ty {
            let q = tape.matmul(s, wq);
            let c = tape.attention(q, keys, values, v, tx, n, rows.clone(), lengths.clone());
            let yt = tape.slice_rows(ye, t * n, n);
            let cw = tape.matmul(c, wc);
            let xp = tape.add(yt, cw);
            s = tape.gru(xp, s, du, None);
            states.push(s);
            contexts.push(c);
        }
        let st = tape.stack_rows(states);
        let ct = tape.stack_rows(contexts);
        let feat = tape.concat_cols(vec![st, ct, yemb]);
        let feat = drop(tape, feat);
        let (ow, ob) = (tape.param(OUT_W), tape.param(OUT_B));
        let logits = tape.matmul(feat, ow);
        let logits = tape.add_bias(logits, ob);
        tape.cross_entropy(logits, targets, weights)
    }

    /// Encodes a batch without recording a tape.
    pub fn encode(&self, xs: &[&Sentence]) -> Encoded {
        let d = self.config.dims;
        let h = d.hidden;
        let n = xs.len();
        let lengths: Vec<usize> = xs.iter().map(|x| x.len()).collect();
        let tx = lengths.iter().copied().max().unwrap_or(0);
        let emb_t = &self.params[SRC_EMB];
        let mut emb = Vec::with_capacity(tx * n * d.embed);
        for t in 0..tx {
            for x in xs {
                emb.extend_from_slice(emb_t.row(x.ids().get(t).copied().unwrap_or(0)));
            }
        }
        let emb = Tensor::matrix(tx * n, d.embed, emb);
        let proj = |w: usize, b: usize| {
            let mut out = matmul(&emb, &self.params[w]);
            add_bias(&mut out, &self.params[b]);
            out
        };
        let (xp_fw, xp_bw) = (proj(ENC_FW_W, ENC_FW_B), proj(ENC_BW_W, ENC_BW_B));
        let h3 = 3 * h;
        let masks: Vec<Vec<f64>> = (0..tx)
            .map(|t| lengths.iter().map(|&l| if t < l { 1.0 } else { 0.0 }).collect())
            .collect();
        let mut fw = Vec::with_capacity(tx);
        let mut state = vec![0.0; n * h];
        for t in 0..tx {
            let xp = &xp_fw.data()[t * n * h3..(t + 1) * n * h3];
            state = gru_step(xp, &state, &self.params[ENC_FW_U], n, Some(&masks[t])).h_new;
            fw.push(state.clone());
        }
        let mut bw = vec![Vec::new(); tx];
        state = vec![0.0; n * h];
        for t in (0..tx).rev() {
            let xp = &xp_bw.data()[t * n * h3..(t + 1) * n * h3];
            state = gru_step(xp, &state, &self.params[ENC_BW_U], n, Some(&masks[t])).h_new;
            bw[t] = state.clone();
        }
        let mut values = Vec::with_capacity(tx * n * 2 * h);
        for t in 0..tx {
            for i in 0..n {
                values.extend_from_slice(&fw[t][i * h..(i + 1) * h]);
                values.extend_from_slice(&bw[t][i * h..(i + 1) * h]);
            }
        }
        let values = Tensor::matrix(tx * n, 2 * h, values);
        let mut keys = matmul(&values, &self.params[ATT_UK]);
        add_bias(&mut keys, &self.params[ATT_B]);
        let s0 = if tx == 0 {
            vec![0.0; n * h]
        } else {
            let mut s0 = matmul(&Tensor::matrix(n, h, bw[0].clone()), &self.params[INIT_W]);
            add_bias(&mut s0, &self.params[INIT_B]);
            s0.into_data().into_iter().map(f64::tanh).collect()
        };
        Encoded {
            n,
            steps: tx,
            lengths,
            values,
            keys,
            s0,
        }
    }

    /// Start symbol fed to the first decoder step.
    pub fn start_token(&self) -> usize {
        self.config.bos()
    }

    /// One decoder step for `m` hypotheses. Row `i` attends over encoded
    /// sentence `rows[i]`, has state `states[i]` and previous token `prev[i]`.
    /// Returns the new states (`m × H`) and raw logits (`m × V`).
    pub fn step(&self, enc: &Encoded, rows: &[usize], states: &[f64], prev: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let d = self.config.dims;
        let (h, e) = (d.hidden, d.embed);
        let m = rows.len();
        let emb_t = &self.params[TRG_EMB];
        let mut yemb = Vec::with_capacity(m * e);
        for &p in prev {
            yemb.extend_from_slice(emb_t.row(p));
        }
        let yemb = Tensor::matrix(m, e, yemb);
        let mut ye = matmul(&yemb, &self.params[DEC_WE]);
        add_bias(&mut ye, &self.params[DEC_B]);
        let q = matmul(&Tensor::matrix(m, h, states.to_vec()), &self.params[ATT_WQ]);
        let att = attention(
            q.data(),
            enc.keys.data(),
            enc.values.data(),
            self.params[ATT_V].data(),
            enc.steps,
            enc.n,
            rows,
            &enc.lengths,
        );
        let ctx = Tensor::matrix(m, 2 * h, att.context);
        let mut xp = ye.into_data();
        gemm(
            ctx.data(),
            false,
            self.params[DEC_WC].data(),
            false,
            &mut xp,
            m,
            2 * h,
            3 * h,
            true,
        );
        let s_new = gru_step(&xp, states, &self.params[DEC_U], m, None).h_new;
        let feat_w = 3 * h + e;
        let mut feat = Vec::with_capacity(m * feat_w);
        for i in 0..m {
            feat.extend_from_slice(&s_new[i * h..(i + 1) * h]);
            feat.extend_from_slice(ctx.row(i));
            feat.extend_from_slice(yemb.row(i));
        }
        let mut logits = matmul(&Tensor::matrix(m, feat_w, feat), &self.params[OUT_W]);
        add_bias(&mut logits, &self.params[OUT_B]);
        (s_new, logits.into_data())
    }

    /// log p(y | x) summed over every output position including EOS.
    pub fn log_prob(&self, x: &Sentence, y: &Sentence) -> Result<f64> {
        Ok(self.log_probs(&[(x, y)])?[0])
    }

    /// Batched teacher-forced scoring.
    pub fn log_probs(&self, pairs: &[(&Sentence, &Sentence)]) -> Result<Vec<f64>> {
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        for (x, y) in pairs {
            self.check_len(x)?;
            self.check_len(y)?;
        }
        let xs: Vec<&Sentence> = pairs.iter().map(|(x, _)| *x).collect();
        let enc = self.encode(&xs);
        let n = pairs.len();
        let vt = self.config.trg_vocab;
        let rows: Vec<usize> = (0..n).collect();
        let mut states = enc.s0.clone();
        let mut prev = vec![self.start_token(); n];
        let mut totals = vec![0.0; n];
        let ty = pairs.iter().map(|(_, y)| y.len()).max().unwrap_or(0);
        let mut lp = vec![0.0; vt];
        for t in 0..ty {
            let (s, logits) = self.step(&enc, &rows, &states, &prev);
            for (i, (_, y)) in pairs.iter().enumerate() {
                if let Some(&tok) = y.ids().get(t) {
                    kernels::log_softmax_into(&logits[i * vt..(i + 1) * vt], &mut lp);
                    totals[i] += lp[tok];
                    prev[i] = tok;
                }
            }
            states = s;
        }
        Ok(totals)
    }
}

fn add_bias(t: &mut Tensor, b: &Tensor) {
    let c = t.cols();
    for row in t.data_mut().chunks_mut(c) {
        for (x, y) in row.iter_mut().zip(b.data()) {
            *x += y;
        }
    }
}

/// Encoder output for a batch: time-major annotations and attention keys.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub n: usize,
    pub steps: usize,
    pub lengths: Vec<usize>,
    pub values: Tensor,
    pub keys: Tensor,
    /// Initial decoder states, `n × H`.
    pub s0: Vec<f64>,
}
