#![allow(dead_code)]

use std::sync::Arc;

use bitext_core::autodiff::Tape;
use bitext_core::corpus::{Monotext, Sentence, Vocabulary};
use bitext_core::eval::{paired_significance, SignificanceConfig};
use bitext_core::langmodel::{build_lm, EmpiricalLM};
use bitext_core::rng::RngStream;
use bitext_core::seq2seq::{Direction, ModelDims, Seq2Seq};

pub fn vocab(prefix: &str, n: usize) -> Arc<Vocabulary> {
    Arc::new(Vocabulary::new((0..n).map(|i| format!("{prefix}{i}"))).unwrap())
}

/// Word ids are 1-based; EOS is appended.
pub fn sentence(words: &[usize], v: &Vocabulary) -> Sentence {
    let mut ids = words.to_vec();
    ids.push(v.eos_id());
    Sentence::new(ids, v).unwrap()
}

/// A small model with weights pushed away from the initializer so its
/// distributions are far from uniform.
pub fn tiny_model(
    seed: u64,
    sv: &Arc<Vocabulary>,
    tv: &Arc<Vocabulary>,
    direction: Direction,
    max_len: usize,
) -> Seq2Seq {
    let dims = ModelDims {
        embed: 4,
        hidden: 5,
        attention: 3,
        max_len,
    };
    let root = RngStream::from_seed(seed);
    let mut m = Seq2Seq::new(dims, direction, sv, tv, &root);
    let mut r = root.derive("perturb");
    for p in &mut m.params {
        for x in p.data_mut() {
            *x += (r.uniform() - 0.5) * 1.5;
        }
    }
    m
}

/// Every sentence with 0..max_words words over the vocabulary's word ids.
pub fn all_sentences(v: &Vocabulary, max_words: usize) -> Vec<Sentence> {
    let words = v.len() - 1;
    let mut out = vec![Vec::new()];
    let mut layer = vec![Vec::new()];
    for _ in 0..max_words {
        let mut next = Vec::new();
        for p in &layer {
            for w in 1..=words {
                let mut q: Vec<usize> = p.clone();
                q.push(w);
                next.push(q);
            }
        }
        out.extend(next.iter().cloned());
        layer = next;
    }
    out.iter().map(|w| sentence(w, v)).collect()
}

fn loss(model: &Seq2Seq, pairs: &[(&Sentence, &Sentence)]) -> f64 {
    let mut tape = Tape::new(&model.params);
    let l = model.chunk_loss(&mut tape, pairs, None);
    tape.value(l).data()[0]
}

/// Largest relative error between tape gradients and central differences
/// (step `h`) over `probes` random parameter entries.
pub fn max_gradient_error(model: &Seq2Seq, pairs: &[(&Sentence, &Sentence)], probes: usize, h: f64, seed: u64) -> f64 {
    let grads = {
        let mut tape = Tape::new(&model.params);
        let l = model.chunk_loss(&mut tape, pairs, None);
        tape.backward(l).unwrap()
    };
    let mut rng = RngStream::from_seed(seed);
    let mut m = model.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let p = rng.below(m.params.len() as u64) as usize;
        let i = rng.below(m.params[p].len() as u64) as usize;
        let orig = m.params[p].data()[i];
        m.params[p].data_mut()[i] = orig + h;
        let up = loss(&m, pairs);
        m.params[p].data_mut()[i] = orig - h;
        let down = loss(&m, pairs);
        m.params[p].data_mut()[i] = orig;
        let num = (up - down) / (2.0 * h);
        let ana = grads[p].data()[i];
        // gradients below 1e-5 in magnitude are compared absolutely
        let err = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-5);
        worst = worst.max(err);
    }
    worst
}

/// Kolmogorov–Smirnov distance between the sample and Uniform(0, 1).
pub fn ks_uniform(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
        .fold(0.0, f64::max)
}

/// A noisy "system": each reference word survives with probability 0.7,
/// otherwise it is replaced by a junk word.
pub fn noisy_outputs(refs: &[String], rng: &mut RngStream) -> Vec<String> {
    refs.iter()
        .map(|r| {
            r.split(' ')
                .map(|w| {
                    if rng.uniform() < 0.7 {
                        w.to_string()
                    } else {
                        format!("junk{}", rng.below(5))
                    }
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

pub fn reference_corpus(n: usize, seed: u64) -> Vec<String> {
    let mut r = RngStream::from_seed(seed);
    (0..n)
        .map(|_| {
            let len = 4 + r.below(8) as usize;
            (0..len)
                .map(|_| format!("w{}", r.below(30)))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

/// p-values of `reps` comparisons between two independent draws of the
/// same noisy system.
pub fn null_p_values(reps: usize, trials: usize, seed: u64) -> Vec<f64> {
    let refs = reference_corpus(100, seed);
    let root = RngStream::from_seed(seed).derive("null");
    let cfg = SignificanceConfig {
        trials,
        ..Default::default()
    };
    (0..reps)
        .map(|k| {
            let rep = root.child(k as u64);
            let a = noisy_outputs(&refs, &mut rep.derive("a"));
            let b = noisy_outputs(&refs, &mut rep.derive("b"));
            paired_significance(&a, &b, &refs, &cfg, &rep.derive("test"))
                .unwrap()
                .p_value
        })
        .collect()
}

/// Support sentences with unequal counts: sentence k appears k+1 times.
pub fn skewed_lm(support: &[Sentence], v: &Arc<Vocabulary>) -> EmpiricalLM {
    let mut m = Vec::new();
    for (k, s) in support.iter().enumerate() {
        m.extend(std::iter::repeat_n(s.clone(), k + 1));
    }
    build_lm(&Monotext::new(m, v.clone())).unwrap()
}

/// An inference network whose output over {EOS, one-word sentences} is
/// `probs` at the first step and certainly EOS at the second.
pub fn categorical_q(template: &Seq2Seq, probs: &[f64]) -> Seq2Seq {
    let mut q = template.clone();
    let d = q.config.dims;
    let (h, e, vt) = (d.hidden, d.embed, q.config.trg_vocab);
    assert_eq!(probs.len(), vt);
    for x in q.params[18].data_mut() {
        *x = 0.0;
    }
    for x in q.params[19].data_mut() {
        *x = 0.0;
    }
    for x in q.params[9].data_mut() {
        *x = 0.0;
    }
    // the start row has a 1 in dimension 0, every word row a 1 in dimension 1
    q.params[9].data_mut()[vt * e] = 1.0;
    for w in 0..vt {
        q.params[9].data_mut()[w * e + 1] = 1.0;
    }
    let ow = q.params[18].data_mut();
    for (k, p) in probs.iter().enumerate() {
        ow[(3 * h) * vt + k] = p.ln();
    }
    ow[(3 * h + 1) * vt] = 1000.0;
    q
}
