//! The implicit sentence prior: a categorical distribution over the whole
//! sentences attested in a monotext.

use std::collections::HashMap;
use std::sync::Arc;

use crate::corpus::{Monotext, Sentence, Vocabulary};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Log-probability with an explicit zero-probability case, so that callers
/// branch instead of doing arithmetic on infinities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LogProb {
    Finite(f64),
    NegInfinity,
}

impl LogProb {
    pub fn finite(self) -> Option<f64> {
        match self {
            LogProb::Finite(v) => Some(v),
            LogProb::NegInfinity => None,
        }
    }

    pub fn is_neg_infinity(self) -> bool {
        self == LogProb::NegInfinity
    }
}

#[derive(Clone, Debug)]
pub struct EmpiricalLM {
    /// Distinct sentences in order of first occurrence.
    pub support: Vec<Sentence>,
    pub counts: Vec<u64>,
    pub total: u64,
    pub vocab: Arc<Vocabulary>,
    index: HashMap<Vec<usize>, usize>,
}

pub fn build_lm(m: &Monotext) -> Result<EmpiricalLM> {
    if m.is_empty() {
        return Err(Error::Empty("monotext for the language model"));
    }
    let mut index = HashMap::new();
    let mut support = Vec::new();
    let mut counts: Vec<u64> = Vec::new();
    for s in &m.sentences {
        match index.get(s.ids()) {
            Some(&k) => counts[k] += 1,
            None => {
                index.insert(s.ids().to_vec(), support.len());
                support.push(s.clone());
                counts.push(1);
            }
        }
    }
    Ok(EmpiricalLM {
        support,
        counts,
        total: m.len() as u64,
        vocab: m.vocab.clone(),
        index,
    })
}

impl EmpiricalLM {
    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Position of `x` in the support.
    pub fn position(&self, x: &Sentence) -> Option<usize> {
        self.index.get(x.ids()).copied()
    }

    pub fn prob(&self, k: usize) -> f64 {
        self.counts[k] as f64 / self.total as f64
    }

    /// Draws a support index with probability count/total, using one
    /// uniform integer in `[0, total)`.
    pub fn sample_index(&self, rng: &mut RngStream) -> usize {
        let mut u = rng.below(self.total);
        for (k, &c) in self.counts.iter().enumerate() {
            if u < c {
                return k;
            }
            u -= c;
        }
        unreachable!("counts sum to total")
    }
}

pub fn lm_sample<'a>(lm: &'a EmpiricalLM, rng: &mut RngStream) -> &'a Sentence {
    &lm.support[lm.sample_index(rng)]
}

pub fn lm_log_prob(lm: &EmpiricalLM, x: &Sentence) -> LogProb {
    match lm.position(x) {
        Some(k) => LogProb::Finite(lm.prob(k).ln()),
        None => LogProb::NegInfinity,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(lines: &[&str]) -> (Monotext, Arc<Vocabulary>) {
        let v = Arc::new(Vocabulary::new(["a", "b", "c"]).unwrap());
        let s = lines.iter().map(|l| v.encode(l, Default::default()).unwrap()).collect();
        (Monotext::new(s, v.clone()), v)
    }

    #[test]
    fn empirical_probabilities() {
        let (m, v) = setup(&["a", "b b", "b b"]);
        let lm = build_lm(&m).unwrap();
        let s1 = v.encode("a", Default::default()).unwrap();
        let s2 = v.encode("b b", Default::default()).unwrap();
        assert_eq!(lm_log_prob(&lm, &s2), LogProb::Finite((2.0f64 / 3.0).ln()));
        assert_eq!(lm_log_prob(&lm, &s1), LogProb::Finite((1.0f64 / 3.0).ln()));
        let unseen = v.encode("c", Default::default()).unwrap();
        assert!(lm_log_prob(&lm, &unseen).is_neg_infinity());
        assert_eq!(lm.counts.iter().sum::<u64>(), lm.total);

        let (m, _) = setup(&["a"]);
        let lm = build_lm(&m).unwrap();
        assert_eq!(lm_log_prob(&lm, &m.sentences[0]), LogProb::Finite(0.0));
        let mut r = RngStream::from_seed(0);
        for _ in 0..10 {
            assert_eq!(lm_sample(&lm, &mut r), &m.sentences[0]);
        }
    }

    #[test]
    fn distinct_sentences_are_uniform() {
        let (m, _) = setup(&["a", "b", "c", "a b"]);
        let lm = build_lm(&m).unwrap();
        for s in &m.sentences {
            assert_eq!(lm_log_prob(&lm, s), LogProb::Finite(0.25f64.ln()));
        }
    }

    #[test]
    fn empty_monotext_is_rejected() {
        let (m, _) = setup(&[]);
        assert!(build_lm(&m).is_err());
    }

    #[test]
    fn sampling_frequencies() {
        let (m, _) = setup(&["a", "b b", "b b"]);
        let lm = build_lm(&m).unwrap();
        let mut r = RngStream::from_seed(17);
        let n = 100_000;
        let mut hits = [0usize; 2];
        for _ in 0..n {
            hits[lm.sample_index(&mut r)] += 1;
        }
        assert!((hits[0] as f64 / n as f64 - 1.0 / 3.0).abs() < 0.01);
        assert!((hits[1] as f64 / n as f64 - 2.0 / 3.0).abs() < 0.01);
        let mut a = RngStream::from_seed(3);
        let mut b = RngStream::from_seed(3);
        assert_eq!(lm_sample(&lm, &mut a), lm_sample(&lm, &mut b));
    }
}
