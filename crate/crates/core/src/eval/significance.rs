//! Paired approximate randomization on corpus BLEU.

use rayon::prelude::*;

use super::bleu::{sentence_stats, BleuStats};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Differences within this tolerance count as ties.
const TIE_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SignificanceResult {
    pub p_value: f64,
    pub significant: bool,
    pub trials: usize,
    /// BLEU(A) − BLEU(B) on the unshuffled corpora.
    pub observed_delta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SignificanceConfig {
    pub trials: usize,
    pub alpha: f64,
    pub lowercase: bool,
}

impl Default for SignificanceConfig {
    fn default() -> Self {
        Self {
            trials: 10_000,
            alpha: 0.05,
            lowercase: false,
        }
    }
}

fn corpus_score(stats: &[&BleuStats]) -> f64 {
    let mut t = BleuStats::default();
    for s in stats {
        t.add(s);
    }
    t.score().score
}

/// Each trial swaps every sentence pair between the systems with
/// probability ½, drawing from `rng.child(trial)`. The p-value is
/// `(hits + 1) / (trials + 1)` where a hit is a trial whose |ΔBLEU| is at
/// least the observed one.
pub fn paired_significance<S: AsRef<str> + Sync>(
    hyps_a: &[S],
    hyps_b: &[S],
    refs: &[S],
    cfg: &SignificanceConfig,
    rng: &RngStream,
) -> Result<SignificanceResult> {
    if hyps_a.len() != hyps_b.len() {
        return Err(Error::LengthMismatch {
            a: hyps_a.len(),
            b: hyps_b.len(),
        });
    }
    if cfg.trials == 0 || !(0.0..=1.0).contains(&cfg.alpha) {
        return Err(Error::Config(
            "significance needs trials ≥ 1 and alpha in [0, 1]".into(),
        ));
    }
    let sa = sentence_stats(hyps_a, refs, cfg.lowercase)?;
    let sb = sentence_stats(hyps_b, refs, cfg.lowercase)?;
    let observed = corpus_score(&sa.iter().collect::<Vec<_>>()) - corpus_score(&sb.iter().collect::<Vec<_>>());
    let hits: usize = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let mut r = rng.child(t as u64);
            let mut xa = BleuStats::default();
            let mut xb = BleuStats::default();
            for (a, b) in sa.iter().zip(&sb) {
                if r.uniform() < 0.5 {
                    xa.add(b);
                    xb.add(a);
                } else {
                    xa.add(a);
                    xb.add(b);
                }
            }
            let d = xa.score().score - xb.score().score;
            usize::from(d.abs() >= observed.abs() - TIE_EPS)
        })
        .sum();
    let p_value = (hits + 1) as f64 / (cfg.trials + 1) as f64;
    Ok(SignificanceResult {
        p_value,
        significant: p_value < cfg.alpha,
        trials: cfg.trials,
        observed_delta: observed,
    })
}
