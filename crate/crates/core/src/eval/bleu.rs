//! Corpus BLEU-4 with exponential smoothing, after sacreBLEU's
//! `smooth.exp` / `tok.13a` configuration.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// Splits detokenized text into scoring tokens: spaces are inserted around
/// every character that is not alphanumeric, except `.`, `,` and `:` with a
/// digit on both sides.
pub fn tokenize_13a(line: &str, lowercase: bool) -> Vec<String> {
    let text = if lowercase {
        line.to_lowercase()
    } else {
        line.to_string()
    };
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len() + 8);
    for (i, &c) in chars.iter().enumerate() {
        let numeric_sep = matches!(c, '.' | ',' | ':')
            && i > 0
            && chars[i - 1].is_ascii_digit()
            && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit());
        if c.is_alphanumeric() || c.is_whitespace() || numeric_sep {
            out.push(c);
        } else {
            out.push(' ');
            out.push(c);
            out.push(' ');
        }
    }
    out.split_whitespace().map(str::to_string).collect()
}

/// Sufficient statistics of one or more sentence pairs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub hyp_len: usize,
    pub ref_len: usize,
    pub correct: [usize; MAX_ORDER],
    pub total: [usize; MAX_ORDER],
}

impl BleuStats {
    pub fn of_tokens<S: AsRef<str> + Eq + std::hash::Hash>(hyp: &[S], reference: &[S]) -> Self {
        let mut st = BleuStats {
            hyp_len: hyp.len(),
            ref_len: reference.len(),
            ..Default::default()
        };
        for n in 1..=MAX_ORDER {
            if hyp.len() < n {
                break;
            }
            let mut ref_counts: HashMap<&[S], usize> = HashMap::new();
            if reference.len() >= n {
                for g in reference.windows(n) {
                    *ref_counts.entry(g).or_default() += 1;
                }
            }
            st.total[n - 1] = hyp.len() + 1 - n;
            for g in hyp.windows(n) {
                if let Some(c) = ref_counts.get_mut(g) {
                    if *c > 0 {
                        *c -= 1;
                        st.correct[n - 1] += 1;
                    }
                }
            }
        }
        st
    }

    pub fn of_lines(hyp: &str, reference: &str, lowercase: bool) -> Self {
        Self::of_tokens(&tokenize_13a(hyp, lowercase), &tokenize_13a(reference, lowercase))
    }

    pub fn add(&mut self, o: &BleuStats) {
        self.hyp_len += o.hyp_len;
        self.ref_len += o.ref_len;
        for n in 0..MAX_ORDER {
            self.correct[n] += o.correct[n];
            self.total[n] += o.total[n];
        }
    }

    pub fn score(&self) -> BleuScore {
        let mut precisions = [0.0; MAX_ORDER];
        let mut smooth = 1.0;
        let bp = if self.hyp_len == 0 {
            0.0
        } else if self.hyp_len < self.ref_len {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        } else {
            1.0
        };
        for n in 0..MAX_ORDER {
            if self.total[n] == 0 {
                break;
            }
            precisions[n] = if self.correct[n] == 0 {
                smooth *= 2.0;
                1.0 / (smooth * self.total[n] as f64)
            } else {
                self.correct[n] as f64 / self.total[n] as f64
            };
        }
        let score = if self.hyp_len == 0 || precisions.contains(&0.0) {
            0.0
        } else {
            let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
            (100.0 * bp * log_mean.exp()).min(100.0)
        };
        BleuScore {
            score,
            precisions,
            brevity_penalty: bp,
            hyp_len: self.hyp_len,
            ref_len: self.ref_len,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BleuScore {
    /// In [0, 100].
    pub score: f64,
    /// Smoothed n-gram precisions in [0, 1].
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

/// Per-sentence statistics, for resampling tests.
pub fn sentence_stats<S: AsRef<str>>(hyps: &[S], refs: &[S], lowercase: bool) -> Result<Vec<BleuStats>> {
    if hyps.len() != refs.len() {
        return Err(Error::LengthMismatch {
            a: hyps.len(),
            b: refs.len(),
        });
    }
    if hyps.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    Ok(hyps
        .iter()
        .zip(refs)
        .map(|(h, r)| BleuStats::of_lines(h.as_ref(), r.as_ref(), lowercase))
        .collect())
}

/// Corpus BLEU of aligned detokenized lines, one reference each.
pub fn bleu<S: AsRef<str>>(hyps: &[S], refs: &[S], lowercase: bool) -> Result<BleuScore> {
    let mut total = BleuStats::default();
    for s in sentence_stats(hyps, refs, lowercase)? {
        total.add(&s);
    }
    Ok(total.score())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_rules() {
        assert_eq!(tokenize_13a("Hello, world!", false), ["Hello", ",", "world", "!"]);
        assert_eq!(
            tokenize_13a("3.14 and 1,000 at 10:30.", false),
            ["3.14", "and", "1,000", "at", "10:30", "."]
        );
        assert_eq!(tokenize_13a("a-b  C", true), ["a", "-", "b", "c"]);
        assert_eq!(tokenize_13a(".5", false), [".", "5"]);
    }

    #[test]
    fn identity_is_one_hundred() {
        let s = ["a b c d e", "f g"];
        assert_eq!(bleu(&s, &s, false).unwrap().score, 100.0);
    }

    #[test]
    fn hand_counted_example() {
        let b = bleu(&["a b c d e"], &["a b c d f"], false).unwrap();
        let expect = 100.0 * (0.8f64 * 0.75 * (2.0 / 3.0) * 0.5).powf(0.25);
        assert!((b.score - expect).abs() < 1e-9);
        assert!((b.score - 66.87).abs() < 0.01);
        assert_eq!(b.brevity_penalty, 1.0);
    }

    #[test]
    fn zero_overlap_is_positive_through_smoothing() {
        let b = bleu(&["a b c d"], &["e f g h"], false).unwrap();
        // totals 4, 3, 2, 1 with no matches: 1/(2·4), 1/(4·3), 1/(8·2), 1/(16·1)
        let expect = 100.0 * (1.0f64 / 8.0 * 1.0 / 12.0 * 1.0 / 16.0 * 1.0 / 16.0).powf(0.25);
        assert!((b.score - expect).abs() < 1e-9);
        assert!(b.score > 0.0);
    }

    #[test]
    fn brevity_penalty() {
        let b = bleu(&["a b"], &["a b c d"], false).unwrap();
        assert!((b.brevity_penalty - (1.0f64 - 2.0).exp()).abs() < 1e-12);
        assert_eq!(bleu(&[""], &["a"], false).unwrap().score, 0.0);
    }

    #[test]
    fn errors() {
        assert!(bleu(&["a"], &[], false).is_err());
        let empty: [&str; 0] = [];
        assert!(bleu(&empty, &empty, false).is_err());
    }

    #[test]
    fn clipped_counts() {
        let st = BleuStats::of_lines("the the the", "the cat", false);
        assert_eq!(st.correct[0], 1);
        assert_eq!(st.total[0], 3);
    }

    #[test]
    fn lowercase_flag() {
        assert_eq!(bleu(&["A B C D"], &["a b c d"], true).unwrap().score, 100.0);
        assert!(bleu(&["A B C D"], &["a b c d"], false).unwrap().score < 100.0);
    }
}
