//! Byte-pair-encoding subwords with a suffix word-end marker.
//!
//! A word `abc` starts as the symbols `a b c</w>`; the marker is glued to the
//! last character so that undoing the segmentation only needs to split after
//! symbols carrying it.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::corpus::{Monotext, Sentence, Vocabulary};
use crate::error::{Error, Result};

pub const DEFAULT_MARKER: &str = "</w>";
const HEADER: &str = "#bpe-merges v1";

/// Ordered merge operations. Order is significant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MergeTable {
    merges: Vec<(String, String)>,
    marker: String,
    ranks: HashMap<(String, String), usize>,
}

impl MergeTable {
    pub fn new(merges: Vec<(String, String)>, marker: impl Into<String>) -> Result<Self> {
        let marker = marker.into();
        if marker.is_empty() || marker.chars().any(char::is_whitespace) {
            return Err(Error::format("merge table", "bad word-end marker"));
        }
        let mut ranks = HashMap::with_capacity(merges.len());
        for (i, (l, r)) in merges.iter().enumerate() {
            if l.is_empty() || r.is_empty() || *r == marker || *l == marker {
                return Err(Error::format("merge table", format!("bad merge {l:?} {r:?}")));
            }
            ranks.entry((l.clone(), r.clone())).or_insert(i);
        }
        Ok(Self { merges, marker, ranks })
    }

    pub fn empty() -> Self {
        Self::new(Vec::new(), DEFAULT_MARKER).expect("default marker is valid")
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn marker(&self) -> &str {
        &self.marker
    }

    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    /// First `n` merges only.
    pub fn truncated(&self, n: usize) -> MergeTable {
        let n = n.min(self.merges.len());
        Self::new(self.merges[..n].to_vec(), self.marker.clone()).expect("prefix of a valid table")
    }

    fn initial_symbols(&self, word: &str) -> Vec<String> {
        let chars: Vec<char> = word.chars().collect();
        let mut out: Vec<String> = chars.iter().map(|c| c.to_string()).collect();
        if let Some(last) = out.last_mut() {
            last.push_str(&self.marker);
        }
        out
    }

    /// Segments one word, applying merges in table order.
    pub fn segment_word(&self, word: &str) -> Vec<String> {
        let mut syms = self.initial_symbols(word);
        // Skipping straight to the lowest-ranked present pair is equivalent to
        // walking the whole table: absent pairs are no-ops, and a pair that
        // only appears after merge r can only be applied if its rank exceeds r.
        let mut next_rank = 0usize;
        loop {
            let mut best: Option<usize> = None;
            for w in syms.windows(2) {
                if let Some(&r) = self.ranks.get(&(w[0].clone(), w[1].clone())) {
                    if r >= next_rank && best.is_none_or(|b| r < b) {
                        best = Some(r);
                    }
                }
            }
            let Some(rank) = best else { break };
            let (l, r) = &self.merges[rank];
            let mut merged = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == *l && syms[i + 1] == *r {
                    merged.push(format!("{l}{r}"));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut syms[i]));
                    i += 1;
                }
            }
            syms = merged;
            next_rank = rank + 1;
        }
        syms
    }

    /// Segments a whitespace-tokenized line.
    pub fn segment_line(&self, line: &str) -> Vec<String> {
        line.split_whitespace().flat_map(|w| self.segment_word(w)).collect()
    }

    /// Joins subwords back into words, splitting after each symbol that ends
    /// with the marker. A trailing fragment without the marker becomes a word.
    pub fn join<S: AsRef<str>>(&self, subwords: &[S]) -> Vec<String> {
        let mut words = Vec::new();
        let mut cur = String::new();
        for s in subwords {
            let s = s.as_ref();
            match s.strip_suffix(self.marker.as_str()) {
                Some(stem) => {
                    cur.push_str(stem);
                    words.push(std::mem::take(&mut cur));
                }
                None => cur.push_str(s),
            }
        }
        if !cur.is_empty() {
            words.push(cur);
        }
        words
    }

    /// Subword vocabulary covering `alphabet` (bare and marker-final forms) plus every merge product.
    pub fn vocabulary(&self, alphabet: &BTreeSet<char>) -> Result<Vocabulary> {
        let mut seen = HashSet::new();
        let mut tokens = Vec::new();
        let mut push = |t: String| {
            if seen.insert(t.clone()) {
                tokens.push(t);
            }
        };
        for c in alphabet {
            push(c.to_string());
            push(format!("{c}{}", self.marker));
        }
        for (l, r) in &self.merges {
            push(format!("{l}{r}"));
        }
        Vocabulary::new(tokens)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{HEADER} marker={}\n", self.marker);
        for (l, r) in &self.merges {
            out.push_str(l);
            out.push(' ');
            out.push_str(r);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::format("merge table", "missing header"))?;
        let marker = header
            .strip_prefix(HEADER)
            .and_then(|rest| rest.trim().strip_prefix("marker="))
            .ok_or_else(|| Error::format("merge table", format!("bad header {header:?}")))?;
        let mut merges = Vec::new();
        for (i, line) in lines.enumerate() {
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    merges.push((l.to_string(), r.to_string()))
                }
                _ => {
                    return Err(Error::format(
                        "merge table",
                        format!("line {}: expected \"left right\"", i + 2),
                    ))
                }
            }
        }
        Self::new(merges, marker)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Learns `num_merges` merges over the words of all corpora together.
///
/// Greedy: each step merges the most frequent adjacent symbol pair; ties go to
/// the lexicographically smallest pair. Stops early when no pair is left.
pub fn learn_bpe(corpora: &[&Monotext], num_merges: usize) -> Result<MergeTable> {
    let mut freq: HashMap<&str, u64> = HashMap::new();
    for m in corpora {
        for s in &m.sentences {
            for &w in s.words() {
                *freq.entry(m.vocab.token(w)).or_default() += 1;
            }
        }
    }
    if freq.is_empty() {
        return Err(Error::Empty("corpus for BPE learning"));
    }
    let mut words: Vec<(&str, u64)> = freq.into_iter().collect();
    words.sort_unstable();
    learn_from_counts(words.iter().map(|&(w, c)| (w.to_string(), c)).collect(), num_merges)
}

/// Same as [`learn_bpe`] over plain word counts.
pub fn learn_from_counts(word_counts: Vec<(String, u64)>, num_merges: usize) -> Result<MergeTable> {
    if word_counts.is_empty() {
        return Err(Error::Empty("corpus for BPE learning"));
    }
    let init = MergeTable::empty();
    let mut words: Vec<(Vec<String>, i64)> = word_counts
        .iter()
        .map(|(w, c)| (init.initial_symbols(w), *c as i64))
        .collect();

    type Pair = (String, String);
    let mut counts: HashMap<Pair, i64> = HashMap::new();
    let mut where_: HashMap<Pair, BTreeSet<usize>> = HashMap::new();
    for (wi, (syms, c)) in words.iter().enumerate() {
        for p in syms.windows(2) {
            let key = (p[0].clone(), p[1].clone());
            *counts.entry(key.clone()).or_default() += c;
            where_.entry(key).or_default().insert(wi);
        }
    }

    let mut merges = Vec::with_capacity(num_merges);
    while merges.len() < num_merges {
        let best = counts
            .iter()
            .filter(|(_, &c)| c > 0)
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)))
            .map(|(p, _)| p.clone());
        let Some(best) = best else { break };
        let affected: Vec<usize> = where_
            .get(&best)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default();
        let joined = format!("{}{}", best.0, best.1);
        for wi in affected {
            let (syms, c) = &mut words[wi];
            let c = *c;
            if !syms.windows(2).any(|w| w[0] == best.0 && w[1] == best.1) {
                continue;
            }
            for p in syms.windows(2) {
                *counts.get_mut(&(p[0].clone(), p[1].clone())).unwrap() -= c;
            }
            let mut merged = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == best.0 && syms[i + 1] == best.1 {
                    merged.push(joined.clone());
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut syms[i]));
                    i += 1;
                }
            }
            *syms = merged;
            for p in syms.windows(2) {
                let key = (p[0].clone(), p[1].clone());
                *counts.entry(key.clone()).or_default() += c;
                where_.entry(key).or_default().insert(wi);
            }
        }
        counts.remove(&best);
        merges.push(best);
    }
    MergeTable::new(merges, DEFAULT_MARKER)
}

/// Re-segments a word-level sentence into subword ids.
pub fn apply_bpe(
    sentence: &Sentence,
    word_vocab: &Vocabulary,
    table: &MergeTable,
    subword_vocab: &Vocabulary,
) -> Result<Sentence> {
    let mut ids = Vec::new();
    for &w in sentence.words() {
        for sym in table.segment_word(word_vocab.token(w)) {
            let id = subword_vocab
                .id(&sym)
                .filter(|&i| i != subword_vocab.eos_id())
                .ok_or(Error::UnknownToken { token: sym })?;
            ids.push(id);
        }
    }
    subword_vocab.sentence(&ids)
}

/// Joins a subword sentence back into surface words.
pub fn undo_bpe(sentence: &Sentence, subword_vocab: &Vocabulary, table: &MergeTable) -> Vec<String> {
    let subs: Vec<&str> = sentence.words().iter().map(|&i| subword_vocab.token(i)).collect();
    table.join(&subs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn mono(lines: &[&str]) -> Monotext {
        let v = Arc::new(Vocabulary::from_lines(lines.iter().copied()).unwrap());
        let sents = lines
            .iter()
            .map(|l| v.encode(l, crate::corpus::OovPolicy::Strict).unwrap())
            .collect();
        Monotext::new(sents, v)
    }

    fn pair(l: &str, r: &str) -> (String, String) {
        (l.to_string(), r.to_string())
    }

    #[test]
    fn two_ab_words_merge_a_with_marked_b() {
        let t = learn_bpe(&[&mono(&["ab", "ab"])], 1).unwrap();
        assert_eq!(t.merges(), &[pair("a", "b</w>")]);
    }

    #[test]
    fn zero_merges_is_empty() {
        assert!(learn_bpe(&[&mono(&["ab cd"])], 0).unwrap().is_empty());
    }

    #[test]
    fn single_char_word_has_nothing_to_learn() {
        let t = learn_bpe(&[&mono(&["a"])], 5).unwrap();
        assert!(t.len() <= 1);
        assert_eq!(t.segment_word("a"), vec!["a</w>"]);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let v = Arc::new(Vocabulary::new(Vec::<String>::new()).unwrap());
        let m = Monotext::new(vec![], v);
        assert!(matches!(learn_bpe(&[&m], 3), Err(Error::Empty(_))));
    }

    #[test]
    fn ties_break_lexicographically() {
        // "ab" and "cd" once each: (a,b</w>) < (c,d</w>)
        let t = learn_bpe(&[&mono(&["cd ab"])], 1).unwrap();
        assert_eq!(t.merges(), &[pair("a", "b</w>")]);
    }

    #[test]
    fn frequency_counts_word_multiplicity() {
        // "xyz" x3 vs "ab" x2: (x,y) and (y,z</w>) at 3 beat (a,b</w>) at 2
        let t = learn_bpe(&[&mono(&["xyz xyz ab", "xyz ab"])], 2).unwrap();
        assert_eq!(t.merges(), &[pair("x", "y"), pair("xy", "z</w>")]);
        assert_eq!(t.segment_word("xyz"), vec!["xyz</w>"]);
        assert_eq!(t.segment_word("ab"), vec!["a", "b</w>"]);
    }

    #[test]
    fn empty_table_segments_characters() {
        let t = MergeTable::empty();
        assert_eq!(t.segment_line("ab c"), vec!["a", "b</w>", "c</w>"]);
    }

    #[test]
    fn apply_one_merge_to_ab_ab() {
        let m = mono(&["ab ab"]);
        let t = MergeTable::new(vec![pair("a", "b</w>")], DEFAULT_MARKER).unwrap();
        let alphabet: BTreeSet<char> = "ab".chars().collect();
        let sv = t.vocabulary(&alphabet).unwrap();
        let s = apply_bpe(&m.sentences[0], &m.vocab, &t, &sv).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.ids()[0], s.ids()[1]);
        assert_eq!(sv.token(s.ids()[0]), "ab</w>");
        assert_eq!(undo_bpe(&s, &sv, &t), vec!["ab", "ab"]);
    }

    #[test]
    fn fully_merged_word_is_one_token() {
        let t = learn_bpe(&[&mono(&["hello hello"])], 10).unwrap();
        assert_eq!(t.segment_word("hello"), vec!["hello</w>"]);
    }

    #[test]
    fn join_keeps_trailing_fragment() {
        let t = MergeTable::empty();
        assert_eq!(t.join(&["abc</w>"]), vec!["abc"]);
        assert_eq!(t.join(&["ab", "c</w>", "de"]), vec!["abc", "de"]);
    }

    #[test]
    fn text_format_round_trip_and_errors() {
        let t = learn_bpe(&[&mono(&["abab cabc abba"])], 4).unwrap();
        let back = MergeTable::parse(&t.to_text()).unwrap();
        assert_eq!(back, t);
        assert!(t.to_text().starts_with("#bpe-merges v1 marker=</w>\n"));
        assert!(MergeTable::parse("nonsense\n").is_err());
        assert!(MergeTable::parse("#bpe-merges v1 marker=</w>\na b c\n").is_err());
    }

    #[test]
    fn sequential_application_reproduces_learned_segmentation() {
        let lines = ["lower lowest newer newest wider", "low lower new wide"];
        let t = learn_bpe(&[&mono(&lines)], 12).unwrap();
        // naive reference: walk the full table in order
        for w in ["lower", "lowest", "newer", "wider", "low", "widest"] {
            let mut syms = t.initial_symbols(w);
            for (l, r) in t.merges() {
                let mut out = Vec::new();
                let mut i = 0;
                while i < syms.len() {
                    if i + 1 < syms.len() && syms[i] == *l && syms[i + 1] == *r {
                        out.push(format!("{l}{r}"));
                        i += 2;
                    } else {
                        out.push(syms[i].clone());
                        i += 1;
                    }
                }
                syms = out;
            }
            assert_eq!(t.segment_word(w), syms, "{w}");
        }
    }

    proptest! {
        #[test]
        fn undo_inverts_apply(words in prop::collection::vec("[a-e]{1,6}", 1..8), n in 0usize..20) {
            let line = words.join(" ");
            let m = mono(&[line.as_str()]);
            let t = learn_bpe(&[&m], n).unwrap();
            let alphabet: BTreeSet<char> = line.chars().filter(|c| !c.is_whitespace()).collect();
            let sv = t.vocabulary(&alphabet).unwrap();
            let s = apply_bpe(&m.sentences[0], &m.vocab, &t, &sv).unwrap();
            prop_assert_eq!(undo_bpe(&s, &sv, &t), words);
        }

        #[test]
        fn learning_is_deterministic_and_longer_tables_never_grow_words(
            words in prop::collection::vec("[a-d]{1,7}", 1..12), n in 1usize..15
        ) {
            let line = words.join(" ");
            let m = mono(&[line.as_str()]);
            let t1 = learn_bpe(&[&m], n).unwrap();
            let t2 = learn_bpe(&[&m], n).unwrap();
            prop_assert_eq!(&t1, &t2);
            for k in 0..t1.len() {
                let shorter = t1.truncated(k);
                let longer = t1.truncated(k + 1);
                for w in &words {
                    prop_assert!(longer.segment_word(w).len() <= shorter.segment_word(w).len());
                }
            }
        }
    }
}
