//! Sentences, vocabularies, monotexts and bitexts, plus the plain-text corpus
//! format: UTF-8, one sentence per line, tokens separated by single spaces,
//! EOS implicit (appended on load, stripped on write).

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use log::warn;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::subword::DEFAULT_MARKER;

pub const EOS: &str = "</s>";

/// Finite alphabet plus the distinguished EOS symbol, which always sits at index 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    eos_id: usize,
}

impl Vocabulary {
    /// Builds a vocabulary from tokens (EOS must not be among them).
    pub fn new<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all = vec![EOS.to_string()];
        let mut index = HashMap::new();
        index.insert(EOS.to_string(), 0);
        for t in tokens {
            let t = t.into();
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::InvalidVocabulary(format!("bad token {t:?}")));
            }
            if index.contains_key(&t) {
                return Err(Error::InvalidVocabulary(format!("duplicate token {t:?}")));
            }
            index.insert(t.clone(), all.len());
            all.push(t);
        }
        Ok(Self {
            tokens: all,
            index,
            eos_id: 0,
        })
    }

    /// Collects the distinct whitespace-separated tokens of `lines` in order of first appearance.
    pub fn from_lines<'a>(lines: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        let mut tokens = Vec::new();
        for line in lines {
            for t in line.split_whitespace() {
                if t != EOS && seen.insert(t) {
                    tokens.push(t.to_string());
                }
            }
        }
        Self::new(tokens)
    }

    /// One token per line, EOS excluded.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(text.lines().map(str::trim).filter(|l| !l.is_empty()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for t in &self.tokens[1..] {
            out.push_str(t);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn eos_id(&self) -> usize {
        self.eos_id
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Hex SHA-256 over the token list; recorded in checkpoints and manifests.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex(&h.finalize())
    }

    /// Wraps word ids into a sentence, appending EOS.
    pub fn sentence(&self, words: &[usize]) -> Result<Sentence> {
        let mut ids = Vec::with_capacity(words.len() + 1);
        ids.extend_from_slice(words);
        ids.push(self.eos_id);
        Sentence::new(ids, self)
    }

    /// Encodes a whitespace-tokenized line.
    pub fn encode(&self, line: &str, oov: OovPolicy) -> Result<Sentence> {
        let mut ids = Vec::new();
        for tok in line.split_whitespace() {
            match self.id(tok) {
                Some(id) if id != self.eos_id => ids.push(id),
                Some(_) => return Err(Error::InvalidSentence("EOS marker inside corpus text".into())),
                None => match oov {
                    OovPolicy::Strict => return Err(Error::UnknownToken { token: tok.to_string() }),
                    OovPolicy::CharFallback => {
                        for piece in char_pieces(tok) {
                            match self.id(&piece) {
                                Some(id) if id != self.eos_id => ids.push(id),
                                _ => return Err(Error::UnknownToken { token: tok.to_string() }),
                            }
                        }
                    }
                },
            }
        }
        self.sentence(&ids)
    }

    /// Renders a sentence as space-separated tokens without EOS.
    pub fn decode(&self, s: &Sentence) -> String {
        s.words()
            .iter()
            .map(|&i| self.tokens[i].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn char_pieces(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    chars
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if i + 1 == chars.len() {
                format!("{c}{DEFAULT_MARKER}")
            } else {
                c.to_string()
            }
        })
        .collect()
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// How the loaders treat surface tokens missing from the vocabulary.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OovPolicy {
    /// Unknown tokens are an error.
    Strict,
    /// Unknown words are split into character subwords (last character carries
    /// the word-end marker); an error only if those are unknown too.
    #[default]
    CharFallback,
}

/// Token ids ending in exactly one EOS.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sentence(Vec<usize>);

impl Sentence {
    pub fn new(ids: Vec<usize>, vocab: &Vocabulary) -> Result<Self> {
        let eos = vocab.eos_id();
        match ids.last() {
            None => return Err(Error::InvalidSentence("empty".into())),
            Some(&l) if l != eos => return Err(Error::InvalidSentence("missing final EOS".into())),
            _ => {}
        }
        if ids[..ids.len() - 1].contains(&eos) {
            return Err(Error::InvalidSentence("EOS before the end".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab.len()) {
            return Err(Error::InvalidSentence(format!(
                "token id {bad} outside vocabulary of size {}",
                vocab.len()
            )));
        }
        Ok(Self(ids))
    }

    /// Skips validation; callers guarantee the EOS invariant.
    pub(crate) fn from_ids_unchecked(ids: Vec<usize>) -> Self {
        Self(ids)
    }

    /// All ids, EOS included.
    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    /// Ids without the trailing EOS.
    pub fn words(&self) -> &[usize] {
        &self.0[..self.0.len() - 1]
    }

    /// Length including EOS.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_valid(&self, vocab: &Vocabulary) -> bool {
        Sentence::new(self.0.clone(), vocab).is_ok()
    }
}

/// Unaligned single-language corpus; duplicates are kept.
#[derive(Clone, Debug)]
pub struct Monotext {
    pub sentences: Vec<Sentence>,
    pub vocab: Arc<Vocabulary>,
}

impl Monotext {
    pub fn new(sentences: Vec<Sentence>, vocab: Arc<Vocabulary>) -> Self {
        Self { sentences, vocab }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.sentences {
            out.push_str(&self.vocab.decode(s));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Provenance of a bitext. Only informational.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Observed,
    Back,
    Dreamt,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Observed => "observed",
            Role::Back => "back",
            Role::Dreamt => "dreamt",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Aligned (source, target) pairs.
#[derive(Clone, Debug)]
pub struct Bitext {
    pub pairs: Vec<(Sentence, Sentence)>,
    pub src_vocab: Arc<Vocabulary>,
    pub trg_vocab: Arc<Vocabulary>,
    pub role: Role,
}

impl Bitext {
    pub fn new(
        pairs: Vec<(Sentence, Sentence)>,
        src_vocab: Arc<Vocabulary>,
        trg_vocab: Arc<Vocabulary>,
        role: Role,
    ) -> Self {
        Self {
            pairs,
            src_vocab,
            trg_vocab,
            role,
        }
    }

    pub fn empty(src_vocab: Arc<Vocabulary>, trg_vocab: Arc<Vocabulary>, role: Role) -> Self {
        Self::new(Vec::new(), src_vocab, trg_vocab, role)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Same pairs with source and target exchanged.
    pub fn reversed(&self) -> Bitext {
        Bitext {
            pairs: self.pairs.iter().map(|(s, t)| (t.clone(), s.clone())).collect(),
            src_vocab: self.trg_vocab.clone(),
            trg_vocab: self.src_vocab.clone(),
            role: self.role,
        }
    }

    pub fn sources(&self) -> Monotext {
        Monotext::new(
            self.pairs.iter().map(|(s, _)| s.clone()).collect(),
            self.src_vocab.clone(),
        )
    }

    pub fn targets(&self) -> Monotext {
        Monotext::new(
            self.pairs.iter().map(|(_, t)| t.clone()).collect(),
            self.trg_vocab.clone(),
        )
    }

    pub fn write(&self, src_path: &Path, trg_path: &Path) -> Result<()> {
        self.sources().write(src_path)?;
        self.targets().write(trg_path)
    }
}

/// Multiset concatenation, `a`'s pairs first. Mixed roles collapse to `Observed`.
pub fn union(a: &Bitext, b: &Bitext) -> Result<Bitext> {
    if a.src_vocab != b.src_vocab || a.trg_vocab != b.trg_vocab {
        return Err(Error::VocabularyMismatch(
            "union of bitexts over different vocabularies".into(),
        ));
    }
    let mut pairs = Vec::with_capacity(a.len() + b.len());
    pairs.extend(a.pairs.iter().cloned());
    pairs.extend(b.pairs.iter().cloned());
    let role = if a.role == b.role { a.role } else { Role::Observed };
    Ok(Bitext::new(pairs, a.src_vocab.clone(), a.trg_vocab.clone(), role))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Vec::new();
    for (i, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        let line = std::str::from_utf8(raw).map_err(|_| Error::InvalidUtf8 {
            path: path.to_path_buf(),
            line: i + 1,
        })?;
        lines.push(line.to_string());
    }
    // a trailing newline yields one empty final piece
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        lines.pop();
    }
    Ok(lines)
}

/// Result of parsing a monotext: the corpus plus the 1-based numbers of skipped blank lines.
#[derive(Debug)]
pub struct MonotextLoad {
    pub monotext: Monotext,
    pub skipped_blank: Vec<usize>,
}

pub fn parse_monotext<S: AsRef<str>>(lines: &[S], vocab: Arc<Vocabulary>, oov: OovPolicy) -> Result<MonotextLoad> {
    let mut sentences = Vec::with_capacity(lines.len());
    let mut skipped = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        let line = line.as_ref();
        if line.trim().is_empty() {
            warn!("skipping blank monotext line {}", i + 1);
            skipped.push(i + 1);
            continue;
        }
        sentences.push(vocab.encode(line, oov)?);
    }
    Ok(MonotextLoad {
        monotext: Monotext::new(sentences, vocab),
        skipped_blank: skipped,
    })
}

pub fn load_monotext(path: &Path, vocab: Arc<Vocabulary>, oov: OovPolicy) -> Result<Monotext> {
    let lines = read_lines(path)?;
    Ok(parse_monotext(&lines, vocab, oov)?.monotext)
}

pub fn parse_bitext<S: AsRef<str>>(
    src_lines: &[S],
    trg_lines: &[S],
    src_vocab: Arc<Vocabulary>,
    trg_vocab: Arc<Vocabulary>,
    oov: OovPolicy,
) -> Result<Bitext> {
    if src_lines.len() != trg_lines.len() {
        return Err(Error::LineCountMismatch {
            src: src_lines.len(),
            trg: trg_lines.len(),
        });
    }
    let mut pairs = Vec::with_capacity(src_lines.len());
    for (i, (s, t)) in src_lines.iter().zip(trg_lines).enumerate() {
        let (s, t) = (s.as_ref(), t.as_ref());
        if s.trim().is_empty() || t.trim().is_empty() {
            return Err(Error::BlankBitextLine { line: i + 1 });
        }
        pairs.push((src_vocab.encode(s, oov)?, trg_vocab.encode(t, oov)?));
    }
    Ok(Bitext::new(pairs, src_vocab, trg_vocab, Role::Observed))
}

pub fn load_bitext(
    src_path: &Path,
    trg_path: &Path,
    src_vocab: Arc<Vocabulary>,
    trg_vocab: Arc<Vocabulary>,
    oov: OovPolicy,
) -> Result<Bitext> {
    let src = read_lines(src_path)?;
    let trg = read_lines(trg_path)?;
    parse_bitext(&src, &trg, src_vocab, trg_vocab, oov)
}

/// Hex SHA-256 of a file's bytes.
pub fn file_checksum(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}
