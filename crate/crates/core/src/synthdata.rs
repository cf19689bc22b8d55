//! Seeded synthetic translation tasks.
//!
//! Source sentences come from a Zipfian unigram process over pseudo-words;
//! targets are a bijective word substitution of the source, optionally
//! followed by swapping tokens (2k, 2k+1). All splits are pairwise disjoint
//! as sets of source sentences.

use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{file_checksum, Bitext, Monotext, Role, Sentence, Vocabulary};
use crate::error::{Error, Result};
use crate::rng::RngStream;

pub const ZIPF_EXPONENT: f64 = 1.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    SubstitutionCipher,
    CipherWithLocalReorder,
}

impl TaskKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "substitution_cipher" => Ok(TaskKind::SubstitutionCipher),
            "cipher_with_local_reorder" => Ok(TaskKind::CipherWithLocalReorder),
            _ => Err(Error::Config(format!("unknown task kind {s:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::SubstitutionCipher => "substitution_cipher",
            TaskKind::CipherWithLocalReorder => "cipher_with_local_reorder",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Words per side; the cipher is a bijection so both sides share it.
    pub vocab_size: usize,
    /// Inclusive sentence-length range in words.
    pub min_len: usize,
    pub max_len: usize,
    pub train: usize,
    pub mono_src: usize,
    pub mono_trg: usize,
    pub dev: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            kind: TaskKind::CipherWithLocalReorder,
            vocab_size: 50,
            min_len: 3,
            max_len: 8,
            train: 1000,
            mono_src: 5000,
            mono_trg: 5000,
            dev: 500,
            test: 500,
            seed: 1,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config("need vocab_size ≥ 1 and 1 ≤ min_len ≤ max_len".into()));
        }
        Ok(())
    }

    fn total(&self) -> usize {
        self.train + self.mono_src + self.mono_trg + self.dev + self.test
    }

    /// Number of distinct sentences the length range allows, saturating.
    pub fn sentence_space(&self) -> u128 {
        let mut total: u128 = 0;
        for len in self.min_len..=self.max_len {
            let n = (self.vocab_size as u128).checked_pow(len as u32).unwrap_or(u128::MAX);
            total = total.saturating_add(n);
        }
        total
    }
}

#[derive(Clone, Debug)]
pub struct SynthTask {
    pub spec: TaskSpec,
    pub src_vocab: Arc<Vocabulary>,
    pub trg_vocab: Arc<Vocabulary>,
    /// Source word id → target word id (EOS maps to EOS).
    pub mapping: Vec<usize>,
    pub train: Bitext,
    pub mono_src: Monotext,
    pub mono_trg: Monotext,
    pub dev: Bitext,
    pub test: Bitext,
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// `n` distinct consonant-vowel pseudo-words with `syllables` syllables,
/// none of which is in `taken`.
fn pseudo_words(n: usize, syllables: usize, taken: &HashSet<String>, rng: &mut RngStream) -> Result<Vec<String>> {
    let space = (CONSONANTS.len() * VOWELS.len()).pow(syllables as u32);
    if n + taken.len() > space {
        return Err(Error::Infeasible(format!("{n} pseudo-words of {syllables} syllables")));
    }
    let mut seen = taken.clone();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut w = String::with_capacity(2 * syllables);
        for _ in 0..syllables {
            w.push(CONSONANTS[rng.below(CONSONANTS.len() as u64) as usize] as char);
            w.push(VOWELS[rng.below(VOWELS.len() as u64) as usize] as char);
        }
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    Ok(out)
}

impl SynthTask {
    /// Ground-truth translation of a source sentence.
    pub fn translate(&self, x: &Sentence) -> Sentence {
        translate_ids(x, &self.mapping, self.spec.kind)
    }
}

fn translate_ids(x: &Sentence, mapping: &[usize], kind: TaskKind) -> Sentence {
    let mut words: Vec<usize> = x.words().iter().map(|&w| mapping[w]).collect();
    if kind == TaskKind::CipherWithLocalReorder {
        for pair in words.chunks_exact_mut(2) {
            pair.swap(0, 1);
        }
    }
    words.push(0);
    Sentence::from_ids_unchecked(words)
}

pub fn generate_task(spec: &TaskSpec) -> Result<SynthTask> {
    spec.validate()?;
    if spec.sentence_space() < spec.total() as u128 {
        return Err(Error::Infeasible(format!(
            "{} disjoint sentences requested but only {} exist",
            spec.total(),
            spec.sentence_space()
        )));
    }
    let root = RngStream::from_seed(spec.seed);
    let mut wr = root.derive("words");
    let src_words = pseudo_words(spec.vocab_size, 2, &HashSet::new(), &mut wr)?;
    let trg_words = pseudo_words(spec.vocab_size, 3, &HashSet::new(), &mut wr)?;
    let src_vocab = Arc::new(Vocabulary::new(src_words)?);
    let trg_vocab = Arc::new(Vocabulary::new(trg_words)?);

    let mut perm: Vec<usize> = (1..=spec.vocab_size).collect();
    root.derive("cipher").shuffle(&mut perm);
    let mapping: Vec<usize> = std::iter::once(0).chain(perm).collect();

    // Zipf over word ranks; word id r + 1 has rank r
    let weights: Vec<f64> = (0..spec.vocab_size)
        .map(|r| 1.0 / ((r + 1) as f64).powf(ZIPF_EXPONENT))
        .collect();
    let mut sr = root.derive("sentences");
    let mut seen: HashSet<Vec<usize>> = HashSet::with_capacity(spec.total());
    let mut draw = |count: usize| -> Result<Vec<Sentence>> {
        let mut out = Vec::with_capacity(count);
        let budget = 1000 * count + 100_000;
        let mut attempts = 0;
        while out.len() < count {
            attempts += 1;
            if attempts > budget {
                return Err(Error::Infeasible(
                    "could not draw enough distinct sentences; widen the length range or vocabulary".into(),
                ));
            }
            let span = (spec.max_len - spec.min_len + 1) as u64;
            let len = spec.min_len + sr.below(span) as usize;
            let mut ids: Vec<usize> = (0..len).map(|_| sr.categorical(&weights) + 1).collect();
            ids.push(0);
            if seen.insert(ids.clone()) {
                out.push(Sentence::from_ids_unchecked(ids));
            }
        }
        Ok(out)
    };
    let train_src = draw(spec.train)?;
    let dev_src = draw(spec.dev)?;
    let test_src = draw(spec.test)?;
    let mono_src = draw(spec.mono_src)?;
    let mono_trg_src = draw(spec.mono_trg)?;

    let bitext = |xs: Vec<Sentence>| {
        let pairs = xs
            .into_iter()
            .map(|x| {
                let y = translate_ids(&x, &mapping, spec.kind);
                (x, y)
            })
            .collect();
        Bitext::new(pairs, src_vocab.clone(), trg_vocab.clone(), Role::Observed)
    };
    let train = bitext(train_src);
    let dev = bitext(dev_src);
    let test = bitext(test_src);
    let mono_trg = Monotext::new(
        mono_trg_src
            .iter()
            .map(|x| translate_ids(x, &mapping, spec.kind))
            .collect(),
        trg_vocab.clone(),
    );
    Ok(SynthTask {
        spec: spec.clone(),
        mono_src: Monotext::new(mono_src, src_vocab.clone()),
        src_vocab,
        trg_vocab,
        mapping,
        train,
        mono_trg,
        dev,
        test,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskManifest {
    pub spec: TaskSpec,
    /// (file name, hex SHA-256) in write order.
    pub files: Vec<(String, String)>,
}

pub const TASK_FILES: [&str; 12] = [
    "vocab.src",
    "vocab.trg",
    "train.src",
    "train.trg",
    "mono.src",
    "mono.trg",
    "dev.src",
    "dev.trg",
    "test.src",
    "test.trg",
    "mapping.tsv",
    "manifest.json",
];

impl SynthTask {
    /// Writes every split as plain text plus `manifest.json` with checksums.
    pub fn write(&self, dir: &Path) -> Result<TaskManifest> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.src_vocab.save(&dir.join("vocab.src"))?;
        self.trg_vocab.save(&dir.join("vocab.trg"))?;
        self.train.write(&dir.join("train.src"), &dir.join("train.trg"))?;
        self.mono_src.write(&dir.join("mono.src"))?;
        self.mono_trg.write(&dir.join("mono.trg"))?;
        self.dev.write(&dir.join("dev.src"), &dir.join("dev.trg"))?;
        self.test.write(&dir.join("test.src"), &dir.join("test.trg"))?;
        let mut map = String::new();
        for (s, &t) in self.mapping.iter().enumerate().skip(1) {
            map.push_str(&format!("{}\t{}\n", self.src_vocab.token(s), self.trg_vocab.token(t)));
        }
        let p = dir.join("mapping.tsv");
        fs::write(&p, map).map_err(|e| Error::io(&p, e))?;
        let mut files = Vec::new();
        for name in &TASK_FILES[..TASK_FILES.len() - 1] {
            files.push((name.to_string(), file_checksum(&dir.join(name))?));
        }
        let manifest = TaskManifest {
            spec: self.spec.clone(),
            files,
        };
        let p = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&p, json + "\n").map_err(|e| Error::io(&p, e))?;
        Ok(manifest)
    }
}
