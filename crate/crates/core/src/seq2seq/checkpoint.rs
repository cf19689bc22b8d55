//! Binary checkpoints.
//!
//! Layout: magic `BXCKPT`, format version (u16 LE), JSON header length (u64
//! LE), the JSON header, then every tensor as little-endian f64 in header
//! order. When the header lists optimizer state, the Adam first and second
//! moments follow, one tensor per parameter each.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{Direction, ModelConfig, ModelDims, Seq2Seq, PARAM_NAMES};
use crate::autodiff::{AdamConfig, AdamState, Tensor};
use crate::corpus::hex;
use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"BXCKPT";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct AdamHeader {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    direction: String,
    embed: usize,
    hidden: usize,
    attention: usize,
    max_len: usize,
    src_vocab: usize,
    trg_vocab: usize,
    src_vocab_hash: String,
    trg_vocab_hash: String,
    tensors: Vec<TensorEntry>,
    adam: Option<AdamHeader>,
}

/// A model plus, optionally, the optimizer state it was trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Seq2Seq,
    pub adam: Option<AdamState>,
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor) {
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn new(model: Seq2Seq, adam: Option<AdamState>) -> Self {
        Self { model, adam }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.model;
        let header = Header {
            direction: m.direction.as_str().to_string(),
            embed: m.config.dims.embed,
            hidden: m.config.dims.hidden,
            attention: m.config.dims.attention,
            max_len: m.config.dims.max_len,
            src_vocab: m.config.src_vocab,
            trg_vocab: m.config.trg_vocab,
            src_vocab_hash: m.src_vocab_hash.clone(),
            trg_vocab_hash: m.trg_vocab_hash.clone(),
            tensors: PARAM_NAMES
                .iter()
                .zip(&m.params)
                .map(|(n, t)| TensorEntry {
                    name: n.to_string(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
            adam: self.adam.as_ref().map(|a| AdamHeader {
                learning_rate: a.config.learning_rate,
                beta1: a.config.beta1,
                beta2: a.config.beta2,
                epsilon: a.config.epsilon,
                step: a.step,
            }),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(json.len() + 16 + 8 * m.num_parameters() * 3);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in &m.params {
            put_tensor(&mut out, t);
        }
        if let Some(a) = &self.adam {
            for t in a.m.iter().chain(&a.v) {
                put_tensor(&mut out, t);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |d: &str| Error::format("checkpoint", d);
        let mut cur = Reader { bytes, pos: 0 };
        if cur.take(6).ok_or_else(|| bad("truncated magic"))? != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u16::from_le_bytes(cur.array().ok_or_else(|| bad("truncated version"))?);
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let len = u64::from_le_bytes(cur.array().ok_or_else(|| bad("truncated header length"))?);
        let json = cur.take(len as usize).ok_or_else(|| bad("truncated header"))?;
        let h: Header = serde_json::from_slice(json).map_err(|e| bad(&e.to_string()))?;

        let config = ModelConfig {
            dims: ModelDims {
                embed: h.embed,
                hidden: h.hidden,
                attention: h.attention,
                max_len: h.max_len,
            },
            src_vocab: h.src_vocab,
            trg_vocab: h.trg_vocab,
        };
        let shapes = config.param_shapes();
        if h.tensors.len() != shapes.len() {
            return Err(bad("wrong tensor count"));
        }
        for ((entry, shape), name) in h.tensors.iter().zip(&shapes).zip(PARAM_NAMES) {
            if &entry.shape != shape || entry.name != name {
                return Err(bad(&format!("tensor {} does not match the model config", entry.name)));
            }
        }
        let read_all = |cur: &mut Reader| -> Result<Vec<Tensor>> {
            shapes
                .iter()
                .map(|s| {
                    let n: usize = s.iter().product();
                    let data = (0..n)
                        .map(|_| cur.array().map(f64::from_le_bytes))
                        .collect::<Option<Vec<f64>>>()
                        .ok_or_else(|| bad("truncated tensor data"))?;
                    Tensor::new(s.clone(), data)
                })
                .collect()
        };
        let params = read_all(&mut cur)?;
        let adam = match h.adam {
            None => None,
            Some(a) => Some(AdamState {
                config: AdamConfig {
                    learning_rate: a.learning_rate,
                    beta1: a.beta1,
                    beta2: a.beta2,
                    epsilon: a.epsilon,
                },
                step: a.step,
                m: read_all(&mut cur)?,
                v: read_all(&mut cur)?,
            }),
        };
        if cur.pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self {
            model: Seq2Seq {
                config,
                direction: Direction::parse(&h.direction)?,
                params,
                src_vocab_hash: h.src_vocab_hash,
                trg_vocab_hash: h.trg_vocab_hash,
            },
            adam,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn array<const N: usize>(&mut self) -> Option<[u8; N]> {
        self.take(N).map(|s| s.try_into().expect("length checked"))
    }
}

/// Hex SHA-256 of the model-only checkpoint bytes.
pub fn model_hash(model: &Seq2Seq) -> String {
    hex(&Sha256::digest(Checkpoint::new(model.clone(), None).to_bytes()))
}
