//! Experiment configuration as flat `section.key = value` text.
//!
//! Lines starting with `#` are comments. Every key has a default except
//! `seed`. `to_text` lists every key in sorted order, so a written config is
//! a complete snapshot that parses back to the same value.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::autodiff::{AdamConfig, TrainHyper};
use crate::error::{Error, Result};
use crate::eval::SignificanceConfig;
use crate::seq2seq::{DecodeMode, ModelDims};
use crate::synthdata::{TaskKind, TaskSpec};
use crate::wakesleep::{SleepVariant, WakeSleepConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Directory in the synthetic-task layout; `None` generates `task`.
    pub data_dir: Option<PathBuf>,
    pub src_label: String,
    pub trg_label: String,
    pub task: TaskSpec,
    /// Shared BPE merges learned on both sides of the training bitext; 0 keeps words.
    pub bpe_merges: usize,
    pub dims: ModelDims,
    pub hyper: TrainHyper,
    /// Epoch budget for the iteration-0 MLE models.
    pub initial_epochs: usize,
    pub wakesleep: WakeSleepConfig,
    pub beam_width: usize,
    pub significance: SignificanceConfig,
    pub run_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Desk-scale defaults for the given seed.
    pub fn desk(seed: u64) -> Self {
        let hyper = TrainHyper {
            batch_size: 20,
            chunk_size: 20,
            dropout: 0.2,
            max_epochs: 10,
            patience: 3,
            adam: AdamConfig {
                learning_rate: 3e-3,
                ..AdamConfig::default()
            },
            ..TrainHyper::default()
        };
        Self {
            seed,
            data_dir: None,
            src_label: "src-trg".into(),
            trg_label: "trg-src".into(),
            task: TaskSpec {
                min_len: 6,
                max_len: 20,
                seed,
                ..TaskSpec::default()
            },
            bpe_merges: 0,
            dims: ModelDims {
                embed: 24,
                hidden: 32,
                attention: 32,
                max_len: 30,
            },
            hyper: hyper.clone(),
            initial_epochs: 40,
            wakesleep: WakeSleepConfig {
                iterations: 3,
                hyper,
                seed,
                ..WakeSleepConfig::default()
            },
            beam_width: 10,
            significance: SignificanceConfig {
                trials: 1000,
                ..SignificanceConfig::default()
            },
            run_dir: None,
        }
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        let h = &self.hyper;
        put("seed", self.seed.to_string());
        put(
            "data.dir",
            self.data_dir
                .as_ref()
                .map_or(String::new(), |p| p.display().to_string()),
        );
        put("data.src_label", self.src_label.clone());
        put("data.trg_label", self.trg_label.clone());
        put("task.kind", self.task.kind.as_str().into());
        put("task.vocab_size", self.task.vocab_size.to_string());
        put("task.min_len", self.task.min_len.to_string());
        put("task.max_len", self.task.max_len.to_string());
        put("task.train", self.task.train.to_string());
        put("task.mono_src", self.task.mono_src.to_string());
        put("task.mono_trg", self.task.mono_trg.to_string());
        put("task.dev", self.task.dev.to_string());
        put("task.test", self.task.test.to_string());
        put("task.seed", self.task.seed.to_string());
        put("bpe.merges", self.bpe_merges.to_string());
        put("model.embed", self.dims.embed.to_string());
        put("model.hidden", self.dims.hidden.to_string());
        put("model.attention", self.dims.attention.to_string());
        put("model.max_len", self.dims.max_len.to_string());
        put("train.batch_size", h.batch_size.to_string());
        put("train.chunk_size", h.chunk_size.to_string());
        put("train.dropout", h.dropout.to_string());
        put("train.l2_weight", h.l2_weight.to_string());
        put("train.clip_norm", h.clip_norm.to_string());
        put("train.max_epochs", h.max_epochs.to_string());
        put("train.initial_epochs", self.initial_epochs.to_string());
        put("train.max_len", h.max_len.to_string());
        put("train.learning_rate", h.adam.learning_rate.to_string());
        put("train.beta1", h.adam.beta1.to_string());
        put("train.beta2", h.adam.beta2.to_string());
        put("train.epsilon", h.adam.epsilon.to_string());
        put("train.patience", h.patience.to_string());
        let w = &self.wakesleep;
        put("wakesleep.iterations", w.iterations.to_string());
        put("wakesleep.variant", w.variant.as_str().into());
        put("wakesleep.wake_mode", w.wake_mode.as_str().into());
        put("wakesleep.sleep_mode", w.sleep_mode.as_str().into());
        put(
            "wakesleep.dream_count",
            w.dream_count.map_or("auto".into(), |c| c.to_string()),
        );
        put("wakesleep.temperature", w.temperature.to_string());
        put("wakesleep.sleep_includes_bitext", w.sleep_includes_bitext.to_string());
        put("wakesleep.skip_sleep", w.skip_sleep.to_string());
        put("wakesleep.early_stopping", w.early_stopping.to_string());
        put("eval.beam_width", self.beam_width.to_string());
        put("eval.trials", self.significance.trials.to_string());
        put("eval.alpha", self.significance.alpha.to_string());
        put("eval.lowercase", self.significance.lowercase.to_string());
        put(
            "run.dir",
            self.run_dir.as_ref().map_or(String::new(), |p| p.display().to_string()),
        );
        m
    }

    pub fn to_text(&self) -> String {
        self.to_map().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Parses config text on top of the desk defaults. `seed` is mandatory.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        Self::from_pairs(&pairs)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Builds a config from key-value pairs; later pairs win.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let seed = pairs
            .iter()
            .rev()
            .find(|(k, _)| k == "seed")
            .ok_or_else(|| Error::Config("seed is mandatory".into()))?;
        let seed: u64 = parse_value("seed", &seed.1)?;
        let mut cfg = Self::desk(seed);
        let seed_only_task = !pairs.iter().any(|(k, _)| k == "task.seed");
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        if seed_only_task {
            cfg.task.seed = cfg.seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `key=value` overrides (flag wins over file).
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        let mut pairs: Vec<(String, String)> = self.to_map().into_iter().collect();
        // a task seed that follows the run seed keeps following it
        let has = |k: &str| overrides.iter().any(|(o, _)| o == k);
        if self.task.seed == self.seed && has("seed") && !has("task.seed") {
            pairs.retain(|(k, _)| k != "task.seed");
        }
        pairs.extend(overrides.iter().cloned());
        Self::from_pairs(&pairs)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let h = &mut self.hyper;
        match key {
            "seed" => {
                self.seed = parse_value(key, v)?;
                self.wakesleep.seed = self.seed;
            }
            "data.dir" => self.data_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "data.src_label" => self.src_label = v.to_string(),
            "data.trg_label" => self.trg_label = v.to_string(),
            "task.kind" => self.task.kind = TaskKind::parse(v)?,
            "task.vocab_size" => self.task.vocab_size = parse_value(key, v)?,
            "task.min_len" => self.task.min_len = parse_value(key, v)?,
            "task.max_len" => self.task.max_len = parse_value(key, v)?,
            "task.train" => self.task.train = parse_value(key, v)?,
            "task.mono_src" => self.task.mono_src = parse_value(key, v)?,
            "task.mono_trg" => self.task.mono_trg = parse_value(key, v)?,
            "task.dev" => self.task.dev = parse_value(key, v)?,
            "task.test" => self.task.test = parse_value(key, v)?,
            "task.seed" => self.task.seed = parse_value(key, v)?,
            "bpe.merges" => self.bpe_merges = parse_value(key, v)?,
            "model.embed" => self.dims.embed = parse_value(key, v)?,
            "model.hidden" => self.dims.hidden = parse_value(key, v)?,
            "model.attention" => self.dims.attention = parse_value(key, v)?,
            "model.max_len" => self.dims.max_len = parse_value(key, v)?,
            "train.batch_size" => h.batch_size = parse_value(key, v)?,
            "train.chunk_size" => h.chunk_size = parse_value(key, v)?,
            "train.dropout" => h.dropout = parse_value(key, v)?,
            "train.l2_weight" => h.l2_weight = parse_value(key, v)?,
            "train.clip_norm" => h.clip_norm = parse_value(key, v)?,
            "train.max_epochs" => h.max_epochs = parse_value(key, v)?,
            "train.initial_epochs" => self.initial_epochs = parse_value(key, v)?,
            "train.max_len" => h.max_len = parse_value(key, v)?,
            "train.learning_rate" => h.adam.learning_rate = parse_value(key, v)?,
            "train.beta1" => h.adam.beta1 = parse_value(key, v)?,
            "train.beta2" => h.adam.beta2 = parse_value(key, v)?,
            "train.epsilon" => h.adam.epsilon = parse_value(key, v)?,
            "train.patience" => h.patience = parse_value(key, v)?,
            "wakesleep.iterations" => self.wakesleep.iterations = parse_value(key, v)?,
            "wakesleep.variant" => self.wakesleep.variant = SleepVariant::parse(v)?,
            "wakesleep.wake_mode" => self.wakesleep.wake_mode = DecodeMode::parse(v)?,
            "wakesleep.sleep_mode" => self.wakesleep.sleep_mode = DecodeMode::parse(v)?,
            "wakesleep.dream_count" => {
                self.wakesleep.dream_count = if v == "auto" { None } else { Some(parse_value(key, v)?) }
            }
            "wakesleep.temperature" => self.wakesleep.temperature = parse_value(key, v)?,
            "wakesleep.sleep_includes_bitext" => self.wakesleep.sleep_includes_bitext = parse_value(key, v)?,
            "wakesleep.skip_sleep" => self.wakesleep.skip_sleep = parse_value(key, v)?,
            "wakesleep.early_stopping" => self.wakesleep.early_stopping = parse_value(key, v)?,
            "eval.beam_width" => self.beam_width = parse_value(key, v)?,
            "eval.trials" => self.significance.trials = parse_value(key, v)?,
            "eval.alpha" => self.significance.alpha = parse_value(key, v)?,
            "eval.lowercase" => self.significance.lowercase = parse_value(key, v)?,
            "run.dir" => self.run_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        self.wakesleep.hyper = self.hyper.clone();
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        self.wakesleep.validate()?;
        self.task.validate()?;
        if self.beam_width == 0 {
            return Err(Error::Config("eval.beam_width must be at least 1".into()));
        }
        if self.significance.trials == 0 {
            return Err(Error::Config("eval.trials must be at least 1".into()));
        }
        if self.dims.embed == 0 || self.dims.hidden == 0 || self.dims.attention == 0 || self.dims.max_len == 0 {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        if let Some(d) = &self.data_dir {
            if !d.is_dir() {
                return Err(Error::Config(format!("data.dir {} is not a directory", d.display())));
            }
        }
        Ok(())
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.parse().map_err(|e| Error::Config(format!("{key} = {v:?}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_round_trips() {
        let mut c = ExperimentConfig::desk(7);
        c.wakesleep.dream_count = Some(12);
        c.hyper.adam.learning_rate = 0.00123;
        c.wakesleep.hyper = c.hyper.clone();
        let back = ExperimentConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), c.to_text());
    }

    #[test]
    fn parsing_rules() {
        assert!(ExperimentConfig::parse("model.hidden = 8\n").is_err());
        let c = ExperimentConfig::parse("# comment\nseed = 4\n\nmodel.hidden = 8\n").unwrap();
        assert_eq!((c.seed, c.dims.hidden, c.task.seed, c.wakesleep.seed), (4, 8, 4, 4));
        assert!(ExperimentConfig::parse("seed = 1\nnope = 2\n").is_err());
        assert!(ExperimentConfig::parse("seed = 1\ntrain.dropout = x\n").is_err());
        assert!(ExperimentConfig::parse("seed = 1\njunk\n").is_err());
        let o = c
            .with_overrides(&[("train.max_epochs".into(), "2".into()), ("seed".into(), "9".into())])
            .unwrap();
        assert_eq!((o.hyper.max_epochs, o.wakesleep.hyper.max_epochs, o.seed), (2, 2, 9));
        assert_eq!((o.task.seed, o.wakesleep.seed), (9, 9));
        let pinned = c.with_overrides(&[("task.seed".into(), "5".into())]).unwrap();
        let moved = pinned.with_overrides(&[("seed".into(), "6".into())]).unwrap();
        assert_eq!((moved.seed, moved.task.seed), (6, 5));
    }
}
