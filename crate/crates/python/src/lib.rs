//! Python bindings: configs, synthetic tasks, full experiments, models,
//! BPE, BLEU and paired significance.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use bitext_core::config::ExperimentConfig;
use bitext_core::corpus::{Bitext, Monotext, OovPolicy, Vocabulary};
use bitext_core::eval::{self, SignificanceConfig};
use bitext_core::rng::RngStream;
use bitext_core::seq2seq::{decode_corpus, model_hash, Checkpoint, DecodeConfig, DecodeMode, Seq2Seq};
use bitext_core::subword::{learn_from_counts, MergeTable};
use bitext_core::synthdata::{generate_task, SynthTask};

create_exception!(
    bitext,
    BitextError,
    PyException,
    "Raised for any failure inside bitext-core."
);

fn err(e: bitext_core::Error) -> PyErr {
    BitextError::new_err(format!("{}: {e}", e.kind()))
}

/// An experiment configuration. Keys follow the `key = value` config format.
#[pyclass(name = "Config", module = "bitext", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    /// The desk-scale defaults for `seed`.
    #[staticmethod]
    fn desk(seed: u64) -> Self {
        Self {
            inner: ExperimentConfig::desk(seed),
        }
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        ExperimentConfig::parse(text).map(|inner| Self { inner }).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ExperimentConfig::load(&path).map(|inner| Self { inner }).map_err(err)
    }

    /// A copy with `key = value` overrides applied.
    fn with_overrides(&self, overrides: Vec<(String, String)>) -> PyResult<Self> {
        self.inner
            .with_overrides(&overrides)
            .map(|inner| Self { inner })
            .map_err(err)
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(err)
    }

    fn get(&self, key: &str) -> Option<String> {
        self.inner.to_map().remove(key)
    }

    fn to_dict(&self) -> std::collections::BTreeMap<String, String> {
        self.inner.to_map()
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(err)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn __repr__(&self) -> String {
        format!("Config(seed={})", self.inner.seed)
    }
}

fn bitext_lines(b: &Bitext) -> Vec<(String, String)> {
    let (sv, tv) = (&b.src_vocab, &b.trg_vocab);
    b.pairs.iter().map(|(x, y)| (sv.decode(x), tv.decode(y))).collect()
}

fn mono_lines(m: &Monotext) -> Vec<String> {
    m.sentences.iter().map(|s| m.vocab.decode(s)).collect()
}

/// A generated synthetic translation task.
#[pyclass(name = "Task", module = "bitext")]
struct PyTask {
    inner: SynthTask,
}

#[pymethods]
impl PyTask {
    /// Generates the task described by the config's `task.*` keys.
    #[staticmethod]
    fn generate(config: &PyConfig) -> PyResult<Self> {
        generate_task(&config.inner.task)
            .map(|inner| Self { inner })
            .map_err(err)
    }

    /// Writes every split plus a checksum manifest into `dir`.
    fn write(&self, dir: PathBuf) -> PyResult<Vec<(String, String)>> {
        self.inner.write(&dir).map(|m| m.files).map_err(err)
    }

    #[getter]
    fn train(&self) -> Vec<(String, String)> {
        bitext_lines(&self.inner.train)
    }

    #[getter]
    fn dev(&self) -> Vec<(String, String)> {
        bitext_lines(&self.inner.dev)
    }

    #[getter]
    fn test(&self) -> Vec<(String, String)> {
        bitext_lines(&self.inner.test)
    }

    #[getter]
    fn mono_src(&self) -> Vec<String> {
        mono_lines(&self.inner.mono_src)
    }

    #[getter]
    fn mono_trg(&self) -> Vec<String> {
        mono_lines(&self.inner.mono_trg)
    }

    /// The reference translation of a source line.
    fn translate(&self, line: &str) -> PyResult<String> {
        let x = self.inner.src_vocab.encode(line, OovPolicy::Strict).map_err(err)?;
        Ok(self.inner.trg_vocab.decode(&self.inner.translate(&x)))
    }
}

/// Runs the full experiment: initial training, wake-sleep iterations and
/// scoring. Returns the report and per-iteration metrics.
#[pyfunction]
fn run_experiment<'py>(py: Python<'py>, config: &PyConfig) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config.inner.clone();
    let out = py
        .detach(move || bitext_core::experiment::run_experiment(&cfg))
        .map_err(err)?;
    let metrics = serde_json::to_string(&out.metrics).expect("metrics serialize");
    let d = PyDict::new(py);
    d.set_item("report", out.report.text)?;
    d.set_item("report_tsv", out.report.tsv)?;
    d.set_item("metrics", py.import("json")?.call_method1("loads", (metrics,))?)?;
    d.set_item("theta_hash", model_hash(&out.theta))?;
    d.set_item("phi_hash", model_hash(&out.phi))?;
    Ok(d)
}

/// A trained translation model with the vocabularies it reads and writes.
#[pyclass(name = "Model", module = "bitext")]
struct PyModel {
    model: Seq2Seq,
    input: Arc<Vocabulary>,
    output: Vocabulary,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(checkpoint: PathBuf, input_vocab: PathBuf, output_vocab: PathBuf) -> PyResult<Self> {
        let model = Checkpoint::load(&checkpoint).map_err(err)?.model;
        let input = Vocabulary::load(&input_vocab).map_err(err)?;
        let output = Vocabulary::load(&output_vocab).map_err(err)?;
        if model.src_vocab_hash != input.hash() || model.trg_vocab_hash != output.hash() {
            return Err(err(bitext_core::Error::VocabularyMismatch(format!(
                "{} was trained with other vocabularies",
                checkpoint.display()
            ))));
        }
        Ok(Self {
            model,
            input: Arc::new(input),
            output,
        })
    }

    #[pyo3(signature = (lines, mode = "greedy", beam_width = 1, temperature = 1.0, seed = 0))]
    fn translate(
        &self,
        py: Python<'_>,
        lines: Vec<String>,
        mode: &str,
        beam_width: usize,
        temperature: f64,
        seed: u64,
    ) -> PyResult<Vec<String>> {
        let cfg = DecodeConfig {
            mode: DecodeMode::parse(mode).map_err(err)?,
            beam_width,
            max_len: self.model.max_len(),
            temperature,
        };
        cfg.validate().map_err(err)?;
        let xs = lines
            .iter()
            .map(|l| self.input.encode(l, OovPolicy::Strict))
            .collect::<bitext_core::Result<Vec<_>>>()
            .map_err(err)?;
        if let Some(x) = xs.iter().find(|x| !self.model.fits(x)) {
            return Err(err(bitext_core::Error::Overlong {
                len: x.len(),
                max_len: self.model.max_len(),
            }));
        }
        let ys = py.detach(|| decode_corpus(&self.model, &xs, &cfg, &RngStream::from_seed(seed)));
        Ok(ys.iter().map(|y| self.output.decode(y)).collect())
    }

    /// log p(target | source) in nats, EOS included.
    fn log_prob(&self, source: &str, target: &str) -> PyResult<f64> {
        let x = self.input.encode(source, OovPolicy::Strict).map_err(err)?;
        let y = self.output.encode(target, OovPolicy::Strict).map_err(err)?;
        self.model.log_prob(&x, &y).map_err(err)
    }

    #[getter]
    fn hash(&self) -> String {
        model_hash(&self.model)
    }

    #[getter]
    fn direction(&self) -> String {
        self.model.direction.to_string()
    }
}

/// A learned table of BPE merges.
#[pyclass(name = "Bpe", module = "bitext")]
struct PyBpe {
    table: MergeTable,
}

#[pymethods]
impl PyBpe {
    /// Learns `merges` merges from whitespace-tokenized lines.
    #[staticmethod]
    fn learn(lines: Vec<String>, merges: usize) -> PyResult<Self> {
        let mut counts = std::collections::BTreeMap::<String, u64>::new();
        for w in lines.iter().flat_map(|l| l.split_whitespace()) {
            *counts.entry(w.to_string()).or_default() += 1;
        }
        learn_from_counts(counts.into_iter().collect(), merges)
            .map(|table| Self { table })
            .map_err(err)
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        MergeTable::parse(text).map(|table| Self { table }).map_err(err)
    }

    fn segment(&self, line: &str) -> Vec<String> {
        self.table.segment_line(line)
    }

    fn join(&self, subwords: Vec<String>) -> Vec<String> {
        self.table.join(&subwords)
    }

    fn to_text(&self) -> String {
        self.table.to_text()
    }

    fn __len__(&self) -> usize {
        self.table.len()
    }
}

/// Corpus BLEU with exponential smoothing; precisions are fractions.
#[pyfunction]
#[pyo3(signature = (hyps, refs, lowercase = false))]
fn bleu<'py>(py: Python<'py>, hyps: Vec<String>, refs: Vec<String>, lowercase: bool) -> PyResult<Bound<'py, PyDict>> {
    let s = eval::bleu(&hyps, &refs, lowercase).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("score", s.score)?;
    d.set_item("precisions", s.precisions.to_vec())?;
    d.set_item("brevity_penalty", s.brevity_penalty)?;
    d.set_item("hyp_len", s.hyp_len)?;
    d.set_item("ref_len", s.ref_len)?;
    Ok(d)
}

/// Paired approximate-randomization test of BLEU(a) against BLEU(b).
#[pyfunction]
#[pyo3(signature = (hyps_a, hyps_b, refs, trials = 10_000, alpha = 0.05, lowercase = false, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn paired_significance<'py>(
    py: Python<'py>,
    hyps_a: Vec<String>,
    hyps_b: Vec<String>,
    refs: Vec<String>,
    trials: usize,
    alpha: f64,
    lowercase: bool,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = SignificanceConfig {
        trials,
        alpha,
        lowercase,
    };
    let r = py
        .detach(|| eval::paired_significance(&hyps_a, &hyps_b, &refs, &cfg, &RngStream::from_seed(seed)))
        .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("p_value", r.p_value)?;
    d.set_item("significant", r.significant)?;
    d.set_item("trials", r.trials)?;
    d.set_item("observed_delta", r.observed_delta)?;
    Ok(d)
}

#[pymodule]
fn bitext(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("BitextError", m.py().get_type::<BitextError>())?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyTask>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyBpe>()?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(bleu, m)?)?;
    m.add_function(wrap_pyfunction!(paired_significance, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
