//! End-to-end experiments: data, subwords, iteration-0 MLE, wake-sleep,
//! evaluation and the run directory.
//!
//! Run directory layout:
//!
//! ```text
//! manifest.json          config snapshot, seed, code version, corpus checksums
//! config.txt             the same config as flat key = value text
//! iter{i}/theta.ckpt     θ after iteration i (early-stop checkpoint)
//! iter{i}/phi.ckpt       φ after iteration i
//! iter{i}/{role}.src|trg hallucinated corpora, source/target of their training direction
//! iter{i}/test.{label}.hyp test-set translations, one file per direction
//! metrics.jsonl          one record per iteration
//! report.txt, report.tsv the results table
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::corpus::{file_checksum, load_bitext, load_monotext, Bitext, Monotext, OovPolicy, Sentence, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::{bleu, paired_significance, render_report, Report, SignificanceConfig, TextRenderer};
use crate::rng::RngStream;
use crate::seq2seq::{
    decode_corpus, train_mle, Checkpoint, DecodeConfig, Direction, EarlyStopping, ModelDims, Seq2Seq,
};
use crate::subword::{apply_bpe, learn_bpe, MergeTable};
use crate::synthdata::generate_task;
use crate::wakesleep::{run_wake_sleep, DirectionMetrics, IterationMetrics, WakeSleepHooks};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// The corpora of one experiment, in model-side units (words or subwords).
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub train: Bitext,
    pub mono_src: Monotext,
    pub mono_trg: Monotext,
    pub dev: Bitext,
    pub test: Bitext,
    pub src_render: TextRenderer,
    pub trg_render: TextRenderer,
    pub merges: Option<Arc<MergeTable>>,
    /// (name, SHA-256) of every input file, or of the generated corpora.
    pub checksums: Vec<(String, String)>,
}

const DATA_FILES: [&str; 10] = [
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
];

fn text_checksum(text: &str) -> String {
    use sha2::{Digest, Sha256};
    crate::corpus::hex(&Sha256::digest(text.as_bytes()))
}

/// Loads `cfg.data_dir` or generates the synthetic task, then applies BPE
/// when `cfg.bpe_merges > 0`.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<ExperimentData> {
    let (train, mono_src, mono_trg, dev, test, checksums) = match &cfg.data_dir {
        Some(dir) => {
            let sv = Arc::new(Vocabulary::load(&dir.join("vocab.src"))?);
            let tv = Arc::new(Vocabulary::load(&dir.join("vocab.trg"))?);
            let oov = OovPolicy::Strict;
            let bt = |name: &str| {
                load_bitext(
                    &dir.join(format!("{name}.src")),
                    &dir.join(format!("{name}.trg")),
                    sv.clone(),
                    tv.clone(),
                    oov,
                )
            };
            let mut sums = Vec::new();
            for f in DATA_FILES {
                sums.push((f.to_string(), file_checksum(&dir.join(f))?));
            }
            (
                bt("train")?,
                load_monotext(&dir.join("mono.src"), sv.clone(), oov)?,
                load_monotext(&dir.join("mono.trg"), tv.clone(), oov)?,
                bt("dev")?,
                bt("test")?,
                sums,
            )
        }
        None => {
            let t = generate_task(&cfg.task)?;
            let sums = vec![
                ("train.src".into(), text_checksum(&t.train.sources().to_text())),
                ("train.trg".into(), text_checksum(&t.train.targets().to_text())),
                ("mono.src".into(), text_checksum(&t.mono_src.to_text())),
                ("mono.trg".into(), text_checksum(&t.mono_trg.to_text())),
                ("dev.src".into(), text_checksum(&t.dev.sources().to_text())),
                ("dev.trg".into(), text_checksum(&t.dev.targets().to_text())),
                ("test.src".into(), text_checksum(&t.test.sources().to_text())),
                ("test.trg".into(), text_checksum(&t.test.targets().to_text())),
            ];
            (t.train, t.mono_src, t.mono_trg, t.dev, t.test, sums)
        }
    };
    if cfg.bpe_merges == 0 {
        return Ok(ExperimentData {
            src_render: TextRenderer::Words(train.src_vocab.clone()),
            trg_render: TextRenderer::Words(train.trg_vocab.clone()),
            train,
            mono_src,
            mono_trg,
            dev,
            test,
            merges: None,
            checksums,
        });
    }
    // one subword vocabulary shared by both sides
    let table = Arc::new(learn_bpe(&[&train.sources(), &train.targets()], cfg.bpe_merges)?);
    let mut alphabet = std::collections::BTreeSet::new();
    for v in [&train.src_vocab, &train.trg_vocab] {
        for t in v.tokens().iter().skip(1) {
            alphabet.extend(t.chars());
        }
    }
    let sub = Arc::new(table.vocabulary(&alphabet)?);
    let seg = |s: &Sentence, v: &Vocabulary| apply_bpe(s, v, &table, &sub);
    let seg_bitext = |b: &Bitext| -> Result<Bitext> {
        let pairs = b
            .pairs
            .iter()
            .map(|(x, y)| Ok((seg(x, &b.src_vocab)?, seg(y, &b.trg_vocab)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Bitext::new(pairs, sub.clone(), sub.clone(), b.role))
    };
    let seg_mono = |m: &Monotext| -> Result<Monotext> {
        let s = m
            .sentences
            .iter()
            .map(|x| seg(x, &m.vocab))
            .collect::<Result<Vec<_>>>()?;
        Ok(Monotext::new(s, sub.clone()))
    };
    let render = TextRenderer::Subwords {
        vocab: sub.clone(),
        merges: table.clone(),
    };
    Ok(ExperimentData {
        train: seg_bitext(&train)?,
        mono_src: seg_mono(&mono_src)?,
        mono_trg: seg_mono(&mono_trg)?,
        dev: seg_bitext(&dev)?,
        test: seg_bitext(&test)?,
        src_render: render.clone(),
        trg_render: render,
        merges: Some(table),
        checksums,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub code_version: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub corpora: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(cfg: &ExperimentConfig, corpora: Vec<(String, String)>) -> Self {
        Self {
            code_version: CODE_VERSION.to_string(),
            seed: cfg.seed,
            config: cfg.to_map(),
            corpora,
        }
    }

    pub fn config(&self) -> Result<ExperimentConfig> {
        let pairs: Vec<(String, String)> = self.config.clone().into_iter().collect();
        ExperimentConfig::from_pairs(&pairs)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format("run manifest", e.to_string()))
    }
}

/// Held-out data for one direction, as model inputs and rendered references.
struct HeldOut {
    inputs: Vec<Sentence>,
    refs: Vec<String>,
}

impl HeldOut {
    fn new(b: &Bitext, render: &TextRenderer) -> Self {
        Self {
            inputs: b.pairs.iter().map(|(x, _)| x.clone()).collect(),
            refs: b.pairs.iter().map(|(_, y)| render.render(y)).collect(),
        }
    }
}

struct DirectionEval {
    dev: HeldOut,
    test: HeldOut,
    render: TextRenderer,
    first_hyps: Option<Vec<String>>,
    prev_hyps: Option<Vec<String>>,
}

/// Greedy dev BLEU for early stopping, beam test BLEU and significance per
/// iteration, and run-directory output.
pub struct Evaluator {
    fwd: DirectionEval,
    bwd: DirectionEval,
    beam_width: usize,
    patience: usize,
    early_stopping: bool,
    significance: SignificanceConfig,
    rng: RngStream,
    run_dir: Option<PathBuf>,
    labels: [String; 2],
    /// Hashes of the parameters each training call started from, by iteration.
    pub train_starts: Vec<(usize, Direction, String)>,
}

impl Evaluator {
    pub fn new(data: &ExperimentData, cfg: &ExperimentConfig, run_dir: Option<PathBuf>) -> Self {
        let dir = |b: &Bitext, t: &Bitext, r: &TextRenderer| DirectionEval {
            dev: HeldOut::new(b, r),
            test: HeldOut::new(t, r),
            render: r.clone(),
            first_hyps: None,
            prev_hyps: None,
        };
        Self {
            fwd: dir(&data.dev, &data.test, &data.trg_render),
            bwd: dir(&data.dev.reversed(), &data.test.reversed(), &data.src_render),
            beam_width: cfg.beam_width,
            patience: cfg.hyper.patience,
            early_stopping: cfg.wakesleep.early_stopping,
            significance: cfg.significance,
            rng: RngStream::from_seed(cfg.seed).derive("significance"),
            run_dir,
            labels: [cfg.src_label.clone(), cfg.trg_label.clone()],
            train_starts: Vec::new(),
        }
    }

    fn side(&self, d: Direction) -> &DirectionEval {
        match d {
            Direction::Forward => &self.fwd,
            Direction::Backward => &self.bwd,
        }
    }

    /// Greedy-decoding BLEU on the dev set.
    pub fn dev_bleu(&self, model: &Seq2Seq) -> Result<f64> {
        let side = self.side(model.direction);
        let hyps = decode_corpus(
            model,
            &side.dev.inputs,
            &DecodeConfig::greedy(model.max_len()),
            &self.rng,
        );
        let hyps = side.render.render_all(&hyps);
        Ok(bleu(&hyps, &side.dev.refs, self.significance.lowercase)?.score)
    }

    pub fn test_hyps(&self, model: &Seq2Seq) -> Vec<String> {
        let side = self.side(model.direction);
        let cfg = DecodeConfig::beam(self.beam_width, model.max_len());
        side.render
            .render_all(&decode_corpus(model, &side.test.inputs, &cfg, &self.rng))
    }

    fn iter_dir(&self, i: usize) -> Result<Option<PathBuf>> {
        match &self.run_dir {
            None => Ok(None),
            Some(r) => {
                let d = r.join(format!("iter{i}"));
                fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
                Ok(Some(d))
            }
        }
    }

    fn score(&mut self, iteration: usize, model: &Seq2Seq) -> Result<DirectionMetrics> {
        let dev = self.dev_bleu(model)?;
        let hyps = self.test_hyps(model);
        let lower = self.significance.lowercase;
        let sig_cfg = self.significance;
        let rng = self.rng.derive(&format!("iter{iteration}/{}", model.direction));
        let label = match model.direction {
            Direction::Forward => self.labels[0].clone(),
            Direction::Backward => self.labels[1].clone(),
        };
        let side = match model.direction {
            Direction::Forward => &mut self.fwd,
            Direction::Backward => &mut self.bwd,
        };
        let test = bleu(&hyps, &side.test.refs, lower)?.score;
        let mut m = DirectionMetrics {
            dev_bleu: Some(dev),
            test_bleu: Some(test),
            ..Default::default()
        };
        if let (Some(prev), Some(first)) = (&side.prev_hyps, &side.first_hyps) {
            let a = paired_significance(&hyps, prev, &side.test.refs, &sig_cfg, &rng.derive("previous"))?;
            let b = paired_significance(&hyps, first, &side.test.refs, &sig_cfg, &rng.derive("first"))?;
            m.sig_previous = Some(a.significant);
            m.p_previous = Some(a.p_value);
            m.sig_first = Some(b.significant);
            m.p_first = Some(b.p_value);
        }
        if side.first_hyps.is_none() {
            side.first_hyps = Some(hyps.clone());
        }
        let out = hyps.join("\n") + "\n";
        side.prev_hyps = Some(hyps);
        if let Some(d) = self.iter_dir(iteration)? {
            let p = d.join(format!("test.{label}.hyp"));
            fs::write(&p, out).map_err(|e| Error::io(&p, e))?;
        }
        Ok(m)
    }

    pub fn labels(&self) -> [&str; 2] {
        [&self.labels[0], &self.labels[1]]
    }
}

impl WakeSleepHooks for Evaluator {
    fn stopper(&self, _direction: Direction) -> Option<EarlyStopping<'_>> {
        self.early_stopping.then(|| EarlyStopping {
            patience: self.patience,
            scorer: Box::new(move |m: &Seq2Seq| self.dev_bleu(m)),
        })
    }

    fn on_corpus(&mut self, iteration: usize, label: &str, corpus: &Bitext) -> Result<()> {
        if let Some(d) = self.iter_dir(iteration)? {
            corpus.write(&d.join(format!("{label}.src")), &d.join(format!("{label}.trg")))?;
        }
        Ok(())
    }

    fn on_train_start(&mut self, iteration: usize, model: &Seq2Seq) -> Result<()> {
        self.train_starts
            .push((iteration, model.direction, crate::seq2seq::model_hash(model)));
        Ok(())
    }

    fn on_iteration(&mut self, metrics: &mut IterationMetrics, theta: &Seq2Seq, phi: &Seq2Seq) -> Result<()> {
        let i = metrics.iteration;
        metrics.forward = self.score(i, theta)?;
        metrics.backward = self.score(i, phi)?;
        if let Some(d) = self.iter_dir(i)? {
            Checkpoint::new(theta.clone(), None).save(&d.join("theta.ckpt"))?;
            Checkpoint::new(phi.clone(), None).save(&d.join("phi.ckpt"))?;
        }
        if let Some(r) = &self.run_dir {
            use std::io::Write;
            let p = r.join("metrics.jsonl");
            let mut f = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&p)
                .map_err(|e| Error::io(&p, e))?;
            let line = serde_json::to_string(metrics).expect("metrics serialize");
            writeln!(f, "{line}").map_err(|e| Error::io(&p, e))?;
        }
        log::info!(
            "iteration {i}: test BLEU {:.2} / {:.2}",
            metrics.forward.test_bleu.unwrap_or(0.0),
            metrics.backward.test_bleu.unwrap_or(0.0)
        );
        Ok(())
    }
}

/// Fresh θ and φ for the data's vocabularies.
pub fn init_models(data: &ExperimentData, dims: ModelDims, seed: u64) -> (Seq2Seq, Seq2Seq) {
    let root = RngStream::from_seed(seed);
    let (sv, tv) = (&data.train.src_vocab, &data.train.trg_vocab);
    (
        Seq2Seq::new(dims, Direction::Forward, sv, tv, &root.derive("init-theta")),
        Seq2Seq::new(dims, Direction::Backward, tv, sv, &root.derive("init-phi")),
    )
}

/// Iteration-0 MLE training of one direction from its fresh initialization,
/// on stream `iter0/train-theta` or `iter0/train-phi`.
pub fn train_initial_direction(
    data: &ExperimentData,
    cfg: &ExperimentConfig,
    eval: &Evaluator,
    direction: Direction,
) -> Result<crate::seq2seq::TrainOutcome> {
    let (theta, phi) = init_models(data, cfg.dims, cfg.seed);
    let it = RngStream::from_seed(cfg.seed).derive("iter0");
    let hyper = crate::autodiff::TrainHyper {
        max_epochs: cfg.initial_epochs,
        ..cfg.hyper.clone()
    };
    let stopper = eval.stopper(direction);
    match direction {
        Direction::Forward => train_mle(&theta, &data.train, &hyper, stopper.as_ref(), &it.derive("train-theta")),
        Direction::Backward => train_mle(
            &phi,
            &data.train.reversed(),
            &hyper,
            stopper.as_ref(),
            &it.derive("train-phi"),
        ),
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub metrics: Vec<IterationMetrics>,
    pub report: Report,
    pub theta: Seq2Seq,
    pub phi: Seq2Seq,
}

/// The whole pipeline. With a run directory, writes the layout above.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    let run_dir = cfg.run_dir.clone();
    if let Some(r) = &run_dir {
        fs::create_dir_all(r).map_err(|e| Error::io(r, e))?;
        // a rerun must not append to old metrics
        let m = r.join("metrics.jsonl");
        if m.exists() {
            fs::remove_file(&m).map_err(|e| Error::io(&m, e))?;
        }
        RunManifest::new(cfg, data.checksums.clone()).write(&r.join("manifest.json"))?;
        let p = r.join("config.txt");
        fs::write(&p, cfg.to_text()).map_err(|e| Error::io(&p, e))?;
        if let Some(t) = &data.merges {
            t.save(&r.join("bpe.merges"))?;
        }
    }
    let mut eval = Evaluator::new(&data, cfg, run_dir.clone());
    let t = train_initial_direction(&data, cfg, &eval, Direction::Forward)?;
    let p = train_initial_direction(&data, cfg, &eval, Direction::Backward)?;
    let (theta, phi, te, pe) = (t.model, p.model, t.best_epoch, p.best_epoch);
    log::info!("iteration 0 early-stop epochs: θ {te}, φ {pe}");

    struct WithEpochs<'a> {
        inner: &'a mut Evaluator,
        epochs: (usize, usize),
    }
    impl WakeSleepHooks for WithEpochs<'_> {
        fn stopper(&self, d: Direction) -> Option<EarlyStopping<'_>> {
            self.inner.stopper(d)
        }
        fn on_corpus(&mut self, i: usize, l: &str, c: &Bitext) -> Result<()> {
            self.inner.on_corpus(i, l, c)
        }
        fn on_train_start(&mut self, i: usize, m: &Seq2Seq) -> Result<()> {
            self.inner.on_train_start(i, m)
        }
        fn on_iteration(&mut self, m: &mut IterationMetrics, t: &Seq2Seq, p: &Seq2Seq) -> Result<()> {
            if m.iteration == 0 {
                m.theta_best_epoch = Some(self.epochs.0);
                m.phi_best_epoch = Some(self.epochs.1);
            }
            self.inner.on_iteration(m, t, p)
        }
    }
    let mut hooks = WithEpochs {
        inner: &mut eval,
        epochs: (te, pe),
    };
    let out = run_wake_sleep(
        &theta,
        &phi,
        &data.train,
        Some(&data.mono_src),
        &data.mono_trg,
        &cfg.wakesleep,
        &mut hooks,
    )?;
    let report = render_report(&out.metrics, eval.labels());
    if let Some(r) = &run_dir {
        for (name, body) in [("report.txt", &report.text), ("report.tsv", &report.tsv)] {
            let p = r.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
    }
    Ok(ExperimentOutcome {
        metrics: out.metrics,
        report,
        theta: out.theta,
        phi: out.phi,
    })
}
