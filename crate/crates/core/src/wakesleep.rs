//! Wake-sleep training of a translation model θ (source→target) and an
//! inference network φ (target→source).
//!
//! Wake: φ back-translates the target monotext and θ is trained further on
//! the observed bitext plus those pairs. Sleep: source sentences are drawn
//! from the empirical LM, θ translates them, and φ is trained on the dreamt
//! pairs (plus the observed bitext). In symmetric mode the sleep phase is
//! replaced by θ translating the source monotext. One iteration with greedy
//! wake decoding is classic back-translation.
//!
//! Random streams, all derived from `RngStream::from_seed(cfg.seed)`:
//! `iter{i}/wake`, `iter{i}/train-theta`, `iter{i}/sleep`, `iter{i}/train-phi`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::TrainHyper;
use crate::corpus::{union, Bitext, Monotext, Role, Vocabulary};
use crate::error::{Error, Result};
use crate::langmodel::{build_lm, lm_sample, EmpiricalLM};
use crate::rng::RngStream;
use crate::seq2seq::{
    decode_corpus, model_hash, train_mle, DecodeConfig, DecodeMode, Direction, EarlyStopping, Seq2Seq, TrainOutcome,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SleepVariant {
    /// Dreamt pairs from the empirical LM, as in the algorithm.
    Strict,
    /// θ translates the source monotext for φ.
    Symmetric,
}

impl SleepVariant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(SleepVariant::Strict),
            "symmetric" => Ok(SleepVariant::Symmetric),
            _ => Err(Error::Config(format!("unknown wake-sleep variant {s:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SleepVariant::Strict => "strict",
            SleepVariant::Symmetric => "symmetric",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WakeSleepConfig {
    pub iterations: usize,
    /// Dreamt pairs per sleep phase; `None` means the source monotext size.
    /// Unused in symmetric mode.
    pub dream_count: Option<usize>,
    pub wake_mode: DecodeMode,
    pub sleep_mode: DecodeMode,
    pub variant: SleepVariant,
    /// Train φ on the observed bitext as well as the dreamt pairs.
    pub sleep_includes_bitext: bool,
    /// Skip φ's update entirely (θ-only back-translation).
    pub skip_sleep: bool,
    pub temperature: f64,
    /// Used for every training call.
    pub hyper: TrainHyper,
    /// Require a dev-based stopper for every training call.
    pub early_stopping: bool,
    pub seed: u64,
}

impl Default for WakeSleepConfig {
    fn default() -> Self {
        Self {
            iterations: 3,
            dream_count: None,
            wake_mode: DecodeMode::Greedy,
            sleep_mode: DecodeMode::Sample,
            variant: SleepVariant::Symmetric,
            sleep_includes_bitext: true,
            skip_sleep: false,
            temperature: 1.0,
            hyper: TrainHyper::default(),
            early_stopping: true,
            seed: 0,
        }
    }
}

impl WakeSleepConfig {
    pub fn validate(&self) -> Result<()> {
        for m in [self.wake_mode, self.sleep_mode] {
            if m == DecodeMode::Beam {
                return Err(Error::Config("wake and sleep decoding must be greedy or sample".into()));
            }
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        self.hyper.validate()
    }
}

/// Scores of one direction after one iteration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DirectionMetrics {
    pub dev_bleu: Option<f64>,
    pub test_bleu: Option<f64>,
    /// Test BLEU significantly different from the previous iteration.
    pub sig_previous: Option<bool>,
    /// Test BLEU significantly different from iteration 0.
    pub sig_first: Option<bool>,
    pub p_previous: Option<f64>,
    pub p_first: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    /// θ (source→target).
    pub forward: DirectionMetrics,
    /// φ (target→source).
    pub backward: DirectionMetrics,
    /// Pairs hallucinated for θ's training; `None` for iteration 0.
    pub back_size: Option<usize>,
    /// Pairs hallucinated for φ's training; `None` for iteration 0.
    pub dreamt_size: Option<usize>,
    pub theta_best_epoch: Option<usize>,
    pub phi_best_epoch: Option<usize>,
    pub theta_hash: String,
    pub phi_hash: String,
}

/// Callbacks for evaluation, early stopping and run-directory output.
pub trait WakeSleepHooks {
    fn stopper(&self, _direction: Direction) -> Option<EarlyStopping<'_>> {
        None
    }

    /// Called with every hallucinated corpus, oriented as it is trained on.
    fn on_corpus(&mut self, _iteration: usize, _label: &str, _corpus: &Bitext) -> Result<()> {
        Ok(())
    }

    /// Called before each training run with the starting parameters.
    fn on_train_start(&mut self, _iteration: usize, _model: &Seq2Seq) -> Result<()> {
        Ok(())
    }

    /// Fills in scores and persists the iteration's models.
    fn on_iteration(&mut self, _metrics: &mut IterationMetrics, _theta: &Seq2Seq, _phi: &Seq2Seq) -> Result<()> {
        Ok(())
    }
}

/// Hooks that do nothing.
pub struct NoHooks;

impl WakeSleepHooks for NoHooks {}

fn decode_config(model: &Seq2Seq, mode: DecodeMode, temperature: f64) -> DecodeConfig {
    DecodeConfig {
        mode,
        beam_width: 1,
        max_len: model.max_len(),
        temperature,
    }
}

/// Translates every sentence of `m` with `model` and pairs each output with
/// its input: the output is the new source side, the monotext sentence the
/// target side. Sentence `i` decodes with `rng.child(i)`.
pub fn hallucinate(
    model: &Seq2Seq,
    m: &Monotext,
    out_vocab: &Arc<Vocabulary>,
    cfg: &DecodeConfig,
    rng: &RngStream,
    role: Role,
) -> Result<Bitext> {
    cfg.validate()?;
    if m.vocab.hash() != model.src_vocab_hash || out_vocab.hash() != model.trg_vocab_hash {
        return Err(Error::VocabularyMismatch(
            "monotext or output vocabulary does not match the model".into(),
        ));
    }
    let outs = decode_corpus(model, &m.sentences, cfg, rng);
    let pairs = outs.into_iter().zip(m.sentences.iter().cloned()).collect();
    Ok(Bitext::new(pairs, out_vocab.clone(), m.vocab.clone(), role))
}

/// Back-translates a target-side monotext with φ: pairs ⟨x̃, y⟩, one per sentence.
pub fn wake_phase(
    q: &Seq2Seq,
    m: &Monotext,
    src_vocab: &Arc<Vocabulary>,
    cfg: &DecodeConfig,
    rng: &RngStream,
) -> Result<Bitext> {
    if q.direction != Direction::Backward {
        return Err(Error::DirectionMismatch(
            "wake phase needs the target→source model".into(),
        ));
    }
    hallucinate(q, m, src_vocab, cfg, rng, Role::Back)
}

/// Dreams `count` pairs ⟨x̃, ỹ⟩ with x̃ drawn from the LM (stream
/// `rng/lm`) and ỹ decoded by θ (stream `rng/decode`).
pub fn sleep_phase(
    p: &Seq2Seq,
    lm: &EmpiricalLM,
    trg_vocab: &Arc<Vocabulary>,
    count: usize,
    cfg: &DecodeConfig,
    rng: &RngStream,
) -> Result<Bitext> {
    if p.direction != Direction::Forward {
        return Err(Error::DirectionMismatch(
            "sleep phase needs the source→target model".into(),
        ));
    }
    cfg.validate()?;
    let mut r = rng.derive("lm");
    let xs: Vec<_> = (0..count).map(|_| lm_sample(lm, &mut r).clone()).collect();
    let ys = decode_corpus(p, &xs, cfg, &rng.derive("decode"));
    Ok(Bitext::new(
        xs.into_iter().zip(ys).collect(),
        lm.vocab.clone(),
        trg_vocab.clone(),
        Role::Dreamt,
    ))
}

#[derive(Clone, Debug)]
pub struct WakeSleepOutcome {
    pub theta: Seq2Seq,
    pub phi: Seq2Seq,
    pub metrics: Vec<IterationMetrics>,
}

fn train_with_hooks(
    model: &Seq2Seq,
    data: &Bitext,
    cfg: &WakeSleepConfig,
    hooks: &mut dyn WakeSleepHooks,
    iteration: usize,
    rng: &RngStream,
) -> Result<TrainOutcome> {
    hooks.on_train_start(iteration, model)?;
    let stopper = hooks.stopper(model.direction);
    if cfg.early_stopping && stopper.is_none() {
        return Err(Error::Config("missing dev set for early stopping".into()));
    }
    train_mle(model, data, &cfg.hyper, stopper.as_ref(), rng)
}

/// Runs `cfg.iterations` wake-sleep iterations from MLE-trained θ and φ.
/// `bitext` is oriented source→target; `mono_src` is required in symmetric
/// mode and for the LM in strict mode.
pub fn run_wake_sleep(
    theta: &Seq2Seq,
    phi: &Seq2Seq,
    bitext: &Bitext,
    mono_src: Option<&Monotext>,
    mono_trg: &Monotext,
    cfg: &WakeSleepConfig,
    hooks: &mut dyn WakeSleepHooks,
) -> Result<WakeSleepOutcome> {
    cfg.validate()?;
    if theta.direction != Direction::Forward
        || phi.direction != Direction::Backward
        || theta.src_vocab_hash != phi.trg_vocab_hash
        || theta.trg_vocab_hash != phi.src_vocab_hash
    {
        return Err(Error::DirectionMismatch(
            "θ must be forward, φ backward, over mirrored vocabularies".into(),
        ));
    }
    let (src_vocab, trg_vocab) = (&bitext.src_vocab, &bitext.trg_vocab);
    let lm = match (cfg.variant, cfg.skip_sleep, mono_src) {
        (SleepVariant::Strict, false, Some(m)) => Some(build_lm(m)?),
        (SleepVariant::Strict, false, None) => {
            return Err(Error::Config("strict mode needs a source monotext for the LM".into()))
        }
        (SleepVariant::Symmetric, false, None) => {
            return Err(Error::Config("symmetric mode needs a source monotext".into()))
        }
        _ => None,
    };
    let observed_rev = bitext.reversed();
    let root = RngStream::from_seed(cfg.seed);

    let mut theta = theta.clone();
    let mut phi = phi.clone();
    let mut first = IterationMetrics {
        iteration: 0,
        theta_hash: model_hash(&theta),
        phi_hash: model_hash(&phi),
        ..Default::default()
    };
    hooks.on_iteration(&mut first, &theta, &phi)?;
    let mut metrics = vec![first];

    for i in 1..=cfg.iterations {
        let it = root.derive(&format!("iter{i}"));
        // wake
        let wake_cfg = decode_config(&phi, cfg.wake_mode, cfg.temperature);
        let back = wake_phase(&phi, mono_trg, src_vocab, &wake_cfg, &it.derive("wake"))?;
        hooks.on_corpus(i, "back", &back)?;
        let data = union(bitext, &back)?;
        let out = train_with_hooks(&theta, &data, cfg, hooks, i, &it.derive("train-theta"))?;
        theta = out.model;
        let theta_epoch = out.best_epoch;

        // sleep
        let (dreamt_size, phi_epoch) = if cfg.skip_sleep {
            (None, None)
        } else {
            let sleep_cfg = decode_config(&theta, cfg.sleep_mode, cfg.temperature);
            let sleep_rng = it.derive("sleep");
            // φ's orientation: input target, output source
            let hallucinated = match cfg.variant {
                SleepVariant::Strict => {
                    let lm = lm.as_ref().expect("built above");
                    let m = cfg.dream_count.unwrap_or(lm.total as usize);
                    let dreamt = sleep_phase(&theta, lm, trg_vocab, m, &sleep_cfg, &sleep_rng)?;
                    hooks.on_corpus(i, "dreamt", &dreamt)?;
                    dreamt.reversed()
                }
                SleepVariant::Symmetric => {
                    let m = mono_src.expect("checked above");
                    let fwd_cfg = decode_config(&theta, cfg.wake_mode, cfg.temperature);
                    let b = hallucinate(&theta, m, trg_vocab, &fwd_cfg, &sleep_rng, Role::Back)?;
                    hooks.on_corpus(i, "back-reverse", &b)?;
                    b
                }
            };
            let size = hallucinated.len();
            let data = if cfg.sleep_includes_bitext {
                union(&observed_rev, &hallucinated)?
            } else {
                hallucinated
            };
            let out = train_with_hooks(&phi, &data, cfg, hooks, i, &it.derive("train-phi"))?;
            phi = out.model;
            (Some(size), Some(out.best_epoch))
        };

        let mut record = IterationMetrics {
            iteration: i,
            back_size: Some(back.len()),
            dreamt_size,
            theta_best_epoch: Some(theta_epoch),
            phi_best_epoch: phi_epoch,
            theta_hash: model_hash(&theta),
            phi_hash: model_hash(&phi),
            ..Default::default()
        };
        hooks.on_iteration(&mut record, &theta, &phi)?;
        log::info!("wake-sleep iteration {i} done");
        metrics.push(record);
    }
    Ok(WakeSleepOutcome { theta, phi, metrics })
}
