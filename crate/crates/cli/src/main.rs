mod logging;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use bitext_core::config::ExperimentConfig;
use bitext_core::corpus::{file_checksum, load_monotext, OovPolicy, Vocabulary};
use bitext_core::eval::{bleu, paired_significance, render_report, SignificanceConfig};
use bitext_core::exactinference::{
    autoencoder_objective, exact_sleep_objective, marginal_log_likelihood, mc_sleep_objective, mean_inclusive_kl,
};
use bitext_core::experiment::{prepare_data, run_experiment, train_initial_direction, Evaluator, RunManifest};
use bitext_core::langmodel::build_lm;
use bitext_core::rng::RngStream;
use bitext_core::seq2seq::{decode_corpus, model_hash, Checkpoint, DecodeConfig, DecodeMode, Direction, Seq2Seq};
use bitext_core::subword::{learn_from_counts, MergeTable};
use bitext_core::synthdata::generate_task;
use bitext_core::wakesleep::IterationMetrics;

const WORKERS_ENV: &str = "BITEXT_WORKERS";

#[derive(Parser, Debug)]
#[command(name = "bitext", version, about = "Wake-sleep back-translation laboratory")]
struct Cli {
    /// Worker threads for decoding, training chunks and significance trials.
    #[arg(long, global = true, env = WORKERS_ENV)]
    workers: Option<usize>,
    /// error, warn, info, debug, trace or off.
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    /// Where to write this run's manifest (default: next to the output).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed (mandatory when no config file is given).
    #[arg(long)]
    seed: Option<u64>,
    /// Corpus directory (vocab.*, train.*, mono.*, dev.*, test.*); synthetic task if absent.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Any config key, e.g. `--set train.max_epochs=5`. Wins over the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic translation task.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn BPE merges from whitespace-tokenized text files.
    BpeLearn {
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        merges: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment text with a merge table, or undo the segmentation.
    BpeApply {
        #[arg(long)]
        merges: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        undo: bool,
    },
    /// Iteration-0 MLE training of one direction with dev-set early stopping.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// forward (source→target) or backward.
        #[arg(long, default_value = "forward")]
        direction: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a corpus with a checkpoint.
    Translate {
        #[arg(long)]
        model: PathBuf,
        /// Vocabulary of the model's input side.
        #[arg(long)]
        input_vocab: PathBuf,
        /// Vocabulary of the model's output side.
        #[arg(long)]
        output_vocab: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "beam")]
        mode: String,
        #[arg(long, default_value_t = 10)]
        beam_width: usize,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Full experiment: iteration-0 MLE, then wake-sleep iterations with evaluation.
    Wakesleep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        wake_mode: Option<String>,
        #[arg(long)]
        sleep_mode: Option<String>,
        /// strict or symmetric.
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
    /// Corpus BLEU, and paired significance against a baseline.
    Evaluate {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        lowercase: bool,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Exact-inference diagnostics for a forward/backward model pair.
    Diagnose {
        /// Forward (source→target) checkpoint.
        #[arg(long)]
        theta: PathBuf,
        /// Backward (target→source) checkpoint.
        #[arg(long)]
        phi: PathBuf,
        #[arg(long)]
        src_vocab: PathBuf,
        #[arg(long)]
        trg_vocab: PathBuf,
        /// Source monotext defining the categorical language model.
        #[arg(long)]
        lm: PathBuf,
        /// Target sentences to condition on.
        #[arg(long)]
        targets: PathBuf,
        /// Monte Carlo sample size for the sleep objective.
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// Also enumerate the exact sleep objective (exponential in max_len).
        #[arg(long)]
        exact: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render the results table of a run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        tsv: bool,
    },
}

/// A failure with a stable kind for the one-line error record.
struct Failure {
    kind: &'static str,
    message: String,
}

impl From<bitext_core::Error> for Failure {
    fn from(e: bitext_core::Error) -> Self {
        Failure {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        kind: "usage",
        message: message.into(),
    }
}

type CliResult<T> = Result<T, Failure>;

fn fail_line(f: &Failure) -> String {
    serde_json::json!({"error": {"kind": f.kind, "message": f.message}}).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", fail_line(&usage(first)));
            return ExitCode::from(2);
        }
    };
    if let Err(m) = logging::init(&cli.log_level) {
        eprintln!("{}", fail_line(&usage(m)));
        return ExitCode::from(2);
    }
    if let Some(n) = cli.workers {
        if n == 0 || rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            eprintln!("{}", fail_line(&usage("workers must be a positive integer")));
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", fail_line(&f));
            ExitCode::from(if f.kind == "usage" { 2 } else { 1 })
        }
    }
}

fn load_config(a: &ConfigArgs, extra: &[(String, String)]) -> CliResult<ExperimentConfig> {
    let file = a.config.as_deref().map(ExperimentConfig::load).transpose()?;
    let mut pairs: Vec<(String, String)> = match &file {
        Some(c) => c.to_map().into_iter().collect(),
        None => Vec::new(),
    };
    if let Some(s) = a.seed {
        pairs.push(("seed".into(), s.to_string()));
    }
    if let Some(d) = &a.data_dir {
        pairs.push(("data.dir".into(), d.display().to_string()));
    }
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        pairs.push((k.trim().into(), v.trim().into()));
    }
    pairs.extend(extra.iter().cloned());
    let base = if let Some(c) = file {
        c
    } else {
        // the file-less path still needs an explicit seed
        let seed = a.seed.ok_or_else(|| usage("either --config or --seed is required"))?;
        ExperimentConfig::desk(seed)
    };
    let cfg = base.with_overrides(&pairs)?;
    if let Some(d) = &cfg.data_dir {
        if !d.is_dir() {
            return Err(usage(format!("data directory {} does not exist", d.display())));
        }
    }
    Ok(cfg)
}

fn checksums(paths: &[&Path]) -> CliResult<Vec<(String, String)>> {
    paths
        .iter()
        .map(|p| Ok((p.display().to_string(), file_checksum(p)?)))
        .collect()
}

fn write_manifest(
    cli: &Cli,
    default: PathBuf,
    command: &str,
    seed: u64,
    mut config: BTreeMap<String, String>,
    corpora: Vec<(String, String)>,
) -> CliResult<()> {
    config.insert("command".into(), command.into());
    let m = RunManifest {
        code_version: bitext_core::experiment::CODE_VERSION.into(),
        seed,
        config,
        corpora,
    };
    let path = cli.manifest.clone().unwrap_or(default);
    m.write(&path)?;
    log::info!("manifest written to {}", path.display());
    Ok(())
}

fn sibling(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn map(pairs: &[(&str, String)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| Failure {
        kind: "io",
        message: format!("cannot write {}: {e}", path.display()),
    })
}

fn read_lines(path: &Path) -> CliResult<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Failure {
        kind: "io",
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    Ok(text.lines().map(str::to_string).collect())
}

fn load_model(path: &Path, input: &Vocabulary, output: &Vocabulary) -> CliResult<Seq2Seq> {
    let m = Checkpoint::load(path)?.model;
    if m.src_vocab_hash != input.hash() || m.trg_vocab_hash != output.hash() {
        return Err(bitext_core::Error::VocabularyMismatch(format!(
            "{} was trained with other vocabularies",
            path.display()
        ))
        .into());
    }
    Ok(m)
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Synth { cfg, out } => {
            let cfg = load_config(cfg, &[])?;
            let task = generate_task(&cfg.task)?;
            let manifest = task.write(out)?;
            log::info!("wrote task {} to {}", cfg.task.kind.as_str(), out.display());
            write_manifest(
                cli,
                out.join("run.manifest.json"),
                "synth",
                cfg.seed,
                cfg.to_map(),
                manifest.files,
            )
        }
        Command::BpeLearn { input, merges, out } => {
            let mut counts: BTreeMap<String, u64> = BTreeMap::new();
            for p in input {
                for line in read_lines(p)? {
                    for w in line.split_whitespace() {
                        *counts.entry(w.to_string()).or_default() += 1;
                    }
                }
            }
            let table = learn_from_counts(counts.into_iter().collect(), *merges)?;
            table.save(out)?;
            log::info!("learned {} merges", table.len());
            let paths: Vec<&Path> = input.iter().map(PathBuf::as_path).collect();
            write_manifest(
                cli,
                sibling(out, ".manifest.json"),
                "bpe-learn",
                0,
                map(&[("merges", merges.to_string()), ("out", out.display().to_string())]),
                checksums(&paths)?,
            )
        }
        Command::BpeApply {
            merges,
            input,
            out,
            undo,
        } => {
            let table = MergeTable::load(merges)?;
            let mut text = String::new();
            for line in read_lines(input)? {
                let toks: Vec<String> = if *undo {
                    let subs: Vec<&str> = line.split_whitespace().collect();
                    table.join(&subs)
                } else {
                    table.segment_line(&line)
                };
                text.push_str(&toks.join(" "));
                text.push('\n');
            }
            write_text(out, &text)?;
            write_manifest(
                cli,
                sibling(out, ".manifest.json"),
                "bpe-apply",
                0,
                map(&[("undo", undo.to_string()), ("out", out.display().to_string())]),
                checksums(&[merges, input])?,
            )
        }
        Command::Train { cfg, direction, out } => {
            let cfg = load_config(cfg, &[])?;
            let direction = Direction::parse(direction)?;
            let data = prepare_data(&cfg)?;
            let eval = Evaluator::new(&data, &cfg, None);
            let outcome = train_initial_direction(&data, &cfg, &eval, direction)?;
            Checkpoint::new(outcome.model.clone(), Some(outcome.adam)).save(out)?;
            log::info!(
                "trained {direction} model {} (best epoch {}, dev BLEU {:.2})",
                model_hash(&outcome.model),
                outcome.best_epoch,
                eval.dev_bleu(&outcome.model)?
            );
            let mut conf = cfg.to_map();
            conf.insert("direction".into(), direction.to_string());
            write_manifest(
                cli,
                sibling(out, ".manifest.json"),
                "train",
                cfg.seed,
                conf,
                data.checksums,
            )
        }
        Command::Translate {
            model,
            input_vocab,
            output_vocab,
            input,
            out,
            mode,
            beam_width,
            temperature,
            seed,
        } => {
            let iv = Arc::new(Vocabulary::load(input_vocab)?);
            let ov = Vocabulary::load(output_vocab)?;
            let m = load_model(model, &iv, &ov)?;
            let mode = DecodeMode::parse(mode)?;
            let dc = DecodeConfig {
                mode,
                beam_width: *beam_width,
                max_len: m.max_len(),
                temperature: *temperature,
            };
            dc.validate()?;
            let xs = load_monotext(input, iv, OovPolicy::Strict)?;
            for x in &xs.sentences {
                if !m.fits(x) {
                    return Err(bitext_core::Error::Overlong {
                        len: x.len(),
                        max_len: m.max_len(),
                    }
                    .into());
                }
            }
            let ys = decode_corpus(&m, &xs.sentences, &dc, &RngStream::from_seed(*seed));
            let text: String = ys.iter().map(|y| ov.decode(y) + "\n").collect();
            write_text(out, &text)?;
            log::info!("translated {} sentences", ys.len());
            write_manifest(
                cli,
                sibling(out, ".manifest.json"),
                "translate",
                *seed,
                map(&[
                    ("mode", mode.as_str().into()),
                    ("beam_width", beam_width.to_string()),
                    ("temperature", temperature.to_string()),
                ]),
                checksums(&[model, input_vocab, output_vocab, input])?,
            )
        }
        Command::Wakesleep {
            cfg,
            iterations,
            wake_mode,
            sleep_mode,
            variant,
            run_dir,
        } => {
            let mut extra = Vec::new();
            let mut put = |k: &str, v: Option<String>| {
                if let Some(v) = v {
                    extra.push((k.to_string(), v));
                }
            };
            put("wakesleep.iterations", iterations.map(|i| i.to_string()));
            put("wakesleep.wake_mode", wake_mode.clone());
            put("wakesleep.sleep_mode", sleep_mode.clone());
            put("wakesleep.variant", variant.clone());
            put("run.dir", run_dir.as_ref().map(|p| p.display().to_string()));
            let cfg = load_config(cfg, &extra)?;
            let dir = cfg
                .run_dir
                .clone()
                .ok_or_else(|| usage("wakesleep needs --run-dir (or run.dir in the config)"))?;
            let out = run_experiment(&cfg)?;
            print!("{}", out.report.text);
            // run_experiment already wrote dir/manifest.json; an explicit --manifest gets a copy
            if let Some(p) = &cli.manifest {
                fs::copy(dir.join("manifest.json"), p).map_err(|e| Failure {
                    kind: "io",
                    message: format!("cannot write {}: {e}", p.display()),
                })?;
            }
            Ok(())
        }
        Command::Evaluate {
            hyp,
            reference,
            baseline,
            lowercase,
            trials,
            alpha,
            seed,
        } => {
            let h = read_lines(hyp)?;
            let r = read_lines(reference)?;
            let s = bleu(&h, &r, *lowercase)?;
            let p = s.precisions.map(|x| 100.0 * x);
            println!(
                "BLEU = {:.2} {:.1}/{:.1}/{:.1}/{:.1} (BP = {:.3} hyp_len = {} ref_len = {})",
                s.score, p[0], p[1], p[2], p[3], s.brevity_penalty, s.hyp_len, s.ref_len
            );
            let mut files = vec![hyp.as_path(), reference.as_path()];
            if let Some(b) = baseline {
                let bl = read_lines(b)?;
                let cfg = SignificanceConfig {
                    trials: *trials,
                    alpha: *alpha,
                    lowercase: *lowercase,
                };
                let sig = paired_significance(&h, &bl, &r, &cfg, &RngStream::from_seed(*seed))?;
                println!(
                    "delta = {:+.2} p = {:.4} {}",
                    sig.observed_delta,
                    sig.p_value,
                    if sig.significant {
                        "significant"
                    } else {
                        "not significant"
                    }
                );
                files.push(b);
            }
            write_manifest(
                cli,
                sibling(hyp, ".evaluate.manifest.json"),
                "evaluate",
                *seed,
                map(&[
                    ("lowercase", lowercase.to_string()),
                    ("trials", trials.to_string()),
                    ("alpha", alpha.to_string()),
                ]),
                checksums(&files)?,
            )
        }
        Command::Diagnose {
            theta,
            phi,
            src_vocab,
            trg_vocab,
            lm,
            targets,
            samples,
            exact,
            seed,
        } => {
            let sv = Arc::new(Vocabulary::load(src_vocab)?);
            let tv = Arc::new(Vocabulary::load(trg_vocab)?);
            let p = load_model(theta, &sv, &tv)?;
            let q = load_model(phi, &tv, &sv)?;
            let lm_model = build_lm(&load_monotext(lm, sv.clone(), OovPolicy::Strict)?)?;
            let ys = load_monotext(targets, tv.clone(), OovPolicy::Strict)?.sentences;
            if ys.is_empty() {
                return Err(bitext_core::Error::Empty("target file").into());
            }
            let n = ys.len() as f64;
            let mut mll = 0.0;
            let mut ae = 0.0;
            for y in &ys {
                mll += marginal_log_likelihood(&p, &lm_model, y)?;
                ae += autoencoder_objective(&p, &q, y, &lm_model)?;
            }
            let mut out = serde_json::json!({
                "lm_support": lm_model.len(),
                "targets": ys.len(),
                "mean_marginal_log_likelihood": mll / n,
                "mean_inclusive_kl": mean_inclusive_kl(&p, &lm_model, &q, &ys)?,
                "mean_autoencoder_objective": ae / n,
                "mc_sleep_objective": mc_sleep_objective(&p, &lm_model, &tv, &q, *samples, &RngStream::from_seed(*seed))?,
            });
            if *exact {
                out["exact_sleep_objective"] = exact_sleep_objective(&p, &lm_model, &q, p.max_len())?.into();
            }
            println!("{out}");
            write_manifest(
                cli,
                sibling(targets, ".diagnose.manifest.json"),
                "diagnose",
                *seed,
                map(&[("samples", samples.to_string()), ("exact", exact.to_string())]),
                checksums(&[theta, phi, src_vocab, trg_vocab, lm, targets])?,
            )
        }
        Command::Report { run, tsv } => {
            let manifest = RunManifest::load(&run.join("manifest.json"))?;
            let cfg = manifest.config()?;
            let metrics: Vec<IterationMetrics> = read_lines(&run.join("metrics.jsonl"))?
                .iter()
                .filter(|l| !l.trim().is_empty())
                .map(|l| {
                    serde_json::from_str(l).map_err(|e| Failure {
                        kind: "format",
                        message: format!("metrics.jsonl: {e}"),
                    })
                })
                .collect::<CliResult<_>>()?;
            let r = render_report(&metrics, [&cfg.src_label, &cfg.trg_label]);
            print!("{}", if *tsv { &r.tsv } else { &r.text });
            write_manifest(
                cli,
                run.join("report.manifest.json"),
                "report",
                cfg.seed,
                map(&[("tsv", tsv.to_string())]),
                checksums(&[&run.join("metrics.jsonl"), &run.join("manifest.json")])?,
            )
        }
    }
}
