//! Command-line entry points.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::audio::{build_mel_filterbank, write_features, FrontendConfig, MelFilterbank};
use crate::config::RunConfig;
use crate::ctc::greedy_decode;
use crate::data::{
    featurize_file, filter_dataset, load_manifest, parse_manifest, prepare_all, split_dataset, synth, Utterance,
};
use crate::error::{Error, IoContext, Result};
use crate::metrics::{cer, wer};
use crate::model::AcousticModel;
use crate::tensor::Tensor;
use crate::text::CharSet;
use crate::training::checkpoint::{epoch_dir_name, write_best_marker};
use crate::training::{self, evaluate, summarize, Checkpoint, CheckpointMeta, Optimizer, UtteranceResult};

pub const LOG_ENV: &str = "OKWUGBE_LOG";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const INDEX_FILE: &str = "index.jsonl";

#[derive(Debug, Parser)]
#[command(name = "lowres-asr", version, about = "CTC speech recognition for low-resource languages")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Single-threaded, fixed-seed execution.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Worker threads for per-utterance work.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute feature files for every utterance of a manifest.
    Featurize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train a model as described by --config.
    Train {
        /// Overrides the training manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Overrides the validation manifest.
        #[arg(long)]
        val_manifest: Option<PathBuf>,
        /// Overrides the run directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Overrides the epoch budget.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score a checkpoint on a manifest (CER and WER).
    Evaluate {
        /// Checkpoint directory or run directory.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Charset expected to match the checkpoint's.
        #[arg(long)]
        charset: Option<PathBuf>,
        /// Also write the full report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        batch_size: usize,
    },
    /// Print `path<TAB>transcript` for each WAV file.
    Transcribe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(required = true)]
        wavs: Vec<PathBuf>,
    },
    /// Write a synthetic tone corpus and its manifest.
    SynthCorpus {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 5)]
        n: usize,
    },
}

/// Parses the process arguments, runs the command and returns the exit code.
pub fn main() -> i32 {
    init_logging();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

pub fn run(cli: &Cli) -> Result<i32> {
    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        // fails only if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match &cli.command {
        Command::Featurize { manifest, out_dir } => cmd_featurize(cli, manifest, out_dir),
        Command::Train {
            manifest,
            val_manifest,
            out_dir,
            epochs,
        } => cmd_train(cli, manifest.as_deref(), val_manifest.as_deref(), out_dir.as_deref(), *epochs),
        Command::Evaluate {
            checkpoint,
            manifest,
            charset,
            report,
            batch_size,
        } => cmd_evaluate(cli, checkpoint, manifest, charset.as_deref(), report.as_deref(), *batch_size),
        Command::Transcribe { checkpoint, wavs } => cmd_transcribe(checkpoint, wavs),
        Command::SynthCorpus { out_dir, n } => cmd_synth_corpus(out_dir, *n, cli.seed.unwrap_or(0)),
    }
}

#[derive(Serialize)]
struct IndexLine<'a> {
    audio_path: &'a Path,
    features: String,
    n_frames: usize,
    text: &'a str,
}

fn cmd_featurize(cli: &Cli, manifest: &Path, out_dir: &Path) -> Result<i32> {
    let frontend = match &cli.config {
        Some(p) => RunConfig::load(p)?.frontend,
        None => FrontendConfig::fon(),
    };
    let fb = build_mel_filterbank(&frontend)?;
    let entries = parse_manifest(manifest)?;
    fs::create_dir_all(out_dir).with_path(out_dir)?;
    let index_path = out_dir.join(INDEX_FILE);
    let mut index = BufWriter::new(File::create(&index_path).with_path(&index_path)?);
    let mut failures = 0;
    for (i, e) in entries.iter().enumerate() {
        let stem = e.audio_path.file_stem().and_then(|s| s.to_str()).unwrap_or("utt");
        let name = format!("{i:05}_{stem}.okwf");
        let result = featurize_file(&e.audio_path, &frontend, &fb).and_then(|spec| {
            let p = out_dir.join(&name);
            write_features(BufWriter::new(File::create(&p).with_path(&p)?), &spec)?;
            Ok(spec.n_frames())
        });
        match result {
            Ok(n_frames) => {
                let line = IndexLine {
                    audio_path: &e.audio_path,
                    features: name,
                    n_frames,
                    text: &e.text,
                };
                writeln!(index, "{}", serde_json::to_string(&line)?).with_path(&index_path)?;
            }
            Err(err) => {
                failures += 1;
                eprintln!("{}: {err}", e.audio_path.display());
            }
        }
    }
    index.flush().with_path(&index_path)?;
    println!("featurized {} of {} utterances into {}", entries.len() - failures, entries.len(), out_dir.display());
    Ok(if failures == 0 { 0 } else { 1 })
}

fn cmd_train(
    cli: &Cli,
    manifest: Option<&Path>,
    val_manifest: Option<&Path>,
    out_dir: Option<&Path>,
    epochs: Option<usize>,
) -> Result<i32> {
    let config_path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("train needs --config".into()))?;
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(m) = manifest {
        cfg.data.train_manifest = m.to_path_buf();
    }
    if let Some(m) = val_manifest {
        cfg.data.val_manifest = Some(m.to_path_buf());
    }
    if let Some(d) = out_dir {
        cfg.data.output_dir = d.to_path_buf();
    }
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
    }
    let cs = CharSet::load(&cfg.data.charset)?;
    cfg.finalize(&cs)?;
    let run_dir = cfg.data.output_dir.clone();
    if run_dir.exists() && fs::read_dir(&run_dir).with_path(&run_dir)?.next().is_some() {
        return Err(Error::Config(format!("run directory {} is not empty", run_dir.display())));
    }

    let fb = build_mel_filterbank(&cfg.frontend)?;
    let train_entries = filter_dataset(&load_manifest(&cfg.data.train_manifest)?, &cfg.data.filter);
    let (train_entries, val_entries) = match &cfg.data.val_manifest {
        Some(v) => (train_entries, filter_dataset(&load_manifest(v)?, &cfg.data.filter)),
        None => {
            let (tr, va, _) = split_dataset(train_entries, &cfg.data.split, cfg.train.seed)?;
            (tr, va)
        }
    };
    let train_set = prepare_all(&train_entries, &cs, &cfg.frontend, &fb)?;
    let val_set = prepare_all(&val_entries, &cs, &cfg.frontend, &fb)?;
    println!(
        "training on {} utterances, validating on {}",
        train_set.len(),
        val_set.len()
    );

    fs::create_dir_all(&run_dir).with_path(&run_dir)?;
    let p = run_dir.join("config.toml");
    fs::write(&p, toml::to_string(&cfg)?).with_path(&p)?;
    let history_path = run_dir.join(HISTORY_FILE);
    let mut history = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&history_path)
        .with_path(&history_path)?;

    let mut model = AcousticModel::new(cfg.model.clone(), cfg.train.seed)?;
    let mut opt = Optimizer::new(cfg.train.optimizer_config(), model.params());
    let config_hash = cfg.hash()?;
    let mut previous: Option<PathBuf> = None;
    let outcome = training::train(&mut model, &mut opt, &train_set, &val_set, &cs, &cfg.train, |rec, m, o| {
        writeln!(history, "{}", serde_json::to_string(rec)?).with_path(&history_path)?;
        println!(
            "epoch {:>5}  loss {:.4}  val_loss {:.4}  CER {:6.2}%  WER {:6.2}%{}",
            rec.epoch,
            rec.train_loss,
            rec.val_loss,
            rec.val_cer,
            rec.val_wer,
            if rec.improved { "  *" } else { "" }
        );
        if rec.improved {
            let meta = CheckpointMeta {
                epoch: rec.epoch,
                step: o.steps_taken(),
                val_wer: rec.val_wer,
                val_cer: rec.val_cer,
                val_loss: rec.val_loss,
                config_hash: config_hash.clone(),
                charset_hash: cs.hash(),
                frontend: cfg.frontend.clone(),
                model: m.config().clone(),
                optimizer: *o.config(),
            };
            let name = epoch_dir_name(rec.epoch);
            Checkpoint::capture(meta, m, o, &cs)?.save(&run_dir.join(&name))?;
            write_best_marker(&run_dir, &name)?;
            if let Some(old) = previous.replace(run_dir.join(&name)) {
                fs::remove_dir_all(&old).with_path(&old)?;
            }
        }
        Ok(())
    })?;
    println!(
        "best epoch {} ({:?}); checkpoint in {}",
        outcome.best_epoch,
        outcome.stop,
        run_dir.join(epoch_dir_name(outcome.best_epoch)).display()
    );
    Ok(0)
}

#[derive(Serialize)]
struct Report<'a> {
    cer: f64,
    wer: f64,
    utterances: &'a [UtteranceResult],
    errors: &'a [(PathBuf, String)],
}

fn cmd_evaluate(
    cli: &Cli,
    checkpoint: &Path,
    manifest: &Path,
    charset: Option<&Path>,
    report: Option<&Path>,
    batch_size: usize,
) -> Result<i32> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let expected = match (charset, &cli.config) {
        (Some(p), _) => Some(CharSet::load(p)?),
        (None, Some(c)) => Some(CharSet::load(&RunConfig::load(c)?.data.charset)?),
        (None, None) => None,
    };
    if let Some(cs) = &expected {
        ckpt.check_charset(cs)?;
    }
    let model = ckpt.model()?;
    let fb = build_mel_filterbank(&ckpt.meta.frontend)?;
    let entries = parse_manifest(manifest)?;
    let mut utts: Vec<Utterance> = Vec::new();
    let mut errors: Vec<(PathBuf, String)> = Vec::new();
    for e in &entries {
        match Utterance::prepare(e, &ckpt.charset, &ckpt.meta.frontend, &fb) {
            Ok(u) => utts.push(u),
            Err(err) => errors.push((e.audio_path.clone(), err.to_string())),
        }
    }
    let summary = if utts.is_empty() {
        summarize(Vec::new())?
    } else {
        evaluate(&model, &utts, &ckpt.charset, batch_size)?
    };

    println!("{:<40} {:>8} {:>8}  reference | hypothesis", "utterance", "CER (%)", "WER (%)");
    for u in &summary.utterances {
        let rate = |r: crate::metrics::ErrorRateReport| r.rate().map_or("-".to_string(), |v| format!("{v:.2}"));
        println!(
            "{:<40} {:>8} {:>8}  {} | {}",
            u.audio_path.display(),
            rate(u.cer),
            rate(u.wer),
            u.reference,
            u.hypothesis
        );
    }
    for (p, err) in &errors {
        println!("{:<40} {:>8} {:>8}  error: {err}", p.display(), "-", "-");
    }
    println!(
        "{:<40} {:>8.2} {:>8.2}  ({} scored, {} failed)",
        "corpus",
        summary.cer,
        summary.wer,
        summary.utterances.len(),
        errors.len()
    );
    if let Some(p) = report {
        let r = Report {
            cer: summary.cer,
            wer: summary.wer,
            utterances: &summary.utterances,
            errors: &errors,
        };
        fs::write(p, serde_json::to_string_pretty(&r)?).with_path(p)?;
    }
    Ok(if errors.is_empty() { 0 } else { 1 })
}

/// Greedy transcript of one WAV file.
pub fn transcribe_file(model: &AcousticModel, frontend: &FrontendConfig, fb: &MelFilterbank, cs: &CharSet, path: &Path) -> Result<String> {
    let spec = featurize_file(path, frontend, fb)?;
    let x = Tensor::new(
        vec![1, spec.n_mels(), spec.n_frames()],
        spec.values().iter().map(|&v| v as f64).collect(),
    )?;
    let (lp, lens) = model.infer(&x, &[spec.n_frames()])?;
    let c = lp.shape()[2];
    let rows = Tensor::new(vec![lens[0], c], lp.data()[..lens[0] * c].to_vec())?;
    greedy_decode(&rows, cs)
}

fn cmd_transcribe(checkpoint: &Path, wavs: &[PathBuf]) -> Result<i32> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let model = ckpt.model()?;
    let fb = build_mel_filterbank(&ckpt.meta.frontend)?;
    let mut failures = 0;
    for w in wavs {
        match transcribe_file(&model, &ckpt.meta.frontend, &fb, &ckpt.charset, w) {
            Ok(text) => println!("{}\t{text}", w.display()),
            Err(e) => {
                failures += 1;
                eprintln!("{}\terror: {e}", w.display());
            }
        }
    }
    Ok(if failures == 0 { 0 } else { 1 })
}

fn cmd_synth_corpus(out_dir: &Path, n: usize, seed: u64) -> Result<i32> {
    let entries = synth::synth_corpus(out_dir, n, seed)?;
    for e in &entries {
        println!("{}\t{}", e.audio_path.display(), e.text);
    }
    println!("wrote {} utterances and {}", entries.len(), out_dir.join(synth::MANIFEST_NAME).display());
    Ok(0)
}

/// Scores hypotheses against references without a model (identity check helper).
pub fn score_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<(f64, f64)> {
    let rows: Vec<UtteranceResult> = pairs
        .into_iter()
        .map(|(r, h)| UtteranceResult {
            audio_path: PathBuf::new(),
            reference: r.to_string(),
            hypothesis: h.to_string(),
            wer: wer(r, h),
            cer: cer(r, h),
            loss: None,
        })
        .collect();
    let s = summarize(rows)?;
    Ok((s.wer, s.cer))
}
