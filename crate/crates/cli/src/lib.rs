//! The `newsforge` workflows: ingest, train, evaluate, predict.
//!
//! Each command takes a [`RunConfig`] and writes its human-readable output to
//! the given writer. Errors carry the process exit code: 1 for usage
//! problems, 2 for data or model problems.

mod config;

use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use newsforge_core::corpus::{load_corpus, split_corpus, Corpus};
use newsforge_core::features::{build_vocab, load_embeddings};
use newsforge_core::metrics::{confusion_labels, ReportExport};
use newsforge_core::model::{Checkpoint, ModelError};
use newsforge_core::pipeline::{build_dataset, evaluate_corpus, encode_for_model, tokenize_corpus};
use newsforge_core::textprep::preprocess;
use newsforge_core::training::{self, predict_probs, History};
use newsforge_core::{Label, PrepConfig};
use thiserror::Error;

pub use config::{PrepSection, RunConfig, TrainSection, SEED_ENV};

#[derive(Debug, Error, PartialEq)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

fn data<E: Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

fn io<E: Display>(e: E) -> CliError {
    CliError::Data(format!("write failed: {e}"))
}

/// Write through a sibling temp file and rename, so readers never see a
/// half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let res = fs::write(&tmp, bytes).and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = res {
        let _ = fs::remove_file(&tmp);
        return Err(CliError::Data(format!("{}: {e}", path.display())));
    }
    Ok(())
}

fn load(cfg: &RunConfig) -> Result<Corpus, CliError> {
    let path = cfg.corpus_path()?;
    load_corpus(path, cfg.corpus_format(path)).map_err(data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestSummary {
    pub total: usize,
    pub per_label: [usize; 3],
    pub per_source: Vec<(String, usize)>,
}

pub fn cmd_ingest(cfg: &RunConfig, out: &mut dyn Write) -> Result<IngestSummary, CliError> {
    let corpus = load(cfg)?;
    let summary = IngestSummary {
        total: corpus.len(),
        per_label: corpus.class_counts(),
        per_source: corpus.source_counts(),
    };
    writeln!(out, "documents: {}", summary.total).map_err(io)?;
    for l in Label::ALL {
        writeln!(out, "label {} ({}): {}", l.name(), l.code(), summary.per_label[l.code()]).map_err(io)?;
    }
    for (src, n) in &summary.per_source {
        let name = if src.is_empty() { "(none)" } else { src };
        writeln!(out, "source {name}: {n}").map_err(io)?;
    }
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub history: History,
    pub train_docs: usize,
    pub test_docs: usize,
    pub vocab_size: usize,
    pub embedding_coverage: Option<f64>,
}

// Removes the listed files unless disarmed.
struct Cleanup(Vec<PathBuf>);

impl Drop for Cleanup {
    fn drop(&mut self) {
        for p in &self.0 {
            let _ = fs::remove_file(p);
        }
    }
}

/// Split, preprocess, build the vocabulary, train, then write the
/// checkpoint and the history CSV.
pub fn cmd_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<TrainSummary, CliError> {
    cfg.validate()?;
    let seed = cfg.seed()?;
    let prep = cfg.prep_config()?;
    let corpus = load(cfg)?;
    let split = split_corpus(&corpus, cfg.ratio, seed, cfg.stratified).map_err(data)?;
    if split.train.is_empty() {
        return Err(CliError::Data("training split is empty".into()));
    }
    let seqs = tokenize_corpus(&split.train, &prep);
    let vocab = build_vocab(&seqs, cfg.min_freq).map_err(data)?;
    let hyper = &cfg.model;
    let (pretrained, coverage) = match &cfg.embeddings {
        Some(p) => {
            let loaded = load_embeddings(p, &vocab, hyper.embed_dim, seed).map_err(data)?;
            (Some(loaded.table), Some(loaded.coverage))
        }
        None => (None, None),
    };
    let dataset = build_dataset(&seqs, &split.train.labels(), &vocab, hyper.max_len);
    writeln!(
        out,
        "train {} docs, test {} docs, vocabulary {}",
        split.train.len(),
        split.test.len(),
        vocab.len()
    )
    .map_err(io)?;
    if let Some(c) = coverage {
        writeln!(out, "embedding coverage {:.4}", c).map_err(io)?;
    }

    let outcome = training::train(&dataset, &vocab, pretrained, hyper, &cfg.train_config(seed)).map_err(data)?;

    let ckpt = Checkpoint::new(hyper, &vocab, &outcome.params).to_json().map_err(data)?;
    let mut guard = Cleanup(Vec::new());
    write_atomic(&cfg.checkpoint, ckpt.as_bytes())?;
    guard.0.push(cfg.checkpoint.clone());
    write_atomic(&cfg.history, outcome.history.to_csv().as_bytes())?;
    guard.0.push(cfg.history.clone());

    match outcome.history.last() {
        Some(r) => writeln!(
            out,
            "epoch {}: train_loss {:.6} train_acc {:.6} eval_loss {:.6} eval_acc {:.6}",
            r.epoch, r.train_loss, r.train_accuracy, r.eval_loss, r.eval_accuracy
        ),
        None => writeln!(out, "no epochs run"),
    }
    .map_err(io)?;
    guard.0.clear();
    Ok(TrainSummary {
        history: outcome.history,
        train_docs: split.train.len(),
        test_docs: split.test.len(),
        vocab_size: vocab.len(),
        embedding_coverage: coverage,
    })
}

fn load_checkpoint(cfg: &RunConfig) -> Result<Checkpoint, CliError> {
    let ckpt = Checkpoint::load(&cfg.checkpoint).map_err(data)?;
    let (want, got) = (&cfg.model, &ckpt.hyper);
    for (expected, found) in [(want.embed_dim, got.embed_dim), (want.hidden, got.hidden), (want.dense, got.dense)] {
        if expected != found {
            return Err(data(ModelError::DimensionMismatch { expected, found }));
        }
    }
    Ok(ckpt)
}

/// Report on the held-out split defined by the config's ratio and seed.
pub fn cmd_evaluate(cfg: &RunConfig, out: &mut dyn Write) -> Result<ReportExport, CliError> {
    cfg.validate()?;
    let seed = cfg.seed()?;
    let prep = cfg.prep_config()?;
    let ckpt = load_checkpoint(cfg)?;
    let params = ckpt.params().map_err(data)?;
    let corpus = load(cfg)?;
    let split = split_corpus(&corpus, cfg.ratio, seed, cfg.stratified).map_err(data)?;
    if split.test.is_empty() {
        return Err(CliError::Data("test split is empty".into()));
    }
    let (_, preds) = evaluate_corpus(&params, &split.test, &prep, &ckpt.vocab, &ckpt.hyper).map_err(data)?;
    let cm = confusion_labels(&split.test.labels(), &preds).map_err(data)?;
    let export = ReportExport::new("test", cm).map_err(data)?;
    let json = serde_json::to_string_pretty(&export).map_err(data)?;
    write_atomic(&cfg.report, json.as_bytes())?;
    out.write_all(export.text.as_bytes()).map_err(io)?;
    Ok(export)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Scored { label: Label, probs: [f64; 3] },
    Unscorable,
}

impl Display for Prediction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Prediction::Scored { label, probs } => write!(
                f,
                "{}\t{}\t{:.4}\t{:.4}\t{:.4}",
                label.name(),
                label.code(),
                probs[0],
                probs[1],
                probs[2]
            ),
            Prediction::Unscorable => f.write_str("UNSCORABLE"),
        }
    }
}

/// One prediction per input text, in order. Texts that preprocess to
/// nothing are UNSCORABLE, or an error under `strict`.
pub fn cmd_predict(
    cfg: &RunConfig,
    inputs: &[String],
    strict: bool,
    out: &mut dyn Write,
) -> Result<Vec<Prediction>, CliError> {
    let prep: PrepConfig = cfg.prep_config()?;
    let ckpt = load_checkpoint(cfg)?;
    let params = ckpt.params().map_err(data)?;
    let tokens: Vec<_> = inputs.iter().map(|t| preprocess(t, &prep)).collect();
    if strict {
        if let Some(i) = tokens.iter().position(|t| t.is_empty()) {
            return Err(CliError::Data(format!("input {} has no tokens after preprocessing", i + 1)));
        }
    }
    let scorable: Vec<usize> = (0..tokens.len()).filter(|&i| !tokens[i].is_empty()).collect();
    let seqs: Vec<_> = scorable
        .iter()
        .map(|&i| encode_for_model(&tokens[i], &ckpt.vocab, ckpt.hyper.max_len))
        .collect();
    let mut preds = vec![Prediction::Unscorable; inputs.len()];
    if !seqs.is_empty() {
        let probs = predict_probs(&params, &seqs, &ckpt.hyper).map_err(data)?;
        let labels = newsforge_core::model::predict(&probs);
        for (row, &i) in scorable.iter().enumerate() {
            let p = probs.row(row);
            preds[i] = Prediction::Scored {
                label: labels[row],
                probs: [p[0], p[1], p[2]],
            };
        }
    }
    for p in &preds {
        writeln!(out, "{p}").map_err(io)?;
    }
    Ok(preds)
}
