//! Loss, optimizer and the mini-batch training loop.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{test_size, Label};
use crate::features::{EmbeddingTable, EncodedSequence, Vocabulary};
use crate::model::{self, Hyper, Mode, ModelError, ModelParams, NUM_CLASSES};
use crate::numerics::{Matrix, Rng};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no training examples")]
    EmptyCorpus,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("history export failed: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global-norm clip threshold; `None` disables clipping.
    pub grad_clip_norm: Option<f64>,
    pub seed: u64,
    /// Fraction of the training set held out for per-epoch evaluation.
    pub eval_split: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 128,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            grad_clip_norm: Some(5.0),
            seed: 0,
            eval_split: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate {} must be > 0", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.eval_split) {
            return bad(format!("eval_split {} outside [0, 1)", self.eval_split));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return bad("adam coefficients out of range".into());
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0) {
                return bad(format!("grad_clip_norm {c} must be > 0"));
            }
        }
        Ok(())
    }
}

/// Encoded sequences with their labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub sequences: Vec<EncodedSequence>,
    pub labels: Vec<Label>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            sequences: idx.iter().map(|&i| self.sequences[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Mean negative log-likelihood and the fused softmax/cross-entropy gradient
/// `(probs − onehot) / B`. Probabilities are clamped to ≥ 1e-12 before the log.
pub fn cross_entropy(probs: &Matrix, labels: &[Label]) -> Result<(f64, Matrix)> {
    if probs.rows() != labels.len() || probs.cols() != NUM_CLASSES {
        return Err(TrainError::ShapeMismatch(format!(
            "probs {:?} vs {} labels",
            probs.shape(),
            labels.len()
        )));
    }
    let b = labels.len() as f64;
    let mut grad = probs.clone();
    let mut loss = 0.0;
    for (r, label) in labels.iter().enumerate() {
        let k = label.code();
        loss -= probs.get(r, k).max(1e-12).ln();
        grad.set(r, k, grad.get(r, k) - 1.0);
    }
    grad.scale(1.0 / b);
    Ok((loss / b, grad))
}

/// First and second moments per tensor, in [`ModelParams::tensors`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Matrix> = params
            .tensors()
            .iter()
            .map(|(_, m)| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// Scale `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut ModelParams, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        let factor = max_norm / norm;
        for (_, g) in grads.tensors_mut() {
            g.scale(factor);
        }
    }
    norm
}

/// One Adam update after global-norm clipping. Frozen embeddings and the
/// PAD row are never modified. Returns the pre-clip gradient norm.
pub fn adam_step(params: &mut ModelParams, grads: &mut ModelParams, state: &mut AdamState, cfg: &TrainConfig) -> Result<f64> {
    if params.shapes() != grads.shapes() || state.m.len() != grads.tensors().len() {
        return Err(TrainError::ShapeMismatch("params, grads and optimizer state differ".into()));
    }
    if state
        .m
        .iter()
        .zip(grads.tensors())
        .any(|(m, (_, g))| m.shape() != g.shape())
    {
        return Err(TrainError::ShapeMismatch("optimizer state shapes".into()));
    }
    let norm = match cfg.grad_clip_norm {
        Some(c) => clip_global_norm(grads, c),
        None => grads.global_norm(),
    };
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let frozen_embedding = !params.embedding.trainable;
    let emb_cols = params.embedding.dim();
    for (k, ((name, p), (_, g))) in params.tensors_mut().into_iter().zip(grads.tensors()).enumerate() {
        // PAD is row 0 of the embedding
        let start = if name == "embedding" {
            if frozen_embedding {
                continue;
            }
            emb_cols
        } else {
            0
        };
        let m = state.m[k].data_mut();
        let v = state.v[k].data_mut();
        let pd = p.data_mut();
        let gd = g.data();
        for j in start..pd.len() {
            let gj = gd[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            pd[j] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub eval_loss: f64,
    pub eval_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// CSV with header `epoch,train_loss,train_acc,eval_loss,eval_acc`,
    /// values to six decimals.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,train_loss,train_acc,eval_loss,eval_acc")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6}",
                r.epoch, r.train_loss, r.train_accuracy, r.eval_loss, r.eval_accuracy
            )?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec");
        String::from_utf8(buf).expect("ascii csv")
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: History,
}

const STREAM_EVAL_SPLIT: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;
const STREAM_DROPOUT: u64 = 4;
const EVAL_BATCH: usize = 256;

fn accuracy(pred: &[Label], truth: &[Label]) -> f64 {
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}

/// Seeded split of the training indices into (fit, held-out eval).
fn eval_holdout(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n_eval = test_size(fraction, n).min(n.saturating_sub(1));
    let mut perm: Vec<usize> = (0..n).collect();
    Rng::with_stream(seed, STREAM_EVAL_SPLIT).shuffle(&mut perm);
    let mut eval = perm[..n_eval].to_vec();
    let mut fit = perm[n_eval..].to_vec();
    eval.sort_unstable();
    fit.sort_unstable();
    (fit, eval)
}

/// Train from scratch.
///
/// Each epoch: seeded shuffle, mini-batches (last one may be smaller),
/// forward in train mode, cross-entropy, backward, Adam. Then an eval-mode
/// pass over the held-out slice (or over the fit set when `eval_split`
/// leaves nothing held out). Fully determined by `cfg.seed`.
pub fn train(
    data: &Dataset,
    vocab: &Vocabulary,
    pretrained: Option<EmbeddingTable>,
    hyper: &Hyper,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    hyper.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    if data.sequences.len() != data.labels.len() {
        return Err(TrainError::ShapeMismatch("sequences and labels differ in length".into()));
    }
    let mut params = model::init_params(hyper, vocab, pretrained, cfg.seed)?;
    let mut history = History::default();
    if cfg.epochs == 0 {
        return Ok(TrainOutcome { params, history });
    }

    let (fit_idx, eval_idx) = eval_holdout(data.len(), cfg.eval_split, cfg.seed);
    let fit = data.subset(&fit_idx);
    let eval = if eval_idx.is_empty() {
        fit.clone()
    } else {
        data.subset(&eval_idx)
    };

    let mut state = AdamState::new(&params);
    let mut shuffle_rng = Rng::with_stream(cfg.seed, STREAM_SHUFFLE);
    let mut dropout_rng = Rng::with_stream(cfg.seed, STREAM_DROPOUT);
    let mut order: Vec<usize> = (0..fit.len()).collect();

    for epoch in 1..=cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (batch_no, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<EncodedSequence> = chunk.iter().map(|&i| fit.sequences[i].clone()).collect();
            let labels: Vec<Label> = chunk.iter().map(|&i| fit.labels[i]).collect();
            let out = model::forward(&batch, &params, hyper, Mode::Train, &mut dropout_rng)?;
            let (loss, grad_logits) = cross_entropy(&out.probs, &labels)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: batch_no,
                });
            }
            loss_sum += loss * chunk.len() as f64;
            correct += model::predict(&out.probs)
                .iter()
                .zip(&labels)
                .filter(|(p, t)| p == t)
                .count();
            let mut grads = model::backward(out.cache, &grad_logits, &params, hyper)?;
            adam_step(&mut params, &mut grads, &mut state, cfg)?;
            if !params.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: batch_no,
                });
            }
        }
        let (eval_loss, eval_pred) = evaluate(&params, &eval, hyper)?;
        history.records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / fit.len() as f64,
            train_accuracy: correct as f64 / fit.len() as f64,
            eval_loss,
            eval_accuracy: accuracy(&eval_pred, &eval.labels),
        });
    }
    Ok(TrainOutcome { params, history })
}

/// Eval-mode pass in dataset order: mean loss and one prediction per example.
pub fn evaluate(params: &ModelParams, data: &Dataset, hyper: &Hyper) -> Result<(f64, Vec<Label>)> {
    if data.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let mut rng = Rng::new(0); // unused in eval mode
    let mut loss_sum = 0.0;
    let mut preds = Vec::with_capacity(data.len());
    for (seqs, labels) in data.sequences.chunks(EVAL_BATCH).zip(data.labels.chunks(EVAL_BATCH)) {
        let out = model::forward(seqs, params, hyper, Mode::Eval, &mut rng)?;
        let (loss, _) = cross_entropy(&out.probs, labels)?;
        loss_sum += loss * labels.len() as f64;
        preds.extend(model::predict(&out.probs));
    }
    Ok((loss_sum / data.len() as f64, preds))
}

/// Eval-mode class probabilities for each sequence.
pub fn predict_probs(params: &ModelParams, sequences: &[EncodedSequence], hyper: &Hyper) -> Result<Matrix> {
    let mut rng = Rng::new(0);
    let mut rows = Vec::with_capacity(sequences.len());
    for chunk in sequences.chunks(EVAL_BATCH) {
        let out = model::forward(chunk, params, hyper, Mode::Eval, &mut rng)?;
        for r in 0..out.probs.rows() {
            rows.push(out.probs.row(r).to_vec());
        }
    }
    Ok(Matrix::from_rows(&rows).map_err(ModelError::from)?)
}
