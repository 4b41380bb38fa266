//! Bidirectional LSTM classifier.
//!
//! Architecture: embedding → (dropout) → forward and backward LSTMs over the
//! real tokens of each sequence → concatenated representation → dense + relu
//! → (dropout) → 3-way output layer → softmax.
//!
//! Gate equations, per direction and time step:
//!
//! ```text
//! i = σ(x·W_i + h·U_i + b_i)     f = σ(x·W_f + h·U_f + b_f)
//! o = σ(x·W_o + h·U_o + b_o)     g = tanh(x·W_g + h·U_g + b_g)
//! c' = f ⊙ c + i ⊙ g             h' = o ⊙ tanh(c')
//! ```
//!
//! Gradients are derived by hand (backpropagation through time) and checked
//! against central finite differences in the test suite.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;
use crate::features::{EmbeddingTable, EncodedSequence, Vocabulary, PAD};
use crate::numerics::{matvec_acc, outer_acc, sigmoid, vecmat_acc, Matrix, NumericsError, Rng};

pub const NUM_CLASSES: usize = 3;
pub const CHECKPOINT_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("sequence {0} in batch has no real tokens")]
    EmptySequenceInBatch(usize),
    #[error("forward cache does not match: {0}")]
    CacheMismatch(String),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyper(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// How the two directions' hidden states become one sequence vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Forward state after the last real token ++ backward state after the first.
    #[default]
    FinalState,
    /// Per-step concatenated states averaged over the real tokens.
    MeanPool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyper {
    pub hidden: usize,
    pub dense: usize,
    pub dropout: f64,
    pub max_len: usize,
    pub classes: usize,
    pub embed_dim: usize,
    pub pooling: Pooling,
    pub train_embeddings: bool,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            hidden: 128,
            dense: 256,
            dropout: 0.3,
            max_len: 300,
            classes: NUM_CLASSES,
            embed_dim: 100,
            pooling: Pooling::FinalState,
            train_embeddings: true,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.dense == 0 || self.max_len == 0 || self.embed_dim == 0 {
            return Err(ModelError::InvalidHyper("all sizes must be positive".into()));
        }
        if self.classes != NUM_CLASSES {
            return Err(ModelError::InvalidHyper(format!(
                "classes must be {NUM_CLASSES}, got {}",
                self.classes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::InvalidHyper(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

pub const GATE_I: usize = 0;
pub const GATE_F: usize = 1;
pub const GATE_O: usize = 2;
pub const GATE_G: usize = 3;
const GATE_NAMES: [&str; 4] = ["i", "f", "o", "g"];

#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    /// `d × H`
    pub w: Matrix,
    /// `H × H`
    pub u: Matrix,
    /// `1 × H`
    pub b: Matrix,
}

/// One LSTM direction; gates indexed by `GATE_I`, `GATE_F`, `GATE_O`, `GATE_G`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmDirectionParams {
    pub gates: [GateParams; 4],
}

impl LstmDirectionParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            gates: std::array::from_fn(|_| GateParams {
                w: Matrix::zeros(input, hidden),
                u: Matrix::zeros(hidden, hidden),
                b: Matrix::zeros(1, hidden),
            }),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.gates[0].w.rows()
    }

    pub fn hidden(&self) -> usize {
        self.gates[0].u.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub embedding: EmbeddingTable,
    pub forward: LstmDirectionParams,
    pub backward: LstmDirectionParams,
    /// `2H × dense`
    pub dense_w: Matrix,
    pub dense_b: Matrix,
    /// `dense × 3`
    pub out_w: Matrix,
    pub out_b: Matrix,
}

/// Gradients share the parameter layout.
pub type Grads = ModelParams;

impl ModelParams {
    pub fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        let zd = |p: &LstmDirectionParams| LstmDirectionParams::zeros(p.input_dim(), p.hidden());
        Self {
            embedding: EmbeddingTable {
                matrix: z(&self.embedding.matrix),
                trainable: self.embedding.trainable,
            },
            forward: zd(&self.forward),
            backward: zd(&self.backward),
            dense_w: z(&self.dense_w),
            dense_b: z(&self.dense_b),
            out_w: z(&self.out_w),
            out_b: z(&self.out_b),
        }
    }

    /// Every tensor with a stable name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![("embedding".to_string(), &self.embedding.matrix)];
        for (dir, p) in [("forward", &self.forward), ("backward", &self.backward)] {
            for (g, gate) in GATE_NAMES.iter().zip(&p.gates) {
                out.push((format!("{dir}.{g}.w"), &gate.w));
                out.push((format!("{dir}.{g}.u"), &gate.u));
                out.push((format!("{dir}.{g}.b"), &gate.b));
            }
        }
        out.push(("dense.w".into(), &self.dense_w));
        out.push(("dense.b".into(), &self.dense_b));
        out.push(("out.w".into(), &self.out_w));
        out.push(("out.b".into(), &self.out_b));
        out
    }

    /// Same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = vec![("embedding".to_string(), &mut self.embedding.matrix)];
        for (dir, p) in [("forward", &mut self.forward), ("backward", &mut self.backward)] {
            for (g, gate) in GATE_NAMES.iter().zip(p.gates.iter_mut()) {
                out.push((format!("{dir}.{g}.w"), &mut gate.w));
                out.push((format!("{dir}.{g}.u"), &mut gate.u));
                out.push((format!("{dir}.{g}.b"), &mut gate.b));
            }
        }
        out.push(("dense.w".into(), &mut self.dense_w));
        out.push(("dense.b".into(), &mut self.dense_b));
        out.push(("out.w".into(), &mut self.out_w));
        out.push(("out.b".into(), &mut self.out_b));
        out
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.tensors().iter().map(|(_, m)| m.shape()).collect()
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors().iter().map(|(_, m)| m.sum_squares()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }

    fn check_against(&self, hyper: &Hyper) -> Result<()> {
        let (d, h) = (hyper.embed_dim, hyper.hidden);
        if self.embedding.dim() != d {
            return Err(ModelError::DimensionMismatch {
                expected: d,
                found: self.embedding.dim(),
            });
        }
        for p in [&self.forward, &self.backward] {
            for g in &p.gates {
                if g.w.shape() != (d, h) || g.u.shape() != (h, h) || g.b.shape() != (1, h) {
                    return Err(ModelError::ShapeMismatch("lstm gate shapes".into()));
                }
            }
        }
        if self.dense_w.shape() != (2 * h, hyper.dense)
            || self.dense_b.shape() != (1, hyper.dense)
            || self.out_w.shape() != (hyper.dense, NUM_CLASSES)
            || self.out_b.shape() != (1, NUM_CLASSES)
        {
            return Err(ModelError::ShapeMismatch("dense/output shapes".into()));
        }
        Ok(())
    }
}

fn glorot(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Result<Matrix> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Ok(crate::numerics::rand_uniform(rng, fan_in, fan_out, -limit, limit)?)
}

const STREAM_INIT: u64 = 1;

/// Glorot-uniform weights, zero biases, forget-gate bias 1.
///
/// Without `pretrained`, the embedding table is uniform(-0.05, 0.05) from
/// the same seed.
pub fn init_params(
    hyper: &Hyper,
    vocab: &Vocabulary,
    pretrained: Option<EmbeddingTable>,
    seed: u64,
) -> Result<ModelParams> {
    hyper.validate()?;
    let (d, h) = (hyper.embed_dim, hyper.hidden);
    let mut embedding = match pretrained {
        Some(t) => {
            if t.vocab_size() != vocab.len() {
                return Err(ModelError::ShapeMismatch(format!(
                    "pretrained table has {} rows, vocabulary has {}",
                    t.vocab_size(),
                    vocab.len()
                )));
            }
            if t.dim() != d {
                return Err(ModelError::DimensionMismatch {
                    expected: d,
                    found: t.dim(),
                });
            }
            t
        }
        None => EmbeddingTable::random(vocab.len(), d, seed),
    };
    embedding.trainable = hyper.train_embeddings;
    embedding.zero_pad_row();

    let mut rng = Rng::with_stream(seed, STREAM_INIT);
    let direction = |rng: &mut Rng| -> Result<LstmDirectionParams> {
        let mut p = LstmDirectionParams::zeros(d, h);
        for (k, gate) in p.gates.iter_mut().enumerate() {
            gate.w = glorot(rng, d, h)?;
            gate.u = glorot(rng, h, h)?;
            if k == GATE_F {
                gate.b.fill(1.0);
            }
        }
        Ok(p)
    };
    let forward = direction(&mut rng)?;
    let backward = direction(&mut rng)?;
    Ok(ModelParams {
        embedding,
        forward,
        backward,
        dense_w: glorot(&mut rng, 2 * h, hyper.dense)?,
        dense_b: Matrix::zeros(1, hyper.dense),
        out_w: glorot(&mut rng, hyper.dense, NUM_CLASSES)?,
        out_b: Matrix::zeros(1, NUM_CLASSES),
    })
}

/// Gate activations of one step, each of length H.
#[derive(Debug, Clone, PartialEq)]
pub struct GateCache {
    pub gates: [Vec<f64>; 4],
}

/// One LSTM step. Returns `(h_t, c_t, gates)`.
pub fn lstm_cell(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    p: &LstmDirectionParams,
) -> Result<(Vec<f64>, Vec<f64>, GateCache)> {
    let (d, h) = (p.input_dim(), p.hidden());
    if x.len() != d || h_prev.len() != h || c_prev.len() != h {
        return Err(ModelError::ShapeMismatch(format!(
            "lstm_cell expects x:{d} h:{h} c:{h}, got x:{} h:{} c:{}",
            x.len(),
            h_prev.len(),
            c_prev.len()
        )));
    }
    Ok(cell_step(x, h_prev, c_prev, p))
}

fn cell_step(x: &[f64], h_prev: &[f64], c_prev: &[f64], p: &LstmDirectionParams) -> (Vec<f64>, Vec<f64>, GateCache) {
    let gates: [Vec<f64>; 4] = std::array::from_fn(|k| {
        let gp = &p.gates[k];
        let mut pre = gp.b.data().to_vec();
        vecmat_acc(x, &gp.w, &mut pre);
        vecmat_acc(h_prev, &gp.u, &mut pre);
        if k == GATE_G {
            pre.iter_mut().for_each(|v| *v = v.tanh());
        } else {
            pre.iter_mut().for_each(|v| *v = sigmoid(*v));
        }
        pre
    });
    let c: Vec<f64> = (0..c_prev.len())
        .map(|j| gates[GATE_F][j] * c_prev[j] + gates[GATE_I][j] * gates[GATE_G][j])
        .collect();
    let h: Vec<f64> = c
        .iter()
        .zip(&gates[GATE_O])
        .map(|(c, o)| o * c.tanh())
        .collect();
    (h, c, GateCache { gates })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// States of one direction over the real tokens, in processing order.
/// `h[0]` and `c[0]` are the zero initial state.
#[derive(Debug, Clone)]
struct DirTrace {
    h: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    gates: Vec<GateCache>,
}

fn run_direction<'a>(p: &LstmDirectionParams, xs: impl Iterator<Item = &'a Vec<f64>>) -> DirTrace {
    let hdim = p.hidden();
    let mut trace = DirTrace {
        h: vec![vec![0.0; hdim]],
        c: vec![vec![0.0; hdim]],
        gates: Vec::new(),
    };
    for x in xs {
        let (h, c, g) = cell_step(x, trace.h.last().unwrap(), trace.c.last().unwrap(), p);
        trace.h.push(h);
        trace.c.push(c);
        trace.gates.push(g);
    }
    trace
}

/// Backpropagation through time for one direction.
///
/// `dh_out[k]` is the loss gradient arriving at the hidden state produced by
/// step `k`. Parameter gradients are accumulated into `grads`; returns the
/// gradient for each step's input vector.
fn bptt<'a>(
    p: &LstmDirectionParams,
    trace: &DirTrace,
    xs: impl DoubleEndedIterator<Item = &'a Vec<f64>> + ExactSizeIterator,
    dh_out: &[Vec<f64>],
    grads: &mut LstmDirectionParams,
) -> Vec<Vec<f64>> {
    let (d, hdim) = (p.input_dim(), p.hidden());
    let steps = trace.gates.len();
    let mut dxs = vec![vec![0.0; d]; steps];
    let mut dh_next = vec![0.0; hdim];
    let mut dc_next = vec![0.0; hdim];
    let mut da: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; hdim]);
    for (k, x) in xs.enumerate().rev() {
        let gc = &trace.gates[k].gates;
        let (i, f, o, g) = (&gc[GATE_I], &gc[GATE_F], &gc[GATE_O], &gc[GATE_G]);
        let c = &trace.c[k + 1];
        let c_prev = &trace.c[k];
        let h_prev = &trace.h[k];
        for j in 0..hdim {
            let dh = dh_out[k][j] + dh_next[j];
            let tc = c[j].tanh();
            let d_o = dh * tc;
            let dc = dc_next[j] + dh * o[j] * (1.0 - tc * tc);
            let di = dc * g[j];
            let dg = dc * i[j];
            let df = dc * c_prev[j];
            dc_next[j] = dc * f[j];
            da[GATE_I][j] = di * i[j] * (1.0 - i[j]);
            da[GATE_F][j] = df * f[j] * (1.0 - f[j]);
            da[GATE_O][j] = d_o * o[j] * (1.0 - o[j]);
            da[GATE_G][j] = dg * (1.0 - g[j] * g[j]);
        }
        dh_next.fill(0.0);
        for (gate, (gp, gg)) in p.gates.iter().zip(grads.gates.iter_mut()).enumerate() {
            let a = &da[gate];
            outer_acc(x, a, &mut gg.w);
            outer_acc(h_prev, a, &mut gg.u);
            for (b, v) in gg.b.data_mut().iter_mut().zip(a) {
                *b += v;
            }
            matvec_acc(&gp.w, a, &mut dxs[k]);
            matvec_acc(&gp.u, a, &mut dh_next);
        }
    }
    dxs
}

/// Everything backward needs for one example.
#[derive(Debug, Clone)]
struct ExampleCache {
    ids: Vec<usize>,
    /// Embedded inputs after dropout, time order.
    xs: Vec<Vec<f64>>,
    emb_mask: Option<Vec<Vec<f64>>>,
    fwd: DirTrace,
    bwd: DirTrace,
    rep: Vec<f64>,
    dense_pre: Vec<f64>,
    dense_mask: Option<Vec<f64>>,
    dense_out: Vec<f64>,
}

/// Per-batch forward state, consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    examples: Vec<ExampleCache>,
    embed_dim: usize,
    hidden: usize,
    dense: usize,
    pooling: Pooling,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.examples.len()
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Matrix,
    pub probs: Matrix,
    pub cache: ForwardCache,
}

/// Inverted-dropout factors: 0 with probability `rate`, else `1/(1-rate)`.
pub fn dropout_mask(rng: &mut Rng, n: usize, rate: f64) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..n)
        .map(|_| if rng.next_f64() < rate { 0.0 } else { keep })
        .collect()
}

fn pool(hyper_pooling: Pooling, fwd: &DirTrace, bwd: &DirTrace) -> Vec<f64> {
    match hyper_pooling {
        Pooling::FinalState => {
            let mut rep = fwd.h.last().unwrap().clone();
            rep.extend_from_slice(bwd.h.last().unwrap());
            rep
        }
        Pooling::MeanPool => {
            let steps = fwd.gates.len() as f64;
            let mean = |t: &DirTrace| -> Vec<f64> {
                let mut m = vec![0.0; t.h[0].len()];
                for h in &t.h[1..] {
                    for (a, b) in m.iter_mut().zip(h) {
                        *a += b;
                    }
                }
                m.iter_mut().for_each(|v| *v /= steps);
                m
            };
            let mut rep = mean(fwd);
            rep.extend(mean(bwd));
            rep
        }
    }
}

/// Batch forward pass.
///
/// Only the first `true_length` ids of each sequence are read, so trailing
/// PAD never changes the output. In [`Mode::Train`], dropout masks are drawn
/// from `rng` after the embedding and after the dense layer.
pub fn forward(
    batch: &[EncodedSequence],
    params: &ModelParams,
    hyper: &Hyper,
    mode: Mode,
    rng: &mut Rng,
) -> Result<ForwardOutput> {
    hyper.validate()?;
    params.check_against(hyper)?;
    if batch.is_empty() {
        return Err(ModelError::ShapeMismatch("empty batch".into()));
    }
    let len = batch[0].ids.len();
    let vocab = params.embedding.vocab_size();
    for (b, seq) in batch.iter().enumerate() {
        if seq.ids.len() != len || seq.true_length > len {
            return Err(ModelError::ShapeMismatch(format!(
                "sequence {b} has length {} / true_length {}, batch length {len}",
                seq.ids.len(),
                seq.true_length
            )));
        }
        if seq.true_length == 0 {
            return Err(ModelError::EmptySequenceInBatch(b));
        }
        if let Some(&bad) = seq.ids[..seq.true_length].iter().find(|&&id| id >= vocab) {
            return Err(ModelError::ShapeMismatch(format!(
                "token id {bad} outside vocabulary of {vocab}"
            )));
        }
    }

    let dropout = mode == Mode::Train && hyper.dropout > 0.0;
    let mut logits = Matrix::zeros(batch.len(), NUM_CLASSES);
    let mut examples = Vec::with_capacity(batch.len());
    for (b, seq) in batch.iter().enumerate() {
        let ids = seq.ids[..seq.true_length].to_vec();
        let mut xs: Vec<Vec<f64>> = ids.iter().map(|&id| params.embedding.row(id).to_vec()).collect();
        let emb_mask = dropout.then(|| {
            xs.iter_mut()
                .map(|x| {
                    let m = dropout_mask(rng, x.len(), hyper.dropout);
                    x.iter_mut().zip(&m).for_each(|(v, k)| *v *= k);
                    m
                })
                .collect::<Vec<_>>()
        });
        let fwd = run_direction(&params.forward, xs.iter());
        let bwd = run_direction(&params.backward, xs.iter().rev());
        let rep = pool(hyper.pooling, &fwd, &bwd);

        let mut dense_pre = params.dense_b.data().to_vec();
        vecmat_acc(&rep, &params.dense_w, &mut dense_pre);
        let mut dense_out: Vec<f64> = dense_pre.iter().map(|&v| v.max(0.0)).collect();
        let dense_mask = dropout.then(|| {
            let m = dropout_mask(rng, dense_out.len(), hyper.dropout);
            dense_out.iter_mut().zip(&m).for_each(|(v, k)| *v *= k);
            m
        });

        let row = logits.row_mut(b);
        row.copy_from_slice(params.out_b.data());
        vecmat_acc(&dense_out, &params.out_w, row);

        examples.push(ExampleCache {
            ids,
            xs,
            emb_mask,
            fwd,
            bwd,
            rep,
            dense_pre,
            dense_mask,
            dense_out,
        });
    }
    let probs = logits.softmax_rows();
    debug_assert!(logits.is_finite());
    Ok(ForwardOutput {
        logits,
        probs,
        cache: ForwardCache {
            examples,
            embed_dim: hyper.embed_dim,
            hidden: hyper.hidden,
            dense: hyper.dense,
            pooling: hyper.pooling,
        },
    })
}

/// Analytic gradients of the forward computation given `dL/dlogits`.
///
/// The PAD embedding row always receives zero gradient. When the embedding
/// is frozen its gradient is left at zero.
pub fn backward(cache: ForwardCache, grad_logits: &Matrix, params: &ModelParams, hyper: &Hyper) -> Result<Grads> {
    let b = cache.examples.len();
    if grad_logits.shape() != (b, NUM_CLASSES) {
        return Err(ModelError::CacheMismatch(format!(
            "grad_logits is {:?}, cache holds {b} examples",
            grad_logits.shape()
        )));
    }
    if cache.embed_dim != hyper.embed_dim
        || cache.hidden != hyper.hidden
        || cache.dense != hyper.dense
        || cache.pooling != hyper.pooling
    {
        return Err(ModelError::CacheMismatch("hyperparameters differ from forward".into()));
    }
    params
        .check_against(hyper)
        .map_err(|e| ModelError::CacheMismatch(e.to_string()))?;

    let h = hyper.hidden;
    let mut grads = params.zeros_like();
    for (ex, g_row) in cache.examples.iter().zip((0..b).map(|r| grad_logits.row(r))) {
        // output layer
        outer_acc(&ex.dense_out, g_row, &mut grads.out_w);
        for (gb, v) in grads.out_b.data_mut().iter_mut().zip(g_row) {
            *gb += v;
        }
        let mut d_dense = vec![0.0; hyper.dense];
        matvec_acc(&params.out_w, g_row, &mut d_dense);
        if let Some(mask) = &ex.dense_mask {
            d_dense.iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
        }
        for (v, &pre) in d_dense.iter_mut().zip(&ex.dense_pre) {
            if pre <= 0.0 {
                *v = 0.0;
            }
        }
        // dense layer
        outer_acc(&ex.rep, &d_dense, &mut grads.dense_w);
        for (gb, v) in grads.dense_b.data_mut().iter_mut().zip(&d_dense) {
            *gb += v;
        }
        let mut d_rep = vec![0.0; 2 * h];
        matvec_acc(&params.dense_w, &d_dense, &mut d_rep);

        // pooled representation → per-step hidden gradients
        let steps = ex.xs.len();
        let spread = |part: &[f64]| -> Vec<Vec<f64>> {
            match cache.pooling {
                Pooling::FinalState => {
                    let mut v = vec![vec![0.0; h]; steps];
                    v[steps - 1].copy_from_slice(part);
                    v
                }
                Pooling::MeanPool => {
                    let scaled: Vec<f64> = part.iter().map(|x| x / steps as f64).collect();
                    vec![scaled; steps]
                }
            }
        };
        let dh_fwd = spread(&d_rep[..h]);
        let dh_bwd = spread(&d_rep[h..]);

        let dx_fwd = bptt(&params.forward, &ex.fwd, ex.xs.iter(), &dh_fwd, &mut grads.forward);
        let dx_bwd = bptt(&params.backward, &ex.bwd, ex.xs.iter().rev(), &dh_bwd, &mut grads.backward);

        if params.embedding.trainable {
            for t in 0..steps {
                let id = ex.ids[t];
                if id == PAD {
                    continue;
                }
                let back = &dx_bwd[steps - 1 - t];
                let mask = ex.emb_mask.as_ref().map(|m| &m[t]);
                let row = grads.embedding.matrix.row_mut(id);
                for j in 0..row.len() {
                    let g = dx_fwd[t][j] + back[j];
                    row[j] += mask.map_or(g, |m| g * m[j]);
                }
            }
        }
    }
    grads.embedding.zero_pad_row();
    debug_assert!(grads.is_finite());
    Ok(grads)
}

/// Row-wise argmax; ties go to the smallest class index.
pub fn predict(probs: &Matrix) -> Vec<Label> {
    (0..probs.rows())
        .map(|r| {
            let row = probs.row(r);
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            Label::from_code(best).expect("three classes")
        })
        .collect()
}

/// Serialized model: hyperparameters, vocabulary and every tensor by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: String,
    pub hyper: Hyper,
    pub vocab: Vocabulary,
    pub tensors: BTreeMap<String, Matrix>,
}

impl Checkpoint {
    pub fn new(hyper: &Hyper, vocab: &Vocabulary, params: &ModelParams) -> Self {
        Self {
            version: CHECKPOINT_VERSION.to_string(),
            hyper: hyper.clone(),
            vocab: vocab.clone(),
            tensors: params
                .tensors()
                .into_iter()
                .map(|(n, m)| (n, m.clone()))
                .collect(),
        }
    }

    /// Rebuild parameters, checking every tensor against the hyperparameters.
    pub fn params(&self) -> Result<ModelParams> {
        if self.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {:?}", self.version)));
        }
        self.hyper.validate()?;
        let vocab_size = self.vocab.len();
        let (d, h) = (self.hyper.embed_dim, self.hyper.hidden);
        if let Some(e) = self.tensors.get("embedding") {
            if e.rows() != vocab_size {
                return Err(ModelError::Checkpoint(format!(
                    "embedding has {} rows, vocabulary has {vocab_size}",
                    e.rows()
                )));
            }
            if e.cols() != d {
                return Err(ModelError::DimensionMismatch {
                    expected: d,
                    found: e.cols(),
                });
            }
        }
        let mut params = ModelParams {
            embedding: EmbeddingTable {
                matrix: Matrix::zeros(vocab_size, d),
                trainable: self.hyper.train_embeddings,
            },
            forward: LstmDirectionParams::zeros(d, h),
            backward: LstmDirectionParams::zeros(d, h),
            dense_w: Matrix::zeros(2 * h, self.hyper.dense),
            dense_b: Matrix::zeros(1, self.hyper.dense),
            out_w: Matrix::zeros(self.hyper.dense, NUM_CLASSES),
            out_b: Matrix::zeros(1, NUM_CLASSES),
        };
        for (name, slot) in params.tensors_mut() {
            let t = self
                .tensors
                .get(&name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape() != slot.shape() {
                return Err(ModelError::Checkpoint(format!(
                    "tensor {name} is {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
        if self.tensors.len() != params.tensors().len() {
            return Err(ModelError::Checkpoint("unexpected extra tensors".into()));
        }
        params.embedding.zero_pad_row();
        Ok(params)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)
            .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }
}
