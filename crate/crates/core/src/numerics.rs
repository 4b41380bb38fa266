//! Dense row-major matrices and a seedable random stream.
//!
//! This is the only numeric substrate used by the model and the training
//! loop. Everything is `f64`.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch: {op} on {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("data length {len} does not match shape {rows}x{cols}")]
    BadLength { rows: usize, cols: usize, len: usize },
    #[error("non-finite entry at index {0}")]
    NonFinite(usize),
    #[error("bad sampling range: {0}")]
    BadRange(String),
}

pub type Result<T> = std::result::Result<T, NumericsError>;

/// Row-major dense matrix of finite `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl<'de> Deserialize<'de> for Matrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawMatrix::deserialize(d)?;
        Matrix::new(raw.rows, raw.cols, raw.data).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => relu(x),
        }
    }
}

impl Matrix {
    /// Builds a matrix, rejecting wrong lengths and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(NumericsError::BadLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite(idx));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(NumericsError::BadLength {
                rows: r,
                cols: c,
                len: rows.iter().map(Vec::len).sum(),
            });
        }
        Self::new(r, c, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the raw buffer. Callers are responsible for keeping
    /// entries finite; `debug_check` verifies it in debug builds.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    #[inline]
    fn debug_check(self) -> Self {
        debug_assert!(self.is_finite(), "matrix op produced non-finite values");
        self
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for (o, b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out.debug_check())
    }

    pub fn elementwise(&self, op: ElementwiseOp, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "elementwise",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let f: fn(f64, f64) -> f64 = match op {
            ElementwiseOp::Add => |a, b| a + b,
            ElementwiseOp::Sub => |a, b| a - b,
            ElementwiseOp::Mul => |a, b| a * b,
        };
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
        .debug_check())
    }

    pub fn map(&self, f: Activation) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f.apply(x)).collect(),
        }
        .debug_check()
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "add_assign",
                left: self.shape(),
                right: other.shape(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Numerically stable row-wise softmax.
    pub fn softmax_rows(&self) -> Matrix {
        let mut out = self.clone();
        for r in 0..self.rows {
            softmax_in_place(out.row_mut(r));
        }
        out.debug_check()
    }
}

/// Softmax of a single row, in place: subtract the max, exponentiate, normalize.
pub fn softmax_in_place(row: &mut [f64]) {
    if row.is_empty() {
        return;
    }
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `out += x · W` where `x` has length `W.rows()` and `out` has length `W.cols()`.
#[inline]
pub fn vecmat_acc(x: &[f64], w: &Matrix, out: &mut [f64]) {
    debug_assert_eq!(x.len(), w.rows);
    debug_assert_eq!(out.len(), w.cols);
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (o, wij) in out.iter_mut().zip(w.row(i)) {
            *o += xi * wij;
        }
    }
}

/// `out += W · y` where `y` has length `W.cols()` and `out` has length `W.rows()`.
#[inline]
pub fn matvec_acc(w: &Matrix, y: &[f64], out: &mut [f64]) {
    debug_assert_eq!(y.len(), w.cols);
    debug_assert_eq!(out.len(), w.rows);
    for (i, o) in out.iter_mut().enumerate() {
        *o += w.row(i).iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `G += x ⊗ y` (outer product), `G` shaped `x.len() × y.len()`.
#[inline]
pub fn outer_acc(x: &[f64], y: &[f64], g: &mut Matrix) {
    debug_assert_eq!(x.len(), g.rows);
    debug_assert_eq!(y.len(), g.cols);
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (gij, yj) in g.row_mut(i).iter_mut().zip(y) {
            *gij += xi * yj;
        }
    }
}

/// Seeded pseudo-random stream.
///
/// Backed by ChaCha8 (`rand_chacha::ChaCha8Rng`), whose output for a given
/// `(seed, stream)` pair is fixed and platform independent. Uniform reals use
/// the top 53 bits of each 64-bit draw: `(u >> 11) * 2^-53`.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent sub-stream of the same seed.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub(crate) fn inner_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.inner
    }
}

pub fn rand_uniform(rng: &mut Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Result<Matrix> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(NumericsError::BadRange(format!("uniform [{lo}, {hi})")));
    }
    let data = (0..rows * cols).map(|_| rng.uniform(lo, hi)).collect();
    Matrix::new(rows, cols, data)
}

pub fn rand_normal(rng: &mut Rng, rows: usize, cols: usize, mean: f64, std: f64) -> Result<Matrix> {
    if !(std > 0.0) || !std.is_finite() || !mean.is_finite() {
        return Err(NumericsError::BadRange(format!("normal mean={mean} std={std}")));
    }
    let dist = Normal::new(mean, std).map_err(|e| NumericsError::BadRange(e.to_string()))?;
    let data = (0..rows * cols)
        .map(|_| dist.sample(rng.inner_mut()))
        .collect();
    Matrix::new(rows, cols, data)
}
