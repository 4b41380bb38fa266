//! Vocabulary, fixed-length id encoding, GloVe-format embedding loading and
//! a smoothed TF-IDF vectorizer.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{Matrix, Rng};
use crate::textprep::TokenSequence;

#[derive(Debug, Error)]
pub enum FeaturesError {
    #[error("no input sequences")]
    EmptyInput,
    #[error("embedding file not found: {0}")]
    MissingFile(PathBuf),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed embedding line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("tf-idf serialization: {0}")]
    Serialization(String),
}

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Token ↔ id map. Ids 0 and 1 are reserved for PAD and UNK.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
    min_freq: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    min_freq: usize,
    tokens: Vec<String>,
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(r: VocabularyRepr) -> Self {
        // reserved slots are rebuilt, whatever the file says
        let tokens = r.tokens.into_iter().skip(2).collect::<Vec<_>>();
        Self::from_tokens(tokens, r.min_freq)
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        Self {
            min_freq: v.min_freq,
            tokens: v.id_to_token,
        }
    }
}

impl Vocabulary {
    /// Vocabulary whose ids 2.. follow `tokens` in order. Duplicates and
    /// reserved names are skipped.
    pub fn from_tokens<S: Into<String>>(tokens: impl IntoIterator<Item = S>, min_freq: usize) -> Self {
        let mut v = Self {
            token_to_id: HashMap::new(),
            id_to_token: vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()],
            min_freq,
        };
        for t in tokens {
            let t = t.into();
            if t == PAD_TOKEN || t == UNK_TOKEN || v.token_to_id.contains_key(&t) {
                continue;
            }
            v.token_to_id.insert(t.clone(), v.id_to_token.len());
            v.id_to_token.push(t);
        }
        v
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    /// Only the reserved ids are present.
    pub fn is_empty(&self) -> bool {
        self.id_to_token.len() <= 2
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    /// Corpus tokens with their ids (reserved ids excluded).
    pub fn tokens(&self) -> impl Iterator<Item = (usize, &str)> {
        self.id_to_token
            .iter()
            .enumerate()
            .skip(2)
            .map(|(i, t)| (i, t.as_str()))
    }
}

/// Tokens with corpus frequency ≥ `min_freq`, ordered by descending
/// frequency then lexicographically.
pub fn build_vocab(sequences: &[TokenSequence], min_freq: usize) -> Result<Vocabulary, FeaturesError> {
    if sequences.is_empty() {
        return Err(FeaturesError::EmptyInput);
    }
    if min_freq == 0 {
        return Err(FeaturesError::InvalidArgument("min_freq must be >= 1".into()));
    }
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for seq in sequences {
        for t in seq.iter() {
            *freq.entry(t).or_default() += 1;
        }
    }
    let mut entries: Vec<(&str, usize)> = freq.into_iter().filter(|&(_, n)| n >= min_freq).collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(Vocabulary::from_tokens(entries.into_iter().map(|(t, _)| t), min_freq))
}

/// Fixed-length id sequence; positions at and after `true_length` are PAD.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedSequence {
    pub ids: Vec<usize>,
    pub true_length: usize,
}

impl EncodedSequence {
    pub fn max_len(&self) -> usize {
        self.ids.len()
    }

    /// Same real tokens, padded (or re-truncated) to `max_len`.
    pub fn repadded(&self, max_len: usize) -> EncodedSequence {
        let true_length = self.true_length.min(max_len);
        let mut ids = self.ids[..true_length].to_vec();
        ids.resize(max_len, PAD);
        EncodedSequence { ids, true_length }
    }
}

/// Map tokens to ids (OOV → UNK), keep the head, pad the tail.
pub fn encode(tokens: &TokenSequence, vocab: &Vocabulary, max_len: usize) -> EncodedSequence {
    let mut ids: Vec<usize> = tokens
        .iter()
        .take(max_len)
        .map(|t| vocab.id(t).unwrap_or(UNK))
        .collect();
    let true_length = ids.len();
    ids.resize(max_len, PAD);
    EncodedSequence { ids, true_length }
}

/// Tokens for the real prefix of `seq`; UNK ids come back as `<unk>`.
pub fn decode(seq: &EncodedSequence, vocab: &Vocabulary) -> Vec<String> {
    seq.ids[..seq.true_length]
        .iter()
        .map(|&id| vocab.token(id).unwrap_or(UNK_TOKEN).to_string())
        .collect()
}

/// `|V| × d` embedding matrix. Row 0 (PAD) is always zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub matrix: Matrix,
    pub trainable: bool,
}

impl EmbeddingTable {
    /// Every row uniform(-0.05, 0.05) except the zero PAD row.
    pub fn random(vocab_size: usize, dim: usize, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let mut matrix = Matrix::zeros(vocab_size, dim);
        for r in 0..vocab_size {
            for v in matrix.row_mut(r) {
                *v = rng.uniform(-0.05, 0.05);
            }
        }
        let mut table = Self {
            matrix,
            trainable: true,
        };
        table.zero_pad_row();
        table
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.rows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn zero_pad_row(&mut self) {
        if self.matrix.rows() > PAD {
            self.matrix.row_mut(PAD).fill(0.0);
        }
    }

    pub fn row(&self, id: usize) -> &[f64] {
        self.matrix.row(id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedEmbeddings {
    pub table: EmbeddingTable,
    /// Fraction of non-reserved vocabulary tokens found in the file.
    pub coverage: f64,
}

/// Load GloVe text vectors (`token v1 … vd` per line) for `vocab`.
///
/// Rows for tokens found in the file are copied verbatim. All other rows
/// (UNK included) keep the seeded uniform(-0.05, 0.05) initialization of
/// [`EmbeddingTable::random`], so a missing token's row depends only on the
/// seed and its id.
pub fn load_embeddings(
    path: &Path,
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
) -> Result<LoadedEmbeddings, FeaturesError> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => FeaturesError::MissingFile(path.to_path_buf()),
        _ => FeaturesError::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })?;
    let mut table = EmbeddingTable::random(vocab.len(), dim, seed);
    let mut found = vec![false; vocab.len()];
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| FeaturesError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = parts.next().unwrap_or_default();
        let values = parts
            .map(|p| {
                p.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| FeaturesError::MalformedLine {
                        line: line_no,
                        reason: format!("bad value {p:?}"),
                    })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if values.len() != dim {
            return Err(FeaturesError::DimensionMismatch {
                expected: dim,
                found: values.len(),
            });
        }
        if let Some(id) = vocab.id(token) {
            if !found[id] {
                table.matrix.row_mut(id).copy_from_slice(&values);
                found[id] = true;
            }
        }
    }
    let real = vocab.len().saturating_sub(2);
    let hits = found.iter().filter(|&&f| f).count();
    let coverage = if real == 0 { 0.0 } else { hits as f64 / real as f64 };
    Ok(LoadedEmbeddings { table, coverage })
}

/// Smoothed inverse document frequencies over a fixed vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfModel {
    pub vocabulary: Vocabulary,
    /// Indexed by token id; reserved ids carry 0.
    pub idf: Vec<f64>,
    pub doc_count: usize,
}

impl TfidfModel {
    pub fn idf_of(&self, token: &str) -> Option<f64> {
        self.vocabulary.id(token).map(|id| self.idf[id])
    }
}

/// `idf(t) = ln((1 + N) / (1 + df(t))) + 1`.
pub fn tfidf_fit(sequences: &[TokenSequence], vocab: &Vocabulary) -> Result<TfidfModel, FeaturesError> {
    if sequences.is_empty() {
        return Err(FeaturesError::EmptyInput);
    }
    let n = sequences.len();
    let mut df = vec![0usize; vocab.len()];
    let mut seen = vec![usize::MAX; vocab.len()];
    for (doc, seq) in sequences.iter().enumerate() {
        for t in seq.iter() {
            if let Some(id) = vocab.id(t) {
                if seen[id] != doc {
                    seen[id] = doc;
                    df[id] += 1;
                }
            }
        }
    }
    let mut idf: Vec<f64> = df
        .iter()
        .map(|&d| ((1.0 + n as f64) / (1.0 + d as f64)).ln() + 1.0)
        .collect();
    idf[PAD] = 0.0;
    idf[UNK] = 0.0;
    Ok(TfidfModel {
        vocabulary: vocab.clone(),
        idf,
        doc_count: n,
    })
}

/// Sparse vector of `(token id, weight)` pairs sorted by id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    pub entries: Vec<(usize, f64)>,
}

impl SparseVector {
    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
    }

    pub fn get(&self, id: usize) -> f64 {
        self.entries
            .binary_search_by_key(&id, |&(i, _)| i)
            .map_or(0.0, |k| self.entries[k].1)
    }
}

/// Raw count × idf per in-vocabulary token, then L2-normalized.
pub fn tfidf_transform(tokens: &TokenSequence, model: &TfidfModel) -> SparseVector {
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for t in tokens.iter() {
        if let Some(id) = model.vocabulary.id(t) {
            *counts.entry(id).or_default() += 1;
        }
    }
    let mut entries: Vec<(usize, f64)> = counts
        .into_iter()
        .map(|(id, c)| (id, c as f64 * model.idf[id]))
        .collect();
    entries.sort_by_key(|&(id, _)| id);
    let mut v = SparseVector { entries };
    let norm = v.norm();
    if norm > 0.0 {
        v.entries.iter_mut().for_each(|(_, w)| *w /= norm);
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TfidfLine {
    doc: Option<u64>,
    pairs: Vec<(usize, f64)>,
}

/// One JSON object per vector: `{"doc": id|null, "pairs": [[id, weight], …]}`.
pub fn write_tfidf_jsonl<W: Write>(
    mut out: W,
    vectors: &[(Option<u64>, SparseVector)],
) -> Result<(), FeaturesError> {
    for (doc, v) in vectors {
        let line = TfidfLine {
            doc: *doc,
            pairs: v.entries.clone(),
        };
        let s = serde_json::to_string(&line).map_err(|e| FeaturesError::Serialization(e.to_string()))?;
        writeln!(out, "{s}").map_err(|e| FeaturesError::Serialization(e.to_string()))?;
    }
    Ok(())
}

pub fn read_tfidf_jsonl<R: BufRead>(input: R) -> Result<Vec<(Option<u64>, SparseVector)>, FeaturesError> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line.map_err(|e| FeaturesError::Serialization(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TfidfLine =
            serde_json::from_str(&line).map_err(|e| FeaturesError::Serialization(e.to_string()))?;
        out.push((rec.doc, SparseVector { entries: rec.pairs }));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(tokens: &[&str]) -> TokenSequence {
        TokenSequence::new(tokens.iter().copied())
    }

    #[test]
    fn vocab_examples() {
        let v = build_vocab(&[seq(&["a", "b", "a"])], 1).unwrap();
        assert_eq!(v.id(PAD_TOKEN), None);
        assert_eq!(v.token(PAD), Some(PAD_TOKEN));
        assert_eq!(v.token(UNK), Some(UNK_TOKEN));
        assert_eq!(v.id("a"), Some(2));
        assert_eq!(v.id("b"), Some(3));
        assert_eq!(v.len(), 4);
        let v = build_vocab(&[seq(&["a", "b", "a"])], 2).unwrap();
        assert_eq!(v.id("a"), Some(2));
        assert_eq!(v.id("b"), None);
        assert_eq!(v.len(), 3);
        assert!(matches!(build_vocab(&[], 1), Err(FeaturesError::EmptyInput)));
    }

    #[test]
    fn vocab_tie_break_is_lexical() {
        let v = build_vocab(&[seq(&["zeta", "alpha", "mid"]), seq(&["mid"])], 1).unwrap();
        assert_eq!(v.tokens().map(|(_, t)| t).collect::<Vec<_>>(), ["mid", "alpha", "zeta"]);
    }

    #[test]
    fn vocab_serde_round_trip() {
        let v = build_vocab(&[seq(&["x", "y", "y"])], 1).unwrap();
        let s = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&s).unwrap();
        assert_eq!(v, back);
    }

    #[test]
    fn encode_examples() {
        let v = Vocabulary::from_tokens(["a"], 1);
        let e = encode(&seq(&["a", "z"]), &v, 4);
        assert_eq!(e.ids, vec![2, 1, 0, 0]);
        assert_eq!(e.true_length, 2);

        let many: Vec<String> = (0..10).map(|i| format!("t{i}")).collect();
        let v = Vocabulary::from_tokens(many.clone(), 1);
        let e = encode(&TokenSequence::new(many), &v, 5);
        assert_eq!(e.ids, vec![2, 3, 4, 5, 6]);
        assert_eq!(e.true_length, 5);

        let e = encode(&TokenSequence::default(), &v, 3);
        assert_eq!(e.ids, vec![0, 0, 0]);
        assert_eq!(e.true_length, 0);
    }

    #[test]
    fn decode_round_trip() {
        let v = Vocabulary::from_tokens(["a", "b"], 1);
        let e = encode(&seq(&["b", "q", "a"]), &v, 6);
        assert_eq!(decode(&e, &v), vec!["b", UNK_TOKEN, "a"]);
    }

    fn glove_file(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn embeddings_copy_and_init() {
        let vals: Vec<f64> = (0..100).map(|i| i as f64 / 1000.0).collect();
        let line = format!(
            "cat {}",
            vals.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
        );
        let f = glove_file(&[line, format!("other {}", vec!["0.5"; 100].join(" "))]);
        let vocab = Vocabulary::from_tokens(["cat", "dog"], 1);
        let a = load_embeddings(f.path(), &vocab, 100, 7).unwrap();
        assert_eq!(a.table.row(vocab.id("cat").unwrap()), vals.as_slice());
        assert!(a.table.row(PAD).iter().all(|&v| v == 0.0));
        let dog = a.table.row(vocab.id("dog").unwrap());
        assert!(dog.iter().all(|v| v.abs() < 0.05));
        assert_eq!(a.coverage, 0.5);
        let b = load_embeddings(f.path(), &vocab, 100, 7).unwrap();
        assert_eq!(a, b);
        let c = load_embeddings(f.path(), &vocab, 100, 8).unwrap();
        assert_ne!(c.table.row(vocab.id("dog").unwrap()), dog);
    }

    #[test]
    fn embeddings_errors() {
        let f = glove_file(&[format!("cat {}", vec!["0.1"; 99].join(" "))]);
        let vocab = Vocabulary::from_tokens(["cat"], 1);
        assert!(matches!(
            load_embeddings(f.path(), &vocab, 100, 0),
            Err(FeaturesError::DimensionMismatch {
                expected: 100,
                found: 99
            })
        ));
        let f = glove_file(&["cat 0.1 zz".into()]);
        assert!(matches!(
            load_embeddings(f.path(), &vocab, 2, 0),
            Err(FeaturesError::MalformedLine { line: 1, .. })
        ));
        assert!(matches!(
            load_embeddings(Path::new("/no/glove.txt"), &vocab, 2, 0),
            Err(FeaturesError::MissingFile(_))
        ));
    }

    #[test]
    fn tfidf_two_docs() {
        let docs = [seq(&["a", "b"]), seq(&["a"])];
        let vocab = build_vocab(&docs, 1).unwrap();
        let m = tfidf_fit(&docs, &vocab).unwrap();
        assert!((m.idf_of("a").unwrap() - 1.0).abs() < 1e-15);
        assert!((m.idf_of("b").unwrap() - ((1.5f64).ln() + 1.0)).abs() < 1e-15);
        assert!((m.idf_of("b").unwrap() - 1.4055).abs() < 1e-4);
        let v = tfidf_transform(&docs[0], &m);
        assert!((v.get(vocab.id("a").unwrap()) - 0.5797).abs() < 1e-3);
        assert!((v.get(vocab.id("b").unwrap()) - 0.8148).abs() < 1e-3);
        assert!((v.norm() - 1.0).abs() < 1e-12);
        assert!(tfidf_transform(&TokenSequence::default(), &m).entries.is_empty());
        assert!(tfidf_transform(&seq(&["zz", "qq"]), &m).entries.is_empty());
        assert!(matches!(tfidf_fit(&[], &vocab), Err(FeaturesError::EmptyInput)));
    }

    #[test]
    fn tfidf_single_doc_formula() {
        let docs = [seq(&["a", "b"]), seq(&["a"]), seq(&["a", "c"]), seq(&["a"])];
        let vocab = build_vocab(&docs, 1).unwrap();
        let m = tfidf_fit(&docs, &vocab).unwrap();
        assert_eq!(m.idf_of("a").unwrap(), 1.0);
        let expect = (5.0f64 / 2.0).ln() + 1.0;
        assert!((m.idf_of("c").unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn tfidf_jsonl_round_trip() {
        let docs = [seq(&["a", "b", "b"]), seq(&["a"])];
        let vocab = build_vocab(&docs, 1).unwrap();
        let m = tfidf_fit(&docs, &vocab).unwrap();
        let vectors: Vec<_> = docs
            .iter()
            .enumerate()
            .map(|(i, d)| (Some(i as u64), tfidf_transform(d, &m)))
            .collect();
        let mut buf = Vec::new();
        write_tfidf_jsonl(&mut buf, &vectors).unwrap();
        let back = read_tfidf_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, vectors);
    }
}
