//! Labeled news documents: loading, label encoding and train/test splitting.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::Rng;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus file not found: {0}")]
    MissingFile(PathBuf),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: u64, reason: String },
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("duplicate document id {0}")]
    DuplicateId(u64),
    #[error("split ratio {0} outside [0, 1]")]
    BadRatio(f64),
}

/// Class label. The integer codes are part of the data contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    False = 0,
    PartiallyFalse = 1,
    True = 2,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::False, Label::PartiallyFalse, Label::True];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Label> {
        Self::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::False => "false",
            Label::PartiallyFalse => "partially_false",
            Label::True => "true",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Label {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        encode_label(s)
    }
}

/// Case-insensitive label parsing.
///
/// Accepts `true`, `false`, and `partially false` / `partially_false` /
/// `partial` (surrounding whitespace ignored).
pub fn encode_label(raw: &str) -> Result<Label, CorpusError> {
    match raw.trim().to_lowercase().as_str() {
        "true" => Ok(Label::True),
        "false" => Ok(Label::False),
        "partially false" | "partially_false" | "partial" => Ok(Label::PartiallyFalse),
        _ => Err(CorpusError::UnknownLabel(raw.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: u64,
    pub text: String,
    pub label: Label,
    #[serde(default)]
    pub source: String,
}

/// Ordered, immutable collection of documents with cached per-class counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    documents: Vec<Document>,
    class_counts: [usize; 3],
}

impl Corpus {
    /// Builds a corpus, rejecting duplicate ids. An empty corpus is allowed
    /// here (e.g. the test half of a ratio-0 split).
    pub fn new(documents: Vec<Document>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(documents.len());
        for d in &documents {
            if !seen.insert(d.id) {
                return Err(CorpusError::DuplicateId(d.id));
            }
        }
        let class_counts = count_classes(&documents);
        Ok(Self {
            documents,
            class_counts,
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn class_counts(&self) -> [usize; 3] {
        self.class_counts
    }

    pub fn count(&self, label: Label) -> usize {
        self.class_counts[label.code()]
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.documents.iter().map(|d| d.label).collect()
    }

    /// Per-source document counts in first-seen order.
    pub fn source_counts(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for d in &self.documents {
            match out.iter_mut().find(|(s, _)| *s == d.source) {
                Some((_, n)) => *n += 1,
                None => out.push((d.source.clone(), 1)),
            }
        }
        out
    }
}

fn count_classes(docs: &[Document]) -> [usize; 3] {
    let mut counts = [0; 3];
    for d in docs {
        counts[d.label.code()] += 1;
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Csv,
    Jsonl,
}

impl CorpusFormat {
    /// Guess the format from a file extension (`.csv`, otherwise JSONL).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => CorpusFormat::Csv,
            _ => CorpusFormat::Jsonl,
        }
    }
}

#[derive(Deserialize)]
struct RawRecord {
    text: Option<String>,
    label: Option<String>,
    #[serde(default)]
    source: Option<String>,
}

fn to_document(id: u64, line: u64, rec: RawRecord) -> Result<Document, CorpusError> {
    let text = rec.text.ok_or_else(|| CorpusError::MalformedRecord {
        line,
        reason: "missing `text`".into(),
    })?;
    let label = rec.label.ok_or_else(|| CorpusError::MalformedRecord {
        line,
        reason: "missing `label`".into(),
    })?;
    if text.trim().is_empty() {
        return Err(CorpusError::MalformedRecord {
            line,
            reason: "empty `text`".into(),
        });
    }
    Ok(Document {
        id,
        text,
        label: encode_label(&label)?,
        source: rec.source.unwrap_or_default(),
    })
}

/// Loads a corpus; ids follow record order starting at 0.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus, CorpusError> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CorpusError::MissingFile(path.to_path_buf()),
        _ => CorpusError::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })?;
    let docs = match format {
        CorpusFormat::Jsonl => read_jsonl(path, BufReader::new(file))?,
        CorpusFormat::Csv => read_csv(file)?,
    };
    if docs.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    Corpus::new(docs)
}

fn read_jsonl(path: &Path, reader: impl BufRead) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx as u64 + 1;
        let line = line.map_err(|e| CorpusError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
                line: line_no,
                reason: e.to_string(),
            })?;
        docs.push(to_document(docs.len() as u64, line_no, rec)?);
    }
    Ok(docs)
}

fn read_csv(file: File) -> Result<Vec<Document>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(file);
    let malformed = |e: csv::Error| CorpusError::MalformedRecord {
        line: e.position().map_or(0, |p| p.line()),
        reason: e.to_string(),
    };
    let headers = reader.headers().map_err(malformed)?.clone();
    let mut docs = Vec::new();
    for record in reader.records() {
        let record = record.map_err(malformed)?;
        let line = record.position().map_or(0, |p| p.line());
        let rec: RawRecord =
            record
                .deserialize(Some(&headers))
                .map_err(|e| CorpusError::MalformedRecord {
                    line,
                    reason: e.to_string(),
                })?;
        docs.push(to_document(docs.len() as u64, line, rec)?);
    }
    Ok(docs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPair {
    pub train: Corpus,
    pub test: Corpus,
    pub seed: u64,
    pub ratio: f64,
}

/// `round(ratio × n)` with halves rounded up.
pub fn test_size(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64) + 0.5).floor() as usize
}

/// Hamilton (largest-remainder) apportionment of `total` seats over classes
/// with exact quotas `ratio × count`. Ties in the remainder go to the lower
/// class index.
pub fn largest_remainder_quotas(counts: [usize; 3], ratio: f64, total: usize) -> [usize; 3] {
    let exact: Vec<f64> = counts.iter().map(|&c| ratio * c as f64).collect();
    let mut quotas = [0usize; 3];
    for c in 0..3 {
        quotas[c] = (exact[c].floor() as usize).min(counts[c]);
    }
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - quotas[a] as f64;
        let rb = exact[b] - quotas[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = total.saturating_sub(assigned);
    for &c in order.iter().cycle().take(3 * 3) {
        if left == 0 {
            break;
        }
        if quotas[c] < counts[c] {
            quotas[c] += 1;
            left -= 1;
        }
    }
    quotas
}

/// Deterministic seeded split into train and test.
///
/// Both halves keep the input document order. When `stratified`, each class
/// contributes its largest-remainder quota to the test half.
pub fn split_corpus(
    corpus: &Corpus,
    ratio: f64,
    seed: u64,
    stratified: bool,
) -> Result<SplitPair, CorpusError> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(CorpusError::BadRatio(ratio));
    }
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let n = corpus.len();
    let n_test = test_size(ratio, n);
    let mut rng = Rng::new(seed);
    let mut in_test = vec![false; n];

    if stratified {
        let quotas = largest_remainder_quotas(corpus.class_counts(), ratio, n_test);
        for label in Label::ALL {
            let mut members: Vec<usize> = corpus
                .documents
                .iter()
                .enumerate()
                .filter(|(_, d)| d.label == label)
                .map(|(i, _)| i)
                .collect();
            rng.shuffle(&mut members);
            for &i in members.iter().take(quotas[label.code()]) {
                in_test[i] = true;
            }
        }
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        for &i in order.iter().take(n_test) {
            in_test[i] = true;
        }
    }

    let (test, train): (Vec<_>, Vec<_>) = corpus
        .documents
        .iter()
        .cloned()
        .zip(in_test)
        .partition(|(_, t)| *t);
    Ok(SplitPair {
        train: Corpus::new(train.into_iter().map(|(d, _)| d).collect())?,
        test: Corpus::new(test.into_iter().map(|(d, _)| d).collect())?,
        seed,
        ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    pub(crate) fn synthetic(counts: [usize; 3]) -> Corpus {
        let mut docs = Vec::new();
        for (code, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                docs.push(Document {
                    id: docs.len() as u64,
                    text: format!("doc {}", docs.len()),
                    label: Label::from_code(code).unwrap(),
                    source: String::new(),
                });
            }
        }
        Corpus::new(docs).unwrap()
    }

    #[test]
    fn label_codes() {
        assert_eq!(encode_label("true").unwrap().code(), 2);
        assert_eq!(encode_label("FALSE").unwrap().code(), 0);
        assert_eq!(encode_label("Partially False").unwrap().code(), 1);
        assert_eq!(encode_label("partially_false").unwrap(), Label::PartiallyFalse);
        assert_eq!(encode_label("partial").unwrap(), Label::PartiallyFalse);
        assert!(matches!(
            encode_label("mostly true"),
            Err(CorpusError::UnknownLabel(s)) if s == "mostly true"
        ));
    }

    fn write_tmp(contents: &str, suffix: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(suffix).tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn jsonl_three_records() {
        let f = write_tmp(
            "{\"text\":\"a b\",\"label\":\"true\",\"source\":\"CNN\"}\n\
             {\"text\":\"c\",\"label\":\"false\"}\n\
             {\"text\":\"d\",\"label\":\"partially false\"}\n",
            ".jsonl",
        );
        let c = load_corpus(f.path(), CorpusFormat::Jsonl).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.class_counts(), [1, 1, 1]);
        assert_eq!(c.documents()[0].source, "CNN");
        assert_eq!(c.documents()[2].id, 2);
        assert_eq!(c.documents()[2].label, Label::PartiallyFalse);
    }

    #[test]
    fn csv_with_quotes() {
        let f = write_tmp(
            "text,label,source\n\"hello, \"\"world\"\"\",TRUE,Fox News\nplain,false,\n",
            ".csv",
        );
        let c = load_corpus(f.path(), CorpusFormat::Csv).unwrap();
        assert_eq!(c.documents()[0].text, "hello, \"world\"");
        assert_eq!(c.documents()[0].source, "Fox News");
        assert_eq!(c.class_counts(), [1, 0, 1]);
    }

    #[test]
    fn load_errors() {
        let f = write_tmp("", ".jsonl");
        assert!(matches!(
            load_corpus(f.path(), CorpusFormat::Jsonl),
            Err(CorpusError::EmptyCorpus)
        ));
        let f = write_tmp("{\"text\":\"x\",\"label\":\"true\"}\n{nope\n", ".jsonl");
        assert!(matches!(
            load_corpus(f.path(), CorpusFormat::Jsonl),
            Err(CorpusError::MalformedRecord { line: 2, .. })
        ));
        let f = write_tmp("{\"text\":\"x\"}\n", ".jsonl");
        assert!(matches!(
            load_corpus(f.path(), CorpusFormat::Jsonl),
            Err(CorpusError::MalformedRecord { line: 1, .. })
        ));
        let f = write_tmp("{\"text\":\"x\",\"label\":\"maybe\"}\n", ".jsonl");
        assert!(matches!(
            load_corpus(f.path(), CorpusFormat::Jsonl),
            Err(CorpusError::UnknownLabel(_))
        ));
        let f = write_tmp("{\"text\":\"   \",\"label\":\"true\"}\n", ".jsonl");
        assert!(load_corpus(f.path(), CorpusFormat::Jsonl).is_err());
        assert!(matches!(
            load_corpus(Path::new("/no/such/file.jsonl"), CorpusFormat::Jsonl),
            Err(CorpusError::MissingFile(_))
        ));
        let f = write_tmp("text,label\n", ".csv");
        assert!(matches!(
            load_corpus(f.path(), CorpusFormat::Csv),
            Err(CorpusError::EmptyCorpus)
        ));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let d = Document {
            id: 1,
            text: "x".into(),
            label: Label::True,
            source: String::new(),
        };
        assert!(matches!(
            Corpus::new(vec![d.clone(), d]),
            Err(CorpusError::DuplicateId(1))
        ));
    }

    #[test]
    fn split_sizes() {
        let c = synthetic([1712, 856, 409]);
        assert_eq!(c.len(), 2977);
        for stratified in [true, false] {
            let s = split_corpus(&c, 0.2, 42, stratified).unwrap();
            assert_eq!(s.test.len(), 595);
            assert_eq!(s.train.len(), 2382);
        }
        let s = split_corpus(&c, 0.0, 1, true).unwrap();
        assert!(s.test.is_empty());
        assert_eq!(s.train, c);
        assert!(matches!(
            split_corpus(&c, 1.5, 1, true),
            Err(CorpusError::BadRatio(_))
        ));
    }

    #[test]
    fn split_empty_corpus() {
        let c = Corpus::new(vec![]).unwrap();
        assert!(matches!(
            split_corpus(&c, 0.2, 0, true),
            Err(CorpusError::EmptyCorpus)
        ));
    }

    // Brute force: among all integer allocations with the right total, the
    // largest-remainder one minimizes the squared deviation from the exact
    // quotas.
    fn brute_force_best(counts: [usize; 3], ratio: f64, total: usize) -> Vec<[usize; 3]> {
        let mut best = Vec::new();
        let mut best_err = f64::INFINITY;
        for a in 0..=counts[0] {
            for b in 0..=counts[1] {
                if a + b > total || total - a - b > counts[2] {
                    continue;
                }
                let k = [a, b, total - a - b];
                let err: f64 = (0..3)
                    .map(|c| (k[c] as f64 - ratio * counts[c] as f64).powi(2))
                    .sum();
                if err < best_err - 1e-12 {
                    best_err = err;
                    best = vec![k];
                } else if (err - best_err).abs() <= 1e-12 {
                    best.push(k);
                }
            }
        }
        best
    }

    #[test]
    fn stratified_small_matches_brute_force() {
        let q = largest_remainder_quotas([6, 2, 2], 0.2, 2);
        assert_eq!(q.iter().sum::<usize>(), 2);
        assert!(q == [1, 1, 0] || q == [1, 0, 1]);
        assert!(brute_force_best([6, 2, 2], 0.2, 2).contains(&q));
        let c = synthetic([6, 2, 2]);
        let s = split_corpus(&c, 0.2, 9, true).unwrap();
        assert_eq!(s.test.class_counts(), q);
    }

    #[test]
    fn quotas_agree_with_brute_force_on_grid() {
        for counts in [[5, 3, 1], [10, 0, 7], [1712, 856, 409], [3, 3, 3], [1, 1, 1]] {
            for ratio in [0.0, 0.1, 0.2, 0.25, 0.5, 0.8, 1.0] {
                let n: usize = counts.iter().sum();
                let total = test_size(ratio, n);
                let q = largest_remainder_quotas(counts, ratio, total);
                assert_eq!(q.iter().sum::<usize>(), total);
                assert!(
                    brute_force_best(counts, ratio, total).contains(&q),
                    "{counts:?} {ratio} -> {q:?}"
                );
            }
        }
    }
}
