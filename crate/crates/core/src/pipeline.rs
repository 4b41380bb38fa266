//! Glue from raw documents to model inputs.

use crate::corpus::{Corpus, Label};
use crate::features::{encode, EncodedSequence, Vocabulary, PAD, UNK};
use crate::model::{Hyper, ModelParams};
use crate::textprep::{preprocess, PrepConfig, TokenSequence};
use crate::training::{self, Dataset};

/// Clean every document; each sequence remembers its document id.
pub fn tokenize_corpus(corpus: &Corpus, prep: &PrepConfig) -> Vec<TokenSequence> {
    corpus
        .documents()
        .iter()
        .map(|d| preprocess(&d.text, prep).with_source(d.id))
        .collect()
}

/// Like [`encode`], but a document that cleaned down to nothing becomes a
/// single UNK token so the model can still score it.
pub fn encode_for_model(tokens: &TokenSequence, vocab: &Vocabulary, max_len: usize) -> EncodedSequence {
    let mut e = encode(tokens, vocab, max_len);
    if e.true_length == 0 {
        e.ids[0] = UNK;
        e.true_length = 1;
        debug_assert!(e.ids[1..].iter().all(|&id| id == PAD));
    }
    e
}

pub fn build_dataset(sequences: &[TokenSequence], labels: &[Label], vocab: &Vocabulary, max_len: usize) -> Dataset {
    Dataset {
        sequences: sequences
            .iter()
            .map(|t| encode_for_model(t, vocab, max_len))
            .collect(),
        labels: labels.to_vec(),
    }
}

pub fn corpus_dataset(corpus: &Corpus, prep: &PrepConfig, vocab: &Vocabulary, max_len: usize) -> Dataset {
    build_dataset(&tokenize_corpus(corpus, prep), &corpus.labels(), vocab, max_len)
}

/// Eval-mode loss and predictions for every document of `corpus`, in order.
pub fn evaluate_corpus(
    params: &ModelParams,
    corpus: &Corpus,
    prep: &PrepConfig,
    vocab: &Vocabulary,
    hyper: &Hyper,
) -> training::Result<(f64, Vec<Label>)> {
    training::evaluate(params, &corpus_dataset(corpus, prep, vocab, hyper.max_len), hyper)
}
