use std::collections::HashSet;

use newsforge_core::corpus::{split_corpus, Corpus, Document, Label};
use newsforge_core::features::{build_vocab, decode, encode, tfidf_fit, tfidf_transform, Vocabulary, PAD, UNK_TOKEN};
use newsforge_core::metrics::{confusion, report};
use newsforge_core::model::{self, Hyper, Mode};
use newsforge_core::numerics::{rand_uniform, Matrix};
use newsforge_core::textprep::{lowercase, preprocess, remove_punctuation, stem, PrepConfig, TokenSequence};
use newsforge_core::Rng;
use proptest::prelude::*;

fn corpus_from(labels: &[u8]) -> Corpus {
    let docs = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| Document {
            id: 1000 + i as u64,
            text: format!("doc {i}"),
            label: Label::from_code(l as usize % 3).unwrap(),
            source: String::new(),
        })
        .collect();
    Corpus::new(docs).unwrap()
}

fn ids(c: &Corpus) -> Vec<u64> {
    c.documents().iter().map(|d| d.id).collect()
}

// Mix of words, stopwords, punctuation, digits, URLs and odd unicode.
fn messy_text() -> impl Strategy<Value = String> {
    let piece = prop_oneof![
        "[A-Za-z]{1,12}",
        Just("The".to_string()),
        Just("running".to_string()),
        Just("agreed".to_string()),
        Just("isn't".to_string()),
        "[0-9]{1,4}",
        "[!-/:-@\\[-`{-~]{1,3}",
        Just("http://ex.com/a?b=1".to_string()),
        Just("www.site.org".to_string()),
        Just("«Über»".to_string()),
        Just("naïve—café".to_string()),
        "\\PC{1,6}",
    ];
    prop::collection::vec((piece, prop_oneof![Just(" "), Just("  "), Just("\n"), Just("")]), 0..20)
        .prop_map(|parts| parts.into_iter().map(|(w, s)| w + s).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn split_partitions_and_repeats(labels in prop::collection::vec(0u8..3, 1..120), ratio in 0.0f64..=1.0, seed: u64, strat: bool) {
        let c = corpus_from(&labels);
        let a = split_corpus(&c, ratio, seed, strat).unwrap();
        let b = split_corpus(&c, ratio, seed, strat).unwrap();
        prop_assert_eq!(&a, &b);
        let train: HashSet<u64> = ids(&a.train).into_iter().collect();
        let test: HashSet<u64> = ids(&a.test).into_iter().collect();
        prop_assert!(train.is_disjoint(&test));
        let all: HashSet<u64> = ids(&c).into_iter().collect();
        prop_assert_eq!(&train | &test, all);
        if strat {
            for l in Label::ALL {
                let want = ratio * c.count(l) as f64;
                prop_assert!((a.test.count(l) as f64 - want).abs() <= 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn lowercase_is_idempotent(s in "\\PC{0,40}") {
        let once = lowercase(&s);
        prop_assert_eq!(lowercase(&once), once);
    }

    #[test]
    fn vocab_ignores_document_order(docs in prop::collection::vec(prop::collection::vec("[a-e]{1,2}", 0..8), 1..10), seed: u64) {
        let seqs: Vec<TokenSequence> = docs.iter().map(|d| TokenSequence::new(d.clone())).collect();
        let mut shuffled = seqs.clone();
        Rng::new(seed).shuffle(&mut shuffled);
        prop_assert_eq!(build_vocab(&seqs, 1).unwrap(), build_vocab(&shuffled, 1).unwrap());
    }

    #[test]
    fn encode_decode_round_trip(toks in prop::collection::vec("[a-f]{1,2}", 0..12), max_len in 1usize..10) {
        let vocab = Vocabulary::from_tokens(["a", "b", "c", "ab", "cd"], 1);
        let seq = TokenSequence::new(toks.clone());
        let e = encode(&seq, &vocab, max_len);
        prop_assert_eq!(e.ids.len(), max_len);
        prop_assert_eq!(e.true_length, toks.len().min(max_len));
        prop_assert!(e.ids[..e.true_length].iter().all(|&i| i != PAD));
        prop_assert!(e.ids[e.true_length..].iter().all(|&i| i == PAD));
        for (orig, back) in toks.iter().zip(decode(&e, &vocab)) {
            if vocab.id(orig).is_some() {
                prop_assert_eq!(orig, &back);
            } else {
                prop_assert_eq!(back, UNK_TOKEN);
            }
        }
    }

    #[test]
    fn tfidf_norm_is_one_or_zero(docs in prop::collection::vec(prop::collection::vec("[a-g]", 0..10), 1..8), probe in prop::collection::vec("[a-k]", 0..10)) {
        let seqs: Vec<TokenSequence> = docs.into_iter().map(TokenSequence::new).collect();
        let vocab = build_vocab(&seqs, 1).unwrap();
        let model = tfidf_fit(&seqs, &vocab).unwrap();
        for s in seqs.iter().chain(std::iter::once(&TokenSequence::new(probe))) {
            let n = tfidf_transform(s, &model).norm();
            prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-12, "norm {}", n);
        }
    }

    #[test]
    fn matmul_is_associative(m in 1usize..6, k in 1usize..6, l in 1usize..6, n in 1usize..6, seed: u64) {
        let mut rng = Rng::new(seed);
        let a = rand_uniform(&mut rng, m, k, -2.0, 2.0).unwrap();
        let b = rand_uniform(&mut rng, k, l, -2.0, 2.0).unwrap();
        let c = rand_uniform(&mut rng, l, n, -2.0, 2.0).unwrap();
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        // scale-aware bound: |A||B||C| bounds every entry of the product
        let bound = a.sum_squares().sqrt() * b.sum_squares().sqrt() * c.sum_squares().sqrt();
        for (x, y) in left.data().iter().zip(right.data()) {
            prop_assert!((x - y).abs() <= 1e-9 * bound.max(1.0));
        }
    }

    #[test]
    fn softmax_rows_normalized_and_shift_invariant(row in prop::collection::vec(-50.0f64..50.0, 1..8), shift in -100.0f64..100.0) {
        let m = Matrix::new(1, row.len(), row.clone()).unwrap();
        let shifted = Matrix::new(1, row.len(), row.iter().map(|v| v + shift).collect()).unwrap();
        let p = m.softmax_rows();
        let q = shifted.softmax_rows();
        prop_assert!((p.data().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for (a, b) in p.data().iter().zip(q.data()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn report_ignores_joint_permutation(pairs in prop::collection::vec((0usize..3, 0usize..3), 1..200), seed: u64) {
        let (t, p): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let mut shuffled = pairs.clone();
        Rng::new(seed).shuffle(&mut shuffled);
        let (t2, p2): (Vec<usize>, Vec<usize>) = shuffled.into_iter().unzip();
        let r = report(&confusion(&t, &p).unwrap()).unwrap();
        prop_assert_eq!(&r, &report(&confusion(&t2, &p2).unwrap()).unwrap());
        prop_assert!((r.weighted_avg.recall - r.accuracy).abs() <= 1e-12);
        prop_assert_eq!(report(&confusion(&t, &t).unwrap()).unwrap().accuracy, 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn preprocess_output_is_pure_and_idempotent(text in messy_text()) {
        let cfg = PrepConfig::default();
        let out = preprocess(&text, &cfg);
        for t in out.iter() {
            prop_assert!(!t.is_empty());
            prop_assert_eq!(t.to_lowercase(), t);
            prop_assert!(!t.chars().any(|c| c.is_ascii_punctuation() || c.is_ascii_digit() || c.is_whitespace()), "{:?}", t);
            prop_assert_eq!(remove_punctuation(t), t);
            prop_assert!(!cfg.stopword_list.contains(t));
            prop_assert_eq!(stem(t), t);
        }
        let again = preprocess(&out.tokens.join(" "), &cfg);
        prop_assert_eq!(again.tokens, out.tokens.clone());
        prop_assert_eq!(preprocess(&text, &cfg), out);
    }

    #[test]
    fn excluded_words_never_survive(words in prop::collection::vec("[a-d]{1,3}", 0..15), excluded in prop::collection::vec("[a-d]{1,3}", 0..6)) {
        let cfg = PrepConfig {
            excluded_list: newsforge_core::textprep::TokenSet::new(&excluded),
            ..PrepConfig::default()
        };
        let out = preprocess(&words.join(" "), &cfg);
        prop_assert!(out.iter().all(|t| !cfg.excluded_list.contains(t)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn logits_ignore_pad_tail(len in 1usize..8, extra in 1usize..8, seed: u64) {
        let hyper = Hyper { hidden: 5, dense: 16, embed_dim: 6, max_len: len, ..Hyper::default() };
        let vocab = Vocabulary::from_tokens((0..20).map(|i| format!("t{i}")), 1);
        let params = model::init_params(&hyper, &vocab, None, seed).unwrap();
        let mut rng = Rng::new(seed);
        let ids: Vec<usize> = (0..len).map(|_| 1 + rng.below(vocab.len() - 1)).collect();
        let short = newsforge_core::EncodedSequence { ids, true_length: len };
        let long = short.repadded(len + extra);
        let a = model::forward(&[short], &params, &hyper, Mode::Eval, &mut Rng::new(0)).unwrap();
        let b = model::forward(&[long], &params, &hyper, Mode::Eval, &mut Rng::new(0)).unwrap();
        for (x, y) in a.logits.data().iter().zip(b.logits.data()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn argmax_of_probs_matches_logits(row in prop::collection::vec(-20.0f64..20.0, 3)) {
        let m = Matrix::new(1, 3, row).unwrap();
        let from_probs = model::predict(&m.softmax_rows());
        prop_assert_eq!(from_probs, model::predict(&m));
    }
}
