//! Analytic BPTT gradients against central finite differences.

use newsforge_core::features::{EncodedSequence, Vocabulary, PAD};
use newsforge_core::model::{self, Hyper, Mode, ModelParams, Pooling};
use newsforge_core::training::cross_entropy;
use newsforge_core::{Label, Rng};

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;
const DROPOUT_SEED: u64 = 99;

fn tiny_hyper(pooling: Pooling) -> Hyper {
    Hyper {
        hidden: 3,
        dense: 8,
        dropout: 0.2,
        max_len: 5,
        embed_dim: 4,
        pooling,
        ..Hyper::default()
    }
}

fn tiny_vocab() -> Vocabulary {
    Vocabulary::from_tokens((0..10).map(|i| format!("w{i}")), 1)
}

fn batch() -> (Vec<EncodedSequence>, Vec<Label>) {
    let seqs = vec![
        EncodedSequence {
            ids: vec![2, 7, 4, 11, 1],
            true_length: 5,
        },
        EncodedSequence {
            ids: vec![9, 3, 5, PAD, PAD],
            true_length: 3,
        },
    ];
    (seqs, vec![Label::PartiallyFalse, Label::True])
}

// Loss with the dropout stream reset, so every evaluation sees the same masks.
fn loss(params: &ModelParams, hyper: &Hyper, seqs: &[EncodedSequence], labels: &[Label]) -> f64 {
    let mut rng = Rng::new(DROPOUT_SEED);
    let out = model::forward(seqs, params, hyper, Mode::Train, &mut rng).unwrap();
    cross_entropy(&out.probs, labels).unwrap().0
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn check(pooling: Pooling, seed: u64) {
    let hyper = tiny_hyper(pooling);
    let vocab = tiny_vocab();
    assert_eq!(vocab.len(), 12);
    let mut params = model::init_params(&hyper, &vocab, None, seed).unwrap();
    let (seqs, labels) = batch();

    let mut rng = Rng::new(DROPOUT_SEED);
    let out = model::forward(&seqs, &params, &hyper, Mode::Train, &mut rng).unwrap();
    let (_, grad_logits) = cross_entropy(&out.probs, &labels).unwrap();
    let grads = model::backward(out.cache, &grad_logits, &params, &hyper).unwrap();

    let analytic: Vec<(String, Vec<f64>)> = grads
        .tensors()
        .into_iter()
        .map(|(n, m)| (n, m.data().to_vec()))
        .collect();
    let mut worst = (0.0, String::new());
    let mut checked = 0;
    for (t, (name, ga)) in analytic.iter().enumerate() {
        for (k, &a) in ga.iter().enumerate() {
            let orig = params.tensors()[t].1.data()[k];
            params.tensors_mut()[t].1.data_mut()[k] = orig + EPS;
            let plus = loss(&params, &hyper, &seqs, &labels);
            params.tensors_mut()[t].1.data_mut()[k] = orig - EPS;
            let minus = loss(&params, &hyper, &seqs, &labels);
            params.tensors_mut()[t].1.data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * EPS);
            let e = rel_err(a, numeric);
            if e > worst.0 {
                worst = (e, format!("{name}[{k}]: analytic {a} numeric {numeric}"));
            }
            checked += 1;
        }
    }
    assert_eq!(checked, 12 * 4 + 2 * 4 * (4 * 3 + 3 * 3 + 3) + 6 * 8 + 8 + 8 * 3 + 3);
    assert!(worst.0 <= TOL, "{pooling:?} seed {seed}: rel err {} at {}", worst.0, worst.1);
}

#[test]
fn final_state_pooling_matches_finite_differences() {
    for seed in [1, 2, 3] {
        check(Pooling::FinalState, seed);
    }
}

#[test]
fn mean_pooling_matches_finite_differences() {
    for seed in [1, 2, 3] {
        check(Pooling::MeanPool, seed);
    }
}

#[test]
fn duplicate_sequence_doubles_embedding_gradient() {
    let hyper = Hyper {
        dropout: 0.0,
        ..tiny_hyper(Pooling::FinalState)
    };
    let params = model::init_params(&hyper, &tiny_vocab(), None, 5).unwrap();
    let seq = EncodedSequence {
        ids: vec![3, 8, 6, PAD, PAD],
        true_length: 3,
    };
    let g = [0.3, -0.5, 0.2];
    let grad_for = |copies: usize| {
        let seqs = vec![seq.clone(); copies];
        let rows: Vec<Vec<f64>> = vec![g.to_vec(); copies];
        let gl = newsforge_core::Matrix::from_rows(&rows).unwrap();
        let out = model::forward(&seqs, &params, &hyper, Mode::Eval, &mut Rng::new(0)).unwrap();
        model::backward(out.cache, &gl, &params, &hyper).unwrap()
    };
    let one = grad_for(1);
    let two = grad_for(2);
    for &id in &seq.ids[..seq.true_length] {
        let a = one.embedding.row(id);
        let b = two.embedding.row(id);
        assert!(a.iter().any(|&v| v != 0.0));
        for (x, y) in a.iter().zip(b) {
            assert_eq!(2.0 * x, *y);
        }
    }
    assert!(two.embedding.row(PAD).iter().all(|&v| v == 0.0));
}
