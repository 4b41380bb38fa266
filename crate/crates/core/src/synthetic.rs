//! Generator for linearly separable three-class news corpora.
//!
//! Each document is filler text drawn from a shared pseudo-word pool with a
//! few class-specific marker words dropped in at random positions. Filler
//! words never start with `z`; markers always start with `zx`, so the two
//! never collide even after stemming.

use crate::corpus::{Corpus, Document, Label};
use crate::numerics::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub docs: usize,
    pub noise_vocab: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub markers_per_class: usize,
    pub markers_per_doc: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            docs: 300,
            noise_vocab: 200,
            min_words: 12,
            max_words: 30,
            markers_per_class: 4,
            markers_per_doc: 2,
            seed: 0,
        }
    }
}

const CONSONANTS: &[u8] = b"bcdfghjklmnprstvw";
const VOWELS: &[u8] = b"aiou";
const CLASS_TAGS: [&str; 3] = ["ka", "lo", "mi"];
const SOURCES: [&str; 3] = ["Wire A", "Wire B", "Wire C"];

fn syllable(rng: &mut Rng) -> String {
    let c = CONSONANTS[rng.below(CONSONANTS.len())] as char;
    let v = VOWELS[rng.below(VOWELS.len())] as char;
    format!("{c}{v}")
}

/// Filler vocabulary: distinct 2–3 syllable pseudo-words.
pub fn noise_words(n: usize, seed: u64) -> Vec<String> {
    let mut rng = Rng::with_stream(seed, 10);
    let mut words = Vec::with_capacity(n);
    let mut seen = std::collections::HashSet::new();
    while words.len() < n {
        let k = 2 + rng.below(2);
        let w: String = (0..k).map(|_| syllable(&mut rng)).collect();
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    words
}

/// Marker words for one class, e.g. `zxkaba`.
pub fn marker_words(label: Label, n: usize) -> Vec<String> {
    let tag = CLASS_TAGS[label.code()];
    (0..n)
        .map(|i| {
            let c = CONSONANTS[i % CONSONANTS.len()] as char;
            let v = VOWELS[(i / CONSONANTS.len()) % VOWELS.len()] as char;
            format!("zx{tag}{c}{v}")
        })
        .collect()
}

/// Balanced corpus (labels cycle 0, 1, 2) with ids `0..docs`.
pub fn separable_corpus(spec: &SyntheticSpec) -> Corpus {
    let noise = noise_words(spec.noise_vocab, spec.seed);
    let markers: Vec<Vec<String>> = Label::ALL
        .iter()
        .map(|&l| marker_words(l, spec.markers_per_class))
        .collect();
    let mut rng = Rng::with_stream(spec.seed, 11);
    let docs = (0..spec.docs)
        .map(|i| {
            let label = Label::ALL[i % 3];
            let span = spec.max_words.saturating_sub(spec.min_words) + 1;
            let n = spec.min_words + rng.below(span);
            let mut words: Vec<String> = (0..n).map(|_| noise[rng.below(noise.len())].clone()).collect();
            for _ in 0..spec.markers_per_doc {
                let m = &markers[label.code()];
                let at = rng.below(words.len() + 1);
                words.insert(at, m[rng.below(m.len())].clone());
            }
            let mut text = words.join(" ");
            if let Some(first) = text.get_mut(0..1) {
                first.make_ascii_uppercase();
            }
            text.push('.');
            Document {
                id: i as u64,
                text,
                label,
                source: SOURCES[i % SOURCES.len()].to_string(),
            }
        })
        .collect();
    Corpus::new(docs).expect("ids are unique")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textprep::{preprocess, PrepConfig};
    use std::collections::HashSet;

    #[test]
    fn markers_survive_preprocessing_and_stay_distinct() {
        let cfg = PrepConfig::default();
        let mut all = HashSet::new();
        for l in Label::ALL {
            for m in marker_words(l, 6) {
                let t = preprocess(&m, &cfg).tokens;
                assert_eq!(t.len(), 1);
                assert!(all.insert(t[0].clone()), "collision on {m}");
            }
        }
        for w in noise_words(200, 0) {
            for t in preprocess(&w, &cfg).tokens {
                assert!(!t.starts_with('z'));
            }
        }
    }

    #[test]
    fn deterministic_and_balanced() {
        let spec = SyntheticSpec {
            docs: 30,
            ..SyntheticSpec::default()
        };
        let a = separable_corpus(&spec);
        assert_eq!(a, separable_corpus(&spec));
        assert_eq!(a.class_counts(), [10, 10, 10]);
    }
}
