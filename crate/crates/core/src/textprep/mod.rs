//! Text cleaning chain: URL/number/punctuation removal, lowercasing,
//! whitespace tokenization, stopword and excluded-word filtering, stemming.

mod porter;

pub use porter::stem;

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_general_category::{get_general_category, GeneralCategory};

#[derive(Debug, Error)]
pub enum TextprepError {
    #[error("word list not found: {0}")]
    MissingFile(std::path::PathBuf),
    #[error("failed to read word list {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

const DEFAULT_STOPWORDS: &str = include_str!("../../data/stopwords_en.txt");

static URL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)(?:\b[a-z][a-z0-9+.\-]*://|\bwww\.)\S*").unwrap());

/// A set of lowercase tokens (stoplist or excluded list).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSet(BTreeSet<String>);

impl TokenSet {
    pub fn new<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self(
            tokens
                .into_iter()
                .map(|t| t.as_ref().trim().to_lowercase())
                .filter(|t| !t.is_empty())
                .collect(),
        )
    }

    /// Parses the one-token-per-line format; `#` starts a comment.
    pub fn parse(text: &str) -> Self {
        Self::new(text.lines().map(|l| l.split('#').next().unwrap_or("")))
    }

    pub fn load(path: &Path) -> Result<Self, TextprepError> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => TextprepError::MissingFile(path.to_path_buf()),
            _ => TextprepError::Io {
                path: path.to_path_buf(),
                source: e,
            },
        })?;
        Ok(Self::parse(&text))
    }

    /// The bundled 174-word English stoplist.
    pub fn english_stopwords() -> Self {
        Self::parse(DEFAULT_STOPWORDS)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepConfig {
    pub lowercase: bool,
    pub strip_punctuation: bool,
    pub strip_urls_numbers: bool,
    pub stem: bool,
    pub stopword_list: TokenSet,
    pub excluded_list: TokenSet,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            lowercase: true,
            strip_punctuation: true,
            strip_urls_numbers: true,
            stem: true,
            stopword_list: TokenSet::english_stopwords(),
            excluded_list: TokenSet::default(),
        }
    }
}

/// Ordered tokens of one document.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub source_doc: Option<u64>,
}

impl TokenSequence {
    pub fn new<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Self {
        Self {
            tokens: tokens.into_iter().map(Into::into).collect(),
            source_doc: None,
        }
    }

    pub fn with_source(mut self, id: u64) -> Self {
        self.source_doc = Some(id);
        self
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// A document that cleaned down to nothing.
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }

    fn retain(mut self, keep: impl Fn(&str) -> bool) -> Self {
        self.tokens.retain(|t| keep(t));
        self
    }
}

fn is_punct_or_symbol(c: char) -> bool {
    use GeneralCategory::*;
    matches!(
        get_general_category(c),
        ConnectorPunctuation
            | DashPunctuation
            | OpenPunctuation
            | ClosePunctuation
            | InitialPunctuation
            | FinalPunctuation
            | OtherPunctuation
            | MathSymbol
            | CurrencySymbol
            | ModifierSymbol
            | OtherSymbol
    )
}

// Control and format characters are treated as separators too.
fn is_separator_like(c: char) -> bool {
    use GeneralCategory::*;
    matches!(get_general_category(c), Control | Format)
}

fn is_digit(c: char) -> bool {
    get_general_category(c) == GeneralCategory::DecimalNumber
}

fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Blank out URLs (`scheme://…` or `www.…` up to whitespace) and digit runs.
pub fn remove_urls_numbers(text: &str) -> String {
    let no_urls = URL_RE.replace_all(text, " ");
    no_urls
        .chars()
        .map(|c| if is_digit(c) { ' ' } else { c })
        .collect()
}

fn clean(text: &str, strip_punctuation: bool, strip_urls_numbers: bool) -> String {
    let stage = if strip_urls_numbers {
        remove_urls_numbers(text)
    } else {
        text.to_string()
    };
    let stage: String = stage
        .chars()
        .map(|c| {
            if (strip_punctuation && is_punct_or_symbol(c)) || is_separator_like(c) {
                ' '
            } else {
                c
            }
        })
        .collect();
    normalize_whitespace(&stage)
}

/// URL, digit-run and punctuation/symbol removal with whitespace collapsed.
pub fn remove_punctuation(text: &str) -> String {
    clean(text, true, true)
}

pub fn lowercase(text: &str) -> String {
    text.to_lowercase()
}

pub fn remove_stopwords(tokens: TokenSequence, stoplist: &TokenSet) -> TokenSequence {
    tokens.retain(|t| !stoplist.contains(t))
}

pub fn remove_excluded(tokens: TokenSequence, excluded: &TokenSet) -> TokenSequence {
    tokens.retain(|t| !excluded.contains(t))
}

/// Applies `stem` until the token stops changing. Porter is not idempotent
/// on every word (`agreed` → `agre` → `agr`), and downstream tokens must be
/// their own stems.
pub fn stem_to_fixed_point(token: &str) -> String {
    let mut current = token.to_string();
    loop {
        let next = stem(&current);
        if next == current {
            return current;
        }
        current = next;
    }
}

/// Run the whole chain on one text.
///
/// Order: URL/number/punctuation removal, lowercasing, whitespace split,
/// stopword removal, excluded removal, stemming. Stems that land on a listed
/// word are dropped as well, so no output token is ever in either list.
pub fn preprocess(text: &str, config: &PrepConfig) -> TokenSequence {
    let cleaned = clean(text, config.strip_punctuation, config.strip_urls_numbers);
    let cased = if config.lowercase {
        lowercase(&cleaned)
    } else {
        cleaned
    };
    let tokens = TokenSequence::new(cased.split_whitespace());
    let tokens = remove_stopwords(tokens, &config.stopword_list);
    let mut tokens = remove_excluded(tokens, &config.excluded_list);
    if config.stem {
        for t in tokens.tokens.iter_mut() {
            *t = stem_to_fixed_point(t);
        }
        tokens = remove_excluded(remove_stopwords(tokens, &config.stopword_list), &config.excluded_list);
    }
    tokens
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn punctuation_examples() {
        assert_eq!(remove_punctuation("Hello, world!"), "Hello world");
        assert_eq!(remove_punctuation(""), "");
        assert_eq!(
            remove_punctuation("Visit http://x.co now, 100% true!!!"),
            "Visit now true"
        );
        assert_eq!(remove_punctuation("see www.example.org/a?b=1 ok"), "see ok");
        assert_eq!(remove_punctuation("covid19 cases"), "covid cases");
        assert_eq!(remove_punctuation("price: $5 «quoted» — done…"), "price quoted done");
    }

    #[test]
    fn punctuation_kept_when_disabled() {
        assert_eq!(clean("a, b 12", false, false), "a, b 12");
        assert_eq!(clean("a, b 12", true, false), "a b 12");
        assert_eq!(clean("a, b 12", false, true), "a, b");
    }

    #[test]
    fn lowercase_examples() {
        assert_eq!(lowercase("FAKE News"), "fake news");
        assert_eq!(lowercase("ß"), "ß");
    }

    #[test]
    fn stopword_filter() {
        let stop = TokenSet::english_stopwords();
        assert_eq!(stop.len(), 174);
        let out = remove_stopwords(TokenSequence::new(["the", "news", "is", "fake"]), &stop);
        assert_eq!(out.tokens, vec!["news", "fake"]);
        assert!(remove_stopwords(TokenSequence::default(), &stop).is_empty());
        let all = TokenSequence::new(stop.iter().map(str::to_string).collect::<Vec<_>>());
        assert!(remove_stopwords(all, &stop).is_empty());
    }

    #[test]
    fn excluded_filter() {
        let ex = TokenSet::new(["click", "here"]);
        let out = remove_excluded(TokenSequence::new(["click", "here", "breaking"]), &ex);
        assert_eq!(out.tokens, vec!["breaking"]);
        let seq = TokenSequence::new(["a", "b"]);
        assert_eq!(remove_excluded(seq.clone(), &TokenSet::default()), seq);
    }

    #[test]
    fn token_set_parsing() {
        let s = TokenSet::parse("# header\nFoo\n  bar  # trailing\n\n");
        assert_eq!(s.iter().collect::<Vec<_>>(), vec!["bar", "foo"]);
    }

    #[test]
    fn preprocess_examples() {
        let cfg = PrepConfig::default();
        assert_eq!(preprocess("The running dogs!!!", &cfg).tokens, vec!["run", "dog"]);
        assert!(preprocess("", &cfg).is_empty());
        assert!(preprocess("the of and 123 !!!", &cfg).is_empty());
    }

    #[test]
    fn stem_fixed_point() {
        assert_eq!(stem("agreed"), "agre");
        assert_eq!(stem_to_fixed_point("agreed"), "agr");
    }

    #[test]
    fn preprocess_flags_off() {
        let cfg = PrepConfig {
            lowercase: false,
            stem: false,
            stopword_list: TokenSet::default(),
            ..PrepConfig::default()
        };
        assert_eq!(preprocess("The Running dogs", &cfg).tokens, vec!["The", "Running", "dogs"]);
    }
}
