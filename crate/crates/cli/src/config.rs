//! Run configuration: one JSON file, every field optional.

use std::path::{Path, PathBuf};

use newsforge_core::corpus::CorpusFormat;
use newsforge_core::model::Hyper;
use newsforge_core::textprep::{PrepConfig, TokenSet};
use newsforge_core::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SEED_ENV: &str = "NEWSFORGE_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepSection {
    pub lowercase: bool,
    pub strip_punctuation: bool,
    pub strip_urls_numbers: bool,
    pub stem: bool,
}

impl Default for PrepSection {
    fn default() -> Self {
        Self {
            lowercase: true,
            strip_punctuation: true,
            strip_urls_numbers: true,
            stem: true,
        }
    }
}

/// Optimizer settings. The seed lives at the top level of [`RunConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub grad_clip_norm: Option<f64>,
    pub eval_split: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            beta1: d.beta1,
            beta2: d.beta2,
            epsilon: d.epsilon,
            grad_clip_norm: d.grad_clip_norm,
            eval_split: d.eval_split,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    /// Inferred from the corpus extension when absent.
    pub corpus_format: Option<CorpusFormat>,
    /// Replaces the bundled English stoplist.
    pub stoplist: Option<PathBuf>,
    pub excluded: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub checkpoint: PathBuf,
    pub history: PathBuf,
    pub report: PathBuf,
    pub ratio: f64,
    pub stratified: bool,
    /// Falls back to `NEWSFORGE_SEED`, then 0.
    pub seed: Option<u64>,
    pub min_freq: usize,
    pub prep: PrepSection,
    pub model: Hyper,
    pub train: TrainSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            corpus_format: None,
            stoplist: None,
            excluded: None,
            embeddings: None,
            checkpoint: PathBuf::from("model.json"),
            history: PathBuf::from("history.csv"),
            report: PathBuf::from("report.json"),
            ratio: 0.2,
            stratified: true,
            seed: None,
            min_freq: 1,
            prep: PrepSection::default(),
            model: Hyper::default(),
            train: TrainSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Config seed, else the environment variable, else 0.
    pub fn resolve_seed(&self, env: Option<&str>) -> Result<u64, CliError> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match env.map(str::trim).filter(|s| !s.is_empty()) {
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
            None => Ok(0),
        }
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.resolve_seed(std::env::var(SEED_ENV).ok().as_deref())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(CliError::Usage(format!("ratio {} outside [0, 1]", self.ratio)));
        }
        if self.min_freq == 0 {
            return Err(CliError::Usage("min_freq must be >= 1".into()));
        }
        self.model
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        self.train_config(0)
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn corpus_path(&self) -> Result<&Path, CliError> {
        self.corpus
            .as_deref()
            .ok_or_else(|| CliError::Usage("no corpus path given".into()))
    }

    pub fn corpus_format(&self, path: &Path) -> CorpusFormat {
        self.corpus_format.unwrap_or_else(|| CorpusFormat::from_path(path))
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            grad_clip_norm: t.grad_clip_norm,
            seed,
            eval_split: t.eval_split,
        }
    }

    pub fn prep_config(&self) -> Result<PrepConfig, CliError> {
        let load = |p: &Path| TokenSet::load(p).map_err(|e| CliError::Data(e.to_string()));
        Ok(PrepConfig {
            lowercase: self.prep.lowercase,
            strip_punctuation: self.prep.strip_punctuation,
            strip_urls_numbers: self.prep.strip_urls_numbers,
            stem: self.prep.stem,
            stopword_list: match &self.stoplist {
                Some(p) => load(p)?,
                None => TokenSet::english_stopwords(),
            },
            excluded_list: match &self.excluded {
                Some(p) => load(p)?,
                None => TokenSet::default(),
            },
        })
    }
}
