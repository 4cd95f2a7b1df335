//! Sentence-level language identification.
//!
//! [`LanguageIdentifier`] is the pluggable interface the pipeline talks to.
//! [`LidModel`] is the bundled reference implementation: a character n-gram
//! multinomial per class with add-k smoothing and uniform class priors.

mod eval;
mod model;
pub mod sample;

use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

pub use eval::{evaluate, evaluate_where, split_corpus, Evaluation, SplitFractions};
pub use model::{LidModel, DEFAULT_ORDER, DEFAULT_SMOOTHING};

/// Labelled training or test data: class label -> sentences.
pub type Corpus = std::collections::BTreeMap<String, Vec<String>>;

/// Reads `<LABEL>.txt` files (one sentence per line) from a directory.
pub fn load_corpus_dir(dir: impl AsRef<std::path::Path>) -> Result<Corpus, LidError> {
    let mut corpus = Corpus::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("txt") {
            continue;
        }
        let Some(label) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        let lines = std::fs::read_to_string(&path)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_owned)
            .collect();
        corpus.insert(label.to_owned(), lines);
    }
    if corpus.is_empty() {
        return Err(LidError::NoClasses);
    }
    Ok(corpus)
}

#[derive(Debug, Error)]
pub enum LidError {
    #[error("class {0} has no training sentences")]
    EmptyClass(String),
    #[error("training corpus has no classes")]
    NoClasses,
    #[error("n-gram order must be at least 1")]
    InvalidOrder,
    #[error("smoothing must be positive")]
    InvalidSmoothing,
    #[error("cannot classify an empty sentence")]
    EmptySentence,
    #[error("empty test set")]
    EmptyTestSet,
    #[error("unknown class {0}")]
    UnknownClass(String),
    #[error("model format error at line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The eight-class default scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum LanguageClass {
    Afr,
    Deu,
    Eng,
    Gsw,
    GswLike,
    Ltz,
    Nld,
    Other,
}

impl LanguageClass {
    pub const ALL: [LanguageClass; 8] = [
        LanguageClass::Afr,
        LanguageClass::Deu,
        LanguageClass::Eng,
        LanguageClass::Gsw,
        LanguageClass::GswLike,
        LanguageClass::Ltz,
        LanguageClass::Nld,
        LanguageClass::Other,
    ];

    /// The target class of the default scheme.
    pub const TARGET: LanguageClass = LanguageClass::Gsw;

    pub fn label(self) -> &'static str {
        match self {
            LanguageClass::Afr => "AFR",
            LanguageClass::Deu => "DEU",
            LanguageClass::Eng => "ENG",
            LanguageClass::Gsw => "GSW",
            LanguageClass::GswLike => "GSW_LIKE",
            LanguageClass::Ltz => "LTZ",
            LanguageClass::Nld => "NLD",
            LanguageClass::Other => "OTHER",
        }
    }
}

impl fmt::Display for LanguageClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for LanguageClass {
    type Err = LidError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LanguageClass::ALL
            .into_iter()
            .find(|c| c.label() == s)
            .ok_or_else(|| LidError::UnknownClass(s.to_owned()))
    }
}

/// A probability distribution over a model's class table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Distribution {
    pub classes: Vec<String>,
    pub probs: Vec<f64>,
}

impl Distribution {
    pub fn get(&self, label: &str) -> Option<f64> {
        self.classes.iter().position(|c| c == label).map(|i| self.probs[i])
    }

    /// Highest-probability class; ties go to the first class in table order.
    pub fn argmax(&self) -> &str {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        &self.classes[best]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.classes.iter().map(String::as_str).zip(self.probs.iter().copied())
    }
}

/// Anything that can assign class probabilities to a sentence.
pub trait LanguageIdentifier: Send + Sync {
    fn classes(&self) -> &[String];

    fn target(&self) -> &str;

    fn predict(&self, sentence: &str) -> Result<Distribution, LidError>;

    /// Probability of the target class.
    fn prob_target(&self, sentence: &str) -> Result<f64, LidError> {
        let dist = self.predict(sentence)?;
        dist.get(self.target())
            .ok_or_else(|| LidError::UnknownClass(self.target().to_owned()))
    }
}
