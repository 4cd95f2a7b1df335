use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Corpus, LanguageIdentifier, LidError};

/// Confusion matrix over the identifier's class table; `confusion[gold][predicted]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub classes: Vec<String>,
    pub confusion: Vec<Vec<u64>>,
    pub total: u64,
    pub correct: u64,
    pub accuracy: f64,
}

impl Evaluation {
    /// Per-class recall, in class-table order. `None` for classes without test data.
    pub fn recall(&self) -> Vec<Option<f64>> {
        self.confusion
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let n: u64 = row.iter().sum();
                (n > 0).then(|| row[i] as f64 / n as f64)
            })
            .collect()
    }
}

/// Classifies every test sentence and tallies the result.
/// The test set must be disjoint from training data; that is up to the caller.
pub fn evaluate(model: &dyn LanguageIdentifier, test: &Corpus) -> Result<Evaluation, LidError> {
    evaluate_where(model, test, |_| true)
}

/// Like [`evaluate`], restricted to sentences accepted by `keep`.
pub fn evaluate_where(
    model: &dyn LanguageIdentifier,
    test: &Corpus,
    keep: impl Fn(&str) -> bool,
) -> Result<Evaluation, LidError> {
    let classes = model.classes().to_vec();
    let k = classes.len();
    let mut confusion = vec![vec![0u64; k]; k];
    let mut total = 0u64;
    for (label, sentences) in test {
        let gold = classes
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| LidError::UnknownClass(label.clone()))?;
        for s in sentences.iter().filter(|s| !s.trim().is_empty() && keep(s)) {
            let dist = model.predict(s)?;
            let pred = classes
                .iter()
                .position(|c| c == dist.argmax())
                .expect("class from table");
            confusion[gold][pred] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(LidError::EmptyTestSet);
    }
    let correct: u64 = (0..k).map(|i| confusion[i][i]).sum();
    Ok(Evaluation {
        classes,
        confusion,
        total,
        correct,
        accuracy: correct as f64 / total as f64,
    })
}

/// Train/dev/test fractions; the test share is whatever remains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub dev: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.75, dev: 0.10 }
    }
}

/// Per-class seeded shuffle and split into (train, dev, test).
pub fn split_corpus(corpus: &Corpus, fractions: SplitFractions, seed: u64) -> (Corpus, Corpus, Corpus) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut dev, mut test) = (Corpus::new(), Corpus::new(), Corpus::new());
    for (label, sentences) in corpus {
        let mut shuffled = sentences.clone();
        shuffled.shuffle(&mut rng);
        let n = shuffled.len();
        let n_train = (((n as f64) * fractions.train).round() as usize).min(n);
        let n_dev = (((n as f64) * fractions.dev).round() as usize).min(n - n_train);
        let rest = shuffled.split_off(n_train);
        let (d, t) = rest.split_at(n_dev);
        train.insert(label.clone(), shuffled);
        dev.insert(label.clone(), d.to_vec());
        test.insert(label.clone(), t.to_vec());
    }
    (train, dev, test)
}
