//! Bundled synthetic 8-class training sample.
//!
//! Sentences are drawn from small per-language lexicons with Zipf-like word
//! weights, so the sample exercises the classifier without shipping third-party
//! corpora. It is a stand-in for real data, not a substitute for it.

use rand::distributions::{Distribution as _, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Corpus, LanguageClass};

/// Sentences per class in [`bundled_sample`].
pub const SAMPLE_PER_CLASS: usize = 700;
/// Seed used by [`bundled_sample`].
pub const SAMPLE_SEED: u64 = 20190;

fn lexicon_source(class: LanguageClass) -> &'static str {
    match class {
        LanguageClass::Afr => include_str!("../../data/lid/AFR.txt"),
        LanguageClass::Deu => include_str!("../../data/lid/DEU.txt"),
        LanguageClass::Eng => include_str!("../../data/lid/ENG.txt"),
        LanguageClass::Gsw => include_str!("../../data/lid/GSW.txt"),
        LanguageClass::GswLike => include_str!("../../data/lid/GSW_LIKE.txt"),
        LanguageClass::Ltz => include_str!("../../data/lid/LTZ.txt"),
        LanguageClass::Nld => include_str!("../../data/lid/NLD.txt"),
        LanguageClass::Other => include_str!("../../data/lid/OTHER.txt"),
    }
}

/// Word lists of one class, one per `## name` section (a single unnamed
/// section when the file has none).
pub fn lexicon_sections(class: LanguageClass) -> Vec<Vec<String>> {
    let mut sections: Vec<Vec<String>> = vec![Vec::new()];
    for line in lexicon_source(class).lines() {
        let line = line.trim();
        if line.starts_with("##") {
            if !sections.last().is_some_and(Vec::is_empty) {
                sections.push(Vec::new());
            }
            continue;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        sections
            .last_mut()
            .expect("non-empty")
            .extend(line.split_whitespace().map(str::to_owned));
    }
    sections.retain(|s| !s.is_empty());
    sections
}

/// All words of one class, in file order.
pub fn lexicon(class: LanguageClass) -> Vec<String> {
    lexicon_sections(class).into_iter().flatten().collect()
}

struct Section {
    words: Vec<String>,
    weights: WeightedIndex<f64>,
}

/// Stateful sentence generator for one class.
pub struct SentenceGenerator {
    sections: Vec<Section>,
}

impl SentenceGenerator {
    pub fn new(class: LanguageClass) -> Self {
        let sections = lexicon_sections(class)
            .into_iter()
            .map(|words| {
                let weights =
                    WeightedIndex::new((0..words.len()).map(|i| 1.0 / (i as f64 + 3.0))).expect("non-empty lexicon");
                Section { words, weights }
            })
            .collect();
        Self { sections }
    }

    /// One sentence of 3 to 16 words.
    pub fn sentence(&self, rng: &mut impl Rng) -> String {
        let section = &self.sections[rng.gen_range(0..self.sections.len())];
        let len = if rng.gen_bool(0.3) {
            rng.gen_range(3..=5)
        } else {
            rng.gen_range(6..=16)
        };
        let mut words: Vec<String> = (0..len)
            .map(|_| section.words[section.weights.sample(rng)].clone())
            .collect();
        if rng.gen_bool(0.7) {
            let first = &words[0];
            let mut cs = first.chars();
            if let Some(c) = cs.next() {
                words[0] = c.to_uppercase().chain(cs).collect();
            }
        }
        let mut s = words.join(" ");
        let end: f64 = rng.gen();
        match end {
            x if x < 0.6 => s.push('.'),
            x if x < 0.7 => s.push('!'),
            x if x < 0.8 => s.push('?'),
            _ => {}
        }
        s
    }
}

/// `per_class` generated sentences for each of the eight classes.
pub fn generate(per_class: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LanguageClass::ALL
        .iter()
        .map(|&class| {
            let g = SentenceGenerator::new(class);
            (
                class.label().to_owned(),
                (0..per_class).map(|_| g.sentence(&mut rng)).collect(),
            )
        })
        .collect()
}

/// The bundled sample: [`SAMPLE_PER_CLASS`] sentences per class.
pub fn bundled_sample() -> Corpus {
    generate(SAMPLE_PER_CLASS, SAMPLE_SEED)
}
