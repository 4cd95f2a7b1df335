use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use unicode_normalization::UnicodeNormalization;

use super::{Corpus, Distribution, LanguageClass, LanguageIdentifier, LidError};

pub const DEFAULT_ORDER: usize = 4;
pub const DEFAULT_SMOOTHING: f64 = 1.0;

const MAGIC: &str = "NGRAM-LID";
const FORMAT_VERSION: u32 = 1;

/// Character n-gram language model with one multinomial per class and order.
///
/// A sentence scores as the sum, over orders `1..=order`, of the log-probabilities
/// of its padded m-grams under the class's order-m multinomial. Probabilities use
/// add-k smoothing over the global m-gram vocabulary plus one unseen slot.
#[derive(Debug, Clone, PartialEq)]
pub struct LidModel {
    order: usize,
    smoothing: f64,
    classes: Vec<String>,
    target: String,
    /// `counts[class][m - 1]`
    counts: Vec<Vec<HashMap<String, u64>>>,
    /// `totals[class][m - 1]`
    totals: Vec<Vec<u64>>,
    /// Distinct m-grams across all classes, `vocab[m - 1]`.
    vocab: Vec<usize>,
}

/// NFC, lowercase, single spaces, one space of padding on each side.
pub(crate) fn prepare(sentence: &str) -> String {
    let lowered: String = sentence.nfc().collect::<String>().to_lowercase();
    let mut out = String::with_capacity(lowered.len() + 2);
    out.push(' ');
    for w in lowered.split_whitespace() {
        out.push_str(w);
        out.push(' ');
    }
    if out.len() == 1 {
        out.push(' ');
    }
    out
}

pub(crate) fn ngrams(padded: &str, m: usize) -> impl Iterator<Item = String> + '_ {
    let chars: Vec<char> = padded.chars().collect();
    let n = chars.len();
    (0..(n + 1).saturating_sub(m)).map(move |i| chars[i..i + m].iter().collect())
}

fn escape(g: &str) -> String {
    let mut s = String::with_capacity(g.len());
    for c in g.chars() {
        match c {
            '\\' => s.push_str("\\\\"),
            '\t' => s.push_str("\\t"),
            '\n' => s.push_str("\\n"),
            c => s.push(c),
        }
    }
    s
}

fn unescape(g: &str) -> Option<String> {
    let mut out = String::with_capacity(g.len());
    let mut it = g.chars();
    while let Some(c) = it.next() {
        if c == '\\' {
            match it.next()? {
                '\\' => out.push('\\'),
                't' => out.push('\t'),
                'n' => out.push('\n'),
                _ => return None,
            }
        } else {
            out.push(c);
        }
    }
    Some(out)
}

impl LidModel {
    /// Trains on `corpus`. Classes are taken in key order. The target class is
    /// `GSW` when present, else the first class.
    pub fn train(corpus: &Corpus, order: usize, smoothing: f64) -> Result<Self, LidError> {
        if order == 0 {
            return Err(LidError::InvalidOrder);
        }
        if !(smoothing > 0.0 && smoothing.is_finite()) {
            return Err(LidError::InvalidSmoothing);
        }
        if corpus.is_empty() {
            return Err(LidError::NoClasses);
        }
        let mut classes = Vec::with_capacity(corpus.len());
        let mut counts = Vec::with_capacity(corpus.len());
        let mut totals = Vec::with_capacity(corpus.len());
        for (label, sentences) in corpus {
            if sentences.iter().all(|s| s.trim().is_empty()) {
                return Err(LidError::EmptyClass(label.clone()));
            }
            let mut per_order: Vec<HashMap<String, u64>> = vec![HashMap::new(); order];
            let mut tot = vec![0u64; order];
            for s in sentences {
                if s.trim().is_empty() {
                    continue;
                }
                let padded = prepare(s);
                for m in 1..=order {
                    for g in ngrams(&padded, m) {
                        *per_order[m - 1].entry(g).or_default() += 1;
                        tot[m - 1] += 1;
                    }
                }
            }
            classes.push(label.clone());
            counts.push(per_order);
            totals.push(tot);
        }
        let target = if classes.iter().any(|c| c == LanguageClass::TARGET.label()) {
            LanguageClass::TARGET.label().to_owned()
        } else {
            classes[0].clone()
        };
        let mut model = Self {
            order,
            smoothing,
            classes,
            target,
            counts,
            totals,
            vocab: Vec::new(),
        };
        model.recompute_vocab();
        Ok(model)
    }

    fn recompute_vocab(&mut self) {
        self.vocab = (0..self.order)
            .map(|m| {
                let mut seen: HashSet<&str> = HashSet::new();
                for class in &self.counts {
                    seen.extend(class[m].keys().map(String::as_str));
                }
                seen.len()
            })
            .collect();
    }

    pub fn with_target(mut self, label: &str) -> Result<Self, LidError> {
        if !self.classes.iter().any(|c| c == label) {
            return Err(LidError::UnknownClass(label.to_owned()));
        }
        self.target = label.to_owned();
        Ok(self)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn vocab_size(&self, m: usize) -> usize {
        self.vocab[m - 1]
    }

    pub fn count(&self, class: &str, gram: &str) -> u64 {
        let m = gram.chars().count();
        let Some(ci) = self.classes.iter().position(|c| c == class) else {
            return 0;
        };
        if m == 0 || m > self.order {
            return 0;
        }
        self.counts[ci][m - 1].get(gram).copied().unwrap_or(0)
    }

    /// Per-class log-likelihoods of `sentence`, in class-table order.
    pub fn log_likelihoods(&self, sentence: &str) -> Result<Vec<f64>, LidError> {
        if sentence.trim().is_empty() {
            return Err(LidError::EmptySentence);
        }
        let padded = prepare(sentence);
        let grams: Vec<Vec<String>> = (1..=self.order).map(|m| ngrams(&padded, m).collect()).collect();
        let k = self.smoothing;
        Ok((0..self.classes.len())
            .map(|ci| {
                let mut ll = 0.0;
                for m in 1..=self.order {
                    let denom = self.totals[ci][m - 1] as f64 + k * (self.vocab[m - 1] as f64 + 1.0);
                    let table = &self.counts[ci][m - 1];
                    for g in &grams[m - 1] {
                        let c = table.get(g).copied().unwrap_or(0) as f64;
                        ll += ((c + k) / denom).ln();
                    }
                }
                ll
            })
            .collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LidError> {
        let f = std::fs::File::create(path)?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LidError> {
        let f = std::fs::File::open(path)?;
        Self::read_from(BufReader::new(f))
    }

    /// Text format: magic/version line, header lines, then one `gram<TAB>count`
    /// line per entry grouped under `grams <class> <order> <n>` section lines.
    pub fn write_to(&self, w: &mut impl Write) -> Result<(), LidError> {
        writeln!(w, "{MAGIC} {FORMAT_VERSION}")?;
        writeln!(w, "order {}", self.order)?;
        writeln!(w, "smoothing {}", self.smoothing)?;
        writeln!(w, "target {}", self.target)?;
        writeln!(w, "classes {}", self.classes.join(" "))?;
        for (ci, class) in self.classes.iter().enumerate() {
            for m in 1..=self.order {
                let table = &self.counts[ci][m - 1];
                let mut entries: Vec<(&String, &u64)> = table.iter().collect();
                entries.sort();
                writeln!(w, "grams {class} {m} {}", entries.len())?;
                for (g, c) in entries {
                    writeln!(w, "{}\t{c}", escape(g))?;
                }
            }
        }
        writeln!(w, "end")?;
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self, LidError> {
        let mut lines = r.lines().enumerate();
        let mut next = |expect: &str| -> Result<(usize, String), LidError> {
            match lines.next() {
                Some((i, Ok(l))) => Ok((i + 1, l)),
                Some((i, Err(e))) => Err(LidError::Format {
                    line: i + 1,
                    reason: e.to_string(),
                }),
                None => Err(LidError::Format {
                    line: 0,
                    reason: format!("unexpected end of file, expected {expect}"),
                }),
            }
        };
        let bad = |line: usize, reason: &str| LidError::Format {
            line,
            reason: reason.to_owned(),
        };
        let field = |line: usize, text: &str, key: &str| -> Result<String, LidError> {
            text.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_owned)
                .ok_or_else(|| bad(line, &format!("expected `{key}`")))
        };

        let (ln, magic) = next("magic")?;
        if magic != format!("{MAGIC} {FORMAT_VERSION}") {
            return Err(bad(ln, "bad magic or unsupported version"));
        }
        let (ln, l) = next("order")?;
        let order: usize = field(ln, &l, "order")?.parse().map_err(|_| bad(ln, "bad order"))?;
        if order == 0 {
            return Err(bad(ln, "order must be at least 1"));
        }
        let (ln, l) = next("smoothing")?;
        let smoothing: f64 = field(ln, &l, "smoothing")?
            .parse()
            .map_err(|_| bad(ln, "bad smoothing"))?;
        let (ln, l) = next("target")?;
        let target = field(ln, &l, "target")?;
        let (ln, l) = next("classes")?;
        let classes: Vec<String> = field(ln, &l, "classes")?.split(' ').map(str::to_owned).collect();
        if !classes.contains(&target) {
            return Err(bad(ln, "target not in class table"));
        }

        let mut counts = vec![vec![HashMap::new(); order]; classes.len()];
        let mut totals = vec![vec![0u64; order]; classes.len()];
        for (ci, class) in classes.iter().enumerate() {
            for m in 1..=order {
                let (ln, header) = next("grams")?;
                let parts: Vec<&str> = header.split(' ').collect();
                if parts.len() != 4 || parts[0] != "grams" || parts[1] != class || parts[2] != m.to_string() {
                    return Err(bad(ln, "bad grams section header"));
                }
                let n: usize = parts[3].parse().map_err(|_| bad(ln, "bad entry count"))?;
                for _ in 0..n {
                    let (ln, entry) = next("gram entry")?;
                    let (g, c) = entry.rsplit_once('\t').ok_or_else(|| bad(ln, "missing tab"))?;
                    let g = unescape(g).ok_or_else(|| bad(ln, "bad escape"))?;
                    let c: u64 = c.parse().map_err(|_| bad(ln, "bad count"))?;
                    totals[ci][m - 1] += c;
                    counts[ci][m - 1].insert(g, c);
                }
            }
        }
        let (ln, end) = next("end")?;
        if end != "end" {
            return Err(bad(ln, "expected `end`"));
        }
        let mut model = Self {
            order,
            smoothing,
            classes,
            target,
            counts,
            totals,
            vocab: Vec::new(),
        };
        model.recompute_vocab();
        Ok(model)
    }
}

impl LanguageIdentifier for LidModel {
    fn classes(&self) -> &[String] {
        &self.classes
    }

    fn target(&self) -> &str {
        &self.target
    }

    fn predict(&self, sentence: &str) -> Result<Distribution, LidError> {
        let ll = self.log_likelihoods(sentence)?;
        // uniform prior cancels out; log-sum-exp normalization
        let max = ll.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = ll.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        Ok(Distribution {
            classes: self.classes.clone(),
            probs: exps.into_iter().map(|e| e / z).collect(),
        })
    }
}
