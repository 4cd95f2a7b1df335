//! Seed query generation from corpus vocabulary, and search-engine harvesting.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;
use std::time::Duration;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::{FetchOptions, Fetcher};
use crate::lid::LanguageIdentifier;
use crate::linkfilter::{filter_url, LinkRules};
use crate::model::UrlTask;
use crate::store::{Store, StoreError};

/// Rejection budget per generated query.
pub const MAX_ATTEMPTS: usize = 1000;
/// Result pages requested per query at most.
pub const MAX_RESULT_PAGES: usize = 10;
/// Queries may contain at most this many one-letter words.
pub const MAX_SINGLE_LETTER_WORDS: usize = 2;

const META_PREFIX: &str = "seed:";
const BUNDLED_DE: &str = include_str!("../data/wordlists/de.txt");
const BUNDLED_EN: &str = include_str!("../data/wordlists/en.txt");

#[derive(Debug, Error)]
pub enum SeedError {
    #[error("no sentences to build a vocabulary from")]
    EmptyStore,
    #[error("vocabulary has {have} words, {need} needed per query")]
    VocabularyTooSmall { have: usize, need: usize },
    #[error("search engine: {0}")]
    Engine(String),
    #[error("cannot read word list {path}: {source}")]
    Wordlist {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("engine config: {0}")]
    EngineConfig(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub word: String,
    pub frequency: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryStatus {
    Pending,
    Submitted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedQuery {
    pub words: Vec<String>,
    pub lid_proba: f64,
    pub created_at: DateTime<Utc>,
    pub status: QueryStatus,
}

impl SeedQuery {
    /// Each word in double quotes, space separated.
    pub fn quoted(&self) -> String {
        self.words
            .iter()
            .map(|w| format!("\"{w}\""))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Order-insensitive identity of the word multiset.
    pub fn multiset_key(&self) -> String {
        multiset_key(&self.words)
    }
}

fn multiset_key(words: &[String]) -> String {
    let mut w = words.to_vec();
    w.sort();
    w.join(" ")
}

fn is_alpha_token(t: &str) -> bool {
    !t.is_empty() && t.chars().all(char::is_alphabetic)
}

/// Word frequencies over one sentence per distinct URL (the one with the
/// smallest dedup key) plus every bootstrap sentence. Tokens with any
/// non-alphabetic character are dropped; the rest are lowercased.
/// Sorted by descending frequency, then word.
pub fn build_vocab(store: &Store) -> Result<Vec<VocabEntry>, SeedError> {
    let mut per_url: BTreeMap<String, (String, String)> = BTreeMap::new();
    for r in store.sentences() {
        let cand = (r.dedup_key.clone(), r.text.clone());
        per_url
            .entry(r.url.clone())
            .and_modify(|cur| {
                if cand < *cur {
                    *cur = cand.clone();
                }
            })
            .or_insert(cand);
    }
    let bootstrap = store.bootstrap_sentences();
    if per_url.is_empty() && bootstrap.is_empty() {
        return Err(SeedError::EmptyStore);
    }
    Ok(count_words(
        per_url
            .values()
            .map(|(_, t)| t.as_str())
            .chain(bootstrap.iter().map(String::as_str)),
    ))
}

fn count_words<'a>(sentences: impl Iterator<Item = &'a str>) -> Vec<VocabEntry> {
    let mut freq: HashMap<String, u64> = HashMap::new();
    for s in sentences {
        for tok in s.split_whitespace().filter(|t| is_alpha_token(t)) {
            *freq.entry(tok.to_lowercase()).or_default() += 1;
        }
    }
    let mut v: Vec<VocabEntry> = freq
        .into_iter()
        .map(|(word, frequency)| VocabEntry { word, frequency })
        .collect();
    v.sort_by(|a, b| b.frequency.cmp(&a.frequency).then_with(|| a.word.cmp(&b.word)));
    v
}

/// One-word-per-line list, lowercased.
pub fn parse_wordlist(src: &str) -> HashSet<String> {
    src.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

pub fn load_wordlist(path: impl AsRef<Path>) -> Result<HashSet<String>, SeedError> {
    let path = path.as_ref();
    std::fs::read_to_string(path)
        .map(|s| parse_wordlist(&s))
        .map_err(|source| SeedError::Wordlist {
            path: path.display().to_string(),
            source,
        })
}

/// Bundled German and English lists.
pub fn bundled_wordlists() -> Vec<HashSet<String>> {
    vec![parse_wordlist(BUNDLED_DE), parse_wordlist(BUNDLED_EN)]
}

/// Drops hapaxes and words found in any of the lists.
pub fn filter_vocab(vocab: &[VocabEntry], wordlists: &[HashSet<String>]) -> Vec<VocabEntry> {
    vocab
        .iter()
        .filter(|e| e.frequency >= 2 && !wordlists.iter().any(|l| l.contains(&e.word)))
        .cloned()
        .collect()
}

/// Frequency-proportional sampling of distinct indices.
#[derive(Debug, Clone)]
pub struct WeightedSampler {
    cumulative: Vec<u64>,
    weights: Vec<u64>,
}

impl WeightedSampler {
    pub fn new(weights: Vec<u64>) -> Self {
        let mut acc = 0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Self { cumulative, weights }
    }

    pub fn total(&self) -> u64 {
        self.cumulative.last().copied().unwrap_or(0)
    }

    /// Draws `k` distinct indices sequentially, each proportional to weight
    /// among those not yet drawn.
    pub fn sample_distinct(&self, k: usize, rng: &mut impl Rng) -> Vec<usize> {
        let mut chosen: Vec<usize> = Vec::with_capacity(k);
        for _ in 0..k {
            let removed: u64 = chosen.iter().map(|&i| self.weights[i]).sum();
            let remaining = self.total() - removed;
            if remaining == 0 {
                break;
            }
            // Map a point of the reduced line back onto the full line by
            // stepping over the intervals of already chosen items.
            let mut r = rng.gen_range(0..remaining);
            let mut sorted = chosen.clone();
            sorted.sort_unstable();
            for &c in &sorted {
                let start = self.cumulative[c] - self.weights[c];
                if r >= start {
                    r += self.weights[c];
                }
            }
            let idx = self.cumulative.partition_point(|&c| c <= r);
            chosen.push(idx);
        }
        chosen
    }
}

/// Result of [`generate_seeds`]; fewer than `count` queries when the
/// rejection budget ran out.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedBatch {
    pub queries: Vec<SeedQuery>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedParams {
    pub word_count: usize,
    pub lid_threshold: f64,
}

/// Generates up to `count` queries deterministically from `rng_seed`.
///
/// Candidates with more than [`MAX_SINGLE_LETTER_WORDS`] one-letter words, a
/// target probability below the threshold, or a word multiset already in
/// `used` are rejected, with [`MAX_ATTEMPTS`] tries per query.
pub fn generate_seeds(
    vocab: &[VocabEntry],
    count: usize,
    rng_seed: u64,
    lid: &dyn LanguageIdentifier,
    params: SeedParams,
    used: &HashSet<String>,
) -> Result<SeedBatch, SeedError> {
    if count == 0 {
        return Ok(SeedBatch {
            queries: Vec::new(),
            warnings: Vec::new(),
        });
    }
    if vocab.len() < params.word_count {
        return Err(SeedError::VocabularyTooSmall {
            have: vocab.len(),
            need: params.word_count,
        });
    }
    let sampler = WeightedSampler::new(vocab.iter().map(|e| e.frequency).collect());
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut used = used.clone();
    let mut queries = Vec::with_capacity(count);
    let mut warnings = Vec::new();
    'queries: for qi in 0..count {
        for _ in 0..MAX_ATTEMPTS {
            let words: Vec<String> = sampler
                .sample_distinct(params.word_count, &mut rng)
                .into_iter()
                .map(|i| vocab[i].word.clone())
                .collect();
            if words.len() < params.word_count {
                continue;
            }
            if words.iter().filter(|w| w.chars().count() == 1).count() > MAX_SINGLE_LETTER_WORDS {
                continue;
            }
            let key = multiset_key(&words);
            if used.contains(&key) {
                continue;
            }
            let p = lid.prob_target(&words.join(" ")).unwrap_or(0.0);
            if p < params.lid_threshold {
                continue;
            }
            used.insert(key);
            queries.push(SeedQuery {
                words,
                lid_proba: p,
                created_at: Utc::now(),
                status: QueryStatus::Pending,
            });
            continue 'queries;
        }
        let msg = format!("rejection budget exhausted after {qi} of {count} queries");
        tracing::warn!("{msg}");
        warnings.push(msg);
        break;
    }
    Ok(SeedBatch { queries, warnings })
}

/// Multisets of every query submitted so far.
pub fn submitted_multisets(store: &Store) -> HashSet<String> {
    store
        .meta_with_prefix(META_PREFIX)
        .into_iter()
        .map(|(k, _)| k[META_PREFIX.len()..].to_owned())
        .collect()
}

/// A paginated web search.
pub trait SearchEngine: Send + Sync {
    /// Result URLs of page `page` (0-based); an empty page means no more results.
    fn search(&self, query: &str, page: usize) -> Result<Vec<String>, SeedError>;
}

/// Canned results keyed by exact query string, served in pages.
#[derive(Debug, Default)]
pub struct FixtureEngine {
    results: HashMap<String, Vec<String>>,
    /// Results for queries without an entry.
    fallback: Vec<String>,
    page_size: usize,
    log: Mutex<Vec<(String, usize)>>,
}

impl FixtureEngine {
    pub fn new(results: HashMap<String, Vec<String>>, page_size: usize) -> Self {
        Self {
            results,
            fallback: Vec::new(),
            page_size: page_size.max(1),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn with_fallback(mut self, urls: Vec<String>) -> Self {
        self.fallback = urls;
        self
    }

    /// JSON document `{"results": {query: [url, ...]}, "fallback": [...], "page_size": n}`.
    pub fn from_json(src: &str) -> Result<Self, SeedError> {
        #[derive(Deserialize)]
        struct Doc {
            #[serde(default)]
            results: HashMap<String, Vec<String>>,
            #[serde(default)]
            fallback: Vec<String>,
            #[serde(default = "ten")]
            page_size: usize,
        }
        fn ten() -> usize {
            10
        }
        let d: Doc = serde_json::from_str(src).map_err(|e| SeedError::EngineConfig(e.to_string()))?;
        Ok(Self::new(d.results, d.page_size).with_fallback(d.fallback))
    }

    /// Every (query, page) received so far.
    pub fn requests(&self) -> Vec<(String, usize)> {
        self.log.lock().clone()
    }
}

impl SearchEngine for FixtureEngine {
    fn search(&self, query: &str, page: usize) -> Result<Vec<String>, SeedError> {
        self.log.lock().push((query.to_owned(), page));
        let all = self.results.get(query).unwrap_or(&self.fallback);
        Ok(all
            .iter()
            .skip(page * self.page_size)
            .take(self.page_size)
            .cloned()
            .collect())
    }
}

/// Scrapes an HTML results page. `endpoint` contains `{query}` and `{page}`
/// placeholders; `{page}` becomes `page_start + page * page_step`.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HtmlEngineConfig {
    pub endpoint: String,
    pub result_selector: String,
    #[serde(default)]
    pub page_start: usize,
    #[serde(default = "one")]
    pub page_step: usize,
    /// Attribute holding the target URL.
    #[serde(default = "href")]
    pub attribute: String,
}

fn one() -> usize {
    1
}

fn href() -> String {
    "href".into()
}

impl HtmlEngineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, SeedError> {
        let c: Self = toml::from_str(s).map_err(|e| SeedError::EngineConfig(e.to_string()))?;
        scraper::Selector::parse(&c.result_selector).map_err(|e| SeedError::EngineConfig(e.to_string()))?;
        if !c.endpoint.contains("{query}") {
            return Err(SeedError::EngineConfig("endpoint lacks {query}".into()));
        }
        Ok(c)
    }

    /// Bundled preset for a public metasearch results page.
    pub fn startpage() -> Self {
        Self::from_toml_str(include_str!("../data/engines/startpage.toml")).expect("bundled preset is valid")
    }

    pub fn request_url(&self, query: &str, page: usize) -> String {
        let q: String = url::form_urlencoded::byte_serialize(query.as_bytes()).collect();
        self.endpoint
            .replace("{query}", &q)
            .replace("{page}", &(self.page_start + page * self.page_step).to_string())
    }

    /// Result links of one results page, resolved against `page_url`.
    pub fn parse_results(&self, html: &str, page_url: &str) -> Vec<String> {
        let doc = scraper::Html::parse_document(html);
        let sel = scraper::Selector::parse(&self.result_selector).expect("validated selector");
        let base = url::Url::parse(page_url).ok();
        doc.select(&sel)
            .filter_map(|e| e.value().attr(&self.attribute))
            .filter_map(|h| match &base {
                Some(b) => b.join(h).ok().map(String::from),
                None => Some(h.to_owned()),
            })
            .collect()
    }
}

/// The HTTP client is built per request, so the engine may be owned by
/// async code while searches run on blocking threads.
pub struct HtmlResultsEngine {
    config: HtmlEngineConfig,
    fetch: FetchOptions,
}

impl HtmlResultsEngine {
    pub fn new(config: HtmlEngineConfig, fetch: FetchOptions) -> Self {
        Self { config, fetch }
    }
}

impl SearchEngine for HtmlResultsEngine {
    fn search(&self, query: &str, page: usize) -> Result<Vec<String>, SeedError> {
        let url = self.config.request_url(query, page);
        let fetcher = Fetcher::new(&self.fetch).map_err(|e| SeedError::Engine(e.to_string()))?;
        let res = fetcher.fetch(&url).map_err(|e| SeedError::Engine(e.to_string()))?;
        Ok(self.config.parse_results(&res.body, &res.url))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SubmitOutcome {
    /// Distinct URLs the engine returned, before any filtering.
    pub returned: Vec<String>,
    /// New URLs admitted as depth-0 tasks.
    pub admitted: Vec<String>,
    pub pages: usize,
}

/// Submits a pending query and admits up to `max_new` never-seen URLs.
///
/// Pages are requested `page_delay` apart until enough new URLs are found,
/// the engine runs dry, or [`MAX_RESULT_PAGES`] is reached. On engine failure
/// nothing is admitted and the query stays pending.
pub fn submit_seed(
    query: &mut SeedQuery,
    engine: &dyn SearchEngine,
    store: &Store,
    rules: &LinkRules,
    max_new: usize,
    page_delay: Duration,
) -> Result<SubmitOutcome, SeedError> {
    let q = query.quoted();
    let mut out = SubmitOutcome::default();
    let mut seen_returned = HashSet::new();
    let mut picked = BTreeSet::new();
    for page in 0..MAX_RESULT_PAGES {
        if out.admitted.len() >= max_new {
            break;
        }
        if page > 0 {
            std::thread::sleep(page_delay);
        }
        let results = engine.search(&q, page)?;
        out.pages += 1;
        if results.is_empty() {
            break;
        }
        for raw in results {
            if seen_returned.insert(raw.clone()) {
                out.returned.push(raw.clone());
            }
            if out.admitted.len() >= max_new {
                continue;
            }
            let Some(u) = filter_url(&raw, rules) else { continue };
            let host = url::Url::parse(&u)
                .ok()
                .and_then(|x| x.host_str().map(str::to_owned))
                .unwrap_or_default();
            if store.is_known_url(&u) || store.is_host_blacklisted(&host) || !picked.insert(u.clone()) {
                continue;
            }
            out.admitted.push(u);
        }
    }
    let admitted = store.add_tasks(out.admitted.iter().map(UrlTask::seed).collect())?;
    out.admitted = admitted.into_iter().map(|t| t.url).collect();
    query.status = QueryStatus::Submitted;
    store.put_meta(
        &format!("{META_PREFIX}{}", query.multiset_key()),
        &serde_json::to_string(query).expect("plain data"),
    )?;
    Ok(out)
}
