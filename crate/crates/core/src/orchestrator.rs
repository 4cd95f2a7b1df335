//! Page processing pipeline, the multi-worker crawler and harvesting iterations.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::config::CrawlConfig;
use crate::decider::{Decider, DefaultDecider, PageOutcome, SaveDecision};
use crate::extract::{
    extract_blocks_with, extract_links, BlockClass, ExtractOptions, FetchError, FetchOptions, FetchResult, Fetcher,
};
use crate::lid::{LanguageIdentifier, LidError, LidModel};
use crate::linkfilter::{apply_rules, registrable_domain, LinkRules};
use crate::model::{SentenceRecord, TaskState, UrlTask};
use crate::seeder::{
    build_vocab, bundled_wordlists, filter_vocab, generate_seeds, submit_seed, submitted_multisets, SearchEngine,
    SeedError, SeedParams,
};
use crate::sentfilter::{bundled_rules, check, RulePolicy};
use crate::sentsplit::{split_sentences, PrefixTable};
use crate::store::{AddOutcome, Store, StoreError};
use crate::textnorm::normalize;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Seed(#[from] SeedError),
    #[error(transparent)]
    Lid(#[from] LidError),
    #[error(transparent)]
    Fetch(#[from] FetchError),
    #[error("an iteration is already running")]
    Busy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Robots,
    Fetch,
    Scrape,
    Normalize,
    Split,
    Filter,
    Lid,
    Decide,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub micros: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSentence {
    pub text: String,
    /// Target-language probability; absent when the filter rejected the sentence.
    pub proba: Option<f64>,
    pub failed_rules: Vec<String>,
}

impl ScoredSentence {
    pub fn accepted(&self, threshold: f64) -> bool {
        self.failed_rules.is_empty() && self.proba.is_some_and(|p| p >= threshold)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PageAnalysis {
    pub sentences: Vec<ScoredSentence>,
    /// Outgoing links after link filtering, deduplicated, in document order.
    pub links: Vec<String>,
    pub good_blocks: usize,
    pub trace: Vec<StageTiming>,
}

impl PageAnalysis {
    /// Distinct sentences at or above `threshold`, in page order.
    pub fn accepted(&self, threshold: f64) -> Vec<&ScoredSentence> {
        let mut seen = HashSet::new();
        self.sentences
            .iter()
            .filter(|s| s.accepted(threshold) && seen.insert(s.text.as_str()))
            .collect()
    }
}

struct Timer(Vec<StageTiming>, Instant);

impl Timer {
    fn new() -> Self {
        Self(Vec::new(), Instant::now())
    }

    fn lap(&mut self, stage: Stage) {
        let now = Instant::now();
        self.0.push(StageTiming {
            stage,
            micros: (now - self.1).as_micros() as u64,
        });
        self.1 = now;
    }
}

/// Everything needed to turn HTML into scored sentences and links.
pub struct Pipeline {
    pub rules: Vec<RulePolicy>,
    pub prefixes: PrefixTable,
    pub lid: Arc<dyn LanguageIdentifier>,
    pub link_rules: LinkRules,
    pub extract: ExtractOptions,
}

impl Pipeline {
    pub fn new(lid: Arc<dyn LanguageIdentifier>) -> Self {
        Self {
            rules: bundled_rules(),
            prefixes: PrefixTable::bundled(),
            lid,
            link_rules: LinkRules::bundled(),
            extract: ExtractOptions::default(),
        }
    }

    /// Bundled rules with a model trained on the bundled sample.
    pub fn bundled() -> Result<Self, LidError> {
        let model = LidModel::train(
            &crate::lid::sample::bundled_sample(),
            crate::lid::DEFAULT_ORDER,
            crate::lid::DEFAULT_SMOOTHING,
        )?;
        Ok(Self::new(Arc::new(model)))
    }

    /// Runs every stage after the fetch. Pure apart from timing.
    pub fn process_html(&self, html: &str, page_url: &Url) -> PageAnalysis {
        let mut t = Timer::new();
        let blocks = extract_blocks_with(html, &self.extract);
        let good: Vec<&str> = blocks
            .iter()
            .filter(|b| b.classification == BlockClass::Good)
            .map(|b| b.text.as_str())
            .collect();
        let mut links = Vec::new();
        let mut seen = HashSet::new();
        for l in extract_links(html, page_url) {
            if let Some(u) = apply_rules(&l, &self.link_rules) {
                let s = String::from(u);
                if seen.insert(s.clone()) {
                    links.push(s);
                }
            }
        }
        t.lap(Stage::Scrape);

        let normalized: Vec<String> = good.iter().map(|b| normalize(b)).collect();
        t.lap(Stage::Normalize);

        let split: Vec<String> = normalized
            .iter()
            .flat_map(|b| split_sentences(b, &self.prefixes))
            .collect();
        t.lap(Stage::Split);

        let mut sentences: Vec<ScoredSentence> = split
            .into_iter()
            .map(|text| {
                let failed_rules = check(&text, &self.rules).failed_rule_ids;
                ScoredSentence {
                    text,
                    proba: None,
                    failed_rules,
                }
            })
            .collect();
        t.lap(Stage::Filter);

        for s in sentences.iter_mut().filter(|s| s.failed_rules.is_empty()) {
            s.proba = self.lid.prob_target(&s.text).ok();
        }
        t.lap(Stage::Lid);

        PageAnalysis {
            sentences,
            links,
            good_blocks: good.len(),
            trace: t.0,
        }
    }
}

/// Where pages come from. [`Fetcher`] is the network implementation.
pub trait PageSource: Send + Sync {
    fn fetch(&self, url: &str) -> Result<FetchResult, FetchError>;
    /// `Ok(None)` when the site has no robots file.
    fn robots_txt(&self, robots_url: &str) -> Result<Option<String>, FetchError>;
}

impl PageSource for Fetcher {
    fn fetch(&self, url: &str) -> Result<FetchResult, FetchError> {
        Fetcher::fetch(self, url)
    }

    fn robots_txt(&self, robots_url: &str) -> Result<Option<String>, FetchError> {
        self.fetch_plain(robots_url)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisitStatus {
    Saved,
    Blacklisted,
    Error,
    RobotsDisallowed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitRecord {
    pub url: String,
    pub depth: u32,
    pub worker: usize,
    pub started_at: DateTime<Utc>,
    /// When the fetch returned; politeness counts from here.
    pub fetched_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub status: VisitStatus,
    pub total_sentences: u32,
    pub new_sentences: u32,
    pub followed_links: usize,
    pub error: Option<String>,
    pub trace: Vec<StageTiming>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CrawlReport {
    pub visited: u64,
    pub saved: u64,
    pub blacklisted: u64,
    pub errors: u64,
    pub new_sentences: u64,
    pub new_tasks: u64,
    pub cancelled: bool,
    pub runtime_secs: f64,
    pub visits: Vec<VisitRecord>,
}

/// Live counters of the current or last crawl, readable while it runs.
#[derive(Debug, Default)]
pub struct CrawlProgress {
    pub visited: AtomicU64,
    pub saved: AtomicU64,
    pub blacklisted: AtomicU64,
    pub new_sentences: AtomicU64,
    pub queued: AtomicU64,
    pub in_flight: AtomicU64,
    pub workers: AtomicU64,
    started: Mutex<Option<Instant>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProgressSnapshot {
    pub visited: u64,
    pub saved: u64,
    pub blacklisted: u64,
    pub new_sentences: u64,
    pub queued: u64,
    pub in_flight: u64,
    pub workers: u64,
    pub sentences_per_minute: f64,
}

impl CrawlProgress {
    fn reset(&self, workers: usize) {
        for c in [
            &self.visited,
            &self.saved,
            &self.blacklisted,
            &self.new_sentences,
            &self.queued,
            &self.in_flight,
        ] {
            c.store(0, Ordering::Relaxed);
        }
        self.workers.store(workers as u64, Ordering::Relaxed);
        *self.started.lock() = Some(Instant::now());
    }

    pub fn snapshot(&self) -> ProgressSnapshot {
        let new_sentences = self.new_sentences.load(Ordering::Relaxed);
        let minutes = self.started.lock().map_or(0.0, |s| s.elapsed().as_secs_f64() / 60.0);
        ProgressSnapshot {
            visited: self.visited.load(Ordering::Relaxed),
            saved: self.saved.load(Ordering::Relaxed),
            blacklisted: self.blacklisted.load(Ordering::Relaxed),
            new_sentences,
            queued: self.queued.load(Ordering::Relaxed),
            in_flight: self.in_flight.load(Ordering::Relaxed),
            workers: self.workers.load(Ordering::Relaxed),
            sentences_per_minute: if minutes > 0.0 {
                new_sentences as f64 / minutes
            } else {
                0.0
            },
        }
    }
}

#[derive(Default)]
struct Frontier {
    queue: BTreeMap<(u32, u64), UrlTask>,
    next_seq: u64,
    /// Registrable domains with a fetch in progress.
    busy: HashSet<String>,
    next_allowed: HashMap<String, Instant>,
    in_flight: usize,
    started: usize,
}

impl Frontier {
    fn push(&mut self, task: UrlTask) {
        self.queue.insert((task.depth, self.next_seq), task);
        self.next_seq += 1;
    }
}

enum Pick {
    Task((u32, u64), UrlTask, String),
    Wait(Option<Duration>),
    Done,
}

/// Shared state of one crawl run.
pub struct Crawler<'a> {
    pub store: &'a Store,
    pub pipeline: &'a Pipeline,
    pub config: &'a CrawlConfig,
    pub decider: &'a dyn Decider,
    pub source: &'a dyn PageSource,
    pub cancel: Arc<AtomicBool>,
    pub progress: Arc<CrawlProgress>,
    /// Stop after this many visits.
    pub max_pages: Option<usize>,
    frontier: Mutex<Frontier>,
    wake: Condvar,
    robots: Mutex<HashMap<String, Option<Arc<texting_robots::Robot>>>>,
    visits: Mutex<Vec<VisitRecord>>,
}

impl<'a> Crawler<'a> {
    pub fn new(
        store: &'a Store,
        pipeline: &'a Pipeline,
        config: &'a CrawlConfig,
        decider: &'a dyn Decider,
        source: &'a dyn PageSource,
    ) -> Self {
        Self {
            store,
            pipeline,
            config,
            decider,
            source,
            cancel: Arc::new(AtomicBool::new(false)),
            progress: Arc::new(CrawlProgress::default()),
            max_pages: None,
            frontier: Mutex::new(Frontier::default()),
            wake: Condvar::new(),
            robots: Mutex::new(HashMap::new()),
            visits: Mutex::new(Vec::new()),
        }
    }

    pub fn with_cancel(mut self, cancel: Arc<AtomicBool>) -> Self {
        self.cancel = cancel;
        self
    }

    pub fn with_progress(mut self, progress: Arc<CrawlProgress>) -> Self {
        self.progress = progress;
        self
    }

    pub fn with_max_pages(mut self, max: Option<usize>) -> Self {
        self.max_pages = max;
        self
    }

    /// Visits pending tasks until the frontier is exhausted, the page limit
    /// is reached or the cancel flag is raised.
    pub fn run(&self) -> Result<CrawlReport, OrchestratorError> {
        let start = Instant::now();
        let before = self.store.sentence_count();
        let tasks_before = self.store.tasks().len();
        let workers = self.config.fetch_workers.max(1);
        self.progress.reset(workers);
        {
            let mut f = self.frontier.lock();
            for t in self.store.pending_tasks() {
                f.push(t);
            }
            self.progress.queued.store(f.queue.len() as u64, Ordering::Relaxed);
        }
        let errors: Mutex<Vec<OrchestratorError>> = Mutex::new(Vec::new());
        std::thread::scope(|s| {
            for w in 0..workers {
                let errors = &errors;
                s.spawn(move || {
                    if let Err(e) = self.worker(w) {
                        tracing::error!(worker = w, "crawl worker failed: {e}");
                        errors.lock().push(e);
                        self.cancel.store(true, Ordering::SeqCst);
                        self.wake.notify_all();
                    }
                });
            }
        });
        self.progress.workers.store(0, Ordering::Relaxed);
        if let Some(e) = errors.into_inner().into_iter().next() {
            return Err(e);
        }
        let mut visits = std::mem::take(&mut *self.visits.lock());
        visits.sort_by_key(|v| v.started_at);
        let count = |s: VisitStatus| visits.iter().filter(|v| v.status == s).count() as u64;
        Ok(CrawlReport {
            visited: visits.len() as u64,
            saved: count(VisitStatus::Saved),
            blacklisted: count(VisitStatus::Blacklisted),
            errors: count(VisitStatus::Error) + count(VisitStatus::RobotsDisallowed),
            new_sentences: (self.store.sentence_count() - before) as u64,
            new_tasks: (self.store.tasks().len() - tasks_before) as u64,
            cancelled: self.cancel.load(Ordering::SeqCst),
            runtime_secs: start.elapsed().as_secs_f64(),
            visits,
        })
    }

    fn pick(&self, f: &mut Frontier) -> Pick {
        if self.cancel.load(Ordering::SeqCst) {
            return Pick::Done;
        }
        let limit_hit = self.max_pages.is_some_and(|m| f.started >= m);
        if f.queue.is_empty() || limit_hit {
            return if f.in_flight == 0 { Pick::Done } else { Pick::Wait(None) };
        }
        let now = Instant::now();
        let mut soonest: Option<Instant> = None;
        for (k, t) in &f.queue {
            let domain = registrable_domain(&t.host());
            if f.busy.contains(&domain) {
                continue;
            }
            match f.next_allowed.get(&domain) {
                Some(&at) if at > now => soonest = Some(soonest.map_or(at, |s| s.min(at))),
                _ => return Pick::Task(*k, t.clone(), domain),
            }
        }
        Pick::Wait(soonest.map(|s| s - now))
    }

    fn next_task(&self) -> Option<(UrlTask, String)> {
        let mut f = self.frontier.lock();
        loop {
            match self.pick(&mut f) {
                Pick::Done => {
                    self.wake.notify_all();
                    return None;
                }
                Pick::Task(key, task, domain) => {
                    f.queue.remove(&key);
                    f.busy.insert(domain.clone());
                    f.in_flight += 1;
                    f.started += 1;
                    self.progress.queued.store(f.queue.len() as u64, Ordering::Relaxed);
                    self.progress.in_flight.store(f.in_flight as u64, Ordering::Relaxed);
                    return Some((task, domain));
                }
                Pick::Wait(d) => {
                    // Bounded wait so the cancel flag is noticed promptly.
                    let d = d.unwrap_or(Duration::from_millis(100)).min(Duration::from_millis(100));
                    self.wake.wait_for(&mut f, d);
                }
            }
        }
    }

    fn release(&self, domain: &str, fetched: Option<Instant>, children: Vec<UrlTask>, counted: bool) {
        let mut f = self.frontier.lock();
        f.busy.remove(domain);
        if let Some(at) = fetched {
            f.next_allowed
                .insert(domain.to_owned(), at + self.config.politeness_delay());
        }
        if !counted {
            f.started -= 1;
        }
        f.in_flight -= 1;
        for c in children {
            f.push(c);
        }
        self.progress.queued.store(f.queue.len() as u64, Ordering::Relaxed);
        self.progress.in_flight.store(f.in_flight as u64, Ordering::Relaxed);
        drop(f);
        self.wake.notify_all();
    }

    fn worker(&self, id: usize) -> Result<(), OrchestratorError> {
        while let Some((task, domain)) = self.next_task() {
            // The task may have been cancelled by an operator blacklist since queueing.
            let current = self.store.task(&task.url);
            let still_pending = current.as_ref().is_some_and(|t| t.state == TaskState::Pending);
            if !still_pending || !self.decider.should_visit(&task, self.store) {
                self.release(&domain, None, Vec::new(), false);
                continue;
            }
            match self.visit(id, &task) {
                Ok((fetched, children)) => self.release(&domain, fetched, children, true),
                Err(e) => {
                    self.release(&domain, None, Vec::new(), true);
                    return Err(e);
                }
            }
        }
        Ok(())
    }

    fn robots_allowed(&self, url: &Url) -> bool {
        if self.config.ignore_robots {
            return true;
        }
        let origin = url.origin().ascii_serialization();
        if let Some(r) = self.robots.lock().get(&origin) {
            return r.as_ref().is_none_or(|r| r.allowed(url.as_str()));
        }
        let robots_url = format!("{origin}/robots.txt");
        // A missing or unreachable robots file allows everything.
        let robot = match self.source.robots_txt(&robots_url) {
            Ok(Some(txt)) => texting_robots::Robot::new(&self.config.user_agent, txt.as_bytes())
                .ok()
                .map(Arc::new),
            Ok(None) => None,
            Err(e) => {
                tracing::debug!("robots file {robots_url} unavailable: {e}");
                None
            }
        };
        let allowed = robot.as_ref().is_none_or(|r| r.allowed(url.as_str()));
        self.robots.lock().insert(origin, robot);
        allowed
    }

    fn visit(&self, worker: usize, task: &UrlTask) -> Result<(Option<Instant>, Vec<UrlTask>), OrchestratorError> {
        let started_at = Utc::now();
        let mut t = Timer::new();
        let record = |status, fetched_at, total, new, followed, error: Option<String>, trace| {
            let v = VisitRecord {
                url: task.url.clone(),
                depth: task.depth,
                worker,
                started_at,
                fetched_at,
                finished_at: Utc::now(),
                status,
                total_sentences: total,
                new_sentences: new,
                followed_links: followed,
                error,
                trace,
            };
            tracing::info!(url = %v.url, status = ?v.status, total, new, "visited");
            self.visits.lock().push(v);
            self.progress.visited.fetch_add(1, Ordering::Relaxed);
        };

        let Ok(url) = Url::parse(&task.url) else {
            let err = "unparseable URL".to_owned();
            self.store
                .finish_task(&task.url, TaskState::Visited, 0, 0, Some(err.clone()))?;
            record(VisitStatus::Error, started_at, 0, 0, 0, Some(err), t.0);
            return Ok((None, Vec::new()));
        };
        if !self.robots_allowed(&url) {
            let err = "disallowed by robots.txt".to_owned();
            t.lap(Stage::Robots);
            self.store
                .finish_task(&task.url, TaskState::Visited, 0, 0, Some(err.clone()))?;
            record(VisitStatus::RobotsDisallowed, started_at, 0, 0, 0, Some(err), t.0);
            return Ok((Some(Instant::now()), Vec::new()));
        }
        t.lap(Stage::Robots);

        let fetched = self.source.fetch(&task.url);
        let fetch_end = Instant::now();
        let fetched_at = Utc::now();
        t.lap(Stage::Fetch);
        let page = match fetched {
            Ok(p) => p,
            Err(e) => {
                let err = e.to_string();
                self.store
                    .finish_task(&task.url, TaskState::Visited, 0, 0, Some(err.clone()))?;
                record(VisitStatus::Error, fetched_at, 0, 0, 0, Some(err), t.0);
                return Ok((Some(fetch_end), Vec::new()));
            }
        };
        let base = Url::parse(&page.url).unwrap_or(url);
        let analysis = self.pipeline.process_html(&page.body, &base);
        let mut trace = t.0;
        trace.extend(analysis.trace.iter().cloned());
        let mut t = Timer::new();

        let threshold = self.config.crawl_lid_threshold;
        let accepted = analysis.accepted(threshold);
        let total = accepted.len() as u32;
        let provisional = PageOutcome {
            url: task.url.clone(),
            total_sentences: total,
            new_sentences: accepted.iter().filter(|s| !self.store.contains_text(&s.text)).count() as u32,
            depth: task.depth,
        };
        match self.decider.save_or_blacklist(&provisional) {
            SaveDecision::BlacklistUrl => {
                self.store.finish_task(
                    &task.url,
                    TaskState::Blacklisted,
                    provisional.new_sentences,
                    total,
                    None,
                )?;
                t.lap(Stage::Decide);
                trace.extend(t.0);
                self.progress.blacklisted.fetch_add(1, Ordering::Relaxed);
                record(
                    VisitStatus::Blacklisted,
                    fetched_at,
                    total,
                    provisional.new_sentences,
                    0,
                    None,
                    trace,
                );
                Ok((Some(fetch_end), Vec::new()))
            }
            SaveDecision::Save => {
                let now = Utc::now();
                let records = accepted
                    .iter()
                    .map(|s| SentenceRecord::new(s.text.clone(), task.url.clone(), s.proba.unwrap_or(0.0), now))
                    .collect();
                // Counting inserts keeps "new" exact when workers race on a sentence.
                let new = self
                    .store
                    .add_sentences(records)?
                    .into_iter()
                    .filter(|o| *o == AddOutcome::Inserted)
                    .count() as u32;
                self.progress.new_sentences.fetch_add(new as u64, Ordering::Relaxed);
                self.progress.saved.fetch_add(1, Ordering::Relaxed);
                let outcome = PageOutcome {
                    new_sentences: new,
                    ..provisional
                };
                let children = if self.decider.should_follow(&outcome) {
                    let kids = analysis.links.iter().map(|l| UrlTask::child(l.clone(), task)).collect();
                    self.store.add_tasks(kids)?
                } else {
                    Vec::new()
                };
                self.store
                    .finish_task(&task.url, TaskState::Visited, new, total, None)?;
                t.lap(Stage::Decide);
                trace.extend(t.0);
                record(VisitStatus::Saved, fetched_at, total, new, children.len(), None, trace);
                Ok((Some(fetch_end), children))
            }
        }
    }
}

/// Crawls all pending tasks with the network fetcher.
pub fn run_crawl(
    store: &Store,
    pipeline: &Pipeline,
    config: &CrawlConfig,
    max_pages: Option<usize>,
    cancel: Arc<AtomicBool>,
) -> Result<CrawlReport, OrchestratorError> {
    let fetcher = Fetcher::new(&FetchOptions::from(config))?;
    let decider = DefaultDecider::new(config);
    Crawler::new(store, pipeline, config, &decider, &fetcher)
        .with_cancel(cancel)
        .with_max_pages(max_pages)
        .run()
}

/// Summary of one seed-and-crawl iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub id: u64,
    pub started_at: DateTime<Utc>,
    pub seeds: usize,
    /// Distinct URLs the engine returned for this iteration's queries.
    pub urls_found: usize,
    /// Admitted seed URLs that ended up saved.
    pub urls_good: usize,
    pub percent_good: f64,
    pub new_sentences: u64,
    /// Registrable domains in the corpus that were not there before.
    pub new_domains: usize,
    /// Pages saved during the iteration.
    pub new_urls: usize,
    pub runtime_secs: f64,
    pub warnings: Vec<String>,
    pub crawl: CrawlSummary,
}

impl IterationReport {
    fn empty(id: u64, started_at: DateTime<Utc>) -> Self {
        Self {
            id,
            started_at,
            seeds: 0,
            urls_found: 0,
            urls_good: 0,
            percent_good: 0.0,
            new_sentences: 0,
            new_domains: 0,
            new_urls: 0,
            runtime_secs: 0.0,
            warnings: Vec::new(),
            crawl: CrawlSummary::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CrawlSummary {
    pub visited: u64,
    pub saved: u64,
    pub blacklisted: u64,
    pub errors: u64,
    pub cancelled: bool,
}

impl From<&CrawlReport> for CrawlSummary {
    fn from(r: &CrawlReport) -> Self {
        Self {
            visited: r.visited,
            saved: r.saved,
            blacklisted: r.blacklisted,
            errors: r.errors,
            cancelled: r.cancelled,
        }
    }
}

const ITERATION_PREFIX: &str = "iteration:";

/// Runs iterations: seed generation, submission, crawl and reporting.
pub struct Harvester {
    pub store: Arc<Store>,
    pub pipeline: Arc<Pipeline>,
    pub config: CrawlConfig,
    pub engine: Arc<dyn SearchEngine>,
    /// Overrides the network fetcher, mainly for tests.
    pub source: Option<Arc<dyn PageSource>>,
    pub rng_seed: u64,
    running: Mutex<Option<u64>>,
    pub progress: Arc<CrawlProgress>,
}

impl Harvester {
    pub fn new(store: Arc<Store>, pipeline: Arc<Pipeline>, config: CrawlConfig, engine: Arc<dyn SearchEngine>) -> Self {
        Self {
            store,
            pipeline,
            config,
            engine,
            source: None,
            rng_seed: 0,
            running: Mutex::new(None),
            progress: Arc::new(CrawlProgress::default()),
        }
    }

    pub fn with_source(mut self, source: Arc<dyn PageSource>) -> Self {
        self.source = Some(source);
        self
    }

    pub fn with_rng_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn reports(&self) -> Vec<IterationReport> {
        iteration_reports(&self.store)
    }

    pub fn running(&self) -> Option<u64> {
        *self.running.lock()
    }

    /// Reserves the next iteration id; fails while another iteration runs.
    pub fn begin(&self) -> Result<u64, OrchestratorError> {
        let mut r = self.running.lock();
        if r.is_some() {
            return Err(OrchestratorError::Busy);
        }
        let id = self.store.meta_with_prefix(ITERATION_PREFIX).len() as u64 + 1;
        *r = Some(id);
        Ok(id)
    }

    /// Frees the slot taken by [`Harvester::begin`].
    pub fn end(&self) {
        *self.running.lock() = None;
    }

    pub fn run_iteration(&self, seeds: usize, cancel: Arc<AtomicBool>) -> Result<IterationReport, OrchestratorError> {
        let id = self.begin()?;
        let result = self.run_reserved(id, seeds, cancel);
        self.end();
        result
    }

    /// Runs an iteration reserved with [`Harvester::begin`]; the caller
    /// releases it with [`Harvester::end`]. Must run on a blocking thread.
    pub fn run_reserved(
        &self,
        id: u64,
        seeds: usize,
        cancel: Arc<AtomicBool>,
    ) -> Result<IterationReport, OrchestratorError> {
        let start = Instant::now();
        let started_at = Utc::now();
        let store = &*self.store;
        let domains_before = store.corpus_domains();
        let saved_before = store.counts().saved;
        if seeds == 0 {
            let report = IterationReport::empty(id, started_at);
            self.persist(&report)?;
            return Ok(report);
        }

        let vocab = filter_vocab(&build_vocab(store)?, &bundled_wordlists());
        let params = SeedParams {
            word_count: self.config.seed_word_count,
            lid_threshold: self.config.seed_lid_threshold,
        };
        let batch = generate_seeds(
            &vocab,
            seeds,
            self.rng_seed.wrapping_add(id),
            &*self.pipeline.lid,
            params,
            &submitted_multisets(store),
        )?;
        let mut warnings = batch.warnings;
        let mut found = BTreeSet::new();
        let mut admitted = Vec::new();
        let mut submitted = 0;
        for (i, mut q) in batch.queries.into_iter().enumerate() {
            if cancel.load(Ordering::SeqCst) {
                warnings.push("cancelled while submitting seed queries".into());
                break;
            }
            if i > 0 {
                std::thread::sleep(self.config.politeness_delay());
            }
            let submitted_q = submit_seed(
                &mut q,
                &*self.engine,
                store,
                &self.pipeline.link_rules,
                self.config.seeds_urls_per_query,
                self.config.politeness_delay(),
            );
            match submitted_q {
                Ok(out) => {
                    submitted += 1;
                    found.extend(out.returned);
                    admitted.extend(out.admitted);
                }
                Err(e) => warnings.push(format!("query {} failed: {e}", q.quoted())),
            }
        }

        let decider = DefaultDecider::new(&self.config);
        let owned_fetcher;
        let source: &dyn PageSource = match &self.source {
            Some(s) => &**s,
            None => {
                owned_fetcher = Fetcher::new(&FetchOptions::from(&self.config))?;
                &owned_fetcher
            }
        };
        let crawl = Crawler::new(store, &self.pipeline, &self.config, &decider, source)
            .with_cancel(cancel)
            .with_progress(self.progress.clone())
            .run()?;

        let good = admitted
            .iter()
            .filter(|u| store.task(u).is_some_and(|t| t.is_saved()))
            .count();
        let report = IterationReport {
            id,
            started_at,
            seeds: submitted,
            urls_found: found.len(),
            urls_good: good,
            percent_good: if found.is_empty() {
                0.0
            } else {
                100.0 * good as f64 / found.len() as f64
            },
            new_sentences: crawl.new_sentences,
            new_domains: store.corpus_domains().difference(&domains_before).count(),
            new_urls: store.counts().saved - saved_before,
            runtime_secs: start.elapsed().as_secs_f64(),
            warnings,
            crawl: CrawlSummary::from(&crawl),
        };
        self.persist(&report)?;
        Ok(report)
    }

    fn persist(&self, report: &IterationReport) -> Result<(), OrchestratorError> {
        self.store.put_meta(
            &format!("{ITERATION_PREFIX}{:06}", report.id),
            &serde_json::to_string(report).expect("plain data"),
        )?;
        Ok(())
    }
}

/// Stored iteration reports, oldest first.
pub fn iteration_reports(store: &Store) -> Vec<IterationReport> {
    store
        .meta_with_prefix(ITERATION_PREFIX)
        .into_iter()
        .filter_map(|(_, v)| serde_json::from_str(&v).ok())
        .collect()
}
