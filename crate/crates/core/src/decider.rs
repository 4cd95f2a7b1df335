//! Visit, save and follow decisions.

use serde::Serialize;

use crate::config::CrawlConfig;
use crate::model::{TaskState, UrlTask};
use crate::store::Store;

/// What a processed page yielded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PageOutcome {
    pub url: String,
    /// Sentences on the page passing the filter and the crawl threshold.
    pub total_sentences: u32,
    /// Those of them not already in the store.
    pub new_sentences: u32,
    pub depth: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SaveDecision {
    Save,
    BlacklistUrl,
}

/// The crawl policy. [`DefaultDecider`] implements the standard rules; other
/// implementations can add recrawling or domain-specific behaviour.
pub trait Decider: Send + Sync {
    fn should_visit(&self, task: &UrlTask, store: &Store) -> bool;
    fn save_or_blacklist(&self, outcome: &PageOutcome) -> SaveDecision;
    fn should_follow(&self, outcome: &PageOutcome) -> bool;
}

#[derive(Debug, Clone)]
pub struct DefaultDecider {
    config: CrawlConfig,
}

impl DefaultDecider {
    pub fn new(config: &CrawlConfig) -> Self {
        Self { config: config.clone() }
    }
}

impl Decider for DefaultDecider {
    fn should_visit(&self, task: &UrlTask, store: &Store) -> bool {
        should_visit(task, store)
    }

    fn save_or_blacklist(&self, outcome: &PageOutcome) -> SaveDecision {
        save_or_blacklist(outcome, &self.config)
    }

    fn should_follow(&self, outcome: &PageOutcome) -> bool {
        should_follow(outcome, &self.config)
    }
}

/// Only URLs never visited nor blacklisted, on domains not blacklisted.
pub fn should_visit(task: &UrlTask, store: &Store) -> bool {
    let done = store
        .task(&task.url)
        .is_some_and(|t| matches!(t.state, TaskState::Visited | TaskState::Blacklisted));
    !done && !store.is_host_blacklisted(&task.host())
}

/// Saving counts every passing sentence on the page, new or not.
pub fn save_or_blacklist(outcome: &PageOutcome, config: &CrawlConfig) -> SaveDecision {
    if outcome.total_sentences >= config.save_min_sentences {
        SaveDecision::Save
    } else {
        SaveDecision::BlacklistUrl
    }
}

/// Following counts only new sentences, and only below the depth limit.
pub fn should_follow(outcome: &PageOutcome, config: &CrawlConfig) -> bool {
    save_or_blacklist(outcome, config) == SaveDecision::Save
        && outcome.new_sentences >= config.follow_min_new_sentences
        && outcome.depth < config.max_depth
}
