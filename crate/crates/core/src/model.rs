//! Domain records shared by every pipeline stage.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::store::dedup_key;

/// One harvested sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub text: String,
    pub url: String,
    pub crawl_proba: f64,
    pub date: DateTime<Utc>,
    pub dedup_key: String,
}

impl SentenceRecord {
    pub fn new(text: impl Into<String>, url: impl Into<String>, crawl_proba: f64, date: DateTime<Utc>) -> Self {
        let text = text.into();
        let dedup_key = dedup_key(&text);
        Self {
            text,
            url: url.into(),
            crawl_proba,
            date,
            dedup_key,
        }
    }

    /// Host part of the source URL, empty when the URL does not parse.
    pub fn host(&self) -> String {
        url::Url::parse(&self.url)
            .ok()
            .and_then(|u| u.host_str().map(str::to_owned))
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskState {
    Pending,
    Visited,
    Blacklisted,
}

/// A crawl work item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrlTask {
    pub url: String,
    pub depth: u32,
    pub parent_url: Option<String>,
    pub state: TaskState,
    pub discovered_at: DateTime<Utc>,
    /// Set once the page has been processed.
    pub new_sentence_count: u32,
    #[serde(default)]
    pub total_sentence_count: u32,
    /// True for tasks admitted by the seeder.
    #[serde(default)]
    pub from_seed: bool,
    /// Error note for pages that failed to fetch or extract.
    #[serde(default)]
    pub error: Option<String>,
}

impl UrlTask {
    pub fn seed(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            depth: 0,
            parent_url: None,
            state: TaskState::Pending,
            discovered_at: Utc::now(),
            new_sentence_count: 0,
            total_sentence_count: 0,
            from_seed: true,
            error: None,
        }
    }

    pub fn child(url: impl Into<String>, parent: &UrlTask) -> Self {
        Self {
            url: url.into(),
            depth: parent.depth + 1,
            parent_url: Some(parent.url.clone()),
            state: TaskState::Pending,
            discovered_at: Utc::now(),
            new_sentence_count: 0,
            total_sentence_count: 0,
            from_seed: false,
            error: None,
        }
    }

    /// A visited task without an error note is a saved page.
    pub fn is_saved(&self) -> bool {
        self.state == TaskState::Visited && self.error.is_none()
    }

    pub fn host(&self) -> String {
        url::Url::parse(&self.url)
            .ok()
            .and_then(|u| u.host_str().map(str::to_owned))
            .unwrap_or_default()
    }
}
