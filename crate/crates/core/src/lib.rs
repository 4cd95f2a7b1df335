//! Focused harvesting of sentences in a low-resource target language.
//!
//! The pipeline runs fetch, boilerplate removal, normalization, sentence
//! splitting, rule filtering and language identification per page, then
//! decides whether to save the page and follow its links. A seeder feeds the
//! crawl with search-engine results for queries built from the corpus itself.

pub mod config;
pub mod decider;
pub mod extract;
pub mod lid;
pub mod linkfilter;
pub mod model;
pub mod orchestrator;
pub mod seeder;
pub mod sentfilter;
pub mod sentsplit;
pub mod service;
pub mod store;
pub mod textnorm;

pub use config::{load_config, ConfigError, CrawlConfig};
pub use model::{SentenceRecord, TaskState, UrlTask};
