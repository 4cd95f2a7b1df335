//! Crawl state and corpus persistence.
//!
//! All state lives in memory behind one lock; every mutation is written through
//! to a [`Backend`] inside that lock, so writers are serialized and readers
//! always observe a consistent snapshot.

mod backend;
mod export;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linkfilter::{is_valid_domain, registrable_domain};
use crate::model::{SentenceRecord, TaskState, UrlTask};

pub use backend::{Backend, MemoryBackend, Namespace, Op, RedbBackend};
pub use export::{
    compute_stats, domain_rows, export_records, proba_bin, CorpusStats, DomainRow, DomainSort, LengthSummary, ProbaBin,
    CSV_HEADER,
};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage backend: {0}")]
    Backend(String),
    #[error("corrupt record in {ns:?}/{key}: {reason}")]
    Corrupt { ns: Namespace, key: String, reason: String },
    #[error("unknown url {0}")]
    UnknownUrl(String),
    #[error("invalid domain {0:?}")]
    InvalidDomain(String),
    #[error("export: {0}")]
    Export(String),
}

/// Near-duplicate key: the lowercased letters of `text`, nothing else.
pub fn dedup_key(text: &str) -> String {
    text.chars()
        .filter(|c| c.is_alphabetic())
        .flat_map(char::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AddOutcome {
    Inserted,
    ExactDuplicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BlacklistOutcome {
    pub newly_added: bool,
    pub cancelled_tasks: usize,
}

/// Counters for status reporting.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct StoreCounts {
    pub sentences: usize,
    pub pending: usize,
    pub visited: usize,
    pub saved: usize,
    pub errored: usize,
    pub blacklisted_urls: usize,
    pub blacklisted_domains: usize,
}

#[derive(Serialize, Deserialize)]
struct TaskEntry {
    seq: u64,
    task: UrlTask,
}

#[derive(Default)]
struct State {
    sentences: Vec<SentenceRecord>,
    by_text: HashMap<String, usize>,
    tasks: HashMap<String, TaskEntry>,
    next_seq: u64,
    domain_blacklist: BTreeSet<String>,
    bootstrap: Vec<String>,
    meta: BTreeMap<String, String>,
}

impl State {
    fn domain_blocked(&self, host: &str) -> bool {
        if self.domain_blacklist.is_empty() || host.is_empty() {
            return false;
        }
        let mut h = host;
        loop {
            if self.domain_blacklist.contains(h) {
                return true;
            }
            match h.split_once('.') {
                Some((_, rest)) => h = rest,
                None => return false,
            }
        }
    }
}

pub struct Store {
    state: RwLock<State>,
    backend: Box<dyn Backend>,
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("plain data serializes")
}

fn host_of(url: &str) -> String {
    url::Url::parse(url)
        .ok()
        .and_then(|u| u.host_str().map(str::to_ascii_lowercase))
        .unwrap_or_default()
}

impl Store {
    pub fn in_memory() -> Self {
        Self::with_backend(Box::new(MemoryBackend::default())).expect("empty memory backend loads")
    }

    /// Opens (or creates) a single-file database.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::with_backend(Box::new(RedbBackend::open(path)?))
    }

    /// Loads all state from `backend`.
    pub fn with_backend(backend: Box<dyn Backend>) -> Result<Self, StoreError> {
        let mut st = State::default();
        let corrupt = |ns, key: &str, e: serde_json::Error| StoreError::Corrupt {
            ns,
            key: key.to_owned(),
            reason: e.to_string(),
        };
        for (k, v) in backend.scan(Namespace::Sentences)? {
            let rec: SentenceRecord = serde_json::from_slice(&v).map_err(|e| corrupt(Namespace::Sentences, &k, e))?;
            st.by_text.insert(rec.text.clone(), st.sentences.len());
            st.sentences.push(rec);
        }
        for (k, v) in backend.scan(Namespace::Tasks)? {
            let e: TaskEntry = serde_json::from_slice(&v).map_err(|e| corrupt(Namespace::Tasks, &k, e))?;
            st.next_seq = st.next_seq.max(e.seq + 1);
            st.tasks.insert(e.task.url.clone(), e);
        }
        for (k, _) in backend.scan(Namespace::Domains)? {
            st.domain_blacklist.insert(k);
        }
        for (k, v) in backend.scan(Namespace::Bootstrap)? {
            st.bootstrap.push(String::from_utf8(v).map_err(|e| StoreError::Corrupt {
                ns: Namespace::Bootstrap,
                key: k,
                reason: e.to_string(),
            })?);
        }
        for (k, v) in backend.scan(Namespace::Meta)? {
            st.meta.insert(
                k.clone(),
                String::from_utf8(v).map_err(|e| StoreError::Corrupt {
                    ns: Namespace::Meta,
                    key: k,
                    reason: e.to_string(),
                })?,
            );
        }
        Ok(Self {
            state: RwLock::new(st),
            backend,
        })
    }

    // ---- sentences ----

    /// Inserts unless the exact text is already stored. Near-duplicates are kept.
    pub fn add_sentence(&self, record: SentenceRecord) -> Result<AddOutcome, StoreError> {
        Ok(self.add_sentences(vec![record])?[0])
    }

    /// Batched [`Self::add_sentence`], applied atomically.
    pub fn add_sentences(&self, records: Vec<SentenceRecord>) -> Result<Vec<AddOutcome>, StoreError> {
        let mut st = self.state.write();
        let mut ops = Vec::new();
        let mut outcomes = Vec::with_capacity(records.len());
        let mut fresh = Vec::new();
        let mut batch_texts = BTreeSet::new();
        for rec in records {
            if st.by_text.contains_key(&rec.text) || !batch_texts.insert(rec.text.clone()) {
                outcomes.push(AddOutcome::ExactDuplicate);
                continue;
            }
            let id = st.sentences.len() + fresh.len();
            ops.push(Op::Put {
                ns: Namespace::Sentences,
                key: format!("{id:012}"),
                value: to_json(&rec),
            });
            fresh.push(rec);
            outcomes.push(AddOutcome::Inserted);
        }
        self.backend.apply(&ops)?;
        for rec in fresh {
            let id = st.sentences.len();
            st.by_text.insert(rec.text.clone(), id);
            st.sentences.push(rec);
        }
        Ok(outcomes)
    }

    pub fn contains_text(&self, text: &str) -> bool {
        self.state.read().by_text.contains_key(text)
    }

    pub fn sentence_count(&self) -> usize {
        self.state.read().sentences.len()
    }

    /// Snapshot of every stored record in insertion order.
    pub fn sentences(&self) -> Vec<SentenceRecord> {
        self.state.read().sentences.clone()
    }

    /// Newest first, optionally filtered by minimum probability and domain
    /// (matching the host or any parent domain of it).
    pub fn query_sentences(&self, min_proba: Option<f64>, domain: Option<&str>, limit: usize) -> Vec<SentenceRecord> {
        let st = self.state.read();
        let mut idx: Vec<usize> = (0..st.sentences.len())
            .filter(|&i| {
                let r = &st.sentences[i];
                min_proba.is_none_or(|m| r.crawl_proba >= m)
                    && domain.is_none_or(|d| {
                        let h = r.host();
                        h == d || h.ends_with(&format!(".{d}"))
                    })
            })
            .collect();
        idx.sort_by(|&a, &b| st.sentences[b].date.cmp(&st.sentences[a].date).then(b.cmp(&a)));
        idx.into_iter().take(limit).map(|i| st.sentences[i].clone()).collect()
    }

    // ---- tasks ----

    /// Admits new tasks. URLs already known, and URLs on blacklisted domains,
    /// are skipped. Returns the admitted tasks.
    pub fn add_tasks(&self, tasks: Vec<UrlTask>) -> Result<Vec<UrlTask>, StoreError> {
        let mut st = self.state.write();
        let mut ops = Vec::new();
        let mut admitted: Vec<TaskEntry> = Vec::new();
        let mut seq = st.next_seq;
        for task in tasks {
            if st.tasks.contains_key(&task.url)
                || admitted.iter().any(|e| e.task.url == task.url)
                || st.domain_blocked(&host_of(&task.url))
            {
                continue;
            }
            let entry = TaskEntry { seq, task };
            seq += 1;
            ops.push(Op::Put {
                ns: Namespace::Tasks,
                key: entry.task.url.clone(),
                value: to_json(&entry),
            });
            admitted.push(entry);
        }
        self.backend.apply(&ops)?;
        st.next_seq = seq;
        let out = admitted.iter().map(|e| e.task.clone()).collect();
        for e in admitted {
            st.tasks.insert(e.task.url.clone(), e);
        }
        Ok(out)
    }

    pub fn add_task(&self, task: UrlTask) -> Result<bool, StoreError> {
        Ok(!self.add_tasks(vec![task])?.is_empty())
    }

    pub fn task(&self, url: &str) -> Option<UrlTask> {
        self.state.read().tasks.get(url).map(|e| e.task.clone())
    }

    /// True for any URL in the task store, whatever its state.
    pub fn is_known_url(&self, url: &str) -> bool {
        self.state.read().tasks.contains_key(url)
    }

    /// Pending tasks, lower depth first, then admission order.
    pub fn pending_tasks(&self) -> Vec<UrlTask> {
        let st = self.state.read();
        let mut v: Vec<&TaskEntry> = st
            .tasks
            .values()
            .filter(|e| e.task.state == TaskState::Pending)
            .collect();
        v.sort_by_key(|e| (e.task.depth, e.seq));
        v.into_iter().map(|e| e.task.clone()).collect()
    }

    /// Every task in admission order.
    pub fn tasks(&self) -> Vec<UrlTask> {
        let st = self.state.read();
        let mut v: Vec<&TaskEntry> = st.tasks.values().collect();
        v.sort_by_key(|e| e.seq);
        v.into_iter().map(|e| e.task.clone()).collect()
    }

    /// Moves a task to its final state after processing.
    pub fn finish_task(
        &self,
        url: &str,
        state: TaskState,
        new_sentences: u32,
        total_sentences: u32,
        error: Option<String>,
    ) -> Result<UrlTask, StoreError> {
        let mut st = self.state.write();
        let entry = st
            .tasks
            .get(url)
            .ok_or_else(|| StoreError::UnknownUrl(url.to_owned()))?;
        let mut task = entry.task.clone();
        let seq = entry.seq;
        task.state = state;
        task.new_sentence_count = new_sentences;
        task.total_sentence_count = total_sentences;
        task.error = error;
        let entry = TaskEntry { seq, task };
        self.backend.apply(&[Op::Put {
            ns: Namespace::Tasks,
            key: url.to_owned(),
            value: to_json(&entry),
        }])?;
        let task = entry.task.clone();
        st.tasks.insert(url.to_owned(), entry);
        Ok(task)
    }

    // ---- domains ----

    /// Adds a domain to the blacklist and cancels its pending tasks.
    pub fn blacklist_domain(&self, domain: &str) -> Result<BlacklistOutcome, StoreError> {
        let domain = domain.trim().trim_end_matches('.').to_ascii_lowercase();
        if !is_valid_domain(&domain) {
            return Err(StoreError::InvalidDomain(domain));
        }
        let mut st = self.state.write();
        let newly_added = !st.domain_blacklist.contains(&domain);
        let mut ops = vec![Op::Put {
            ns: Namespace::Domains,
            key: domain.clone(),
            value: Vec::new(),
        }];
        let mut single = State::default();
        single.domain_blacklist.insert(domain.clone());
        let mut cancelled = Vec::new();
        for (url, e) in &st.tasks {
            if e.task.state == TaskState::Pending && single.domain_blocked(&host_of(url)) {
                let mut task = e.task.clone();
                task.state = TaskState::Blacklisted;
                task.error = Some(format!("domain {domain} blacklisted"));
                let entry = TaskEntry { seq: e.seq, task };
                ops.push(Op::Put {
                    ns: Namespace::Tasks,
                    key: url.clone(),
                    value: to_json(&entry),
                });
                cancelled.push(entry);
            }
        }
        self.backend.apply(&ops)?;
        st.domain_blacklist.insert(domain);
        let cancelled_tasks = cancelled.len();
        for e in cancelled {
            st.tasks.insert(e.task.url.clone(), e);
        }
        Ok(BlacklistOutcome {
            newly_added,
            cancelled_tasks,
        })
    }

    pub fn blacklisted_domains(&self) -> Vec<String> {
        self.state.read().domain_blacklist.iter().cloned().collect()
    }

    /// Whether `host` or one of its parent domains is blacklisted.
    pub fn is_host_blacklisted(&self, host: &str) -> bool {
        self.state.read().domain_blocked(&host.to_ascii_lowercase())
    }

    // ---- bootstrap and metadata ----

    pub fn add_bootstrap_sentences(&self, sentences: impl IntoIterator<Item = String>) -> Result<usize, StoreError> {
        let mut st = self.state.write();
        let start = st.bootstrap.len();
        let new: Vec<String> = sentences.into_iter().filter(|s| !s.trim().is_empty()).collect();
        let ops: Vec<Op> = new
            .iter()
            .enumerate()
            .map(|(i, s)| Op::Put {
                ns: Namespace::Bootstrap,
                key: format!("{:012}", start + i),
                value: s.as_bytes().to_vec(),
            })
            .collect();
        self.backend.apply(&ops)?;
        let n = new.len();
        st.bootstrap.extend(new);
        Ok(n)
    }

    pub fn bootstrap_sentences(&self) -> Vec<String> {
        self.state.read().bootstrap.clone()
    }

    pub fn put_meta(&self, key: &str, value: &str) -> Result<(), StoreError> {
        let mut st = self.state.write();
        self.backend.apply(&[Op::Put {
            ns: Namespace::Meta,
            key: key.to_owned(),
            value: value.as_bytes().to_vec(),
        }])?;
        st.meta.insert(key.to_owned(), value.to_owned());
        Ok(())
    }

    pub fn meta(&self, key: &str) -> Option<String> {
        self.state.read().meta.get(key).cloned()
    }

    /// Entries whose key starts with `prefix`, in key order.
    pub fn meta_with_prefix(&self, prefix: &str) -> Vec<(String, String)> {
        self.state
            .read()
            .meta
            .range(prefix.to_owned()..)
            .take_while(|(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    // ---- reporting ----

    pub fn counts(&self) -> StoreCounts {
        let st = self.state.read();
        let mut c = StoreCounts {
            sentences: st.sentences.len(),
            blacklisted_domains: st.domain_blacklist.len(),
            ..StoreCounts::default()
        };
        for e in st.tasks.values() {
            match e.task.state {
                TaskState::Pending => c.pending += 1,
                TaskState::Visited => {
                    c.visited += 1;
                    if e.task.error.is_some() {
                        c.errored += 1;
                    } else {
                        c.saved += 1;
                    }
                }
                TaskState::Blacklisted => c.blacklisted_urls += 1,
            }
        }
        c
    }

    /// Writes the corpus as CSV; see [`export_records`].
    pub fn export_csv(&self, min_proba: f64, out: impl std::io::Write) -> Result<usize, StoreError> {
        let st = self.state.read();
        export_records(&st.sentences, min_proba, out)
    }

    pub fn stats(&self, top_n: usize) -> CorpusStats {
        let st = self.state.read();
        compute_stats(&st.sentences, top_n)
    }

    pub fn domains(&self, sort: DomainSort) -> Vec<DomainRow> {
        let st = self.state.read();
        domain_rows(&st.sentences, sort)
    }

    /// Registrable domains that have at least one stored sentence.
    pub fn corpus_domains(&self) -> BTreeSet<String> {
        let st = self.state.read();
        st.sentences.iter().map(|r| registrable_domain(&r.host())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};

    fn rec(text: &str, url: &str, p: f64, secs: i64) -> SentenceRecord {
        SentenceRecord::new(text, url, p, Utc.timestamp_opt(1_560_000_000 + secs, 0).unwrap())
    }

    #[test]
    fn dedup_key_examples() {
        assert_eq!(dedup_key("Hoi, Welt!"), "hoiwelt");
        assert_eq!(dedup_key("HOI WELT"), dedup_key("hoi welt."));
        assert_ne!(dedup_key("gruezi"), dedup_key("grüezi"));
        assert_eq!(dedup_key(""), "");
    }

    #[test]
    fn exact_duplicates_only() {
        let s = Store::in_memory();
        assert_eq!(
            s.add_sentence(rec("Hoi Welt", "http://a.ch/", 0.99, 0)).unwrap(),
            AddOutcome::Inserted
        );
        assert_eq!(
            s.add_sentence(rec("Hoi Welt", "http://b.ch/", 0.99, 1)).unwrap(),
            AddOutcome::ExactDuplicate
        );
        assert_eq!(
            s.add_sentence(rec("hoi welt", "http://a.ch/", 0.99, 2)).unwrap(),
            AddOutcome::Inserted
        );
        assert_eq!(s.sentence_count(), 2);
        let batch = s
            .add_sentences(vec![
                rec("x y", "http://a.ch/", 0.99, 3),
                rec("x y", "http://a.ch/", 0.99, 3),
            ])
            .unwrap();
        assert_eq!(batch, [AddOutcome::Inserted, AddOutcome::ExactDuplicate]);
    }

    #[test]
    fn tasks_are_unique_and_ordered() {
        let s = Store::in_memory();
        let seed = UrlTask::seed("http://a.ch/");
        assert!(s.add_task(seed.clone()).unwrap());
        assert!(!s.add_task(seed.clone()).unwrap());
        let child = UrlTask::child("http://a.ch/c", &seed);
        s.add_task(child).unwrap();
        s.add_task(UrlTask::seed("http://b.ch/")).unwrap();
        let order: Vec<String> = s.pending_tasks().into_iter().map(|t| t.url).collect();
        assert_eq!(order, ["http://a.ch/", "http://b.ch/", "http://a.ch/c"]);
        let done = s.finish_task("http://a.ch/", TaskState::Visited, 3, 4, None).unwrap();
        assert!(done.is_saved());
        assert_eq!(s.pending_tasks().len(), 2);
        assert!(s.is_known_url("http://a.ch/"));
        assert!(matches!(
            s.finish_task("http://zzz.ch/", TaskState::Visited, 0, 0, None),
            Err(StoreError::UnknownUrl(_))
        ));
    }

    #[test]
    fn domain_blacklist_cancels_and_blocks() {
        let s = Store::in_memory();
        s.add_task(UrlTask::seed("http://www.bad.ch/x")).unwrap();
        s.add_task(UrlTask::seed("http://good.ch/")).unwrap();
        let o = s.blacklist_domain("bad.ch").unwrap();
        assert_eq!(
            o,
            BlacklistOutcome {
                newly_added: true,
                cancelled_tasks: 1
            }
        );
        let again = s.blacklist_domain("BAD.ch").unwrap();
        assert_eq!(
            again,
            BlacklistOutcome {
                newly_added: false,
                cancelled_tasks: 0
            }
        );
        assert!(!s.add_task(UrlTask::seed("http://bad.ch/new")).unwrap());
        assert!(s.is_host_blacklisted("sub.bad.ch"));
        assert!(!s.is_host_blacklisted("notbad.ch"));
        assert_eq!(s.pending_tasks().len(), 1);
        assert!(matches!(s.blacklist_domain(""), Err(StoreError::InvalidDomain(_))));
        assert!(matches!(
            s.blacklist_domain("no spaces.ch"),
            Err(StoreError::InvalidDomain(_))
        ));
    }

    #[test]
    fn query_newest_first() {
        let s = Store::in_memory();
        s.add_sentence(rec("eins zwei drei vier", "http://a.ch/1", 0.995, 0))
            .unwrap();
        s.add_sentence(rec("fünf sechs sieben acht", "http://b.ch/1", 0.93, 10))
            .unwrap();
        s.add_sentence(rec("neun zehn elf zwölf", "http://x.a.ch/2", 0.991, 20))
            .unwrap();
        let all = s.query_sentences(None, None, 10);
        assert_eq!(all[0].text, "neun zehn elf zwölf");
        assert_eq!(s.query_sentences(Some(0.99), None, 10).len(), 2);
        assert_eq!(s.query_sentences(None, Some("a.ch"), 10).len(), 2);
        assert!(s.query_sentences(None, None, 0).is_empty());
    }

    #[test]
    fn redb_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("db.redb");
        {
            let s = Store::open(&path).unwrap();
            s.add_sentence(rec("Hoi zäme mitenand hüt", "http://a.ch/", 0.97, 0))
                .unwrap();
            s.add_task(UrlTask::seed("http://a.ch/")).unwrap();
            s.finish_task("http://a.ch/", TaskState::Visited, 1, 1, None).unwrap();
            s.add_task(UrlTask::seed("http://b.ch/")).unwrap();
            s.blacklist_domain("c.ch").unwrap();
            s.add_bootstrap_sentences(["boot eins".to_owned()]).unwrap();
            s.put_meta("iteration:0001", "{}").unwrap();
        }
        let s = Store::open(&path).unwrap();
        assert_eq!(s.sentence_count(), 1);
        assert!(s.contains_text("Hoi zäme mitenand hüt"));
        assert_eq!(s.task("http://a.ch/").unwrap().state, TaskState::Visited);
        assert_eq!(s.pending_tasks().len(), 1);
        assert_eq!(s.blacklisted_domains(), ["c.ch"]);
        assert_eq!(s.bootstrap_sentences(), ["boot eins"]);
        assert_eq!(s.meta_with_prefix("iteration:").len(), 1);
        // new tasks keep sequencing after reload
        s.add_task(UrlTask::seed("http://d.ch/")).unwrap();
        let order: Vec<String> = s.pending_tasks().into_iter().map(|t| t.url).collect();
        assert_eq!(order, ["http://b.ch/", "http://d.ch/"]);
    }
}
