use std::collections::BTreeMap;
use std::path::Path;

use parking_lot::Mutex;
use redb::{Database, ReadableDatabase, ReadableTable, TableDefinition};

use super::StoreError;

/// Key spaces of the persistent store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Namespace {
    Sentences,
    Tasks,
    Domains,
    Bootstrap,
    Meta,
}

impl Namespace {
    pub const ALL: [Namespace; 5] = [
        Namespace::Sentences,
        Namespace::Tasks,
        Namespace::Domains,
        Namespace::Bootstrap,
        Namespace::Meta,
    ];

    fn table(self) -> TableDefinition<'static, &'static str, &'static [u8]> {
        TableDefinition::new(match self {
            Namespace::Sentences => "sentences",
            Namespace::Tasks => "tasks",
            Namespace::Domains => "domains",
            Namespace::Bootstrap => "bootstrap",
            Namespace::Meta => "meta",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Op {
    Put { ns: Namespace, key: String, value: Vec<u8> },
    Delete { ns: Namespace, key: String },
}

/// Durable key-value storage under the in-memory indices of [`super::Store`].
/// Each `apply` call is atomic.
pub trait Backend: Send + Sync {
    fn apply(&self, ops: &[Op]) -> Result<(), StoreError>;

    /// All entries of a namespace in key order.
    fn scan(&self, ns: Namespace) -> Result<Vec<(String, Vec<u8>)>, StoreError>;
}

/// Volatile backend for tests and one-shot runs.
#[derive(Debug, Default)]
pub struct MemoryBackend {
    data: Mutex<BTreeMap<(Namespace, String), Vec<u8>>>,
}

impl Backend for MemoryBackend {
    fn apply(&self, ops: &[Op]) -> Result<(), StoreError> {
        let mut data = self.data.lock();
        for op in ops {
            match op {
                Op::Put { ns, key, value } => {
                    data.insert((*ns, key.clone()), value.clone());
                }
                Op::Delete { ns, key } => {
                    data.remove(&(*ns, key.clone()));
                }
            }
        }
        Ok(())
    }

    fn scan(&self, ns: Namespace) -> Result<Vec<(String, Vec<u8>)>, StoreError> {
        Ok(self
            .data
            .lock()
            .iter()
            .filter(|((n, _), _)| *n == ns)
            .map(|((_, k), v)| (k.clone(), v.clone()))
            .collect())
    }
}

/// Single-file embedded backend.
pub struct RedbBackend {
    db: Database,
}

fn db_err(e: impl std::fmt::Display) -> StoreError {
    StoreError::Backend(e.to_string())
}

impl RedbBackend {
    /// Opens the database file, creating it and its tables if needed.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let db = Database::create(path).map_err(db_err)?;
        let tx = db.begin_write().map_err(db_err)?;
        for ns in Namespace::ALL {
            tx.open_table(ns.table()).map_err(db_err)?;
        }
        tx.commit().map_err(db_err)?;
        Ok(Self { db })
    }
}

impl Backend for RedbBackend {
    fn apply(&self, ops: &[Op]) -> Result<(), StoreError> {
        if ops.is_empty() {
            return Ok(());
        }
        let tx = self.db.begin_write().map_err(db_err)?;
        for op in ops {
            match op {
                Op::Put { ns, key, value } => {
                    let mut t = tx.open_table(ns.table()).map_err(db_err)?;
                    t.insert(key.as_str(), value.as_slice()).map_err(db_err)?;
                }
                Op::Delete { ns, key } => {
                    let mut t = tx.open_table(ns.table()).map_err(db_err)?;
                    t.remove(key.as_str()).map_err(db_err)?;
                }
            }
        }
        tx.commit().map_err(db_err)
    }

    fn scan(&self, ns: Namespace) -> Result<Vec<(String, Vec<u8>)>, StoreError> {
        let tx = self.db.begin_read().map_err(db_err)?;
        let t = tx.open_table(ns.table()).map_err(db_err)?;
        let mut out = Vec::new();
        for row in t.iter().map_err(db_err)? {
            let (k, v) = row.map_err(db_err)?;
            out.push((k.value().to_owned(), v.value().to_vec()));
        }
        Ok(out)
    }
}
