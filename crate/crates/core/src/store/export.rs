use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::str::FromStr;

use chrono::SecondsFormat;
use serde::Serialize;

use super::StoreError;
use crate::linkfilter::registrable_domain;
use crate::model::SentenceRecord;

pub const CSV_HEADER: [&str; 4] = ["text", "url", "crawl_proba", "date"];

/// Writes records with `crawl_proba >= min_proba` as CSV.
///
/// Near-duplicates (same dedup key) collapse to the earliest record, ties broken
/// by insertion order. Rows are sorted by dedup key, so the output depends only
/// on the record set. Returns the number of data rows.
pub fn export_records(
    records: &[SentenceRecord],
    min_proba: f64,
    out: impl std::io::Write,
) -> Result<usize, StoreError> {
    let mut survivors: BTreeMap<&str, &SentenceRecord> = BTreeMap::new();
    for r in records.iter().filter(|r| r.crawl_proba >= min_proba) {
        survivors
            .entry(&r.dedup_key)
            .and_modify(|cur| {
                if r.date < cur.date {
                    *cur = r;
                }
            })
            .or_insert(r);
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let err = |e: csv::Error| StoreError::Export(e.to_string());
    w.write_record(CSV_HEADER).map_err(err)?;
    for r in survivors.values() {
        w.write_record([
            r.text.as_str(),
            r.url.as_str(),
            &format!("{:.4}", r.crawl_proba),
            &r.date.to_rfc3339_opts(SecondsFormat::Secs, true),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| StoreError::Export(e.to_string()))?;
    Ok(survivors.len())
}

/// Label of the 1%-wide probability bin: `99+` covers [0.99, 1], `98+` covers
/// [0.98, 0.99) and so on down to `92+`; anything lower lands in `<92`.
pub fn proba_bin(p: f64) -> String {
    let pct = (p * 100.0 + 1e-9).floor() as i64;
    match pct {
        99.. => "99+".to_owned(),
        92..=98 => format!("{pct}+"),
        _ => "<92".to_owned(),
    }
}

const BIN_LABELS: [&str; 9] = ["99+", "98+", "97+", "96+", "95+", "94+", "93+", "92+", "<92"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbaBin {
    pub bin: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct LengthSummary {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub min: u64,
    pub max: u64,
    /// (bucket start, count) with fixed-width buckets.
    pub histogram: Vec<(u64, u64)>,
}

impl LengthSummary {
    fn of(values: &[u64], bucket: u64) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<u64>() as f64 / n;
        let var = values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let mut sorted = values.to_vec();
        sorted.sort_unstable();
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 {
            sorted[mid] as f64
        } else {
            (sorted[mid - 1] + sorted[mid]) as f64 / 2.0
        };
        let mut hist: BTreeMap<u64, u64> = BTreeMap::new();
        for &v in values {
            *hist.entry(v / bucket * bucket).or_default() += 1;
        }
        Self {
            mean,
            std: var.sqrt(),
            median,
            min: sorted[0],
            max: sorted[sorted.len() - 1],
            histogram: hist.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainRow {
    pub domain: String,
    pub url_count: u64,
    pub sentence_count: u64,
    /// Share of all stored sentences, in percent.
    pub percent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DomainSort {
    #[default]
    Sentences,
    Urls,
    Domain,
}

impl FromStr for DomainSort {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sentences" => Ok(Self::Sentences),
            "urls" => Ok(Self::Urls),
            "domain" => Ok(Self::Domain),
            other => Err(format!(
                "unknown sort key {other:?} (expected sentences, urls or domain)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub total_sentences: u64,
    pub distinct_urls: u64,
    pub distinct_domains: u64,
    pub proba_bins: Vec<ProbaBin>,
    pub chars: LengthSummary,
    pub words: LengthSummary,
    pub top_domains: Vec<DomainRow>,
}

/// Per registrable domain: distinct URLs and sentences, sorted as requested
/// (ties by domain name).
pub fn domain_rows(records: &[SentenceRecord], sort: DomainSort) -> Vec<DomainRow> {
    let mut agg: HashMap<String, (BTreeSet<&str>, u64)> = HashMap::new();
    for r in records {
        let e = agg.entry(registrable_domain(&r.host())).or_default();
        e.0.insert(&r.url);
        e.1 += 1;
    }
    let total = records.len().max(1) as f64;
    let mut rows: Vec<DomainRow> = agg
        .into_iter()
        .map(|(domain, (urls, n))| DomainRow {
            domain,
            url_count: urls.len() as u64,
            sentence_count: n,
            percent: 100.0 * n as f64 / total,
        })
        .collect();
    match sort {
        DomainSort::Sentences => rows.sort_by(|a, b| {
            b.sentence_count
                .cmp(&a.sentence_count)
                .then_with(|| a.domain.cmp(&b.domain))
        }),
        DomainSort::Urls => rows.sort_by(|a, b| b.url_count.cmp(&a.url_count).then_with(|| a.domain.cmp(&b.domain))),
        DomainSort::Domain => rows.sort_by(|a, b| a.domain.cmp(&b.domain)),
    }
    rows
}

pub fn compute_stats(records: &[SentenceRecord], top_n: usize) -> CorpusStats {
    let mut bins: BTreeMap<String, u64> = BIN_LABELS.iter().map(|l| (l.to_string(), 0)).collect();
    for r in records {
        *bins.get_mut(&proba_bin(r.crawl_proba)).expect("known label") += 1;
    }
    let chars: Vec<u64> = records.iter().map(|r| r.text.chars().count() as u64).collect();
    let words: Vec<u64> = records
        .iter()
        .map(|r| r.text.split_whitespace().count() as u64)
        .collect();
    let domains = domain_rows(records, DomainSort::Sentences);
    CorpusStats {
        total_sentences: records.len() as u64,
        distinct_urls: records.iter().map(|r| r.url.as_str()).collect::<BTreeSet<_>>().len() as u64,
        distinct_domains: domains.len() as u64,
        proba_bins: BIN_LABELS
            .iter()
            .map(|l| ProbaBin {
                bin: l.to_string(),
                count: bins[*l],
            })
            .collect(),
        chars: LengthSummary::of(&chars, 25),
        words: LengthSummary::of(&words, 5),
        top_domains: domains.into_iter().take(top_n).collect(),
    }
}
