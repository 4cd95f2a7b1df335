//! Crawl configuration: a flat key-value TOML document where every key is optional.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrawlConfig {
    /// Sentences below this target-language probability are discarded during the crawl.
    pub crawl_lid_threshold: f64,
    /// Seed queries below this probability are rejected.
    pub seed_lid_threshold: f64,
    /// Default `min_proba` for export.
    pub export_lid_threshold: f64,
    pub max_depth: u32,
    /// Links are followed when a page yields at least this many new sentences.
    pub follow_min_new_sentences: u32,
    /// Pages are saved when they yield at least this many passing sentences.
    pub save_min_sentences: u32,
    pub seeds_urls_per_query: usize,
    pub seed_word_count: usize,
    pub politeness_delay_ms: u64,
    pub fetch_workers: usize,
    pub fetch_timeout_ms: u64,
    pub max_body_bytes: u64,
    pub user_agent: String,
    pub ignore_robots: bool,
    /// Send every request through this HTTP proxy.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub http_proxy: Option<String>,
}

impl Default for CrawlConfig {
    fn default() -> Self {
        Self {
            crawl_lid_threshold: 0.92,
            seed_lid_threshold: 0.95,
            export_lid_threshold: 0.99,
            max_depth: 3,
            follow_min_new_sentences: 3,
            save_min_sentences: 1,
            seeds_urls_per_query: 20,
            seed_word_count: 3,
            politeness_delay_ms: 1000,
            fetch_workers: 4,
            fetch_timeout_ms: 20_000,
            max_body_bytes: 5 * 1024 * 1024,
            user_agent: concat!("sentharvest/", env!("CARGO_PKG_VERSION")).to_owned(),
            ignore_robots: false,
            http_proxy: None,
        }
    }
}

impl CrawlConfig {
    pub fn politeness_delay(&self) -> Duration {
        Duration::from_millis(self.politeness_delay_ms)
    }

    pub fn fetch_timeout(&self) -> Duration {
        Duration::from_millis(self.fetch_timeout_ms)
    }

    /// Checks ranges and the ordering crawl <= seed <= export of the thresholds.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let probs = [
            ("crawl_lid_threshold", self.crawl_lid_threshold),
            ("seed_lid_threshold", self.seed_lid_threshold),
            ("export_lid_threshold", self.export_lid_threshold),
        ];
        for (key, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(ConfigError::Invalid {
                    key,
                    reason: format!("{p} is not a probability in [0, 1]"),
                });
            }
        }
        if self.crawl_lid_threshold > self.seed_lid_threshold {
            return Err(ConfigError::Invalid {
                key: "crawl_lid_threshold",
                reason: "must not exceed seed_lid_threshold".into(),
            });
        }
        if self.seed_lid_threshold > self.export_lid_threshold {
            return Err(ConfigError::Invalid {
                key: "seed_lid_threshold",
                reason: "must not exceed export_lid_threshold".into(),
            });
        }
        if self.seed_word_count == 0 {
            return Err(ConfigError::Invalid {
                key: "seed_word_count",
                reason: "must be at least 1".into(),
            });
        }
        if self.save_min_sentences == 0 {
            return Err(ConfigError::Invalid {
                key: "save_min_sentences",
                reason: "must be at least 1".into(),
            });
        }
        if self.fetch_workers == 0 {
            return Err(ConfigError::Invalid {
                key: "fetch_workers",
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: CrawlConfig = toml::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }
}

/// Loads a config file; missing keys take their defaults.
pub fn load_config(path: impl AsRef<Path>) -> Result<CrawlConfig, ConfigError> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    CrawlConfig::from_toml_str(&raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = CrawlConfig::from_toml_str("").unwrap();
        assert_eq!(cfg.crawl_lid_threshold, 0.92);
        assert_eq!(cfg.seed_lid_threshold, 0.95);
        assert_eq!(cfg.export_lid_threshold, 0.99);
        assert_eq!(cfg.max_depth, 3);
        assert_eq!(cfg.follow_min_new_sentences, 3);
        assert_eq!(cfg.seeds_urls_per_query, 20);
        assert_eq!(cfg.seed_word_count, 3);
    }

    #[test]
    fn max_depth_zero_is_accepted() {
        let cfg = CrawlConfig::from_toml_str("max_depth = 0").unwrap();
        assert_eq!(cfg.max_depth, 0);
    }

    #[test]
    fn out_of_range_threshold_names_the_key() {
        let err = CrawlConfig::from_toml_str("crawl_lid_threshold = 1.5").unwrap_err();
        match err {
            ConfigError::Invalid { key, .. } => assert_eq!(key, "crawl_lid_threshold"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn threshold_ordering_is_enforced() {
        let err = CrawlConfig::from_toml_str("seed_lid_threshold = 0.999").unwrap_err();
        assert!(matches!(
            err,
            ConfigError::Invalid {
                key: "seed_lid_threshold",
                ..
            }
        ));
    }

    #[test]
    fn unknown_key_is_a_parse_error() {
        assert!(matches!(
            CrawlConfig::from_toml_str("max_dept = 2"),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn load_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("crawl.toml");
        std::fs::write(&p, "fetch_workers = 2\npoliteness_delay_ms = 5\n").unwrap();
        let cfg = load_config(&p).unwrap();
        assert_eq!(cfg.fetch_workers, 2);
        assert_eq!(cfg.politeness_delay(), Duration::from_millis(5));
        assert!(matches!(
            load_config(dir.path().join("nope")),
            Err(ConfigError::Io { .. })
        ));
    }

    proptest! {
        #[test]
        fn accepted_configs_round_trip(
            a in 0.0f64..=1.0, b in 0.0f64..=1.0, c in 0.0f64..=1.0,
            depth in 0u32..10, follow in 0u32..10, workers in 1usize..16,
        ) {
            let mut t = [a, b, c];
            t.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let cfg = CrawlConfig {
                crawl_lid_threshold: t[0],
                seed_lid_threshold: t[1],
                export_lid_threshold: t[2],
                max_depth: depth,
                follow_min_new_sentences: follow,
                fetch_workers: workers,
                ..CrawlConfig::default()
            };
            let back = CrawlConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
            prop_assert!(back.crawl_lid_threshold <= back.seed_lid_threshold);
            prop_assert!(back.seed_lid_threshold <= back.export_lid_threshold);
            prop_assert_eq!(back, cfg);
        }
    }
}
