//! Declarative sentence filter: regex count bounds, regex ratio bounds and length bounds.

use std::collections::HashSet;
use std::path::Path;

use fancy_regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const BUNDLED_RULES: &str = include_str!("../data/rules.toml");

#[derive(Debug, Error)]
pub enum RuleLoadError {
    #[error("cannot read rule file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse rule file: {0}")]
    Parse(String),
    #[error("rule {id}: invalid pattern: {reason}")]
    InvalidPattern { id: String, reason: String },
    #[error("rule {id}: {reason}")]
    Invalid { id: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    CountBound,
    RatioBound,
    LengthBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthUnit {
    #[default]
    Chars,
    Words,
}

#[derive(Debug, Deserialize)]
struct RuleFile {
    #[serde(default)]
    rule: Vec<RawRule>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    id: String,
    kind: RuleKind,
    pattern: Option<String>,
    pattern2: Option<String>,
    #[serde(default)]
    unit: LengthUnit,
    min: Option<f64>,
    max: Option<f64>,
    #[serde(default)]
    min_exclusive: bool,
    #[serde(default)]
    max_exclusive: bool,
    #[serde(default)]
    description: String,
}

/// One compiled rule.
#[derive(Debug, Clone)]
pub struct RulePolicy {
    pub id: String,
    pub kind: RuleKind,
    pub pattern: Option<Regex>,
    pub pattern2: Option<Regex>,
    pub unit: LengthUnit,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub min_exclusive: bool,
    pub max_exclusive: bool,
    pub description: String,
}

fn count_matches(re: &Regex, text: &str) -> usize {
    re.find_iter(text).take_while(Result::is_ok).count()
}

impl RulePolicy {
    /// The measured quantity this rule bounds.
    pub fn measure(&self, sentence: &str) -> f64 {
        match self.kind {
            RuleKind::CountBound => count_matches(self.pattern.as_ref().expect("validated"), sentence) as f64,
            RuleKind::RatioBound => {
                let num = count_matches(self.pattern.as_ref().expect("validated"), sentence);
                let den = count_matches(self.pattern2.as_ref().expect("validated"), sentence);
                num as f64 / den.max(1) as f64
            }
            RuleKind::LengthBound => match self.unit {
                LengthUnit::Chars => sentence.chars().count() as f64,
                LengthUnit::Words => sentence.split_whitespace().count() as f64,
            },
        }
    }

    pub fn accepts(&self, sentence: &str) -> bool {
        let v = self.measure(sentence);
        let above_min = match self.min {
            Some(m) if self.min_exclusive => v > m,
            Some(m) => v >= m,
            None => true,
        };
        let below_max = match self.max {
            Some(m) if self.max_exclusive => v < m,
            Some(m) => v <= m,
            None => true,
        };
        above_min && below_max
    }

    fn compile(raw: RawRule) -> Result<Self, RuleLoadError> {
        let invalid = |reason: &str| RuleLoadError::Invalid {
            id: raw.id.clone(),
            reason: reason.to_owned(),
        };
        if raw.min.is_none() && raw.max.is_none() {
            return Err(invalid("at least one of min/max is required"));
        }
        let compile = |p: &Option<String>| -> Result<Option<Regex>, RuleLoadError> {
            p.as_deref()
                .map(|src| {
                    Regex::new(src).map_err(|e| RuleLoadError::InvalidPattern {
                        id: raw.id.clone(),
                        reason: e.to_string(),
                    })
                })
                .transpose()
        };
        let pattern = compile(&raw.pattern)?;
        let pattern2 = compile(&raw.pattern2)?;
        match raw.kind {
            RuleKind::CountBound if pattern.is_none() => return Err(invalid("count_bound needs `pattern`")),
            RuleKind::RatioBound if pattern.is_none() || pattern2.is_none() => {
                return Err(invalid("ratio_bound needs `pattern` and `pattern2`"))
            }
            _ => {}
        }
        Ok(Self {
            id: raw.id,
            kind: raw.kind,
            pattern,
            pattern2,
            unit: raw.unit,
            min: raw.min,
            max: raw.max,
            min_exclusive: raw.min_exclusive,
            max_exclusive: raw.max_exclusive,
            description: raw.description,
        })
    }
}

/// Outcome of [`check`]; `passed` iff no rule failed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FilterVerdict {
    pub passed: bool,
    pub failed_rule_ids: Vec<String>,
}

pub fn parse_rules(src: &str) -> Result<Vec<RulePolicy>, RuleLoadError> {
    let file: RuleFile = toml::from_str(src).map_err(|e| RuleLoadError::Parse(e.to_string()))?;
    let mut seen = HashSet::new();
    let mut rules = Vec::with_capacity(file.rule.len());
    for raw in file.rule {
        if !seen.insert(raw.id.clone()) {
            return Err(RuleLoadError::Invalid {
                id: raw.id,
                reason: "duplicate id".into(),
            });
        }
        rules.push(RulePolicy::compile(raw)?);
    }
    Ok(rules)
}

pub fn load_rules(path: impl AsRef<Path>) -> Result<Vec<RulePolicy>, RuleLoadError> {
    let path = path.as_ref();
    let src = std::fs::read_to_string(path).map_err(|source| RuleLoadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_rules(&src)
}

pub fn bundled_rules() -> Vec<RulePolicy> {
    parse_rules(BUNDLED_RULES).expect("bundled rule file is valid")
}

pub fn bundled_rules_source() -> &'static str {
    BUNDLED_RULES
}

/// Evaluates every rule, reporting all violations.
pub fn check(sentence: &str, rules: &[RulePolicy]) -> FilterVerdict {
    let failed_rule_ids: Vec<String> = rules
        .iter()
        .filter(|r| !r.accepts(sentence))
        .map(|r| r.id.clone())
        .collect();
    FilterVerdict {
        passed: failed_rule_ids.is_empty(),
        failed_rule_ids,
    }
}
