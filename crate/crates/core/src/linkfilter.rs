//! URL canonicalization and URL-only link rules.
//!
//! Decisions here never touch the network; they depend only on the URL string
//! and the loaded rules.

use std::collections::HashSet;
use std::path::Path;
use std::sync::OnceLock;

use serde::Deserialize;
use thiserror::Error;
use url::Url;

const BUNDLED_RULES: &str = include_str!("../data/link_rules.toml");
const BUNDLED_PSL: &str = include_str!("../data/public_suffix.dat");

#[derive(Debug, Error)]
pub enum LinkRulesError {
    #[error("cannot read link rules {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse link rules: {0}")]
    Parse(String),
    #[error("host rewrite {pattern:?}: {reason}")]
    Rewrite { pattern: String, reason: String },
}

/// Resolves `href` against `base` and canonicalizes the result: lowercase
/// scheme and host, no fragment, no default port, sorted query parameters.
/// Non-http(s) targets and unparseable references yield `None`.
pub fn normalize_url(base: &Url, href: &str) -> Option<Url> {
    let href = href.trim();
    if href.is_empty() {
        return None;
    }
    let mut u = base.join(href).ok()?;
    canonicalize(&mut u).then_some(u)
}

/// Parses an absolute URL and canonicalizes it like [`normalize_url`].
pub fn parse_url(s: &str) -> Option<Url> {
    let mut u = Url::parse(s.trim()).ok()?;
    canonicalize(&mut u).then_some(u)
}

fn canonicalize(u: &mut Url) -> bool {
    if !matches!(u.scheme(), "http" | "https") || u.host_str().is_none_or(str::is_empty) {
        return false;
    }
    u.set_fragment(None);
    if let Some(h) = u.host_str() {
        let trimmed = h.trim_end_matches('.');
        if trimmed != h {
            let t = trimmed.to_owned();
            if u.set_host(Some(&t)).is_err() {
                return false;
            }
        }
    }
    sort_query(u);
    true
}

fn sort_query(u: &mut Url) {
    let Some(q) = u.query() else { return };
    let mut pairs: Vec<&str> = q.split('&').filter(|p| !p.is_empty()).collect();
    pairs.sort_by(|a, b| {
        let ka = a.split_once('=').map_or(*a, |(k, _)| k);
        let kb = b.split_once('=').map_or(*b, |(k, _)| k);
        ka.cmp(kb).then(a.cmp(b))
    });
    let joined = pairs.join("&");
    u.set_query(if joined.is_empty() { None } else { Some(&joined) });
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct HostRewrite {
    /// Exact host, or `*.suffix` for any proper subdomain of `suffix`.
    pub pattern: String,
    pub host: String,
}

impl HostRewrite {
    fn matches(&self, host: &str) -> bool {
        match self.pattern.strip_prefix("*.") {
            Some(suffix) => {
                host.len() > suffix.len() + 1
                    && host.ends_with(suffix)
                    && host[..host.len() - suffix.len()].ends_with('.')
            }
            None => host == self.pattern,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRules {
    #[serde(default)]
    excluded_tlds: Vec<String>,
    #[serde(default)]
    excluded_extensions: Vec<String>,
    #[serde(default)]
    strip_params: Vec<String>,
    #[serde(default)]
    host_rewrite: Vec<HostRewrite>,
    #[serde(default)]
    domain_blacklist: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LinkRules {
    pub excluded_tlds: HashSet<String>,
    pub excluded_extensions: HashSet<String>,
    /// Parameter names; a trailing `*` makes the entry a prefix match.
    pub strip_params: Vec<String>,
    pub host_rewrites: Vec<HostRewrite>,
    pub domain_blacklist: HashSet<String>,
}

impl LinkRules {
    pub fn bundled() -> Self {
        Self::from_toml_str(BUNDLED_RULES).expect("bundled link rules are valid")
    }

    pub fn from_toml_str(s: &str) -> Result<Self, LinkRulesError> {
        let raw: RawRules = toml::from_str(s).map_err(|e| LinkRulesError::Parse(e.to_string()))?;
        let lower = |v: Vec<String>| -> Vec<String> {
            v.into_iter()
                .map(|x| x.trim().trim_start_matches('.').to_lowercase())
                .filter(|x| !x.is_empty())
                .collect()
        };
        let host_rewrites: Vec<HostRewrite> = raw
            .host_rewrite
            .into_iter()
            .map(|r| HostRewrite {
                pattern: r.pattern.to_lowercase(),
                host: r.host.to_lowercase(),
            })
            .collect();
        for r in &host_rewrites {
            if let Some(other) = host_rewrites.iter().find(|o| o.matches(&r.host)) {
                return Err(LinkRulesError::Rewrite {
                    pattern: r.pattern.clone(),
                    reason: format!("target {} is matched again by {}", r.host, other.pattern),
                });
            }
        }
        Ok(Self {
            excluded_tlds: lower(raw.excluded_tlds).into_iter().collect(),
            excluded_extensions: lower(raw.excluded_extensions).into_iter().collect(),
            strip_params: lower(raw.strip_params),
            host_rewrites,
            domain_blacklist: lower(raw.domain_blacklist).into_iter().collect(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LinkRulesError> {
        let path = path.as_ref();
        let src = std::fs::read_to_string(path).map_err(|source| LinkRulesError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&src)
    }

    fn strips(&self, param: &str) -> bool {
        let p = param.to_lowercase();
        self.strip_params.iter().any(|pat| match pat.strip_suffix('*') {
            Some(prefix) => p.starts_with(prefix),
            None => p == *pat,
        })
    }

    fn excluded(&self, u: &Url) -> bool {
        let host = u.host_str().unwrap_or_default();
        if let Some(tld) = host.rsplit('.').next() {
            if host.contains('.') && self.excluded_tlds.contains(tld) {
                return true;
            }
        }
        if let Some(last) = u.path_segments().and_then(|mut s| s.next_back()) {
            if let Some((_, ext)) = last.rsplit_once('.') {
                if self.excluded_extensions.contains(&ext.to_lowercase()) {
                    return true;
                }
            }
        }
        if !self.domain_blacklist.is_empty() {
            let mut h = host;
            loop {
                if self.domain_blacklist.contains(h) {
                    return true;
                }
                match h.split_once('.') {
                    Some((_, rest)) => h = rest,
                    None => break,
                }
            }
        }
        false
    }
}

/// Applies the rules to a canonical URL: `None` when excluded, otherwise the URL
/// with session parameters stripped and host rewrites applied.
pub fn apply_rules(url: &Url, rules: &LinkRules) -> Option<Url> {
    let mut u = url.clone();
    if let Some(q) = u.query() {
        let kept: Vec<&str> = q
            .split('&')
            .filter(|p| !p.is_empty() && !rules.strips(p.split_once('=').map_or(*p, |(k, _)| k)))
            .collect();
        let joined = kept.join("&");
        u.set_query(if joined.is_empty() { None } else { Some(&joined) });
    }
    // `;jsessionid=...` path parameters
    let path = u.path().to_owned();
    if let Some(i) = path.to_ascii_lowercase().find(";jsessionid=") {
        u.set_path(&path[..i]);
    }
    let host = u.host_str().unwrap_or_default().to_owned();
    if let Some(rw) = rules.host_rewrites.iter().find(|r| r.matches(&host)) {
        u.set_host(Some(&rw.host)).ok()?;
    }
    if rules.excluded(&u) {
        return None;
    }
    Some(u)
}

/// [`parse_url`] followed by [`apply_rules`], on strings.
pub fn filter_url(url: &str, rules: &LinkRules) -> Option<String> {
    parse_url(url).and_then(|u| apply_rules(&u, rules)).map(String::from)
}

/// Public suffix rules in the publicsuffix.org format.
#[derive(Debug, Default)]
pub struct PublicSuffixList {
    rules: HashSet<String>,
    wildcards: HashSet<String>,
    exceptions: HashSet<String>,
    version: String,
}

impl PublicSuffixList {
    pub fn parse(src: &str) -> Self {
        let mut psl = Self::default();
        for line in src.lines() {
            let line = line.trim();
            if let Some(v) = line.strip_prefix("//") {
                if let Some(ver) = v.trim().strip_prefix("VERSION:") {
                    psl.version = ver.trim().to_owned();
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let rule = line.split_whitespace().next().unwrap_or("").to_lowercase();
            if let Some(e) = rule.strip_prefix('!') {
                psl.exceptions.insert(e.to_owned());
            } else if let Some(w) = rule.strip_prefix("*.") {
                psl.wildcards.insert(w.to_owned());
            } else {
                psl.rules.insert(rule);
            }
        }
        psl
    }

    pub fn bundled() -> &'static Self {
        static PSL: OnceLock<PublicSuffixList> = OnceLock::new();
        PSL.get_or_init(|| Self::parse(BUNDLED_PSL))
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    /// Number of labels in the public suffix of `host`.
    fn suffix_labels(&self, labels: &[&str]) -> usize {
        let n = labels.len();
        for i in 0..n {
            let cand = labels[i..].join(".");
            if self.exceptions.contains(&cand) {
                return n - i - 1;
            }
            if self.rules.contains(&cand) {
                return n - i;
            }
            if i + 1 < n && self.wildcards.contains(&labels[i + 1..].join(".")) {
                return n - i;
            }
        }
        1
    }

    /// The public suffix plus one label; the host itself when it is an IP
    /// address, a single label or a public suffix.
    pub fn registrable_domain(&self, host: &str) -> String {
        let host = host.trim_end_matches('.').to_lowercase();
        if host.parse::<std::net::IpAddr>().is_ok() || host.starts_with('[') {
            return host;
        }
        let labels: Vec<&str> = host.split('.').collect();
        let s = self.suffix_labels(&labels);
        if s >= labels.len() {
            return host;
        }
        labels[labels.len() - s - 1..].join(".")
    }
}

/// Registrable domain of `host` under the bundled suffix snapshot.
pub fn registrable_domain(host: &str) -> String {
    PublicSuffixList::bundled().registrable_domain(host)
}

/// Syntactic check for operator-supplied domains: dotted ASCII hostname labels.
pub fn is_valid_domain(domain: &str) -> bool {
    if domain.is_empty() || domain.len() > 253 || !domain.contains('.') {
        return false;
    }
    domain.split('.').all(|l| {
        !l.is_empty()
            && l.len() <= 63
            && !l.starts_with('-')
            && !l.ends_with('-')
            && l.chars().all(|c| c.is_ascii_alphanumeric() || c == '-')
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn norm(base: &str, href: &str) -> Option<String> {
        normalize_url(&Url::parse(base).unwrap(), href).map(String::from)
    }

    fn apply(u: &str) -> Option<String> {
        filter_url(u, &LinkRules::bundled())
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(norm("http://a.ch/x/", "../y#frag").as_deref(), Some("http://a.ch/y"));
        assert_eq!(norm("http://a.ch/", "mailto:x@y"), None);
        assert_eq!(
            norm("http://a.ch/", "HTTP://A.CH/p?b=2&a=1").as_deref(),
            Some("http://a.ch/p?a=1&b=2")
        );
        assert_eq!(
            norm("http://a.ch/", "https://a.ch:443/").as_deref(),
            Some("https://a.ch/")
        );
        assert_eq!(norm("http://a.ch/", "javascript:void(0)"), None);
        assert_eq!(norm("http://a.ch/", "http://[::1"), None);
        assert_eq!(norm("http://a.ch/", "  "), None);
        assert_eq!(norm("http://a.ch/", "/p?").as_deref(), Some("http://a.ch/p"));
    }

    #[test]
    fn rule_examples() {
        assert_eq!(apply("http://shop.nl/p"), None);
        assert_eq!(apply("http://a.ch/f.pdf"), None);
        assert_eq!(apply("http://a.ch/F.JPEG"), None);
        assert_eq!(
            apply("http://a.ch/p?PHPSESSID=k3j&x=1").as_deref(),
            Some("http://a.ch/p?x=1")
        );
        assert_eq!(
            apply("http://mobile.twitter.com/u").as_deref(),
            Some("http://twitter.com/u")
        );
        assert_eq!(apply("http://a.ch/p;jsessionid=abc").as_deref(), Some("http://a.ch/p"));
        assert_eq!(apply("http://a.ch/p?utm_source=x").as_deref(), Some("http://a.ch/p"));
        for ok in [
            "http://a.de/",
            "http://a.at/",
            "http://a.li/",
            "http://a.com/",
            "http://a.swiss/",
            "http://a.info/",
        ] {
            assert_eq!(apply(ok).as_deref(), Some(ok));
        }
    }

    #[test]
    fn rule_file_blacklist_and_validation() {
        let r = LinkRules::from_toml_str("domain_blacklist = [\"Spam.ch\"]").unwrap();
        assert_eq!(filter_url("http://www.spam.ch/x", &r), None);
        assert!(filter_url("http://ham.ch/x", &r).is_some());
        let looping = "[[host_rewrite]]\npattern = \"*.a.com\"\nhost = \"x.a.com\"\n";
        assert!(matches!(
            LinkRules::from_toml_str(looping),
            Err(LinkRulesError::Rewrite { .. })
        ));
        assert!(LinkRules::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn registrable_domains() {
        assert_eq!(registrable_domain("www.blick.ch"), "blick.ch");
        assert_eq!(registrable_domain("a.b.example.co.uk"), "example.co.uk");
        assert_eq!(registrable_domain("foo.blogspot.com"), "foo.blogspot.com");
        assert_eq!(registrable_domain("x.y.ck"), "x.y.ck");
        assert_eq!(registrable_domain("www.ck"), "www.ck");
        assert_eq!(registrable_domain("ch"), "ch");
        assert_eq!(registrable_domain("127.0.0.1"), "127.0.0.1");
        assert_eq!(registrable_domain("a.b.unknowntld"), "b.unknowntld");
        assert!(!PublicSuffixList::bundled().version().is_empty());
    }

    #[test]
    fn domain_syntax() {
        assert!(is_valid_domain("bad.ch"));
        assert!(is_valid_domain("sub.bad-site.ch"));
        for bad in ["", "ch", "a..ch", "-a.ch", "a b.ch", "http://a.ch"] {
            assert!(!is_valid_domain(bad), "{bad}");
        }
    }

    proptest! {
        #[test]
        fn idempotent_and_stable(
            host in prop::sample::select(vec!["a.ch", "m.twitter.com", "www.x.com", "shop.nl", "old.reddit.com", "b.de"]),
            path in "[a-z]{0,6}(\\.(pdf|html|jpg))?",
            params in prop::collection::vec((prop::sample::select(vec!["a", "sid", "utm_x", "PHPSESSID", "q"]), "[a-z0-9]{0,3}"), 0..4),
        ) {
            let q: Vec<String> = params.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let raw = format!("http://{host}/{path}?{}", q.join("&"));
            let rules = LinkRules::bundled();
            let once = filter_url(&raw, &rules);
            prop_assert_eq!(&once, &filter_url(&raw, &rules));
            if let Some(u) = once {
                prop_assert_eq!(filter_url(&u, &rules), Some(u.clone()));
            }
        }
    }
}
