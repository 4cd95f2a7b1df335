//! Page fetching with charset handling, and jusText-style boilerplate removal
//! without the stopword feature.

use std::io::Read;
use std::time::Duration;

use chrono::{DateTime, Utc};
use ego_tree::iter::Edge;
use encoding_rs::Encoding;
use scraper::{Html, Node};
use serde::Serialize;
use thiserror::Error;
use url::Url;

use crate::config::CrawlConfig;
use crate::linkfilter::normalize_url;

pub const MAX_REDIRECTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FetchError {
    #[error("invalid url {0}")]
    InvalidUrl(String),
    #[error("timed out")]
    Timeout,
    #[error("network error: {0}")]
    Network(String),
    #[error("http status {0}")]
    HttpStatus(u16),
    #[error("non-text content type {0}")]
    ContentType(String),
    #[error("body larger than {0} bytes")]
    TooLarge(u64),
    #[error("too many redirects")]
    TooManyRedirects,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FetchResult {
    /// Final URL after redirects.
    pub url: String,
    pub status: u16,
    pub body: String,
    pub content_type: String,
    pub fetched_at: DateTime<Utc>,
}

#[derive(Debug, Clone)]
pub struct FetchOptions {
    pub user_agent: String,
    pub timeout: Duration,
    pub max_body_bytes: u64,
    pub proxy: Option<String>,
}

impl From<&CrawlConfig> for FetchOptions {
    fn from(c: &CrawlConfig) -> Self {
        Self {
            user_agent: c.user_agent.clone(),
            timeout: c.fetch_timeout(),
            max_body_bytes: c.max_body_bytes,
            proxy: c.http_proxy.clone(),
        }
    }
}

/// Blocking HTTP client. Must not be created or dropped inside an async runtime.
pub struct Fetcher {
    client: reqwest::blocking::Client,
    max_body_bytes: u64,
}

fn classify(e: reqwest::Error) -> FetchError {
    if e.is_timeout() {
        FetchError::Timeout
    } else if e.is_redirect() {
        FetchError::TooManyRedirects
    } else {
        let mut msg = e.to_string();
        let mut src = std::error::Error::source(&e);
        while let Some(s) = src {
            msg.push_str(": ");
            msg.push_str(&s.to_string());
            src = s.source();
        }
        FetchError::Network(msg)
    }
}

fn is_textual(content_type: &str) -> bool {
    let mime = content_type.split(';').next().unwrap_or("").trim().to_ascii_lowercase();
    mime.is_empty() || mime == "text/html" || mime == "application/xhtml+xml" || mime == "text/plain"
}

impl Fetcher {
    pub fn new(opts: &FetchOptions) -> Result<Self, FetchError> {
        let mut b = reqwest::blocking::Client::builder()
            .user_agent(opts.user_agent.clone())
            .timeout(opts.timeout)
            .redirect(reqwest::redirect::Policy::limited(MAX_REDIRECTS));
        if let Some(p) = &opts.proxy {
            b = b.proxy(reqwest::Proxy::all(p).map_err(|e| FetchError::InvalidUrl(format!("proxy {p}: {e}")))?);
        } else {
            b = b.no_proxy();
        }
        let client = b.build().map_err(classify)?;
        Ok(Self {
            client,
            max_body_bytes: opts.max_body_bytes,
        })
    }

    fn get(&self, url: &str) -> Result<(String, u16, String, Vec<u8>), FetchError> {
        let parsed = Url::parse(url).map_err(|_| FetchError::InvalidUrl(url.to_owned()))?;
        if !matches!(parsed.scheme(), "http" | "https") {
            return Err(FetchError::InvalidUrl(url.to_owned()));
        }
        let resp = self.client.get(parsed).send().map_err(classify)?;
        let status = resp.status().as_u16();
        let final_url = resp.url().to_string();
        let content_type = resp
            .headers()
            .get(reqwest::header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .unwrap_or("")
            .to_owned();
        if status >= 400 {
            return Err(FetchError::HttpStatus(status));
        }
        let mut bytes = Vec::new();
        resp.take(self.max_body_bytes + 1)
            .read_to_end(&mut bytes)
            .map_err(|e| FetchError::Network(e.to_string()))?;
        if bytes.len() as u64 > self.max_body_bytes {
            return Err(FetchError::TooLarge(self.max_body_bytes));
        }
        Ok((final_url, status, content_type, bytes))
    }

    /// Fetches an HTML or plain-text page and decodes it to UTF-8.
    pub fn fetch(&self, url: &str) -> Result<FetchResult, FetchError> {
        let (final_url, status, content_type, bytes) = self.get(url)?;
        if !is_textual(&content_type) {
            return Err(FetchError::ContentType(content_type));
        }
        Ok(FetchResult {
            url: final_url,
            status,
            body: decode_body(&bytes, &content_type),
            content_type,
            fetched_at: Utc::now(),
        })
    }

    /// Raw text of a `robots.txt`-like resource; `Ok(None)` for 4xx responses.
    pub fn fetch_plain(&self, url: &str) -> Result<Option<String>, FetchError> {
        match self.get(url) {
            Ok((_, _, ct, bytes)) => Ok(Some(decode_body(&bytes, &ct))),
            Err(FetchError::HttpStatus(s)) if (400..500).contains(&s) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

fn charset_param(content_type: &str) -> Option<&str> {
    content_type.split(';').skip(1).find_map(|p| {
        let (k, v) = p.split_once('=')?;
        k.trim()
            .eq_ignore_ascii_case("charset")
            .then(|| v.trim().trim_matches(|c| c == '"' || c == '\''))
    })
}

/// `<meta charset=...>` or `<meta http-equiv content="...; charset=...">` in the
/// first few kilobytes.
fn meta_charset(bytes: &[u8]) -> Option<&'static Encoding> {
    let head = &bytes[..bytes.len().min(4096)];
    let text: String = head.iter().map(|&b| b.to_ascii_lowercase() as char).collect();
    let mut from = 0;
    while let Some(i) = text[from..].find("charset") {
        let at = from + i + "charset".len();
        from = at;
        let rest = text[at..].trim_start();
        let Some(rest) = rest.strip_prefix('=') else { continue };
        let label: String = rest
            .trim_start()
            .trim_start_matches(['"', '\''])
            .chars()
            .take_while(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | ':' | '.'))
            .collect();
        if let Some(enc) = Encoding::for_label(label.as_bytes()) {
            return Some(enc);
        }
    }
    None
}

/// Decodes with, in order of preference: a byte-order mark, the declared
/// header charset, a meta tag, then statistical detection.
pub fn decode_body(bytes: &[u8], content_type: &str) -> String {
    if let Some((enc, bom_len)) = Encoding::for_bom(bytes) {
        return enc.decode_without_bom_handling(&bytes[bom_len..]).0.into_owned();
    }
    let declared = charset_param(content_type).and_then(|l| Encoding::for_label(l.as_bytes()));
    let enc = declared.or_else(|| meta_charset(bytes)).unwrap_or_else(|| {
        let mut det = chardetng::EncodingDetector::new(chardetng::Iso2022JpDetection::Deny);
        det.feed(bytes, true);
        det.guess(None, chardetng::Utf8Detection::Allow)
    });
    // A meta tag cannot meaningfully declare UTF-16 in an ASCII-compatible document.
    let enc = if enc == encoding_rs::UTF_16LE || enc == encoding_rs::UTF_16BE {
        encoding_rs::UTF_8
    } else {
        enc
    };
    enc.decode_without_bom_handling(bytes).0.into_owned()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockClass {
    Good,
    Bad,
    Short,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TextBlock {
    pub text: String,
    /// Linked characters over all characters, whitespace excluded.
    pub link_density: f64,
    pub char_count: usize,
    pub tag_path: String,
    pub classification: BlockClass,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractOptions {
    /// Blocks above this link density are boilerplate.
    pub max_link_density: f64,
    /// Blocks with fewer characters are short.
    pub length_low: usize,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            max_link_density: 0.4,
            length_low: 40,
        }
    }
}

const DROPPED: &[&str] = &[
    "head", "script", "style", "noscript", "nav", "table", "header", "footer", "template", "svg", "iframe", "select",
    "button", "form", "textarea", "object", "embed", "canvas", "math",
];

const BLOCK: &[&str] = &[
    "p",
    "div",
    "h1",
    "h2",
    "h3",
    "h4",
    "h5",
    "h6",
    "li",
    "ul",
    "ol",
    "dl",
    "dt",
    "dd",
    "blockquote",
    "pre",
    "article",
    "section",
    "main",
    "aside",
    "figure",
    "figcaption",
    "address",
    "body",
    "html",
    "hr",
    "br",
    "center",
    "details",
    "summary",
    "fieldset",
    "legend",
];

fn is_hidden(e: &scraper::node::Element) -> bool {
    if e.attr("hidden").is_some() || e.attr("aria-hidden").is_some_and(|v| v.eq_ignore_ascii_case("true")) {
        return true;
    }
    e.attr("style").is_some_and(|s| {
        let s: String = s
            .chars()
            .filter(|c| !c.is_whitespace())
            .collect::<String>()
            .to_ascii_lowercase();
        s.contains("display:none") || s.contains("visibility:hidden")
    })
}

#[derive(Default)]
struct Pending {
    raw: String,
    linked: usize,
    total: usize,
    path: String,
}

fn flush(p: &mut Pending, out: &mut Vec<TextBlock>, opts: &ExtractOptions) {
    let text = p.raw.split_whitespace().collect::<Vec<_>>().join(" ");
    if !text.is_empty() {
        let link_density = if p.total == 0 {
            0.0
        } else {
            p.linked as f64 / p.total as f64
        };
        let char_count = text.chars().count();
        let classification = if link_density > opts.max_link_density {
            BlockClass::Bad
        } else if char_count < opts.length_low {
            BlockClass::Short
        } else {
            BlockClass::Good
        };
        out.push(TextBlock {
            text,
            link_density,
            char_count,
            tag_path: p.path.clone(),
            classification,
        });
    }
    p.raw.clear();
    p.linked = 0;
    p.total = 0;
}

/// Segments a document into text blocks and classifies them. Short blocks are
/// promoted to good when the nearest non-short block on either side is good.
pub fn extract_blocks(html: &str) -> Vec<TextBlock> {
    extract_blocks_with(html, &ExtractOptions::default())
}

pub fn extract_blocks_with(html: &str, opts: &ExtractOptions) -> Vec<TextBlock> {
    let doc = Html::parse_document(html);
    let mut blocks = Vec::new();
    let mut cur = Pending::default();
    let mut stack: Vec<&str> = Vec::new();
    let mut link_depth = 0usize;
    let mut skip: Option<ego_tree::NodeId> = None;

    for edge in doc.tree.root().traverse() {
        match edge {
            Edge::Open(node) => {
                if skip.is_some() {
                    continue;
                }
                match node.value() {
                    Node::Element(e) => {
                        let name = e.name();
                        if DROPPED.contains(&name) || is_hidden(e) {
                            skip = Some(node.id());
                            continue;
                        }
                        stack.push(name);
                        if BLOCK.contains(&name) {
                            flush(&mut cur, &mut blocks, opts);
                            cur.path = stack.join("/");
                        }
                        if name == "a" {
                            link_depth += 1;
                        }
                    }
                    Node::Text(t) => {
                        let n = t.chars().filter(|c| !c.is_whitespace()).count();
                        cur.total += n;
                        if link_depth > 0 {
                            cur.linked += n;
                        }
                        cur.raw.push_str(t);
                    }
                    _ => {}
                }
            }
            Edge::Close(node) => {
                if let Some(id) = skip {
                    if id == node.id() {
                        skip = None;
                    }
                    continue;
                }
                if let Node::Element(e) = node.value() {
                    let name = e.name();
                    if name == "a" {
                        link_depth = link_depth.saturating_sub(1);
                    }
                    if BLOCK.contains(&name) {
                        flush(&mut cur, &mut blocks, opts);
                    }
                    stack.pop();
                    if BLOCK.contains(&name) {
                        cur.path = stack.join("/");
                    }
                }
            }
        }
    }
    flush(&mut cur, &mut blocks, opts);
    promote_short(&mut blocks);
    blocks
}

fn promote_short(blocks: &mut [TextBlock]) {
    let classes: Vec<BlockClass> = blocks.iter().map(|b| b.classification).collect();
    let neighbour =
        |range: &mut dyn Iterator<Item = usize>| range.map(|j| classes[j]).find(|c| *c != BlockClass::Short);
    for i in 0..blocks.len() {
        if classes[i] != BlockClass::Short {
            continue;
        }
        let prev = neighbour(&mut (0..i).rev());
        let next = neighbour(&mut (i + 1..classes.len()));
        if prev == Some(BlockClass::Good) || next == Some(BlockClass::Good) {
            blocks[i].classification = BlockClass::Good;
        }
    }
}

/// Good blocks, newline-separated, in document order.
pub fn page_text(blocks: &[TextBlock]) -> String {
    blocks
        .iter()
        .filter(|b| b.classification == BlockClass::Good)
        .map(|b| b.text.as_str())
        .collect::<Vec<_>>()
        .join("\n")
}

/// Canonical absolute http(s) targets of all `<a href>` elements, first
/// occurrence order, honouring `<base href>`.
pub fn extract_links(html: &str, page_url: &Url) -> Vec<Url> {
    let doc = Html::parse_document(html);
    let base_sel = scraper::Selector::parse("base[href]").expect("static selector");
    let base = doc
        .select(&base_sel)
        .next()
        .and_then(|b| b.value().attr("href"))
        .and_then(|h| page_url.join(h).ok())
        .unwrap_or_else(|| page_url.clone());
    let a_sel = scraper::Selector::parse("a[href]").expect("static selector");
    let mut seen = std::collections::HashSet::new();
    doc.select(&a_sel)
        .filter_map(|a| a.value().attr("href"))
        .filter_map(|h| normalize_url(&base, h))
        .filter(|u| seen.insert(u.as_str().to_owned()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const PARA: &str = "Das isch en längere Abschnitt mit vill Text, wo kei Links het und drum sicher als guet gilt, will er meh als vierzg Zeiche lang isch und eifach wiitergaht bis zum Schluss vo dem Absatz.";

    #[test]
    fn nav_of_links_is_bad_or_dropped() {
        let html = r#"<body><div class="menu"><a href="/1">Home</a> <a href="/2">News</a> <a href="/3">Forum</a> <a href="/4">Kontakt</a> <a href="/5">Impressum</a></div></body>"#;
        let b = extract_blocks(html);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].link_density, 1.0);
        assert_eq!(b[0].classification, BlockClass::Bad);
        let nav = r#"<body><nav><a href="/1">Home</a></nav><p>x</p></body>"#;
        assert!(extract_blocks(nav).iter().all(|b| !b.text.contains("Home")));
    }

    #[test]
    fn long_paragraph_is_good() {
        let html = format!("<html><body><p>{PARA}</p></body></html>");
        let b = extract_blocks(&html);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].classification, BlockClass::Good);
        assert_eq!(b[0].tag_path, "html/body/p");
        assert_eq!(page_text(&b), PARA);
    }

    #[test]
    fn short_between_good_is_promoted() {
        let short = "Das isch churz, nume drissg.";
        let html = format!("<body><p>{PARA}</p><p>{short}</p><p>{PARA}</p></body>");
        let b = extract_blocks(&html);
        assert_eq!(b[1].text, short);
        assert_eq!(b[1].classification, BlockClass::Good);
        let lonely = format!("<body><p>{short}</p></body>");
        assert_eq!(extract_blocks(&lonely)[0].classification, BlockClass::Short);
        assert_eq!(page_text(&extract_blocks(&lonely)), "");
    }

    #[test]
    fn tables_scripts_and_hidden_dropped() {
        let html = format!(
            "<body><table><tr><td>{PARA} TABLE</td></tr></table><script>var x = '{PARA}';</script>\
             <header>{PARA} HEAD</header><footer>{PARA} FOOT</footer>\
             <p>{PARA} <span style=\"display: none\">VERSTECKT</span></p><div hidden>{PARA} HIDDEN</div></body>"
        );
        let text = page_text(&extract_blocks(&html));
        assert_eq!(text, PARA);
        for bad in ["TABLE", "var x", "HEAD", "FOOT", "VERSTECKT", "HIDDEN"] {
            assert!(!text.contains(bad), "{bad}");
        }
    }

    #[test]
    fn inline_markup_stays_in_block() {
        let html = "<p>Mir <b>gönd</b> <i>hüt</i> go <a href='/x'>schwimme</a> im See und nachher ässe mer no öppis Feins.</p>";
        let b = extract_blocks(html);
        assert_eq!(b.len(), 1);
        assert_eq!(
            b[0].text,
            "Mir gönd hüt go schwimme im See und nachher ässe mer no öppis Feins."
        );
        assert!(b[0].link_density > 0.0 && b[0].link_density < 0.4);
    }

    #[test]
    fn br_splits_blocks() {
        let b = extract_blocks("<div>erschti Zile<br>zweiti Zile</div>");
        let texts: Vec<&str> = b.iter().map(|b| b.text.as_str()).collect();
        assert_eq!(texts, ["erschti Zile", "zweiti Zile"]);
    }

    #[test]
    fn empty_and_garbage() {
        assert!(extract_blocks("").is_empty());
        assert_eq!(page_text(&[]), "");
        let _ = extract_blocks("<<<>>><p><div></p></span>&&&");
    }

    #[test]
    fn links_resolved_and_deduplicated() {
        let page = Url::parse("http://a.ch/dir/page.html").unwrap();
        let html = r#"<a href="x.html#top">1</a><a href="x.html">2</a><a href="mailto:a@b.ch">m</a><a href="HTTP://B.CH/?b=1&a=2">3</a>"#;
        let links: Vec<String> = extract_links(html, &page).into_iter().map(String::from).collect();
        assert_eq!(links, ["http://a.ch/dir/x.html", "http://b.ch/?a=2&b=1"]);
        let based = r#"<head><base href="http://c.ch/base/"></head><a href="y">y</a>"#;
        assert_eq!(extract_links(based, &page)[0].as_str(), "http://c.ch/base/y");
    }

    #[test]
    fn charset_decoding() {
        let latin1 = b"<p>Gr\xfcezi mitenand</p>";
        assert!(decode_body(latin1, "text/html; charset=iso-8859-1").contains("Grüezi"));
        let meta = b"<html><head><meta charset=\"windows-1252\"></head><p>Gr\xfcezi \x93jo\x94</p>";
        assert!(decode_body(meta, "text/html").contains("Grüezi “jo”"));
        let equiv = b"<meta http-equiv=\"Content-Type\" content=\"text/html; charset=ISO-8859-1\"><p>Gr\xfcezi</p>";
        assert!(decode_body(equiv, "").contains("Grüezi"));
        assert!(decode_body("Grüezi".as_bytes(), "text/html").contains("Grüezi"));
        let bom = [b"\xef\xbb\xbf".as_slice(), "Hoi".as_bytes()].concat();
        assert_eq!(decode_body(&bom, "text/html; charset=latin1"), "Hoi");
        let sniffed = "Grüezi mitenand, wie gaht's dir hüt? Mir gaht's guet, merci vilmal. Chömed ihr au?"
            .chars()
            .map(|c| c as u32 as u8)
            .collect::<Vec<u8>>();
        assert!(decode_body(&sniffed, "").contains("Grüezi"));
    }

    #[test]
    fn content_types() {
        assert!(is_textual("text/html; charset=utf-8"));
        assert!(is_textual(""));
        assert!(!is_textual("application/pdf"));
        assert!(!is_textual("image/jpeg"));
    }
}
