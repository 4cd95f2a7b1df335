//! Fixture mini-web behind a local forward proxy.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use sentharvest::CrawlConfig;

pub fn miniweb_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/miniweb")
}

/// The planted target-language sentences.
pub fn expected_sentences() -> BTreeSet<String> {
    std::fs::read_to_string(miniweb_dir().join("expected.txt"))
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_owned)
        .collect()
}

/// Serves `tests/fixtures/miniweb/<host>/<path>.html` for absolute-form
/// proxy requests and logs every requested URL.
pub struct MiniWeb {
    pub proxy: String,
    log: Arc<Mutex<Vec<String>>>,
    server: Arc<tiny_http::Server>,
    handle: Option<JoinHandle<()>>,
}

fn resolve(url: &url::Url) -> Option<(PathBuf, &'static str)> {
    let host = url.host_str()?;
    let path = url.path().trim_start_matches('/');
    let base = miniweb_dir().join(host);
    if path == "robots.txt" {
        return Some((base.join("robots.txt"), "text/plain"));
    }
    let file = if path.is_empty() {
        base.join("index.html")
    } else {
        base.join(format!("{path}.html"))
    };
    let ctype = if host == "www.beiz.li" {
        "text/html"
    } else {
        "text/html; charset=utf-8"
    };
    Some((file, ctype))
}

impl MiniWeb {
    pub fn start() -> Self {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").unwrap());
        let proxy = format!("http://{}", server.server_addr().to_ip().unwrap());
        let log = Arc::new(Mutex::new(Vec::new()));
        let (s, l) = (server.clone(), log.clone());
        let handle = std::thread::spawn(move || {
            for req in s.incoming_requests() {
                let raw = req.url().to_owned();
                let url = if raw.starts_with("http") {
                    url::Url::parse(&raw).ok()
                } else {
                    let host = req
                        .headers()
                        .iter()
                        .find(|h| h.field.equiv("Host"))
                        .map(|h| h.value.to_string())
                        .unwrap_or_default();
                    url::Url::parse(&format!("http://{host}{raw}")).ok()
                };
                let Some(url) = url else {
                    let _ = req.respond(tiny_http::Response::empty(400));
                    continue;
                };
                l.lock().unwrap().push(url.to_string());
                match resolve(&url).and_then(|(f, ct)| std::fs::read(f).ok().map(|b| (b, ct))) {
                    Some((body, ct)) => {
                        let h = tiny_http::Header::from_bytes("Content-Type", ct).unwrap();
                        let _ = req.respond(tiny_http::Response::from_data(body).with_header(h));
                    }
                    None => {
                        let _ = req.respond(tiny_http::Response::from_string("not found").with_status_code(404));
                    }
                }
            }
        });
        Self {
            proxy,
            log,
            server,
            handle: Some(handle),
        }
    }

    /// URLs requested so far, robots files included.
    pub fn requests(&self) -> Vec<String> {
        self.log.lock().unwrap().clone()
    }

    /// Page requests only.
    pub fn page_requests(&self) -> Vec<String> {
        self.requests()
            .into_iter()
            .filter(|u| !u.ends_with("/robots.txt"))
            .collect()
    }

    /// Defaults plus the proxy.
    pub fn config(&self) -> CrawlConfig {
        CrawlConfig {
            http_proxy: Some(self.proxy.clone()),
            ..CrawlConfig::default()
        }
    }
}

impl Drop for MiniWeb {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

pub const SEEDS: [&str; 3] = ["http://www.dorf.ch/", "http://www.beiz.li/", "http://www.forum.ch/"];

use std::collections::HashMap;
use std::sync::atomic::AtomicBool;
use std::time::{Duration, Instant};

use sentharvest::orchestrator::{Harvester, IterationReport, Pipeline};
use sentharvest::seeder::FixtureEngine;
use sentharvest::store::Store;

/// Engine results: the seeds plus URLs that must not become tasks.
pub fn engine_results() -> Vec<String> {
    let mut v: Vec<String> = SEEDS.iter().map(|s| s.to_string()).collect();
    v.extend([
        "http://spam.ch/".to_owned(),
        "http://www.dorf.ch/?utm_source=search".to_owned(),
        "http://www.example.ru/".to_owned(),
    ]);
    v
}

pub const BOOTSTRAP: [&str; 6] = [
    "Hoi zäme, das isch mega gäbig gsi hüt.",
    "Mer händ nöd gwüsst, dass das so gäbig isch.",
    "Hüt isch es mega heiss gsi im Dorf.",
    "Das isch doch nöd so schlimm, gäll.",
    "Mer gönd hüt zäme go poschte im Dorf.",
    "Hoi, händ ihr hüt scho öppis gässe?",
];

pub struct FixtureRun {
    pub web: MiniWeb,
    pub store: Arc<Store>,
    pub report: IterationReport,
    pub engine: Arc<FixtureEngine>,
    pub harvester: Harvester,
    pub elapsed: Duration,
}

/// One seed-and-crawl iteration over the mini-web with default settings.
pub fn run_fixture_iteration() -> FixtureRun {
    let start = Instant::now();
    let web = MiniWeb::start();
    let store = Arc::new(Store::in_memory());
    store.blacklist_domain("spam.ch").unwrap();
    store
        .add_bootstrap_sentences(BOOTSTRAP.iter().map(|s| s.to_string()))
        .unwrap();
    let engine = Arc::new(FixtureEngine::new(HashMap::new(), 10).with_fallback(engine_results()));
    let pipeline = Arc::new(Pipeline::bundled().unwrap());
    let harvester = Harvester::new(store.clone(), pipeline, web.config(), engine.clone());
    let report = harvester.run_iteration(2, Arc::new(AtomicBool::new(false))).unwrap();
    FixtureRun {
        web,
        store,
        report,
        engine,
        harvester,
        elapsed: start.elapsed(),
    }
}
