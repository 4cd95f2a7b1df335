use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};
use sentharvest::extract::FetchOptions;
use sentharvest::lid::{
    evaluate, evaluate_where, load_corpus_dir, sample::bundled_sample, split_corpus, LanguageIdentifier, LidModel,
    SplitFractions, DEFAULT_ORDER, DEFAULT_SMOOTHING,
};
use sentharvest::linkfilter::{is_valid_domain, LinkRules};
use sentharvest::orchestrator::{iteration_reports, run_crawl, Harvester, IterationReport, Pipeline};
use sentharvest::seeder::{
    build_vocab, bundled_wordlists, filter_vocab, generate_seeds, load_wordlist, submit_seed, submitted_multisets,
    FixtureEngine, HtmlEngineConfig, HtmlResultsEngine, SearchEngine, SeedParams,
};
use sentharvest::sentfilter::{bundled_rules, check, load_rules};
use sentharvest::service::{serve_blocking, AppState};
use sentharvest::store::Store;
use sentharvest::{load_config, CrawlConfig};

/// Focused harvesting of target-language sentences from the web.
#[derive(Parser)]
#[command(name = "sentharvest", version)]
struct Cli {
    /// TOML configuration file; defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Crawl database.
    #[arg(long, global = true, default_value = "sentharvest.redb")]
    db: PathBuf,
    /// Language model file; the bundled sample is used when absent.
    #[arg(long, global = true)]
    lid_model: Option<PathBuf>,
    /// Link rules TOML replacing the bundled ones.
    #[arg(long, global = true)]
    link_rules: Option<PathBuf>,
    /// Filter rules TOML replacing the bundled ones.
    #[arg(long, global = true)]
    rules: Option<PathBuf>,
    /// Do not fetch or obey robots.txt.
    #[arg(long, global = true)]
    ignore_robots: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate seed queries and queue the URLs they return.
    Seed {
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[command(flatten)]
        engine: EngineArgs,
        #[arg(long, default_value_t = 0)]
        rng_seed: u64,
        /// Only print the queries.
        #[arg(long)]
        dry_run: bool,
        /// Extra stop-word lists (one word per line).
        #[arg(long)]
        wordlist: Vec<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Visit pending URLs.
    Crawl {
        #[arg(long)]
        max_pages: Option<usize>,
        #[arg(long)]
        json: bool,
    },
    /// One full seed, crawl and report cycle.
    Iterate {
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        #[command(flatten)]
        engine: EngineArgs,
        #[arg(long, default_value_t = 0)]
        rng_seed: u64,
        #[arg(long)]
        json: bool,
    },
    /// Write the corpus as CSV.
    Export {
        /// Minimum target probability; the configured export threshold by default.
        #[arg(long)]
        min_proba: Option<f64>,
        /// Output file; stdout when absent.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Corpus statistics.
    Stats {
        #[arg(long, default_value_t = 10)]
        top: usize,
        #[arg(long)]
        json: bool,
    },
    /// HTTP API and dashboard.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        bind: std::net::IpAddr,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Directory with the dashboard's static files.
        #[arg(long)]
        static_dir: Option<PathBuf>,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Train a language model on a corpus directory or the bundled sample.
    LidTrain {
        /// Directory of `<LABEL>.txt` files.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ORDER)]
        order: usize,
        #[arg(long, default_value_t = DEFAULT_SMOOTHING)]
        smoothing: f64,
        /// Train on the training split only.
        #[arg(long)]
        split: bool,
        #[arg(long, default_value_t = 7)]
        split_seed: u64,
    },
    /// Split a corpus, train, and report held-out accuracy.
    LidEval {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_ORDER)]
        order: usize,
        #[arg(long, default_value_t = DEFAULT_SMOOTHING)]
        smoothing: f64,
        #[arg(long, default_value_t = 7)]
        split_seed: u64,
        #[arg(long)]
        json: bool,
    },
    /// Class probabilities for sentences given as arguments or on stdin.
    LidPredict {
        sentences: Vec<String>,
        /// Mark sentences whose target probability reaches this value.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        json: bool,
    },
    /// Stop crawling a domain and cancel its pending URLs.
    BlacklistDomain { domain: String },
    /// Show which filter rules a sentence violates.
    FilterCheck {
        sentences: Vec<String>,
        #[arg(long)]
        json: bool,
    },
    /// Import bootstrap sentences (one per line) for seeding an empty corpus.
    Bootstrap { file: PathBuf },
}

#[derive(clap::Args)]
struct EngineArgs {
    /// `startpage`, a results-page config (`.toml`) or canned results (`.json`).
    #[arg(long, default_value = "startpage")]
    engine: String,
}

/// Exit status for bad configuration, arguments or input files.
const EXIT_CONFIG: u8 = 1;
/// Exit status for failures while running.
const EXIT_RUNTIME: u8 = 2;

/// Marks an error as a configuration problem.
#[derive(Debug)]
struct ConfigProblem(anyhow::Error);

impl std::fmt::Display for ConfigProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for ConfigProblem {}

fn bad(e: impl Into<anyhow::Error>) -> anyhow::Error {
    anyhow::Error::new(ConfigProblem(e.into()))
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<ConfigProblem>() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::from(EXIT_RUNTIME)
            }
        }
    }
}

fn config(cli: &Cli) -> Result<CrawlConfig> {
    match &cli.config {
        Some(p) => load_config(p)
            .with_context(|| format!("loading {}", p.display()))
            .map_err(bad),
        None => Ok(CrawlConfig::default()),
    }
}

fn pipeline(cli: &Cli) -> Result<Pipeline> {
    let mut p = match &cli.lid_model {
        Some(m) => Pipeline::new(Arc::new(
            LidModel::load(m)
                .with_context(|| format!("loading {}", m.display()))
                .map_err(bad)?,
        )),
        None => Pipeline::bundled()?,
    };
    if let Some(r) = &cli.link_rules {
        p.link_rules = LinkRules::load(r).map_err(bad)?;
    }
    if let Some(r) = &cli.rules {
        p.rules = load_rules(r).map_err(bad)?;
    }
    Ok(p)
}

fn open_store(path: &Path) -> Result<Store> {
    Store::open(path).with_context(|| format!("opening {}", path.display()))
}

fn engine(args: &EngineArgs, config: &CrawlConfig) -> Result<Arc<dyn SearchEngine>> {
    let e = &args.engine;
    let fetch = FetchOptions::from(config);
    let read = |e: &str| {
        std::fs::read_to_string(e)
            .with_context(|| format!("reading {e}"))
            .map_err(bad)
    };
    Ok(if e == "startpage" {
        Arc::new(HtmlResultsEngine::new(HtmlEngineConfig::startpage(), fetch))
    } else if e.ends_with(".json") {
        Arc::new(FixtureEngine::from_json(&read(e)?).map_err(bad)?)
    } else if e.ends_with(".toml") {
        Arc::new(HtmlResultsEngine::new(
            HtmlEngineConfig::from_toml_str(&read(e)?).map_err(bad)?,
            fetch,
        ))
    } else {
        return Err(bad(anyhow!(
            "unknown engine {e:?}: expected startpage, a .toml config or a .json fixture"
        )));
    })
}

/// One row per iteration, fixed-width columns.
fn print_iteration_table(reports: &[IterationReport]) {
    println!(
        "{:>4} {:>6} {:>7} {:>6} {:>7} {:>13} {:>11} {:>8} {:>9}",
        "iter", "seeds", "found", "good", "%good", "new sentences", "new domains", "new urls", "runtime"
    );
    for r in reports {
        println!(
            "{:>4} {:>6} {:>7} {:>6} {:>6.1}% {:>13} {:>11} {:>8} {:>8.1}s",
            r.id,
            r.seeds,
            r.urls_found,
            r.urls_good,
            r.percent_good,
            r.new_sentences,
            r.new_domains,
            r.new_urls,
            r.runtime_secs
        );
    }
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

/// Creating `<db>.stop` asks a running crawl to stop after its in-flight pages.
fn stop_file_watcher(db: &Path, cancel: Arc<AtomicBool>, done: Arc<AtomicBool>) -> std::thread::JoinHandle<()> {
    let stop = db.with_extension("stop");
    std::thread::spawn(move || {
        while !done.load(Ordering::SeqCst) {
            if stop.exists() {
                let _ = std::fs::remove_file(&stop);
                cancel.store(true, Ordering::SeqCst);
                eprintln!("stop requested, finishing in-flight pages");
            }
            std::thread::sleep(Duration::from_millis(200));
        }
    })
}

fn corpus(dir: &Option<PathBuf>) -> Result<sentharvest::lid::Corpus> {
    Ok(match dir {
        Some(d) => load_corpus_dir(d)
            .with_context(|| format!("reading {}", d.display()))
            .map_err(bad)?,
        None => bundled_sample(),
    })
}

fn input_lines(args: &[String]) -> Result<Vec<String>> {
    if !args.is_empty() {
        return Ok(args.to_vec());
    }
    let mut v = Vec::new();
    for l in std::io::stdin().lock().lines() {
        let l = l?;
        if !l.trim().is_empty() {
            v.push(l);
        }
    }
    Ok(v)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = config(&cli)?;
    cfg.ignore_robots |= cli.ignore_robots;
    match &cli.command {
        Command::Seed {
            count,
            engine: e,
            rng_seed,
            dry_run,
            wordlist,
            json,
        } => {
            let eng = if *dry_run { None } else { Some(engine(e, &cfg)?) };
            let store = open_store(&cli.db)?;
            let p = pipeline(&cli)?;
            let mut lists = bundled_wordlists();
            for w in wordlist {
                lists.push(load_wordlist(w).map_err(bad)?);
            }
            let vocab = filter_vocab(&build_vocab(&store)?, &lists);
            let params = SeedParams {
                word_count: cfg.seed_word_count,
                lid_threshold: cfg.seed_lid_threshold,
            };
            let batch = generate_seeds(&vocab, *count, *rng_seed, &*p.lid, params, &submitted_multisets(&store))?;
            for w in &batch.warnings {
                eprintln!("warning: {w}");
            }
            let mut rows = Vec::new();
            for mut q in batch.queries {
                let admitted = match &eng {
                    Some(eng) => submit_seed(
                        &mut q,
                        &**eng,
                        &store,
                        &p.link_rules,
                        cfg.seeds_urls_per_query,
                        cfg.politeness_delay(),
                    )?
                    .admitted
                    .len(),
                    None => 0,
                };
                if !json {
                    println!("{:.4}\t{}\t{admitted}", q.lid_proba, q.quoted());
                }
                rows.push(serde_json::json!({ "query": q, "admitted": admitted }));
            }
            if *json {
                print_json(&rows)?;
            }
        }
        Command::Crawl { max_pages, json } => {
            let store = open_store(&cli.db)?;
            let p = pipeline(&cli)?;
            let cancel = Arc::new(AtomicBool::new(false));
            let done = Arc::new(AtomicBool::new(false));
            let watcher = stop_file_watcher(&cli.db, cancel.clone(), done.clone());
            let started = Instant::now();
            let report = run_crawl(&store, &p, &cfg, *max_pages, cancel);
            done.store(true, Ordering::SeqCst);
            let _ = watcher.join();
            let mut report = report?;
            if *json {
                print_json(&report)?;
            } else {
                report.visits.clear();
                println!(
                    "visited {} saved {} blacklisted {} errors {} new sentences {} new urls {} in {:.1}s{}",
                    report.visited,
                    report.saved,
                    report.blacklisted,
                    report.errors,
                    report.new_sentences,
                    report.new_tasks,
                    started.elapsed().as_secs_f64(),
                    if report.cancelled { " (stopped)" } else { "" }
                );
            }
        }
        Command::Iterate {
            seeds,
            engine: e,
            rng_seed,
            json,
        } => {
            let store = Arc::new(open_store(&cli.db)?);
            let h = Harvester::new(store, Arc::new(pipeline(&cli)?), cfg.clone(), engine(e, &cfg)?)
                .with_rng_seed(*rng_seed);
            let cancel = Arc::new(AtomicBool::new(false));
            let done = Arc::new(AtomicBool::new(false));
            let watcher = stop_file_watcher(&cli.db, cancel.clone(), done.clone());
            let r = h.run_iteration(*seeds, cancel);
            done.store(true, Ordering::SeqCst);
            let _ = watcher.join();
            let r = r?;
            if *json {
                print_json(&r)?;
            } else {
                print_iteration_table(std::slice::from_ref(&r));
                for w in &r.warnings {
                    println!("  warning: {w}");
                }
            }
        }
        Command::Export { min_proba, out } => {
            let store = open_store(&cli.db)?;
            let min = min_proba.unwrap_or(cfg.export_lid_threshold);
            if !(0.0..=1.0).contains(&min) {
                return Err(bad(anyhow!("--min-proba must lie in [0, 1]")));
            }
            let n = match out {
                Some(path) => {
                    let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
                    store.export_csv(min, std::io::BufWriter::new(f))?
                }
                None => store.export_csv(min, std::io::stdout().lock())?,
            };
            eprintln!("exported {n} sentences");
        }
        Command::Stats { top, json } => {
            let store = open_store(&cli.db)?;
            let s = store.stats(*top);
            if *json {
                print_json(&serde_json::json!({ "corpus": s, "crawl": store.counts() }))?;
            } else {
                let c = store.counts();
                println!(
                    "sentences {}  urls {}  domains {}",
                    s.total_sentences, s.distinct_urls, s.distinct_domains
                );
                println!(
                    "tasks: pending {}  saved {}  visited {}  blacklisted {}  errors {}",
                    c.pending, c.saved, c.visited, c.blacklisted_urls, c.errored
                );
                println!("probability bins:");
                for b in &s.proba_bins {
                    println!("  {:>4} {}", b.bin, b.count);
                }
                println!(
                    "chars: mean {:.1} sd {:.1} median {:.1}  words: mean {:.1} sd {:.1} median {:.1}",
                    s.chars.mean, s.chars.std, s.chars.median, s.words.mean, s.words.std, s.words.median
                );
                println!("top domains:");
                for d in &s.top_domains {
                    println!(
                        "  {:<30} {:>6} sentences {:>5} urls {:>5.1}%",
                        d.domain, d.sentence_count, d.url_count, d.percent
                    );
                }
                let history = iteration_reports(&store);
                if !history.is_empty() {
                    println!("iterations:");
                    print_iteration_table(&history);
                }
            }
        }
        Command::Serve {
            bind,
            port,
            static_dir,
            engine: e,
        } => {
            let addr = &std::net::SocketAddr::new(*bind, *port);
            let store = Arc::new(open_store(&cli.db)?);
            let h = Harvester::new(store, Arc::new(pipeline(&cli)?), cfg.clone(), engine(e, &cfg)?);
            eprintln!("serving on http://{addr}");
            serve_blocking(*addr, AppState::new(Arc::new(h)), static_dir.clone())?;
        }
        Command::LidTrain {
            corpus: dir,
            out,
            order,
            smoothing,
            split,
            split_seed,
        } => {
            let mut c = corpus(dir)?;
            if *split {
                c = split_corpus(&c, SplitFractions::default(), *split_seed).0;
            }
            let m = LidModel::train(&c, *order, *smoothing)?;
            m.save(out)?;
            eprintln!("trained {} classes, target {}", m.classes().len(), m.target());
        }
        Command::LidEval {
            corpus: dir,
            order,
            smoothing,
            split_seed,
            json,
        } => {
            let started = Instant::now();
            let (train, _dev, test) = split_corpus(&corpus(dir)?, SplitFractions::default(), *split_seed);
            let m = LidModel::train(&train, *order, *smoothing)?;
            let all = evaluate(&m, &test)?;
            let short = evaluate_where(&m, &test, |s| s.split_whitespace().count() <= 5).ok();
            let secs = started.elapsed().as_secs_f64();
            if *json {
                print_json(&serde_json::json!({
                    "accuracy": all.accuracy,
                    "test_sentences": all.total,
                    "short_accuracy": short.as_ref().map(|e| e.accuracy),
                    "short_sentences": short.as_ref().map(|e| e.total),
                    "classes": all.classes,
                    "confusion": all.confusion,
                    "seconds": secs,
                }))?;
            } else {
                println!("accuracy {:.4} on {} test sentences", all.accuracy, all.total);
                if let Some(s) = short {
                    println!("accuracy {:.4} on {} sentences of at most 5 words", s.accuracy, s.total);
                }
                for (c, r) in all.classes.iter().zip(all.recall()) {
                    match r {
                        Some(r) => println!("  {c:<9} recall {r:.4}"),
                        None => println!("  {c:<9} recall n/a"),
                    }
                }
                println!("{secs:.2}s");
            }
        }
        Command::LidPredict {
            sentences,
            threshold,
            json,
        } => {
            if threshold.is_some_and(|t| !(0.0..=1.0).contains(&t)) {
                return Err(bad(anyhow!("--threshold must lie in [0, 1]")));
            }
            let p = match &cli.lid_model {
                Some(m) => LidModel::load(m).map_err(bad)?,
                None => LidModel::train(&bundled_sample(), DEFAULT_ORDER, DEFAULT_SMOOTHING)?,
            };
            let mut out = Vec::new();
            for s in input_lines(sentences)? {
                let d = p.predict(&s)?;
                let target = d.get(p.target()).unwrap_or(0.0);
                let accepted = threshold.map(|t| target >= t);
                if *json {
                    out.push(serde_json::json!({
                        "sentence": s,
                        "label": d.argmax(),
                        "target_proba": target,
                        "accepted": accepted,
                        "probs": d.iter().collect::<std::collections::BTreeMap<_, _>>(),
                    }));
                } else {
                    let mark = match accepted {
                        Some(true) => "\taccept",
                        Some(false) => "\treject",
                        None => "",
                    };
                    println!("{}\t{target:.4}{mark}\t{s}", d.argmax());
                }
            }
            if *json {
                print_json(&out)?;
            }
        }
        Command::BlacklistDomain { domain } => {
            let d = domain.trim().to_ascii_lowercase();
            if !is_valid_domain(&d) {
                return Err(bad(anyhow!("invalid domain {domain:?}")));
            }
            let store = open_store(&cli.db)?;
            let r = store.blacklist_domain(&d)?;
            println!(
                "{d}: {} pending urls cancelled{}",
                r.cancelled_tasks,
                if r.newly_added { "" } else { " (already blacklisted)" }
            );
        }
        Command::FilterCheck { sentences, json } => {
            let rules = match &cli.rules {
                Some(r) => load_rules(r).map_err(bad)?,
                None => bundled_rules(),
            };
            let mut out = Vec::new();
            let mut stdout = std::io::stdout().lock();
            for s in input_lines(sentences)? {
                let v = check(&s, &rules);
                if *json {
                    out.push(
                        serde_json::json!({ "sentence": s, "passed": v.passed, "failed_rules": v.failed_rule_ids }),
                    );
                } else if v.passed {
                    writeln!(stdout, "pass\t{s}")?;
                } else {
                    writeln!(stdout, "fail\t{}\t{s}", v.failed_rule_ids.join(","))?;
                }
            }
            if *json {
                drop(stdout);
                print_json(&out)?;
            }
        }
        Command::Bootstrap { file } => {
            let text = std::fs::read_to_string(file)
                .with_context(|| format!("reading {}", file.display()))
                .map_err(bad)?;
            let store = open_store(&cli.db)?;
            let n = store
                .add_bootstrap_sentences(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_owned))?;
            println!("{n} bootstrap sentences added");
        }
    }
    Ok(())
}
