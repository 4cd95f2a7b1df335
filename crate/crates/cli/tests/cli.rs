use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

const BOOTSTRAP: &str = "\
Mir sind geschter z Züri gsi und händ es Gipfeli gässe.
Hüt isch s Wetter zimli schlächt, mer gönd nöd use.
Mini Grosi chunt morn zu üs in d Stube.
Chasch du mir bitte no es Stuck Brot gäh?
De Chef het gseit, mer müend hüt länger schaffe.
Im Winter gömmer albig uf de Bärg go schlittle.
I ha no nie so en feine Chäs gässe wie do.
Am Obe simmer no id Beiz gange und händ es Bier trunke.
D Chind spiele dusse im Schnee und sind mega luschtig.
Mer händ de ganz Tag i de Chuchi gstande und Rösti gmacht.
Öpper het mir verzellt, dass de Zug hüt nöd fahrt.
S Tram isch zimli voll gsi am Morge.
";

struct Env {
    dir: tempfile::TempDir,
}

impl Env {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn db(&self) -> PathBuf {
        self.path("corpus.redb")
    }

    fn write(&self, name: &str, body: &str) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    fn run(&self, args: &[&str]) -> Output {
        run_with_db(&self.db(), args)
    }

    fn json(&self, args: &[&str]) -> Value {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        serde_json::from_slice(&out.stdout).unwrap()
    }
}

fn run_with_db(db: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sentharvest"))
        .arg("--db")
        .arg(db)
        .args(args)
        .stdin(Stdio::null())
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn usage_and_config_errors_exit_with_one() {
    let env = Env::new();
    assert_eq!(env.run(&["--help"]).status.code(), Some(0));
    assert_eq!(env.run(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(env.run(&["stats", "--top", "many"]).status.code(), Some(1));

    let cfg = env.write("bad.toml", "max_dept = 2\n");
    let out = env.run(&["--config", cfg.to_str().unwrap(), "stats"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("max_dept"));

    let cfg = env.write("range.toml", "crawl_lid_threshold = 1.5\n");
    assert_eq!(
        env.run(&["--config", cfg.to_str().unwrap(), "stats"]).status.code(),
        Some(1)
    );

    assert_eq!(env.run(&["export", "--min-proba", "2"]).status.code(), Some(1));
    assert_eq!(
        env.run(&["lid-predict", "--threshold", "-0.1", "hoi"]).status.code(),
        Some(1)
    );
    assert_eq!(env.run(&["blacklist-domain", "not a domain"]).status.code(), Some(1));
    assert_eq!(env.run(&["bootstrap", "/no/such/file.txt"]).status.code(), Some(1));
    assert_eq!(env.run(&["seed", "--engine", "bing"]).status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_with_two() {
    let out = run_with_db(Path::new("/no/such/dir/corpus.redb"), &["stats"]);
    assert_eq!(out.status.code(), Some(2));
    let env = Env::new();
    // An empty corpus has no vocabulary to seed from.
    assert_eq!(env.run(&["seed", "--dry-run"]).status.code(), Some(2));
}

#[test]
fn filter_check_reports_rule_ids() {
    let env = Env::new();
    let v = env.json(&[
        "filter-check",
        "--json",
        "#a und #b sind da",
        "Das isch en ganz normale Satz.",
    ]);
    assert_eq!(v[0]["passed"], false);
    let failed: Vec<&str> = v[0]["failed_rules"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r.as_str().unwrap())
        .collect();
    assert!(failed.contains(&"max_hashtags"), "{failed:?}");
    assert_eq!(v[1]["passed"], true);

    let out = env.run(&["filter-check", "DER HUND BELLT jetzt"]);
    assert!(out.status.success());
    let line = stdout(&out);
    assert!(line.starts_with("fail\t") && line.contains("caps_ratio"), "{line}");

    let rules = env.write("rules.toml", "");
    let out = env.run(&["--rules", rules.to_str().unwrap(), "filter-check", "x"]);
    assert_eq!(stdout(&out), "pass\tx\n");
    let broken = env.write(
        "broken.toml",
        "[[rule]]\nid = \"r\"\nkind = \"count_bound\"\npattern = \"(\"\nmax = 1\n",
    );
    let out = env.run(&["--rules", broken.to_str().unwrap(), "filter-check", "x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rule r: invalid pattern"));
}

#[test]
fn lid_predict_applies_the_threshold() {
    let env = Env::new();
    let v = env.json(&[
        "lid-predict",
        "--json",
        "--threshold",
        "0.92",
        "Mer händ de ganz Tag i de Chuchi gstande und Rösti gmacht.",
        "The weather was really nice and we went for a long walk.",
    ]);
    assert_eq!(v[0]["label"], "GSW");
    assert_eq!(v[0]["accepted"], true);
    assert_eq!(v[1]["label"], "ENG");
    assert_eq!(v[1]["accepted"], false);
    let sum: f64 = v[0]["probs"]
        .as_object()
        .unwrap()
        .values()
        .map(|p| p.as_f64().unwrap())
        .sum();
    assert!((sum - 1.0).abs() < 1e-9);
}

#[test]
fn lid_train_writes_a_loadable_model() {
    let env = Env::new();
    let corpus = env.path("corpus");
    std::fs::create_dir(&corpus).unwrap();
    std::fs::write(corpus.join("GSW.txt"), "mir gönd hei\nhoi zäme\n").unwrap();
    std::fs::write(corpus.join("ENG.txt"), "we go home\nhello everyone\n").unwrap();
    let model = env.path("m.lid");
    let out = env.run(&[
        "lid-train",
        "--corpus",
        corpus.to_str().unwrap(),
        "-o",
        model.to_str().unwrap(),
        "--order",
        "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = env.json(&[
        "--lid-model",
        model.to_str().unwrap(),
        "lid-predict",
        "--json",
        "hoi zäme mir gönd",
    ]);
    assert_eq!(v[0]["label"], "GSW");
    let garbage = env.write("garbage.lid", "not a model");
    let out = env.run(&["--lid-model", garbage.to_str().unwrap(), "lid-predict", "hoi"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bootstrap_seed_blacklist_and_export() {
    let env = Env::new();
    let boot = env.write("boot.txt", BOOTSTRAP);
    let out = env.run(&["bootstrap", boot.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout(&out), "12 bootstrap sentences added\n");

    let dry = env.json(&["seed", "--dry-run", "--json", "--count", "3", "--rng-seed", "4"]);
    let queries = dry.as_array().unwrap();
    assert!(!queries.is_empty());
    for q in queries {
        assert_eq!(q["admitted"], 0);
        assert!(q["query"]["lid_proba"].as_f64().unwrap() >= 0.95);
        assert_eq!(q["query"]["words"].as_array().unwrap().len(), 3);
    }
    let words = |v: &Value| -> Vec<Value> {
        v.as_array()
            .unwrap()
            .iter()
            .map(|q| q["query"]["words"].clone())
            .collect()
    };
    let again = env.json(&["seed", "--dry-run", "--json", "--count", "3", "--rng-seed", "4"]);
    assert_eq!(words(&again), words(&dry));

    let engine = env.write(
        "engine.json",
        r#"{"fallback": ["http://www.dorf.ch/", "http://www.dorf.ch/verein", "http://www.beiz.li/", "http://x.example.ru/"]}"#,
    );
    let seeded = env.json(&["seed", "--json", "--count", "1", "--engine", engine.to_str().unwrap()]);
    assert_eq!(seeded[0]["admitted"], 3);
    assert_eq!(seeded[0]["query"]["status"], "submitted");
    let stats = env.json(&["stats", "--json"]);
    assert_eq!(stats["crawl"]["pending"], 3);
    assert_eq!(stats["corpus"]["total_sentences"], 0);

    let out = env.run(&["blacklist-domain", "DORF.ch"]);
    assert_eq!(stdout(&out), "dorf.ch: 2 pending urls cancelled\n");
    let out = env.run(&["blacklist-domain", "dorf.ch"]);
    assert_eq!(
        stdout(&out),
        "dorf.ch: 0 pending urls cancelled (already blacklisted)\n"
    );
    assert_eq!(env.json(&["stats", "--json"])["crawl"]["pending"], 1);

    let csv = env.path("out.csv");
    let out = env.run(&["export", "-o", csv.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(std::fs::read_to_string(&csv).unwrap(), "text,url,crawl_proba,date\n");
}

#[test]
fn zero_seed_iteration_prints_a_table() {
    let env = Env::new();
    let out = env.run(&["iterate", "--seeds", "0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2, "{text}");
    assert!(lines[0].contains("new sentences") && lines[0].contains("%good"));
    assert_eq!(lines[0].len(), lines[1].len(), "columns are aligned");
    let cols: Vec<&str> = lines[1].split_whitespace().collect();
    assert_eq!(&cols[..4], ["1", "0", "0", "0"]);

    let v = env.json(&["iterate", "--seeds", "0", "--json"]);
    assert_eq!(v["id"], 2);
    let stats = stdout(&env.run(&["stats"]));
    assert!(stats.contains("iterations:"), "{stats}");
}
