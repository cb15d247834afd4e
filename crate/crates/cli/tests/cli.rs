mod common;

use std::collections::BTreeMap;
use std::path::Path;

use common::{csv_rows, noir, stderr, stdout};

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(dir: &Path) -> BTreeMap<String, String> {
    std::fs::read_to_string(dir.join("manifest.txt"))
        .unwrap()
        .lines()
        .map(|l| {
            let (k, v) = l.split_once(" = ").unwrap();
            (k.to_string(), v.to_string())
        })
        .collect()
}

#[test]
fn score_prints_single_row() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, tsv) = common::score_fixture(dir.path());
    let out = dir.path().join("out");
    let emb = format!("file:{}", tsv.display());
    let o = noir(&["score", "--text", s(&a), "--summary", s(&b), "--embedder", &emb, "--tokens", "whitespace", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&stdout(&o));
    assert_eq!(rows.len(), 1);
    let noir: f64 = rows[0]["noir"].parse().unwrap();
    assert!((noir - 1.357).abs() < 1e-3);
    assert_eq!(rows[0]["tokens_text"], "100");
    assert_eq!(rows[0]["tokens_summary"], "50");
    assert_eq!(rows[0]["saturated"], "false");

    let m = manifest(&out);
    assert_eq!(m["command"], "score");
    assert_eq!(m["toolkit_version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(m["embedder"], emb);
    assert_eq!(m["tokens"], "whitespace");
    assert_eq!(m["epsilon_d"], "0.01");
    assert_eq!(m["m_cap"], "1000");
    assert_eq!(m["seed"], "0");
    assert_eq!(m["status"], "ok");
}

#[test]
fn expcos_fit_prints_beta() {
    let dir = tempfile::tempdir().unwrap();
    let o = noir(&["expcos-fit", "--floor", "0.2", "--out", s(dir.path())]);
    assert!(o.status.success());
    let beta: f64 = csv_rows(&stdout(&o))[0]["beta"].parse().unwrap();
    assert!((beta - 0.66).abs() < 0.01);
    assert!(dir.path().join("expcos.svg").exists());
}

#[test]
fn empty_corpus_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("empty.jsonl");
    std::fs::write(&corpus, "").unwrap();
    let out = dir.path().join("out");
    let o = noir(&["batch", "--corpus", s(&corpus), "--embedder", "file:none.tsv", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("parse error"), "{}", stderr(&o));
    assert_eq!(manifest(&out)["status"], "error");
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(noir(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(noir(&["score", "--text", "a.txt"]).status.code(), Some(2));
    assert_eq!(noir(&["expcos-fit", "--floor", "lots"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        noir(&["expcos-fit", "--epsilon-d", "0.5", "--out", s(dir.path())]).status.code(),
        Some(2)
    );
}

#[test]
fn bad_embedder_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, _) = common::score_fixture(dir.path());
    let out = dir.path().join("out");
    let o = noir(&["score", "--text", s(&a), "--summary", s(&b), "--embedder", "file:/nonexistent.tsv", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    let o = noir(&["score", "--text", s(&a), "--summary", s(&b), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("NOIR_EMBED_URL"));
}

#[test]
fn embed_url_env_is_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, _) = common::score_fixture(dir.path());
    let out = dir.path().join("out");
    let o = std::process::Command::new(env!("CARGO_BIN_EXE_noir"))
        .args(["score", "--text", s(&a), "--summary", s(&b), "--out", s(&out)])
        .env("NOIR_EMBED_URL", "http://127.0.0.1:1")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("127.0.0.1:1"), "{}", stderr(&o));
}

#[test]
fn config_file_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    let out = dir.path().join("out");
    std::fs::write(&conf, format!("seed = 5\nm_cap = 50\nout = {}\n", out.display())).unwrap();
    let o = noir(&["expcos-fit", "--config", s(&conf)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = manifest(&out);
    assert_eq!((m["seed"].as_str(), m["m_cap"].as_str()), ("5", "50"));

    let o = noir(&["expcos-fit", "--config", s(&conf), "--seed", "9"]);
    assert!(o.status.success());
    assert_eq!(manifest(&out)["seed"], "9");

    std::fs::write(&conf, "colour = blue\n").unwrap();
    assert_eq!(noir(&["expcos-fit", "--config", s(&conf)]).status.code(), Some(2));
}

#[test]
fn bpe_counting_from_merges_file() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, tsv) = common::score_fixture(dir.path());
    let merges = dir.path().join("merges.txt");
    std::fs::write(&merges, "#version: 0.2\nt 1\n").unwrap();
    let out = dir.path().join("out");
    let emb = format!("file:{}", tsv.display());
    let o = noir(&[
        "score", "--text", s(&a), "--summary", s(&b), "--embedder", &emb, "--tokens", "bpe", "--vocab", s(&merges),
        "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let row = &csv_rows(&stdout(&o))[0];
    // each word is split into bytes except where `t 1` applies
    let expected: usize = (0..100)
        .map(|i: usize| {
            let w = format!("t{i}");
            if w.starts_with("t1") { w.len() - 1 } else { w.len() }
        })
        .sum();
    assert_eq!(row["tokens_text"], expected.to_string());
    assert!(manifest(&out)["tokens"].starts_with("bpe:"));

    assert_eq!(noir(&["score", "--text", s(&a), "--summary", s(&b), "--tokens", "bpe"]).status.code(), Some(2));
}

struct Pipeline {
    _dir: tempfile::TempDir,
    corpus: String,
    emb: String,
    root: std::path::PathBuf,
}

fn pipeline() -> Pipeline {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, tsv) = common::engineered(60, 3).write(dir.path());
    Pipeline {
        corpus: s(&corpus).to_string(),
        emb: format!("file:{}", tsv.display()),
        root: dir.path().to_path_buf(),
        _dir: dir,
    }
}

impl Pipeline {
    fn run(&self, out: &str, args: &[&str]) -> std::process::Output {
        let out = self.root.join(out);
        let mut full: Vec<&str> = args.to_vec();
        full.extend(["--embedder", &self.emb, "--out", s(&out)]);
        let o = noir(&full);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        o
    }

    fn out(&self, out: &str, file: &str) -> std::path::PathBuf {
        self.root.join(out).join(file)
    }
}

#[test]
fn full_report_pipeline() {
    let p = pipeline();
    let c = p.corpus.as_str();
    p.run("true", &["batch", "--corpus", c]);
    p.run("null", &["nullbase", "--corpus", c, "--trials", "400", "--seed", "4"]);
    assert_eq!(manifest(&p.root.join("null"))["seed"], "4");
    assert_eq!(manifest(&p.root.join("null"))["trials"], "400");

    let t = p.out("true", "scored_true.csv");
    let n = p.out("null", "scored_null.csv");
    let o = p.run("analysis", &["analyze", "--true", s(&t), "--null", s(&n)]);
    assert!(stdout(&o).contains("separation="));
    let sep: f64 = csv_rows(&std::fs::read_to_string(p.out("analysis", "separation.csv")).unwrap())[0]["value"]
        .parse()
        .unwrap();
    assert!(sep > 2.0, "separation {sep}");
    for f in ["distribution.csv", "distribution.svg", "trend.csv", "trend.svg"] {
        assert!(p.out("analysis", f).exists(), "{f}");
    }

    p.run("sweep", &["sweep-p", "--true", s(&t), "--null", s(&n)]);
    let sweep = csv_rows(&std::fs::read_to_string(p.out("sweep", "sweep.csv")).unwrap());
    assert_eq!(sweep.len(), 21);
    let at_one = sweep.iter().find(|r| r["p"] == "1").unwrap();
    assert_eq!(at_one["separation"].parse::<f64>().unwrap().to_bits(), sep.to_bits());

    p.run("root", &["batch", "--corpus", c, "--anchor", "root"]);
    let o = p.run("curve", &["curve", "--scored", s(&p.out("root", "scored_true.csv"))]);
    let curve = csv_rows(&stdout(&o));
    assert!(!curve.is_empty());
    // deeper compression keeps less of the meaning
    let means: Vec<f64> = curve.iter().map(|r| r["mean_similarity"].parse().unwrap()).collect();
    assert!(means.windows(2).all(|w| w[0] < w[1]), "{means:?}");

    let o = p.run("corr", &["corr-length", "--corpus", c]);
    assert!(stdout(&o).contains("max_abs_r="));
    assert_eq!(
        csv_rows(&std::fs::read_to_string(p.out("corr", "corr_length.csv")).unwrap()).len(),
        1 + 60 + 3 * 60
    );

    let o = p.run("audit", &["audit-embedder", "--corpus", c, "--trials", "300"]);
    assert!(stdout(&o).contains("PASS"));
    assert_eq!(manifest(&p.root.join("audit"))["verdict"], "PASS");
}

#[test]
fn bundle_and_human_ranks() {
    let p = pipeline();
    p.run("null", &["nullbase", "--corpus", &p.corpus, "--trials", "600"]);
    let scored = p.out("null", "scored_null.csv");
    p.run("bundle", &["bundle", "--scored", s(&scored)]);
    let rows = csv_rows(&std::fs::read_to_string(p.out("bundle", "bundle.csv")).unwrap());
    assert_eq!(rows.len(), 15);

    // a reviewer who agrees with the score ordering exactly
    let mut order: Vec<(usize, f64)> = rows
        .iter()
        .map(|r| (r["item"].parse().unwrap(), r["noir"].parse().unwrap()))
        .collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1));
    let ranks: String = std::iter::once("item,rank\n".to_string())
        .chain(order.iter().enumerate().map(|(rank, (item, _))| format!("{item},{}\n", rank + 1)))
        .collect();
    let ranks_path = p.root.join("ranks.csv");
    std::fs::write(&ranks_path, ranks).unwrap();
    let o = p.run("bundle2", &["bundle", "--scored", s(&scored), "--human-ranks", s(&ranks_path)]);
    assert!(stdout(&o).contains("spearman=1"), "{}", stdout(&o));

    // immediate-anchor ratios stay at or below 0.6, so the near-identity bin is empty
    p.run("true", &["batch", "--corpus", &p.corpus]);
    let o = noir(&[
        "bundle",
        "--scored",
        s(&p.out("true", "scored_true.csv")),
        "--bins",
        "halving",
        "--out",
        s(&p.root.join("bundle3")),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn identical_runs_are_byte_identical() {
    let p = pipeline();
    for out in ["a", "b"] {
        p.run(out, &["batch", "--corpus", &p.corpus]);
        p.run(&format!("{out}n"), &["nullbase", "--corpus", &p.corpus, "--trials", "300"]);
        p.run(&format!("{out}s"), &["batch", "--corpus", &p.corpus, "--sequential"]);
    }
    let read = |o: &str, f: &str| std::fs::read(p.out(o, f)).unwrap();
    assert_eq!(read("a", "scored_true.csv"), read("b", "scored_true.csv"));
    assert_eq!(read("an", "scored_null.csv"), read("bn", "scored_null.csv"));
    assert_eq!(read("a", "scored_true.csv"), read("as", "scored_true.csv"));
    assert_eq!(read("a", "manifest.txt"), read("b", "manifest.txt"));
}
