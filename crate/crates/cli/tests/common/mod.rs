//! Engineered corpus shared by the CLI tests.
//!
//! Document roots sit on mutually orthogonal axes plus a small shared
//! component, so a root against another document's summary has similarity
//! `c * a_j * a_k` with `a` in [-0.2, 0.45]. Each summary level moves off its
//! parent along a fresh axis, so the parent-summary similarity is exactly the
//! chosen `c`. True-pair similarities follow `k^log2(1/ratio)` with a little
//! noise, kept inside [0.8, 0.95].

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Output;

use noir_core::corpus::{write_corpus, Summary};
use noir_core::embedding::content_key;
use noir_core::Document;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const LEVELS: u32 = 3;

pub struct Fixture {
    pub docs: Vec<Document>,
    /// (text, raw vector) for every text in the corpus.
    pub vectors: Vec<(String, Vec<f64>)>,
    /// Engineered similarity of each true pair, in corpus order.
    pub true_similarity: Vec<f64>,
}

fn words(doc: usize, level: u32, n: usize) -> String {
    (0..n).map(|j| format!("d{doc}l{level}w{j}")).collect::<Vec<_>>().join(" ")
}

pub fn engineered(n_docs: usize, seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f64, 0.02).unwrap();
    let dim = 1 + n_docs + LEVELS as usize * n_docs;
    let mut docs = Vec::new();
    let mut vectors = Vec::new();
    let mut true_similarity = Vec::new();
    for i in 0..n_docs {
        let a: f64 = rng.random_range(-0.2..0.45);
        let mut v = vec![0.0; dim];
        v[0] = a;
        v[1 + i] = (1.0 - a * a).sqrt();
        let mut len: usize = rng.random_range(400..800);
        let text = words(i, 0, len);
        vectors.push((text.clone(), v.clone()));
        let mut summaries = Vec::new();
        for level in 1..=LEVELS {
            let lo = (0.2 * len as f64).ceil() as usize;
            let hi = (0.6 * len as f64).floor() as usize;
            let n = ((rng.random_range(0.2..0.6) * len as f64).round() as usize).clamp(lo, hi);
            let ratio = n as f64 / len as f64;
            let k: f64 = rng.random_range(0.9..0.935);
            let c = loop {
                let c = k.powf((1.0 / ratio).log2()) * Distribution::<f64>::sample(&noise, &mut rng).exp();
                if (0.8..=0.95).contains(&c) {
                    break c;
                }
            };
            let s = (1.0 - c * c).sqrt();
            let fresh = 1 + n_docs + LEVELS as usize * i + (level as usize - 1);
            v = v.iter().map(|x| c * x).collect();
            v[fresh] = s;
            let t = words(i, level, n);
            vectors.push((t.clone(), v.clone()));
            summaries.push(Summary { level, text: t });
            true_similarity.push(c);
            len = n;
        }
        docs.push(Document {
            id: format!("doc{i:03}"),
            text,
            summaries,
        });
    }
    Fixture {
        docs,
        vectors,
        true_similarity,
    }
}

impl Fixture {
    /// Write `corpus.jsonl` and `vectors.tsv` (keyed by content hash) into `dir`.
    pub fn write(&self, dir: &Path) -> (PathBuf, PathBuf) {
        let corpus = dir.join("corpus.jsonl");
        write_corpus(std::fs::File::create(&corpus).unwrap(), &self.docs).unwrap();
        let tsv = dir.join("vectors.tsv");
        write_vectors(&tsv, &self.vectors);
        (corpus, tsv)
    }
}

pub fn write_vectors(path: &Path, vectors: &[(String, Vec<f64>)]) {
    let body: String = vectors
        .iter()
        .map(|(t, v)| {
            let nums: Vec<String> = v.iter().map(f64::to_string).collect();
            format!("{}\t{}\n", content_key(t), nums.join(" "))
        })
        .collect();
    std::fs::write(path, body).unwrap();
}

/// The (1,0) / (0.6,0.8) pair: 100-word text, 50-word summary.
pub fn score_fixture(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let text = (0..100).map(|i| format!("t{i}")).collect::<Vec<_>>().join(" ");
    let summary = (0..50).map(|i| format!("s{i}")).collect::<Vec<_>>().join(" ");
    let (a, b, tsv) = (dir.join("a.txt"), dir.join("b.txt"), dir.join("fix.tsv"));
    std::fs::write(&a, format!("{text}\n")).unwrap();
    std::fs::write(&b, format!("{summary}\n")).unwrap();
    write_vectors(&tsv, &[(text, vec![1.0, 0.0]), (summary, vec![0.6, 0.8])]);
    (a, b, tsv)
}

pub fn noir(args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_noir"))
        .args(args)
        .env_remove("NOIR_EMBED_URL")
        .output()
        .unwrap()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Parse a small CSV with a header into rows of (column -> cell).
pub fn csv_rows(body: &str) -> Vec<std::collections::BTreeMap<String, String>> {
    let mut lines = body.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    lines
        .map(|l| header.iter().map(|h| h.to_string()).zip(l.split(',').map(str::to_string)).collect())
        .collect()
}
