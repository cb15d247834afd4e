//! Documents with hierarchical summary chains, evaluation pairs, and scoring.
//!
//! A corpus file holds one JSON object per line:
//! `{"id": "...", "text": "...", "summaries": [{"level": 1, "text": "..."}, ...]}`.
//! Level 1 summarizes the text and level `n >= 2` summarizes level `n - 1`.
//! Level 0 refers to the original text throughout this module.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine, embed, EmbedError, Embedder, EmbeddingVector};
use crate::metric::{noir_score, CompressionRatio, MetricConfig, MetricError, NoirScore, SimilarityScore};
use crate::parallel::Execution;
use crate::tokencount::{TokenCounter, TokenError};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("duplicate document id `{id}` on line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("document `{id}`: expected summary level {expected}, found {found}")]
    LevelGap { id: String, expected: u32, found: u32 },
    #[error("document `{id}`: empty text at level {level}")]
    EmptyText { id: String, level: u32 },
    #[error("need at least two documents with level-1 summaries, found {0}")]
    InsufficientCorpus(usize),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("pair {pair}: unknown document `{id}`")]
    UnknownDocument { pair: String, id: String },
    #[error("pair {pair}: document `{id}` has no level {level}")]
    MissingLevel { pair: String, id: String, level: u32 },
    #[error("pair {pair}: {source}")]
    Tokens { pair: String, source: TokenError },
    #[error("pair {pair}: {source}")]
    Embedding { pair: String, source: EmbedError },
    #[error("pair {pair}: {source}")]
    Metric { pair: String, source: MetricError },
    #[error("{0}")]
    Input(String),
}

impl ScoreError {
    /// True when the failure came from the embedding backend rather than the input.
    pub fn is_backend(&self) -> bool {
        matches!(
            self,
            ScoreError::Embedding {
                source: EmbedError::BackendUnavailable(_) | EmbedError::DimensionMismatch { .. },
                ..
            }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub level: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub summaries: Vec<Summary>,
}

impl Document {
    /// Text at `level`, where 0 is the original text.
    pub fn text_at(&self, level: u32) -> Option<&str> {
        match level {
            0 => Some(&self.text),
            n => self.summaries.get(n as usize - 1).map(|s| s.text.as_str()),
        }
    }

    pub fn depth(&self) -> u32 {
        self.summaries.len() as u32
    }

    fn validate(&self) -> Result<(), CorpusError> {
        if self.text.is_empty() {
            return Err(CorpusError::EmptyText {
                id: self.id.clone(),
                level: 0,
            });
        }
        for (i, s) in self.summaries.iter().enumerate() {
            let expected = i as u32 + 1;
            if s.level != expected {
                return Err(CorpusError::LevelGap {
                    id: self.id.clone(),
                    expected,
                    found: s.level,
                });
            }
            if s.text.is_empty() {
                return Err(CorpusError::EmptyText {
                    id: self.id.clone(),
                    level: s.level,
                });
            }
        }
        Ok(())
    }
}

/// Collapse every whitespace run to a single space and trim the ends.
pub fn clean_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn parse_corpus<R: BufRead>(reader: R) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut doc: Document = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: lineno,
            reason: e.to_string(),
        })?;
        doc.text = clean_text(&doc.text);
        for s in &mut doc.summaries {
            s.text = clean_text(&s.text);
        }
        doc.validate()?;
        if !seen.insert(doc.id.clone()) {
            return Err(CorpusError::DuplicateId {
                id: doc.id,
                line: lineno,
            });
        }
        docs.push(doc);
    }
    if docs.is_empty() {
        return Err(CorpusError::Parse {
            line: 0,
            reason: "corpus contains no documents".into(),
        });
    }
    Ok(docs)
}

pub fn load_corpus(path: &Path) -> Result<Vec<Document>, CorpusError> {
    let file = std::fs::File::open(path)?;
    parse_corpus(std::io::BufReader::new(file))
}

pub fn write_corpus<W: Write>(mut writer: W, docs: &[Document]) -> Result<(), CorpusError> {
    for d in docs {
        serde_json::to_writer(&mut writer, d).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// One (parent, candidate) comparison.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EvalPair {
    pub parent_id: String,
    pub parent_level: u32,
    pub candidate_id: String,
    pub candidate_level: u32,
    pub is_null: bool,
}

impl fmt::Display for EvalPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}@{}->{}@{}",
            self.parent_id, self.parent_level, self.candidate_id, self.candidate_level
        )
    }
}

/// What a summary is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PairAnchor {
    /// Each level against the level it summarizes.
    #[default]
    Immediate,
    /// Each level against the original text.
    Root,
}

pub fn true_pairs(docs: &[Document], anchor: PairAnchor) -> Vec<EvalPair> {
    docs.iter()
        .flat_map(|d| {
            (1..=d.depth()).map(move |level| EvalPair {
                parent_id: d.id.clone(),
                parent_level: match anchor {
                    PairAnchor::Immediate => level - 1,
                    PairAnchor::Root => 0,
                },
                candidate_id: d.id.clone(),
                candidate_level: level,
                is_null: false,
            })
        })
        .collect()
}

/// Pair original texts with level-1 summaries of other documents.
pub fn null_pairs(docs: &[Document], trials: usize, seed: u64) -> Result<Vec<EvalPair>, CorpusError> {
    let donors: Vec<usize> = (0..docs.len()).filter(|&i| docs[i].depth() >= 1).collect();
    if docs.len() < 2 || donors.len() < 2 {
        return Err(CorpusError::InsufficientCorpus(donors.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(trials);
    while pairs.len() < trials {
        let parent = rng.random_range(0..docs.len());
        let candidate = donors[rng.random_range(0..donors.len())];
        if candidate == parent {
            continue;
        }
        pairs.push(EvalPair {
            parent_id: docs[parent].id.clone(),
            parent_level: 0,
            candidate_id: docs[candidate].id.clone(),
            candidate_level: 1,
            is_null: true,
        });
    }
    Ok(pairs)
}

/// Token counts, similarity and score for one comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub tokens_parent: u64,
    pub tokens_candidate: u64,
    pub similarity: SimilarityScore,
    pub noir: NoirScore,
}

impl PairScore {
    pub fn ratio(&self) -> CompressionRatio {
        CompressionRatio::from_counts(self.tokens_candidate, self.tokens_parent)
            .expect("scored pairs always have nonzero counts")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub pair: EvalPair,
    pub score: PairScore,
}

impl ScoredPair {
    pub fn ratio(&self) -> f64 {
        self.score.ratio().value()
    }

    pub fn noir(&self) -> f64 {
        self.score.noir.value
    }
}

/// Counts and vectors already in hand; scoring is then pure arithmetic.
#[derive(Debug, Clone, Copy)]
pub struct PreparedPair<'a> {
    pub tokens_parent: u64,
    pub tokens_candidate: u64,
    pub parent: &'a EmbeddingVector,
    pub candidate: &'a EmbeddingVector,
}

pub fn score_prepared(p: &PreparedPair<'_>, cfg: &MetricConfig) -> Result<PairScore, ScoreError> {
    let wrap_e = |source| ScoreError::Embedding {
        pair: String::new(),
        source,
    };
    let wrap_m = |source| ScoreError::Metric {
        pair: String::new(),
        source,
    };
    let ratio = CompressionRatio::from_counts(p.tokens_candidate, p.tokens_parent).map_err(wrap_m)?;
    let similarity = SimilarityScore::new(cosine(p.parent, p.candidate).map_err(wrap_e)?, cfg).map_err(wrap_m)?;
    Ok(PairScore {
        tokens_parent: p.tokens_parent,
        tokens_candidate: p.tokens_candidate,
        similarity,
        noir: noir_score(ratio, similarity, cfg),
    })
}

pub fn score_batch(pairs: &[PreparedPair<'_>], cfg: &MetricConfig) -> Result<Vec<PairScore>, ScoreError> {
    score_batch_with(Execution::default(), pairs, cfg)
}

pub fn score_batch_with(
    exec: Execution,
    pairs: &[PreparedPair<'_>],
    cfg: &MetricConfig,
) -> Result<Vec<PairScore>, ScoreError> {
    exec.try_map(pairs, |p| score_prepared(p, cfg))
}

/// Token counter, embedding backend and metric parameters bundled together.
#[derive(Clone)]
pub struct Scorer {
    counter: TokenCounter,
    backend: Arc<dyn Embedder>,
    cfg: MetricConfig,
    exec: Execution,
}

impl fmt::Debug for Scorer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Scorer")
            .field("counter", self.counter.spec())
            .field("backend", &self.backend.profile().backend_id)
            .field("cfg", &self.cfg)
            .finish()
    }
}

impl Scorer {
    pub fn new(counter: TokenCounter, backend: Arc<dyn Embedder>, cfg: MetricConfig) -> Self {
        Self {
            counter,
            backend,
            cfg,
            exec: Execution::default(),
        }
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn config(&self) -> &MetricConfig {
        &self.cfg
    }

    pub fn backend(&self) -> &dyn Embedder {
        self.backend.as_ref()
    }

    pub fn counter(&self) -> &TokenCounter {
        &self.counter
    }

    /// Score one candidate against `text`. Both are whitespace-cleaned first.
    pub fn score_texts(&self, text: &str, candidate: &str) -> Result<PairScore, ScoreError> {
        let mut scores = self.score_candidates(text, &[candidate])?;
        Ok(scores.remove(0))
    }

    /// Score several candidates against one text, embedding everything in a single call.
    pub fn score_candidates<S: AsRef<str>>(&self, text: &str, candidates: &[S]) -> Result<Vec<PairScore>, ScoreError> {
        let label = |i: usize| if i == 0 { "text".to_string() } else { format!("candidate {}", i - 1) };
        let texts: Vec<String> = std::iter::once(clean_text(text))
            .chain(candidates.iter().map(|c| clean_text(c.as_ref())))
            .collect();
        if let Some(i) = texts.iter().position(|t| t.is_empty()) {
            return Err(ScoreError::Input(format!("{} is empty", label(i))));
        }
        let counts = self
            .exec
            .try_map(&texts, |t| self.counter.count(t))
            .map_err(|source| ScoreError::Tokens { pair: label(0), source })?;
        let vectors = embed(self.backend.as_ref(), &texts)
            .map_err(|source| ScoreError::Embedding {
                pair: label(embed_error_index(&source).unwrap_or(0)),
                source,
            })?
            .vectors;
        (1..texts.len())
            .map(|i| {
                score_prepared(
                    &PreparedPair {
                        tokens_parent: counts[0],
                        tokens_candidate: counts[i],
                        parent: &vectors[0],
                        candidate: &vectors[i],
                    },
                    &self.cfg,
                )
                .map_err(|e| relabel(e, label(i)))
            })
            .collect()
    }

    /// Score `pairs` against `docs`, embedding and counting each distinct text once.
    pub fn score_pairs(&self, pairs: &[EvalPair], docs: &[Document]) -> Result<Vec<ScoredPair>, ScoreError> {
        let by_id: HashMap<&str, &Document> = docs.iter().map(|d| (d.id.as_str(), d)).collect();
        let mut slot_of: HashMap<(&str, u32), usize> = HashMap::new();
        let mut texts: Vec<&str> = Vec::new();
        let mut first_user: Vec<usize> = Vec::new();
        let mut slots = Vec::with_capacity(pairs.len());
        for (pi, pair) in pairs.iter().enumerate() {
            let mut resolve = |id: &'_ str, level: u32| -> Result<usize, ScoreError> {
                let doc = by_id.get(id).ok_or_else(|| ScoreError::UnknownDocument {
                    pair: pair.to_string(),
                    id: id.to_string(),
                })?;
                let key = (doc.id.as_str(), level);
                if let Some(&s) = slot_of.get(&key) {
                    return Ok(s);
                }
                let text = doc.text_at(level).ok_or_else(|| ScoreError::MissingLevel {
                    pair: pair.to_string(),
                    id: id.to_string(),
                    level,
                })?;
                texts.push(text);
                first_user.push(pi);
                slot_of.insert(key, texts.len() - 1);
                Ok(texts.len() - 1)
            };
            let parent = resolve(&pair.parent_id, pair.parent_level)?;
            let candidate = resolve(&pair.candidate_id, pair.candidate_level)?;
            slots.push((parent, candidate));
        }

        let counts: Vec<Result<u64, TokenError>> = self.exec.map(&texts, |t| self.counter.count(t));
        let counts = counts
            .into_iter()
            .enumerate()
            .map(|(slot, r)| {
                r.map_err(|source| ScoreError::Tokens {
                    pair: pairs[first_user[slot]].to_string(),
                    source,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let vectors = embed(self.backend.as_ref(), &texts)
            .map_err(|source| {
                let pi = embed_error_index(&source).map(|s| first_user[s]).unwrap_or(0);
                ScoreError::Embedding {
                    pair: pairs.get(pi).map(ToString::to_string).unwrap_or_default(),
                    source,
                }
            })?
            .vectors;

        let prepared: Vec<PreparedPair<'_>> = slots
            .iter()
            .map(|&(p, c)| PreparedPair {
                tokens_parent: counts[p],
                tokens_candidate: counts[c],
                parent: &vectors[p],
                candidate: &vectors[c],
            })
            .collect();
        let scores: Vec<Result<PairScore, ScoreError>> = self.exec.map(&prepared, |p| score_prepared(p, &self.cfg));
        scores
            .into_iter()
            .zip(pairs)
            .map(|(r, pair)| {
                r.map(|score| ScoredPair {
                    pair: pair.clone(),
                    score,
                })
                .map_err(|e| relabel(e, pair.to_string()))
            })
            .collect()
    }
}

fn embed_error_index(e: &EmbedError) -> Option<usize> {
    match e {
        EmbedError::NonEmptyInput { index } | EmbedError::UnknownId { index, .. } => Some(*index),
        _ => None,
    }
}

fn relabel(e: ScoreError, pair: String) -> ScoreError {
    match e {
        ScoreError::Embedding { source, .. } => ScoreError::Embedding { pair, source },
        ScoreError::Metric { source, .. } => ScoreError::Metric { pair, source },
        ScoreError::Tokens { source, .. } => ScoreError::Tokens { pair, source },
        other => other,
    }
}

/// Column order of scored tables.
pub const SCORED_HEADER: [&str; 11] = [
    "parent_id",
    "candidate_id",
    "level",
    "is_null",
    "tokens_parent",
    "tokens_candidate",
    "ratio",
    "similarity_raw",
    "similarity_clamped",
    "noir",
    "saturated",
];

pub fn write_scored<W: Write>(writer: W, scored: &[ScoredPair]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SCORED_HEADER)?;
    for s in scored {
        let p = &s.pair;
        let sc = &s.score;
        w.write_record([
            p.parent_id.clone(),
            p.candidate_id.clone(),
            p.candidate_level.to_string(),
            p.is_null.to_string(),
            sc.tokens_parent.to_string(),
            sc.tokens_candidate.to_string(),
            s.ratio().to_string(),
            sc.similarity.raw().to_string(),
            sc.similarity.clamped().to_string(),
            sc.noir.value.to_string(),
            sc.noir.saturated.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Read a table written by [`write_scored`].
///
/// The parent level is not stored; it is reconstructed as 0 for null pairs
/// and `level - 1` otherwise.
pub fn read_scored<R: Read>(reader: R) -> Result<Vec<ScoredPair>, CorpusError> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers().map_err(csv_parse(1))?.clone();
    if header.iter().ne(SCORED_HEADER) {
        return Err(CorpusError::Parse {
            line: 1,
            reason: format!("unexpected header, expected {}", SCORED_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(csv_parse(line))?;
        let field = |k: usize| rec.get(k).unwrap_or_default();
        let bad = |what: &str| CorpusError::Parse {
            line,
            reason: format!("bad {what}"),
        };
        let num = |k: usize| field(k).parse::<f64>().map_err(|_| bad(SCORED_HEADER[k]));
        let int = |k: usize| field(k).parse::<u64>().map_err(|_| bad(SCORED_HEADER[k]));
        let flag = |k: usize| field(k).parse::<bool>().map_err(|_| bad(SCORED_HEADER[k]));
        let level = int(2)? as u32;
        let is_null = flag(3)?;
        let similarity = SimilarityScore::from_parts(num(7)?, num(8)?).map_err(|e| CorpusError::Parse {
            line,
            reason: e.to_string(),
        })?;
        let tokens_parent = int(4)?;
        let tokens_candidate = int(5)?;
        if tokens_parent == 0 || tokens_candidate == 0 {
            return Err(bad("token count (zero)"));
        }
        out.push(ScoredPair {
            pair: EvalPair {
                parent_id: field(0).to_string(),
                parent_level: if is_null { 0 } else { level.saturating_sub(1) },
                candidate_id: field(1).to_string(),
                candidate_level: level,
                is_null,
            },
            score: PairScore {
                tokens_parent,
                tokens_candidate,
                similarity,
                noir: NoirScore {
                    value: num(9)?,
                    power_p: 1.0,
                    saturated: flag(10)?,
                },
            },
        });
    }
    Ok(out)
}

pub fn load_scored(path: &Path) -> Result<Vec<ScoredPair>, CorpusError> {
    read_scored(std::fs::File::open(path)?)
}

fn csv_parse(line: usize) -> impl Fn(csv::Error) -> CorpusError {
    move |e| CorpusError::Parse {
        line: e.position().map(|p| p.line() as usize).unwrap_or(line),
        reason: e.to_string(),
    }
}
