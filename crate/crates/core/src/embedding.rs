//! Unit-normalized text embeddings and the backends that produce them.
//!
//! Two backends ship with the crate:
//!
//! * [`PrecomputedEmbedder`] reads `<id>\t<v1> <v2> ...` records from a file
//!   (or an in-memory map). A text is looked up by its exact content first
//!   and by the lowercase hex SHA-256 of its content second.
//! * [`HttpEmbedder`] talks to a model server speaking the `POST /embed`
//!   protocol: `{"inputs": [...]}` in, `{"model", "dim", "embeddings"}` out.
//!
//! Both are `Send + Sync` and may be shared across threads behind an `Arc`.

use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::metric::{MetricConfig, MetricError, SimilarityScore};
use crate::stats::Moments;

/// Largest `|mean|` of random-pair similarity an embedder may show and still pass the audit.
pub const DEFAULT_SUITABILITY_THRESHOLD: f64 = 0.2;
pub const MIN_AUDIT_TEXTS: usize = 20;
pub const MIN_AUDIT_TRIALS: usize = 100;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("input {index} is empty")]
    NonEmptyInput { index: usize },
    #[error("embedding backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("no precomputed embedding for input {index} (`{shown}`)")]
    UnknownId { index: usize, shown: String },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("vector has zero or non-finite norm")]
    ZeroVector,
    #[error("embedding file {path}, line {line}: {reason}")]
    FileFormat { path: String, line: usize, reason: String },
    #[error("audit needs at least {MIN_AUDIT_TEXTS} texts and {MIN_AUDIT_TRIALS} trials (got {texts} texts, {trials} trials)")]
    InsufficientCorpus { texts: usize, trials: usize },
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// A semantic vector with unit Euclidean norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    components: Vec<f64>,
}

impl EmbeddingVector {
    pub fn normalized(mut components: Vec<f64>) -> Result<Self, EmbedError> {
        let norm = l2_norm(&components);
        if !(norm.is_finite() && norm > 0.0) {
            return Err(EmbedError::ZeroVector);
        }
        // already-unit vectors are left bit-for-bit untouched
        if (norm - 1.0).abs() > 1e-15 {
            components.iter_mut().for_each(|c| *c /= norm);
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn dimension(&self) -> usize {
        self.components.len()
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.components)
    }
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Dot product of two unit vectors, clipped to `[-1, 1]` against rounding drift.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    if a.dimension() != b.dimension() {
        return Err(EmbedError::DimensionMismatch {
            expected: a.dimension(),
            actual: b.dimension(),
        });
    }
    let dot: f64 = a.components.iter().zip(&b.components).map(|(x, y)| x * y).sum();
    Ok(dot.clamp(-1.0, 1.0))
}

pub fn cosine_similarity(
    a: &EmbeddingVector,
    b: &EmbeddingVector,
    cfg: &MetricConfig,
) -> Result<SimilarityScore, EmbedError> {
    Ok(SimilarityScore::new(cosine(a, b)?, cfg)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuitabilityAudit {
    pub trials: usize,
    pub seed: u64,
    pub random_mean: f64,
    pub random_std: f64,
    pub paraphrase_mean: Option<f64>,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderProfile {
    pub backend_id: String,
    pub dimension: usize,
    pub max_tokens: usize,
    pub suitability: Option<SuitabilityAudit>,
}

pub trait Embedder: Send + Sync {
    fn profile(&self) -> EmbedderProfile;

    /// Raw (possibly un-normalized) vectors, one per input, in order.
    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError>;
}

/// Vectors for a batch of inputs plus per-input truncation flags.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedded {
    pub vectors: Vec<EmbeddingVector>,
    pub truncated: Vec<bool>,
}

/// Embed `texts` in order. Inputs longer than the backend's `max_tokens`
/// whitespace tokens are cut to that length and flagged.
pub fn embed<S: AsRef<str>>(backend: &dyn Embedder, texts: &[S]) -> Result<Embedded, EmbedError> {
    let profile = backend.profile();
    let mut prepared = Vec::with_capacity(texts.len());
    let mut truncated = Vec::with_capacity(texts.len());
    for (index, text) in texts.iter().enumerate() {
        let text = text.as_ref();
        if text.trim().is_empty() {
            return Err(EmbedError::NonEmptyInput { index });
        }
        let (t, cut) = truncate_words(text, profile.max_tokens);
        if cut {
            log::warn!("input {index} exceeds {} tokens; truncated", profile.max_tokens);
        }
        prepared.push(t);
        truncated.push(cut);
    }
    let raw = backend.embed_raw(&prepared)?;
    if raw.len() != prepared.len() {
        return Err(EmbedError::BackendUnavailable(format!(
            "backend returned {} vectors for {} inputs",
            raw.len(),
            prepared.len()
        )));
    }
    let vectors = raw
        .into_iter()
        .map(|v| {
            if v.len() != profile.dimension {
                return Err(EmbedError::DimensionMismatch {
                    expected: profile.dimension,
                    actual: v.len(),
                });
            }
            EmbeddingVector::normalized(v)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Embedded { vectors, truncated })
}

fn truncate_words(text: &str, max_tokens: usize) -> (String, bool) {
    let mut words = text.split_whitespace();
    if words.clone().nth(max_tokens).is_none() {
        return (text.to_string(), false);
    }
    (words.by_ref().take(max_tokens).collect::<Vec<_>>().join(" "), true)
}

pub fn content_key(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// File- or map-backed embedder for tests and offline runs.
#[derive(Debug, Clone)]
pub struct PrecomputedEmbedder {
    backend_id: String,
    dimension: usize,
    max_tokens: usize,
    vectors: HashMap<String, EmbeddingVector>,
}

impl PrecomputedEmbedder {
    pub fn from_map<I, K>(backend_id: impl Into<String>, entries: I) -> Result<Self, EmbedError>
    where
        I: IntoIterator<Item = (K, Vec<f64>)>,
        K: Into<String>,
    {
        let mut vectors = HashMap::new();
        let mut dimension = None;
        for (key, v) in entries {
            let expected = *dimension.get_or_insert(v.len());
            if v.len() != expected {
                return Err(EmbedError::DimensionMismatch {
                    expected,
                    actual: v.len(),
                });
            }
            vectors.insert(key.into(), EmbeddingVector::normalized(v)?);
        }
        Ok(Self {
            backend_id: backend_id.into(),
            dimension: dimension.unwrap_or(1).max(1),
            max_tokens: usize::MAX,
            vectors,
        })
    }

    pub fn load(path: &Path) -> Result<Self, EmbedError> {
        let display = path.display().to_string();
        let source = std::fs::read_to_string(path)
            .map_err(|e| EmbedError::BackendUnavailable(format!("cannot read {display}: {e}")))?;
        let fail = |line: usize, reason: String| EmbedError::FileFormat {
            path: display.clone(),
            line,
            reason,
        };
        let mut entries = Vec::new();
        let mut dimension: Option<usize> = None;
        for (i, line) in source.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let (id, values) = line
                .split_once('\t')
                .ok_or_else(|| fail(i + 1, "missing tab between id and vector".into()))?;
            let v = values
                .split_whitespace()
                .map(|s| s.parse::<f64>().map_err(|e| fail(i + 1, format!("bad component `{s}`: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            if v.is_empty() {
                return Err(fail(i + 1, "empty vector".into()));
            }
            let expected = *dimension.get_or_insert(v.len());
            if v.len() != expected {
                return Err(fail(i + 1, format!("dimension {} differs from {expected}", v.len())));
            }
            entries.push((id.to_string(), v));
        }
        Self::from_map(format!("file:{display}"), entries).map_err(|e| match e {
            EmbedError::ZeroVector => fail(0, "zero vector in file".into()),
            other => other,
        })
    }

    pub fn with_max_tokens(mut self, max_tokens: usize) -> Self {
        self.max_tokens = max_tokens.max(1);
        self
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn lookup(&self, text: &str) -> Option<&EmbeddingVector> {
        self.vectors
            .get(text)
            .or_else(|| self.vectors.get(&content_key(text)))
    }
}

impl Embedder for PrecomputedEmbedder {
    fn profile(&self) -> EmbedderProfile {
        EmbedderProfile {
            backend_id: self.backend_id.clone(),
            dimension: self.dimension,
            max_tokens: self.max_tokens,
            suitability: None,
        }
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        texts
            .iter()
            .enumerate()
            .map(|(index, t)| {
                self.lookup(t)
                    .map(|v| v.components.clone())
                    .ok_or_else(|| EmbedError::UnknownId {
                        index,
                        shown: t.chars().take(40).collect(),
                    })
            })
            .collect()
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    inputs: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    model: String,
    dim: usize,
    embeddings: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct HttpOptions {
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub max_tokens: usize,
    pub timeout: Duration,
}

impl Default for HttpOptions {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_in_flight: 4,
            max_tokens: 512,
            timeout: Duration::from_secs(60),
        }
    }
}

/// Blocking client for a remote embedding server.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    endpoint: String,
    client: reqwest::blocking::Client,
    model: String,
    dimension: usize,
    options: HttpOptions,
}

impl HttpEmbedder {
    /// Connect and probe the server once to learn its model name and dimension.
    pub fn connect(base_url: &str, options: HttpOptions) -> Result<Self, EmbedError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(options.timeout)
            .build()
            .map_err(|e| EmbedError::BackendUnavailable(e.to_string()))?;
        let endpoint = format!("{}/embed", base_url.trim_end_matches('/'));
        let probe = post_batch(&client, &endpoint, &["dimension probe".to_string()])?;
        Ok(Self {
            endpoint,
            client,
            model: probe.model,
            dimension: probe.dim,
            options,
        })
    }

    pub fn model(&self) -> &str {
        &self.model
    }
}

fn post_batch(
    client: &reqwest::blocking::Client,
    endpoint: &str,
    inputs: &[String],
) -> Result<EmbedResponse, EmbedError> {
    let unavailable = |e: String| EmbedError::BackendUnavailable(format!("{endpoint}: {e}"));
    let resp = client
        .post(endpoint)
        .json(&EmbedRequest { inputs })
        .send()
        .map_err(|e| unavailable(e.to_string()))?;
    if !resp.status().is_success() {
        return Err(unavailable(format!("status {}", resp.status())));
    }
    let body: EmbedResponse = resp.json().map_err(|e| unavailable(format!("malformed body: {e}")))?;
    if body.embeddings.len() != inputs.len() {
        return Err(unavailable(format!(
            "{} embeddings for {} inputs",
            body.embeddings.len(),
            inputs.len()
        )));
    }
    if body.dim == 0 {
        return Err(unavailable("dim is 0".into()));
    }
    if let Some(v) = body.embeddings.iter().find(|v| v.len() != body.dim) {
        return Err(EmbedError::DimensionMismatch {
            expected: body.dim,
            actual: v.len(),
        });
    }
    Ok(body)
}

impl Embedder for HttpEmbedder {
    fn profile(&self) -> EmbedderProfile {
        EmbedderProfile {
            backend_id: format!("http:{}", self.endpoint),
            dimension: self.dimension,
            max_tokens: self.options.max_tokens,
            suitability: None,
        }
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let batches: Vec<&[String]> = texts.chunks(self.options.batch_size.max(1)).collect();
        let workers = self.options.max_in_flight.clamp(1, batches.len().max(1));
        let mut results: Vec<Option<Result<Vec<Vec<f64>>, EmbedError>>> = (0..batches.len()).map(|_| None).collect();
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let batches = &batches;
                    scope.spawn(move || {
                        (w..batches.len())
                            .step_by(workers)
                            .map(|i| {
                                let r = post_batch(&self.client, &self.endpoint, batches[i]).and_then(|resp| {
                                    if resp.dim != self.dimension {
                                        Err(EmbedError::DimensionMismatch {
                                            expected: self.dimension,
                                            actual: resp.dim,
                                        })
                                    } else {
                                        Ok(resp.embeddings)
                                    }
                                });
                                (i, r)
                            })
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("embedding worker panicked") {
                    results[i] = Some(r);
                }
            }
        });
        let mut out = Vec::with_capacity(texts.len());
        for r in results {
            out.extend(r.expect("every batch is assigned to a worker")?);
        }
        Ok(out)
    }
}

/// Check that random pairings of `texts` score near zero on average.
///
/// Samples `trials` ordered pairs `(i, j)` with `i != j` from a ChaCha8 stream
/// seeded with `seed`.
pub fn audit_suitability(
    backend: &dyn Embedder,
    texts: &[String],
    trials: usize,
    seed: u64,
    threshold: f64,
) -> Result<EmbedderProfile, EmbedError> {
    if texts.len() < MIN_AUDIT_TEXTS || trials < MIN_AUDIT_TRIALS {
        return Err(EmbedError::InsufficientCorpus {
            texts: texts.len(),
            trials,
        });
    }
    let vectors = embed(backend, texts)?.vectors;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = vectors.len();
    let sims = (0..trials)
        .map(|_| {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            cosine(&vectors[i], &vectors[j])
        })
        .collect::<Result<Vec<_>, _>>()?;
    let m = Moments::of(&sims);
    let mut profile = backend.profile();
    profile.suitability = Some(SuitabilityAudit {
        trials,
        seed,
        random_mean: m.mean,
        random_std: m.std,
        paraphrase_mean: None,
        threshold,
        pass: m.mean.abs() < threshold,
    });
    Ok(profile)
}

/// Mean similarity of known paraphrase pairs; should sit near 1 for a usable embedder.
pub fn paraphrase_mean(backend: &dyn Embedder, pairs: &[(String, String)]) -> Result<f64, EmbedError> {
    if pairs.is_empty() {
        return Err(EmbedError::InsufficientCorpus { texts: 0, trials: 0 });
    }
    let flat: Vec<&str> = pairs.iter().flat_map(|(a, b)| [a.as_str(), b.as_str()]).collect();
    let v = embed(backend, &flat)?.vectors;
    let sims = v
        .chunks(2)
        .map(|c| cosine(&c[0], &c[1]))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Moments::of(&sims).mean)
}
