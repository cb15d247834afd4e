//! NOIR arithmetic: log token compression divided by log semantic retention.
//!
//! Everything here is pure and allocation-free. Similarities are clamped to a
//! configurable floor before taking logarithms, and scores whose denominator
//! vanishes (similarity indistinguishable from 1) are capped and flagged as
//! saturated instead of producing infinities.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower clamp applied to raw similarities before `ln`.
pub const DEFAULT_SIMILARITY_FLOOR: f64 = 0.01;
/// Magnitude cap for saturated scores.
pub const DEFAULT_SATURATION_CAP: f64 = 1000.0;
/// Similarities at or above `1 - DEFAULT_TOP_EPSILON` are treated as perfect retention.
pub const DEFAULT_TOP_EPSILON: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("token count is zero (tokens_summary = {tokens_summary}, tokens_text = {tokens_text})")]
    ZeroTokens { tokens_summary: u64, tokens_text: u64 },
    #[error("compression ratio must be finite and positive, got {0}")]
    InvalidRatio(f64),
    #[error("similarity must lie in [-1, 1], got {0}")]
    SimilarityOutOfRange(f64),
    #[error("power p must lie in [0, 2], got {0}")]
    PowerOutOfRange(f64),
    #[error("score must be positive, got {0}")]
    NonPositiveScore(f64),
    #[error("invalid metric configuration: {0}")]
    InvalidConfig(String),
}

/// Clamping and saturation parameters shared by every score computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub similarity_floor: f64,
    pub saturation_cap: f64,
    pub top_epsilon: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            similarity_floor: DEFAULT_SIMILARITY_FLOOR,
            saturation_cap: DEFAULT_SATURATION_CAP,
            top_epsilon: DEFAULT_TOP_EPSILON,
        }
    }
}

impl MetricConfig {
    pub fn new(similarity_floor: f64, saturation_cap: f64) -> Result<Self, MetricError> {
        let cfg = Self {
            similarity_floor,
            saturation_cap,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        if !(self.similarity_floor > 0.0 && self.similarity_floor <= 0.1) {
            return Err(MetricError::InvalidConfig(format!(
                "similarity floor must be in (0, 0.1], got {}",
                self.similarity_floor
            )));
        }
        if !(self.saturation_cap > 0.0 && self.saturation_cap.is_finite()) {
            return Err(MetricError::InvalidConfig(format!(
                "saturation cap must be positive and finite, got {}",
                self.saturation_cap
            )));
        }
        if !(self.top_epsilon > 0.0 && self.top_epsilon < 0.5) {
            return Err(MetricError::InvalidConfig(format!(
                "top epsilon must be in (0, 0.5), got {}",
                self.top_epsilon
            )));
        }
        Ok(())
    }
}

/// Summary-to-parent token ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionRatio {
    value: f64,
    counts: Option<(u64, u64)>,
}

impl CompressionRatio {
    /// Exact ratio of two token counts. Both must be nonzero.
    pub fn from_counts(tokens_summary: u64, tokens_text: u64) -> Result<Self, MetricError> {
        if tokens_summary == 0 || tokens_text == 0 {
            return Err(MetricError::ZeroTokens {
                tokens_summary,
                tokens_text,
            });
        }
        Ok(Self {
            value: tokens_summary as f64 / tokens_text as f64,
            counts: Some((tokens_summary, tokens_text)),
        })
    }

    /// A ratio known only as a real number (e.g. read back from a table).
    pub fn from_value(value: f64) -> Result<Self, MetricError> {
        if !(value.is_finite() && value > 0.0) {
            return Err(MetricError::InvalidRatio(value));
        }
        Ok(Self {
            value,
            counts: None,
        })
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn tokens_summary(&self) -> Option<u64> {
        self.counts.map(|c| c.0)
    }

    pub fn tokens_text(&self) -> Option<u64> {
        self.counts.map(|c| c.1)
    }
}

/// Cosine similarity together with the clamped value used inside logarithms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScore {
    raw: f64,
    clamped: f64,
}

impl SimilarityScore {
    pub fn new(raw: f64, cfg: &MetricConfig) -> Result<Self, MetricError> {
        if !(-1.0..=1.0).contains(&raw) {
            return Err(MetricError::SimilarityOutOfRange(raw));
        }
        Ok(Self {
            raw,
            clamped: raw.max(cfg.similarity_floor).min(1.0),
        })
    }

    /// Rebuild a score from stored raw and clamped values.
    pub fn from_parts(raw: f64, clamped: f64) -> Result<Self, MetricError> {
        if !(-1.0..=1.0).contains(&raw) {
            return Err(MetricError::SimilarityOutOfRange(raw));
        }
        if !(clamped > 0.0 && clamped <= 1.0) {
            return Err(MetricError::SimilarityOutOfRange(clamped));
        }
        Ok(Self { raw, clamped })
    }

    pub fn raw(&self) -> f64 {
        self.raw
    }

    pub fn clamped(&self) -> f64 {
        self.clamped
    }

    /// True when the floor raised the raw value.
    pub fn floored(&self) -> bool {
        self.clamped > self.raw
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoirScore {
    pub value: f64,
    pub power_p: f64,
    pub saturated: bool,
}

/// Canonical score: `ln(ratio) / ln(D)`.
///
/// A ratio of exactly 1 scores 0 whatever the similarity. When `D` is within
/// `top_epsilon` of 1 the score is pinned to `±saturation_cap`.
pub fn noir_score(ratio: CompressionRatio, similarity: SimilarityScore, cfg: &MetricConfig) -> NoirScore {
    let ln_ratio = ratio.value.ln();
    if ln_ratio == 0.0 {
        return NoirScore {
            value: 0.0,
            power_p: 1.0,
            saturated: false,
        };
    }
    let (ln_d, floored) = log_similarity(similarity);
    let (value, saturated) = match ln_d {
        Some(ln_d) if similarity.raw < 1.0 - cfg.top_epsilon => cap(ln_ratio / ln_d, cfg),
        _ => (-ln_ratio.signum() * cfg.saturation_cap, true),
    };
    NoirScore {
        value,
        power_p: 1.0,
        saturated: saturated || floored,
    }
}

/// Generalized score with the compression magnitude raised to `p`:
/// `sign(-ln ratio) * |ln ratio|^p / |ln D|`.
///
/// At `p = 1` this reproduces [`noir_score`] bitwise.
pub fn noir_score_powered(
    ratio: CompressionRatio,
    similarity: SimilarityScore,
    p: f64,
    cfg: &MetricConfig,
) -> Result<NoirScore, MetricError> {
    if !(0.0..=2.0).contains(&p) {
        return Err(MetricError::PowerOutOfRange(p));
    }
    let ln_ratio = ratio.value.ln();
    if ln_ratio == 0.0 {
        return Ok(NoirScore {
            value: 0.0,
            power_p: p,
            saturated: false,
        });
    }
    let sign = -ln_ratio.signum();
    let (ln_d, floored) = log_similarity(similarity);
    let (value, saturated) = match ln_d {
        Some(ln_d) if similarity.raw < 1.0 - cfg.top_epsilon => {
            cap(sign * ln_ratio.abs().powf(p) / ln_d.abs(), cfg)
        }
        _ => (sign * cfg.saturation_cap, true),
    };
    Ok(NoirScore {
        value,
        power_p: p,
        saturated: saturated || floored,
    })
}

/// Similarity retained per halving of length implied by a score: `exp(-ln 2 / M)`.
pub fn degradation_per_halving(noir: NoirScore, cfg: &MetricConfig) -> Result<SimilarityScore, MetricError> {
    if noir.value.is_nan() || noir.value <= 0.0 {
        return Err(MetricError::NonPositiveScore(noir.value));
    }
    SimilarityScore::new((-std::f64::consts::LN_2 / noir.value).exp(), cfg)
}

// `None` when the clamped similarity is exactly 1.
fn log_similarity(similarity: SimilarityScore) -> (Option<f64>, bool) {
    let ln_d = similarity.clamped.ln();
    ((ln_d < 0.0).then_some(ln_d), similarity.floored())
}

fn cap(value: f64, cfg: &MetricConfig) -> (f64, bool) {
    if value.abs() > cfg.saturation_cap {
        (value.signum() * cfg.saturation_cap, true)
    } else {
        (value, false)
    }
}
