//! Distributional and regression analyses over scored pairs and embeddings.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ScoredPair;
use crate::embedding::EmbeddingVector;
use crate::metric::{noir_score_powered, MetricConfig, MetricError};
use crate::parallel::Execution;

pub const DEFAULT_HISTOGRAM_BINS: usize = 40;
pub const MIN_HISTOGRAM_BINS: usize = 5;
pub const MIN_EXPCOS_GRID: usize = 1000;

/// Fraction trimmed from each tail when choosing the histogram range.
const HISTOGRAM_TAIL: f64 = 0.005;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least {needed} values, got {got}")]
    InsufficientSample { needed: usize, got: usize },
    #[error("sample has zero spread")]
    DegenerateSample,
    #[error("x values are all equal")]
    DegenerateX,
    #[error("histogram needs at least {MIN_HISTOGRAM_BINS} bins, got {0}")]
    InvalidBins(usize),
    #[error("inputs have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("rankings do not cover the same items")]
    MismatchedItems,
    #[error("no pairs with ratio in [{lo}, {hi}]")]
    EmptyBin { lo: f64, hi: f64 },
    #[error("invalid ratio bin [{lo}, {hi}]")]
    InvalidBin { lo: f64, hi: f64 },
    #[error("percentile must be in [0, 100], got {0}")]
    InvalidPercentile(f64),
    #[error("similarity floor must be in (0, 1), got {0}")]
    InvalidFloor(f64),
    #[error("fit grid needs at least {MIN_EXPCOS_GRID} points, got {0}")]
    InvalidGrid(usize),
    #[error("vectors have inconsistent dimensions")]
    DimensionMismatch,
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Sample mean, sample standard deviation (n - 1) and standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub stderr: f64,
}

impl Moments {
    /// Standard deviation and standard error are 0 when `n < 2`; the mean is NaN when `n == 0`.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self {
            n,
            mean,
            std,
            stderr: if n == 0 { 0.0 } else { std / (n as f64).sqrt() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// `count / (n_total * width)`, comparable to a probability density.
    pub density: Vec<f64>,
}

impl Histogram {
    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Equal-width bins over `[lo, hi]`. Values outside the range still count toward
    /// the density normalization.
    pub fn build(values: &[f64], bins: usize, lo: f64, hi: f64) -> Self {
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
        let mut counts = vec![0usize; bins];
        for &v in values {
            if v < lo || v > hi {
                continue;
            }
            let k = (((v - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        let total = values.len() as f64;
        let density = counts.iter().map(|&c| c as f64 / (total * width)).collect();
        Self { edges, counts, density }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub stderr: f64,
    pub gauss_mu: f64,
    pub gauss_sigma: f64,
    pub gauss_mu_err: f64,
    pub histogram: Histogram,
}

impl DistributionSummary {
    pub fn moments(&self) -> Moments {
        Moments {
            n: self.n,
            mean: self.mean,
            std: self.std,
            stderr: self.stderr,
        }
    }
}

/// Sample moments plus a least-squares Gaussian fit to the density histogram.
///
/// The histogram spans the central 99% of the sample so that a few saturated
/// scores do not flatten every other bin.
pub fn summarize_distribution(values: &[f64], bins: usize) -> Result<DistributionSummary, StatsError> {
    if values.len() < 2 {
        return Err(StatsError::InsufficientSample {
            needed: 2,
            got: values.len(),
        });
    }
    if bins < MIN_HISTOGRAM_BINS {
        return Err(StatsError::InvalidBins(bins));
    }
    let m = Moments::of(values);
    if m.std == 0.0 {
        return Err(StatsError::DegenerateSample);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let last = sorted.len() - 1;
    let (mut lo, mut hi) = (
        sorted[(HISTOGRAM_TAIL * last as f64).floor() as usize],
        sorted[(((1.0 - HISTOGRAM_TAIL) * last as f64).ceil() as usize).min(last)],
    );
    if hi <= lo {
        (lo, hi) = (sorted[0], sorted[last]);
    }
    let histogram = Histogram::build(values, bins, lo, hi);

    let inside: Vec<f64> = sorted.iter().copied().filter(|v| (lo..=hi).contains(v)).collect();
    let start = Moments::of(&inside);
    let start_sigma = if start.std > 0.0 { start.std } else { m.std };
    let (gauss_mu, gauss_sigma, gauss_mu_err) = match fit_gaussian(&histogram.centers(), &histogram.density, start.mean, start_sigma) {
        Some(fit) => fit,
        None => {
            log::warn!("gaussian fit did not converge; reporting trimmed sample moments");
            (start.mean, start_sigma, m.stderr)
        }
    };
    Ok(DistributionSummary {
        n: m.n,
        mean: m.mean,
        std: m.std,
        stderr: m.stderr,
        gauss_mu,
        gauss_sigma,
        gauss_mu_err,
        histogram,
    })
}

fn gaussian_density(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// Levenberg-Marquardt on (mu, sigma). Returns (mu, sigma, stderr of mu).
fn fit_gaussian(x: &[f64], y: &[f64], mu0: f64, sigma0: f64) -> Option<(f64, f64, f64)> {
    let ssr = |mu: f64, sigma: f64| -> f64 {
        x.iter()
            .zip(y)
            .map(|(&xi, &yi)| (yi - gaussian_density(xi, mu, sigma)).powi(2))
            .sum()
    };
    let normal_eq = |mu: f64, sigma: f64| {
        let (mut a, mut g) = ([[0.0f64; 2]; 2], [0.0f64; 2]);
        for (&xi, &yi) in x.iter().zip(y) {
            let f = gaussian_density(xi, mu, sigma);
            let d = xi - mu;
            let j = [f * d / (sigma * sigma), f * (d * d / sigma.powi(3) - 1.0 / sigma)];
            let r = yi - f;
            for p in 0..2 {
                g[p] += j[p] * r;
                for q in 0..2 {
                    a[p][q] += j[p] * j[q];
                }
            }
        }
        (a, g)
    };

    let (mut mu, mut sigma) = (mu0, sigma0);
    let mut cost = ssr(mu, sigma);
    let mut lambda = 1e-3;
    for _ in 0..500 {
        let (a, g) = normal_eq(mu, sigma);
        let mut improved = false;
        while lambda < 1e12 {
            let m = [[a[0][0] * (1.0 + lambda), a[0][1]], [a[1][0], a[1][1] * (1.0 + lambda)]];
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            if det.abs() < f64::MIN_POSITIVE {
                lambda *= 10.0;
                continue;
            }
            let dmu = (g[0] * m[1][1] - g[1] * m[0][1]) / det;
            let dsigma = (m[0][0] * g[1] - m[1][0] * g[0]) / det;
            let (nmu, nsigma) = (mu + dmu, sigma + dsigma);
            if nsigma > 0.0 {
                let ncost = ssr(nmu, nsigma);
                if ncost <= cost {
                    let converged = (cost - ncost) <= 1e-15 * cost.max(1e-300)
                        && dmu.abs() <= 1e-12 * (1.0 + mu.abs())
                        && dsigma.abs() <= 1e-12 * sigma;
                    (mu, sigma, cost) = (nmu, nsigma, ncost);
                    lambda = (lambda / 10.0).max(1e-12);
                    improved = true;
                    if converged {
                        return covariance_mu(&normal_eq(mu, sigma).0, cost, x.len()).map(|e| (mu, sigma, e));
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    if !(mu.is_finite() && sigma.is_finite()) {
        return None;
    }
    covariance_mu(&normal_eq(mu, sigma).0, cost, x.len()).map(|e| (mu, sigma, e))
}

fn covariance_mu(a: &[[f64; 2]; 2], cost: f64, points: usize) -> Option<f64> {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    if det.is_nan() || det == 0.0 || points <= 2 {
        return None;
    }
    let s2 = cost / (points - 2) as f64;
    let var = s2 * a[1][1] / det;
    (var >= 0.0 && var.is_finite()).then(|| var.sqrt())
}

/// `(a.mean - b.mean) / sqrt(a.std^2 + b.std^2)`.
pub fn separation_of(a: &Moments, b: &Moments) -> Result<f64, StatsError> {
    for m in [a, b] {
        if m.n < 2 {
            return Err(StatsError::InsufficientSample { needed: 2, got: m.n });
        }
    }
    let spread = (a.std * a.std + b.std * b.std).sqrt();
    if spread == 0.0 {
        return Err(StatsError::DegenerateSample);
    }
    Ok((a.mean - b.mean) / spread)
}

pub fn separation(a: &DistributionSummary, b: &DistributionSummary) -> Result<f64, StatsError> {
    separation_of(&a.moments(), &b.moments())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub p: f64,
    pub separation: f64,
}

/// Separation of true from null score distributions as a function of the power `p`.
pub fn power_sweep(
    scored_true: &[ScoredPair],
    scored_null: &[ScoredPair],
    p_grid: &[f64],
    cfg: &MetricConfig,
) -> Result<Vec<SweepPoint>, StatsError> {
    power_sweep_with(Execution::default(), scored_true, scored_null, p_grid, cfg)
}

pub fn power_sweep_with(
    exec: Execution,
    scored_true: &[ScoredPair],
    scored_null: &[ScoredPair],
    p_grid: &[f64],
    cfg: &MetricConfig,
) -> Result<Vec<SweepPoint>, StatsError> {
    for set in [scored_true, scored_null] {
        if set.is_empty() {
            return Err(StatsError::InsufficientSample { needed: 1, got: 0 });
        }
    }
    if let Some(&p) = p_grid.iter().find(|p| !(0.0..=2.0).contains(*p)) {
        return Err(MetricError::PowerOutOfRange(p).into());
    }
    let powered = |set: &[ScoredPair], p: f64| -> Result<Moments, StatsError> {
        let values = set
            .iter()
            .map(|s| noir_score_powered(s.score.ratio(), s.score.similarity, p, cfg).map(|m| m.value))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Moments::of(&values))
    };
    exec.try_map(p_grid, |&p| {
        Ok(SweepPoint {
            p,
            separation: separation_of(&powered(scored_true, p)?, &powered(scored_null, p)?)?,
        })
    })
}

/// Evenly spaced grid from `start` to `stop` inclusive, built by index to avoid drift.
pub fn linear_grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| start + step * i as f64).map(|v| (v * 1e12).round() / 1e12).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendFit {
    pub slope: f64,
    pub slope_err: f64,
    pub intercept: f64,
}

/// Ordinary least squares line with the homoskedastic standard error of the slope.
pub fn trend_fit(x: &[f64], y: &[f64]) -> Result<TrendFit, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(StatsError::InsufficientSample { needed: 3, got: n });
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return Err(StatsError::DegenerateX);
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    Ok(TrendFit {
        slope,
        slope_err: (ssr / (n - 2) as f64 / sxx).sqrt(),
        intercept,
    })
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationAudit {
    pub per_dimension_r: Vec<f64>,
    /// Dimensions with zero variance; their `r` is recorded as 0.
    pub degenerate: Vec<usize>,
    pub max_abs_r: f64,
    pub std_of_r: f64,
}

/// Pearson r of every embedding component against a length measure.
pub fn length_correlation_audit(vectors: &[EmbeddingVector], lengths: &[f64]) -> Result<CorrelationAudit, StatsError> {
    length_correlation_audit_with(Execution::default(), vectors, lengths)
}

pub fn length_correlation_audit_with(
    exec: Execution,
    vectors: &[EmbeddingVector],
    lengths: &[f64],
) -> Result<CorrelationAudit, StatsError> {
    if vectors.len() != lengths.len() {
        return Err(StatsError::LengthMismatch(vectors.len(), lengths.len()));
    }
    if vectors.len() < 3 {
        return Err(StatsError::InsufficientSample {
            needed: 3,
            got: vectors.len(),
        });
    }
    let dim = vectors[0].dimension();
    if vectors.iter().any(|v| v.dimension() != dim) {
        return Err(StatsError::DimensionMismatch);
    }
    let rs: Vec<Option<f64>> = exec.map_range(dim, |d| {
        let column: Vec<f64> = vectors.iter().map(|v| v.components()[d]).collect();
        pearson(&column, lengths)
    });
    let degenerate = rs.iter().enumerate().filter(|(_, r)| r.is_none()).map(|(d, _)| d).collect();
    let per_dimension_r: Vec<f64> = rs.into_iter().map(|r| r.unwrap_or(0.0)).collect();
    let max_abs_r = per_dimension_r.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    Ok(CorrelationAudit {
        std_of_r: Moments::of(&per_dimension_r).std,
        per_dimension_r,
        degenerate,
        max_abs_r,
    })
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman coefficient `1 - 6 sum(d^2) / (n (n^2 - 1))` over position-aligned scores.
pub fn spearman_rank(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::MismatchedItems);
    }
    let n = a.len();
    if n < 2 {
        return Err(StatsError::InsufficientSample { needed: 2, got: n });
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y) * (x - y)).sum();
    let denom = (n * (n * n - 1)) as f64;
    // numerator and denominator are exact in f64 for realistic n, so one rounding
    Ok(((denom - 6.0 * d2) / denom).clamp(-1.0, 1.0))
}

/// Spearman over keyed rankings; both sides must name the same items.
pub fn spearman_by_item<K: Ord + Clone>(a: &[(K, f64)], b: &[(K, f64)]) -> Result<f64, StatsError> {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.0.cmp(&y.0));
    b.sort_by(|x, y| x.0.cmp(&y.0));
    if a.len() != b.len() || a.iter().zip(&b).any(|(x, y)| x.0 != y.0) || a.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(StatsError::MismatchedItems);
    }
    let xa: Vec<f64> = a.iter().map(|x| x.1).collect();
    let xb: Vec<f64> = b.iter().map(|x| x.1).collect();
    spearman_rank(&xa, &xb)
}

/// Compression-ratio interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioBin {
    pub lo: f64,
    pub hi: f64,
}

impl RatioBin {
    pub fn new(lo: f64, hi: f64) -> Result<Self, StatsError> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(StatsError::InvalidBin { lo, hi });
        }
        Ok(Self { lo, hi })
    }
}

/// Bins used for human-evaluation sampling.
pub fn human_eval_bins() -> Vec<RatioBin> {
    [(0.2, 0.3), (0.3, 0.4), (0.4, 0.5), (0.5, 0.6), (0.6, 0.8)]
        .into_iter()
        .map(|(lo, hi)| RatioBin { lo, hi })
        .collect()
}

/// Bins centred (in log2) on ratios 1/8, 1/4, 1/2 plus a near-identity bin.
pub fn halving_bins() -> Vec<RatioBin> {
    [-3.5f64, -2.5, -1.5, -0.5, 0.0]
        .windows(2)
        .map(|w| RatioBin {
            lo: w[0].exp2(),
            hi: w[1].exp2(),
        })
        .collect()
}

/// Index of the bin holding `ratio`: `[lo, hi)`, with the last bin also closed on the right.
pub fn bin_index(bins: &[RatioBin], ratio: f64) -> Option<usize> {
    bins.iter()
        .position(|b| b.lo <= ratio && ratio < b.hi)
        .or_else(|| bins.last().filter(|b| ratio == b.hi).map(|_| bins.len() - 1))
}

/// Nearest-rank percentile of an ascending sample.
pub fn nearest_rank(sorted: &[f64], percentile: f64) -> f64 {
    let n = sorted.len();
    let rank = ((percentile / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundlePick {
    pub bin: RatioBin,
    pub percentile: f64,
    pub target: f64,
    pub pair: ScoredPair,
}

/// For each bin and percentile, the pair whose score lies nearest that percentile of the bin.
/// Ties go to the lexicographically smallest parent id, then candidate id.
pub fn percentile_bundle(
    scored: &[ScoredPair],
    bins: &[RatioBin],
    percentiles: &[f64],
) -> Result<Vec<BundlePick>, StatsError> {
    if let Some(&p) = percentiles.iter().find(|p| !(0.0..=100.0).contains(*p)) {
        return Err(StatsError::InvalidPercentile(p));
    }
    let mut members: Vec<Vec<&ScoredPair>> = vec![Vec::new(); bins.len()];
    for s in scored {
        if let Some(k) = bin_index(bins, s.ratio()) {
            members[k].push(s);
        }
    }
    let mut out = Vec::with_capacity(bins.len() * percentiles.len());
    for (bin, members) in bins.iter().zip(&members) {
        if members.is_empty() {
            return Err(StatsError::EmptyBin { lo: bin.lo, hi: bin.hi });
        }
        let mut values: Vec<f64> = members.iter().map(|s| s.noir()).collect();
        values.sort_by(f64::total_cmp);
        for &p in percentiles {
            let target = nearest_rank(&values, p);
            let best = members
                .iter()
                .min_by(|a, b| {
                    (a.noir() - target)
                        .abs()
                        .total_cmp(&(b.noir() - target).abs())
                        .then_with(|| a.pair.parent_id.cmp(&b.pair.parent_id))
                        .then_with(|| a.pair.candidate_id.cmp(&b.pair.candidate_id))
                })
                .expect("bin is nonempty");
            out.push(BundlePick {
                bin: *bin,
                percentile: p,
                target,
                pair: (*best).clone(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpCosFit {
    pub beta: f64,
    pub rms: f64,
    pub x_max: f64,
    pub grid_points: usize,
}

/// Least-squares fit of `exp(-beta x)` to `cos(sqrt x)` on `[0, arccos(floor)^2]`.
pub fn expcos_fit(similarity_floor: f64) -> Result<ExpCosFit, StatsError> {
    expcos_fit_on_grid(similarity_floor, MIN_EXPCOS_GRID)
}

pub fn expcos_fit_on_grid(similarity_floor: f64, grid_points: usize) -> Result<ExpCosFit, StatsError> {
    if !(similarity_floor > 0.0 && similarity_floor < 1.0) {
        return Err(StatsError::InvalidFloor(similarity_floor));
    }
    if grid_points < MIN_EXPCOS_GRID {
        return Err(StatsError::InvalidGrid(grid_points));
    }
    let x_max = similarity_floor.acos().powi(2);
    let xs: Vec<f64> = (0..grid_points)
        .map(|i| x_max * i as f64 / (grid_points - 1) as f64)
        .collect();
    let target: Vec<f64> = xs.iter().map(|x| x.sqrt().cos()).collect();
    let ssr = |beta: f64| -> f64 {
        xs.iter()
            .zip(&target)
            .map(|(x, c)| ((-beta * x).exp() - c).powi(2))
            .sum()
    };

    // Gauss-Newton with step halving; the cosine series gives beta = 1/2 near x = 0
    let mut beta = 0.5;
    let mut cost = ssr(beta);
    for _ in 0..100 {
        let (mut jr, mut jj) = (0.0, 0.0);
        for (x, c) in xs.iter().zip(&target) {
            let e = (-beta * x).exp();
            let j = -x * e;
            jr += j * (e - c);
            jj += j * j;
        }
        if jj == 0.0 {
            break;
        }
        let mut step = -jr / jj;
        let mut accepted = false;
        for _ in 0..50 {
            let c = ssr(beta + step);
            if c <= cost {
                beta += step;
                cost = c;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted || step.abs() < 1e-15 * beta.abs().max(1.0) {
            break;
        }
    }
    Ok(ExpCosFit {
        beta,
        rms: (cost / grid_points as f64).sqrt(),
        x_max,
        grid_points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub bin: RatioBin,
    pub n: usize,
    pub mean_similarity: f64,
    pub stderr: f64,
}

/// Mean raw similarity per compression bin. Empty bins are skipped with a warning.
pub fn similarity_vs_compression_curve(scored: &[ScoredPair], bins: &[RatioBin]) -> Vec<CurvePoint> {
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); bins.len()];
    for s in scored {
        if let Some(k) = bin_index(bins, s.ratio()) {
            members[k].push(s.score.similarity.raw());
        }
    }
    bins.iter()
        .zip(members)
        .filter_map(|(bin, sims)| {
            if sims.is_empty() {
                log::warn!("no pairs with ratio in [{}, {}); bin skipped", bin.lo, bin.hi);
                return None;
            }
            let m = Moments::of(&sims);
            Some(CurvePoint {
                bin: *bin,
                n: m.n,
                mean_similarity: m.mean,
                stderr: m.stderr,
            })
        })
        .collect()
}

/// Grid point with the largest separation; the first one wins ties.
pub fn sweep_argmax(points: &[SweepPoint]) -> Option<SweepPoint> {
    points
        .iter()
        .copied()
        .reduce(|best, p| if p.separation > best.separation { p } else { best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EvalPair, PairScore};
    use crate::metric::{noir_score, CompressionRatio, NoirScore, SimilarityScore};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal, StandardNormal};

    fn pair(id: &str, tokens_parent: u64, tokens_candidate: u64, sim: f64) -> ScoredPair {
        let cfg = MetricConfig::default();
        let similarity = SimilarityScore::new(sim, &cfg).unwrap();
        let ratio = CompressionRatio::from_counts(tokens_candidate, tokens_parent).unwrap();
        ScoredPair {
            pair: EvalPair {
                parent_id: id.into(),
                parent_level: 0,
                candidate_id: id.into(),
                candidate_level: 1,
                is_null: false,
            },
            score: PairScore {
                tokens_parent,
                tokens_candidate,
                similarity,
                noir: noir_score(ratio, similarity, &cfg),
            },
        }
    }

    fn with_noir(id: &str, tokens_parent: u64, tokens_candidate: u64, noir: f64) -> ScoredPair {
        let mut p = pair(id, tokens_parent, tokens_candidate, 0.5);
        p.score.noir = NoirScore { value: noir, power_p: 1.0, saturated: false };
        p
    }

    #[test]
    fn two_point_moments() {
        let s = summarize_distribution(&[0.0, 1.0], 5).unwrap();
        assert_eq!(s.mean, 0.5);
        assert_abs_diff_eq!(s.std, 0.5f64.sqrt(), epsilon = 1e-15);
        assert!(s.stderr <= s.std);
    }

    #[test]
    fn degenerate_and_invalid_samples() {
        assert_eq!(summarize_distribution(&[5.0; 10], 10), Err(StatsError::DegenerateSample));
        assert!(matches!(summarize_distribution(&[1.0], 10), Err(StatsError::InsufficientSample { .. })));
        assert_eq!(summarize_distribution(&[1.0, 2.0], 4), Err(StatsError::InvalidBins(4)));
    }

    #[test]
    fn gaussian_fit_recovers_generator() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let normal = Normal::new(4.55, 2.08).unwrap();
        let values: Vec<f64> = (0..10_000).map(|_| normal.sample(&mut rng)).collect();
        let s = summarize_distribution(&values, DEFAULT_HISTOGRAM_BINS).unwrap();
        assert!((s.gauss_mu - 4.55).abs() < 3.0 * s.stderr, "mu {} stderr {}", s.gauss_mu, s.stderr);
        assert!((s.mean - 4.55).abs() < 3.0 * s.stderr);
        assert!((s.gauss_sigma - 2.08).abs() < 0.1, "sigma {}", s.gauss_sigma);
        assert!((s.gauss_mu - s.mean).abs() < 2.0 * s.stderr);
        assert!(s.gauss_mu_err > 0.0 && s.gauss_mu_err < 0.2);
    }

    #[test]
    fn saturated_outliers_do_not_wreck_the_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let normal = Normal::new(4.0, 2.0).unwrap();
        let mut values: Vec<f64> = (0..5000).map(|_| normal.sample(&mut rng)).collect();
        values.extend([1000.0; 5]);
        let s = summarize_distribution(&values, 40).unwrap();
        assert!((s.gauss_mu - 4.0).abs() < 0.15, "{}", s.gauss_mu);
    }

    #[test]
    fn separation_examples() {
        let m = |mean: f64, std: f64| Moments { n: 100, mean, std, stderr: std / 10.0 };
        assert_abs_diff_eq!(separation_of(&m(2.0, 1.0), &m(0.0, 1.0)).unwrap(), 2f64.sqrt(), epsilon = 1e-15);
        assert_eq!(separation_of(&m(1.0, 1.0), &m(1.0, 1.0)).unwrap(), 0.0);
        assert_abs_diff_eq!(separation_of(&m(4.55, 2.08), &m(0.35, 0.6)).unwrap(), 1.94, epsilon = 0.005);
        assert_eq!(separation_of(&m(1.0, 0.0), &m(0.0, 0.0)), Err(StatsError::DegenerateSample));
        let a = m(3.0, 0.7);
        let b = m(-1.0, 1.3);
        assert_eq!(separation_of(&a, &b).unwrap(), -separation_of(&b, &a).unwrap());
    }

    fn sweep_fixture() -> (Vec<ScoredPair>, Vec<ScoredPair>) {
        // true pairs: ratio 0.5, D 0.86; null pairs: D at or below the floor
        let t: Vec<ScoredPair> = (0..40)
            .map(|i| pair(&format!("t{i}"), 100, 50 + (i % 7), 0.84 + 0.001 * i as f64))
            .collect();
        let n: Vec<ScoredPair> = (0..40)
            .map(|i| pair(&format!("n{i}"), 100, 30 + i, -0.05 + 0.0015 * i as f64))
            .collect();
        (t, n)
    }

    #[test]
    fn sweep_at_one_matches_canonical() {
        let (t, n) = sweep_fixture();
        let cfg = MetricConfig::default();
        let pts = power_sweep(&t, &n, &[1.0], &cfg).unwrap();
        let canon = |s: &[ScoredPair]| Moments::of(&s.iter().map(|p| p.noir()).collect::<Vec<_>>());
        let expected = separation_of(&canon(&t), &canon(&n)).unwrap();
        assert_eq!(pts[0].separation.to_bits(), expected.to_bits());
    }

    #[test]
    fn sweep_argmax_matches_exhaustive_grid() {
        let (t, n) = sweep_fixture();
        let cfg = MetricConfig::default();
        let grid = linear_grid(0.0, 2.0, 0.1);
        assert_eq!(grid.len(), 21);
        let pts = power_sweep(&t, &n, &grid, &cfg).unwrap();
        // independent oracle: recompute every grid point by hand
        let oracle = |p: f64| {
            let vals = |s: &[ScoredPair]| -> Vec<f64> {
                s.iter()
                    .map(|x| {
                        let lr = x.ratio().ln();
                        let ld = x.score.similarity.clamped().ln();
                        -lr.signum() * lr.abs().powf(p) / ld.abs()
                    })
                    .collect()
            };
            let (a, b) = (vals(&t), vals(&n));
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let var = |v: &[f64]| {
                let m = mean(v);
                v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
            };
            (mean(&a) - mean(&b)) / (var(&a) + var(&b)).sqrt()
        };
        let mut best = (0.0, f64::NEG_INFINITY);
        for pt in &pts {
            let o = oracle(pt.p);
            assert!((o - pt.separation).abs() < 1e-9);
            if o > best.1 {
                best = (pt.p, o);
            }
        }
        let arg = sweep_argmax(&pts).unwrap();
        assert_eq!(arg.p, best.0);
        assert!(arg.p > 0.0 && arg.p < 2.0, "argmax at {}", arg.p);
        assert!(power_sweep(&t, &n, &[2.5], &cfg).is_err());
        assert!(power_sweep(&[], &n, &[1.0], &cfg).is_err());
    }

    #[test]
    fn sweep_modes_agree() {
        let (t, n) = sweep_fixture();
        let cfg = MetricConfig::default();
        let grid = linear_grid(0.0, 2.0, 0.1);
        assert_eq!(
            power_sweep_with(Execution::Sequential, &t, &n, &grid, &cfg).unwrap(),
            power_sweep_with(Execution::Parallel, &t, &n, &grid, &cfg).unwrap()
        );
    }

    #[test]
    fn trend_examples() {
        let x = [0.0, 1.0, 2.0, 3.0, 4.0];
        let f = trend_fit(&x, &x.map(|v| 2.0 * v + 1.0)).unwrap();
        assert_abs_diff_eq!(f.slope, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.intercept, 1.0, epsilon = 1e-12);
        assert!(f.slope_err < 1e-7);
        assert_eq!(trend_fit(&x, &[3.0; 5]).unwrap().slope, 0.0);
        assert_eq!(trend_fit(&[1.0; 4], &[1.0, 2.0, 3.0, 4.0]), Err(StatsError::DegenerateX));
        assert!(trend_fit(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(trend_fit(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn trend_recovers_planted_slope() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..2000).map(|i| 50.0 + (i % 400) as f64).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| 4.0 + 0.002 * v + 2.0 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect();
        let f = trend_fit(&x, &y).unwrap();
        assert!((f.slope - 0.002).abs() < 3.0 * f.slope_err, "{f:?}");
    }

    #[test]
    fn spearman_examples() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(spearman_rank(&a, &a).unwrap(), 1.0);
        assert_eq!(spearman_rank(&a, &[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert_eq!(spearman_rank(&a, &[1.0, 3.0, 2.0, 5.0, 4.0]).unwrap(), 0.8);
        assert_eq!(spearman_rank(&a, &[1.0, 2.0]), Err(StatsError::MismatchedItems));
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn spearman_by_item_matches_keys() {
        let a = [("x", 1.0), ("y", 2.0), ("z", 3.0)];
        let b = [("z", 30.0), ("x", 10.0), ("y", 20.0)];
        assert_eq!(spearman_by_item(&a, &b).unwrap(), 1.0);
        let c = [("x", 1.0), ("y", 2.0), ("w", 3.0)];
        assert_eq!(spearman_by_item(&a, &c), Err(StatsError::MismatchedItems));
    }

    #[test]
    fn length_audit_examples() {
        let lengths: Vec<f64> = (0..20).map(|i| 10.0 + i as f64).collect();
        let vectors: Vec<EmbeddingVector> = lengths
            .iter()
            .enumerate()
            .map(|(i, &l)| EmbeddingVector::normalized(vec![l, 1.0 + (i % 3) as f64, 100.0, 0.0]).unwrap())
            .collect();
        let raw = length_correlation_audit(&vectors, &lengths).unwrap();
        assert!(raw.per_dimension_r[0] > 0.9);
        assert_eq!(raw.degenerate, vec![3]);
        assert_eq!(raw.per_dimension_r[3], 0.0);
        assert!(raw.per_dimension_r.iter().all(|r| (-1.0..=1.0).contains(r)));

        // unnormalized column equal to the lengths correlates perfectly
        let exact: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let col = exact.clone();
        assert_abs_diff_eq!(pearson(&col, &exact).unwrap(), 1.0, epsilon = 1e-12);

        let scaled: Vec<f64> = lengths.iter().map(|l| 3.5 * l - 7.0).collect();
        let again = length_correlation_audit(&vectors, &scaled).unwrap();
        for (a, b) in raw.per_dimension_r.iter().zip(&again.per_dimension_r) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        assert!(length_correlation_audit(&vectors[..2], &lengths[..2]).is_err());
        assert!(length_correlation_audit(&vectors, &lengths[..5]).is_err());
    }

    #[test]
    fn percentile_bundle_sort_oracle() {
        let scored: Vec<ScoredPair> = (1..=10).map(|k| with_noir(&format!("p{k:02}"), 100, 25, k as f64)).collect();
        let bins = [RatioBin::new(0.2, 0.3).unwrap()];
        let picks = percentile_bundle(&scored, &bins, &[50.0]).unwrap();
        let mut sorted: Vec<f64> = scored.iter().map(|s| s.noir()).collect();
        sorted.sort_by(f64::total_cmp);
        let target = sorted[(0.5f64 * 10.0).ceil() as usize - 1];
        assert_eq!(picks[0].target, target);
        assert_eq!(picks[0].pair.noir(), 5.0);

        let single = [with_noir("only", 100, 25, 2.0)];
        let picks = percentile_bundle(&single, &bins, &[10.0, 50.0, 90.0]).unwrap();
        assert!(picks.iter().all(|p| p.pair.pair.parent_id == "only"));

        let ties = [with_noir("b", 100, 25, 1.0), with_noir("a", 100, 25, 1.0)];
        assert_eq!(percentile_bundle(&ties, &bins, &[50.0]).unwrap()[0].pair.pair.parent_id, "a");
    }

    #[test]
    fn percentile_bundle_paper_bins() {
        let mut scored = Vec::new();
        for (k, ratio_pct) in [25u64, 35, 45, 55, 70].into_iter().enumerate() {
            for j in 0..7 {
                scored.push(with_noir(&format!("b{k}-{j}"), 100, ratio_pct, j as f64));
            }
        }
        let picks = percentile_bundle(&scored, &human_eval_bins(), &[10.0, 50.0, 90.0]).unwrap();
        assert_eq!(picks.len(), 15);
        let empty = percentile_bundle(&scored[..7], &human_eval_bins(), &[50.0]);
        assert!(matches!(empty, Err(StatsError::EmptyBin { .. })));
    }

    #[test]
    fn bin_edges() {
        let bins = human_eval_bins();
        assert_eq!(bin_index(&bins, 0.3), Some(1));
        assert_eq!(bin_index(&bins, 0.8), Some(4));
        assert_eq!(bin_index(&bins, 0.1), None);
        assert!(RatioBin::new(0.5, 0.5).is_err());
    }

    fn grid_search_beta(floor: f64, points: usize) -> f64 {
        let x_max = floor.acos().powi(2);
        let xs: Vec<f64> = (0..points).map(|i| x_max * i as f64 / (points - 1) as f64).collect();
        let cost = |b: f64| -> f64 { xs.iter().map(|x| ((-b * x).exp() - x.sqrt().cos()).powi(2)).sum() };
        let (mut lo, mut hi, mut step) = (0.0f64, 2.0f64, 0.01f64);
        for _ in 0..4 {
            let best = (0..=((hi - lo) / step).round() as usize)
                .map(|i| lo + step * i as f64)
                .min_by(|a, b| cost(*a).total_cmp(&cost(*b)))
                .unwrap();
            lo = (best - step).max(0.0);
            hi = best + step;
            step /= 20.0;
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn expcos_matches_reported_coefficient() {
        let fit = expcos_fit(0.2).unwrap();
        assert_abs_diff_eq!(fit.beta, 0.66, epsilon = 0.01);
        assert!((fit.beta - grid_search_beta(0.2, 1000)).abs() < 0.005);
        assert!(fit.rms > 0.0 && fit.rms < 0.1);
    }

    #[test]
    fn expcos_small_range_limit() {
        let fit = expcos_fit(0.999).unwrap();
        assert_abs_diff_eq!(fit.beta, 0.5, epsilon = 0.02);
    }

    #[test]
    fn expcos_grid_refinement_is_stable() {
        let coarse = expcos_fit_on_grid(0.2, 1000).unwrap();
        let fine = expcos_fit_on_grid(0.2, 10_000).unwrap();
        assert!((coarse.beta - fine.beta).abs() < 1e-3);
        assert!(expcos_fit(1.0).is_err());
        assert!(expcos_fit(0.0).is_err());
        assert!(expcos_fit_on_grid(0.2, 999).is_err());
    }

    #[test]
    fn curve_examples() {
        let scored: Vec<ScoredPair> = (0..10).map(|i| pair(&format!("x{i}"), 100, 50, 0.9)).collect();
        let curve = similarity_vs_compression_curve(&scored, &[RatioBin::new(0.4, 0.6).unwrap()]);
        assert_eq!(curve.len(), 1);
        assert_abs_diff_eq!(curve[0].mean_similarity, 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(curve[0].stderr, 0.0, epsilon = 1e-15);
        let skipped = similarity_vs_compression_curve(&scored, &[RatioBin::new(0.1, 0.2).unwrap()]);
        assert!(skipped.is_empty());
    }

    #[test]
    fn curve_tracks_multiplicative_generator() {
        // D = 0.86^(log2(1/ratio)) with mild noise
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut scored = Vec::new();
        for (k, tokens) in [(0usize, 50u64), (1, 25), (2, 12)] {
            for j in 0..300 {
                let ratio = tokens as f64 / 100.0;
                let d = 0.86f64.powf((1.0 / ratio).log2()) + 0.02 * Distribution::<f64>::sample(&StandardNormal, &mut rng);
                scored.push(pair(&format!("{k}-{j}"), 100, tokens, d.clamp(-1.0, 1.0)));
            }
        }
        let curve = similarity_vs_compression_curve(&scored, &halving_bins());
        assert_eq!(curve.len(), 3);
        for pt in curve {
            let centre = (pt.bin.lo * pt.bin.hi).sqrt();
            let ratio = [0.5, 0.25, 0.12].into_iter().find(|r| (r / centre).log2().abs() < 0.5).unwrap();
            let expected = 0.86f64.powf((1.0 / ratio).log2());
            assert!((pt.mean_similarity - expected).abs() < 4.0 * pt.stderr, "{pt:?} vs {expected}");
        }
    }

    proptest! {
        #[test]
        fn spearman_bounded_and_monotone_invariant(v in proptest::collection::vec((-100i32..100, -100i32..100), 3..30)) {
            let a: Vec<f64> = v.iter().map(|x| x.0 as f64).collect();
            let b: Vec<f64> = v.iter().map(|x| x.1 as f64).collect();
            let r = spearman_rank(&a, &b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&r));
            let a2: Vec<f64> = a.iter().map(|x| (x / 10.0).exp()).collect();
            let b2: Vec<f64> = b.iter().map(|x| x * 3.0 + 1.0).collect();
            prop_assert_eq!(r, spearman_rank(&a2, &b2).unwrap());
        }

        #[test]
        fn moments_mean_is_arithmetic(v in proptest::collection::vec(-1e3f64..1e3, 2..200)) {
            let m = Moments::of(&v);
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            prop_assert!((m.mean - mean).abs() <= 1e-12);
            prop_assert!(m.stderr <= m.std || m.std == 0.0);
        }
    }
}
