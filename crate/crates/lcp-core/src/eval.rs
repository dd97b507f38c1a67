//! Metrics over (prior, observed correlation) pairs: predictive accuracy,
//! information content, credible-interval coverage, a binned breakdown,
//! threshold classification, and surprise-based retrieval ranking.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prior::PriorDensity;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no records to evaluate")]
    EmptyInput,
    #[error("k = {k} exceeds pool size {pool}")]
    KOutOfRange { k: usize, pool: usize },
    #[error("threshold must lie in (0, 1), got {0}")]
    InvalidThreshold(f64),
    #[error("need 1 <= n_relevant <= n_pool, got {n_relevant}/{n_pool}")]
    InvalidBaseline { n_relevant: usize, n_pool: usize },
}

/// Which prior produced a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    Lcp,
    Gaussian,
    Kde,
    Uniform,
}

impl std::fmt::Display for PriorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::Lcp => "lcp",
            Self::Gaussian => "gaussian",
            Self::Kde => "kde",
            Self::Uniform => "uniform",
        };
        f.write_str(s)
    }
}

/// One scored pair: the prior's point prediction and its density and
/// credible interval at the observed correlation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub pair_id: String,
    pub r_hat: f64,
    pub r_obs: f64,
    pub density_at_obs: f64,
    pub interval95: (f64, f64),
    pub prior_kind: PriorKind,
}

impl PredictionRecord {
    /// Scores one observation under a prior at the given interval level.
    pub fn from_prior(
        pair_id: impl Into<String>,
        prior: &PriorDensity,
        r_obs: f64,
        level: f64,
        prior_kind: PriorKind,
    ) -> Result<Self, crate::prior::PriorError> {
        Ok(Self {
            pair_id: pair_id.into(),
            r_hat: prior.mode(),
            r_obs,
            density_at_obs: prior.density(r_obs)?,
            interval95: prior.credible_interval(level),
            prior_kind,
        })
    }

    /// Information content of the observation: `-ln density`.
    pub fn info_content(&self) -> f64 {
        -self.density_at_obs.ln()
    }

    pub fn covered(&self) -> bool {
        self.r_obs >= self.interval95.0 && self.r_obs <= self.interval95.1
    }
}

/// Median and quartiles (linear-interpolation convention).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MetricSummary {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl MetricSummary {
    fn from_values(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            median: quantile_type7(&sorted, 0.5),
            q1: quantile_type7(&sorted, 0.25),
            q3: quantile_type7(&sorted, 0.75),
        }
    }
}

fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-bin statistics over the observed correlation, 10 equal-width bins on
/// [-1, 1], right-closed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinStats {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub bias: Option<f64>,
    pub sign_accuracy: Option<f64>,
    pub mean_density: Option<f64>,
    pub mean_info_content: Option<f64>,
}

pub const N_BINS: usize = 10;

/// Right-closed bin index of `r` among 10 equal-width bins over [-1, 1];
/// the first bin also includes its left edge.
pub fn bin_index(r: f64) -> usize {
    let idx = ((r + 1.0) / 0.2).ceil() as isize - 1;
    idx.clamp(0, N_BINS as isize - 1) as usize
}

/// Aggregated metrics for one prior kind over a record set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_records: usize,
    /// Fraction of records where the prediction and observation share a
    /// strict sign (product > 0).
    pub sign_accuracy: f64,
    pub mae: f64,
    pub mean_info_content: f64,
    pub coverage95: f64,
    pub bins: Vec<BinStats>,
    pub abs_error: MetricSummary,
    pub density_at_obs: MetricSummary,
    pub info_content: MetricSummary,
}

/// Computes the full metric set. Records are re-ordered by `pair_id`
/// internally so the output is identical under permutation of the input.
pub fn evaluate(records: &[PredictionRecord]) -> Result<EvalReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut records: Vec<&PredictionRecord> = records.iter().collect();
    records.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));

    let n = records.len() as f64;
    let mut sign_hits = 0usize;
    let mut abs_errors = Vec::with_capacity(records.len());
    let mut densities = Vec::with_capacity(records.len());
    let mut infos = Vec::with_capacity(records.len());
    let mut covered = 0usize;

    let mut bin_count = [0usize; N_BINS];
    let mut bin_bias = [0.0f64; N_BINS];
    let mut bin_sign = [0usize; N_BINS];
    let mut bin_density = [0.0f64; N_BINS];
    let mut bin_info = [0.0f64; N_BINS];

    for rec in &records {
        let sign_ok = rec.r_hat * rec.r_obs > 0.0;
        if sign_ok {
            sign_hits += 1;
        }
        let abs_err = (rec.r_hat - rec.r_obs).abs();
        abs_errors.push(abs_err);
        densities.push(rec.density_at_obs);
        let info = rec.info_content();
        infos.push(info);
        if rec.covered() {
            covered += 1;
        }
        let b = bin_index(rec.r_obs);
        bin_count[b] += 1;
        bin_bias[b] += rec.r_hat - rec.r_obs;
        if sign_ok {
            bin_sign[b] += 1;
        }
        bin_density[b] += rec.density_at_obs;
        bin_info[b] += info;
    }

    let bins = (0..N_BINS)
        .map(|b| {
            let count = bin_count[b];
            let cf = count as f64;
            BinStats {
                lo: -1.0 + 0.2 * b as f64,
                hi: -1.0 + 0.2 * (b + 1) as f64,
                count,
                bias: (count > 0).then(|| bin_bias[b] / cf),
                sign_accuracy: (count > 0).then(|| bin_sign[b] as f64 / cf),
                mean_density: (count > 0).then(|| bin_density[b] / cf),
                mean_info_content: (count > 0).then(|| bin_info[b] / cf),
            }
        })
        .collect();

    Ok(EvalReport {
        n_records: records.len(),
        sign_accuracy: sign_hits as f64 / n,
        mae: abs_errors.iter().sum::<f64>() / n,
        mean_info_content: infos.iter().sum::<f64>() / n,
        coverage95: covered as f64 / n,
        bins,
        abs_error: MetricSummary::from_values(&abs_errors),
        density_at_obs: MetricSummary::from_values(&densities),
        info_content: MetricSummary::from_values(&infos),
    })
}

/// Binary decision: the prior predicts "correlated" when the magnitude of
/// its mode reaches the threshold.
pub fn classify(prior: &PriorDensity, threshold: f64) -> bool {
    assert!(
        threshold > 0.0 && threshold < 1.0,
        "threshold must lie in (0, 1), got {threshold}"
    );
    prior.mode().abs() >= threshold
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub threshold: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mcc: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

/// Thresholds both the point prediction and the observation at `threshold`
/// and reports accuracy, precision, recall, F1 and Matthews correlation.
/// Undefined ratios (zero denominators) are reported as 0 by convention;
/// in particular an all-positive predictor gets perfect recall but zero MCC.
pub fn classification_report(
    records: &[PredictionRecord],
    threshold: f64,
) -> Result<ClassificationReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(EvalError::InvalidThreshold(threshold));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for rec in records {
        let predicted = rec.r_hat.abs() >= threshold;
        let actual = rec.r_obs.abs() >= threshold;
        match (predicted, actual) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let total = (tp + fp + tn + fn_) as f64;
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let mcc_den = ((tp + fp) as f64 * (tp + fn_) as f64 * (tn + fp) as f64 * (tn + fn_) as f64)
        .sqrt();
    let mcc = if mcc_den == 0.0 {
        0.0
    } else {
        ((tp * tn) as f64 - (fp * fn_) as f64) / mcc_den
    };
    Ok(ClassificationReport {
        threshold,
        accuracy: (tp + tn) as f64 / total,
        precision,
        recall,
        f1,
        mcc,
        tp,
        fp,
        tn,
        fn_,
    })
}

/// One entry of a surprise ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPair {
    pub pair_id: String,
    pub density_at_obs: f64,
}

/// Sorts ascending by prior density at the observation, so the least
/// expected pair ranks first. Ties break by pair_id for determinism.
pub fn rank_by_surprise(pool: &[PredictionRecord]) -> Vec<RankedPair> {
    let mut ranked: Vec<RankedPair> = pool
        .iter()
        .map(|rec| RankedPair {
            pair_id: rec.pair_id.clone(),
            density_at_obs: rec.density_at_obs,
        })
        .collect();
    ranked.sort_by(|a, b| {
        a.density_at_obs
            .total_cmp(&b.density_at_obs)
            .then_with(|| a.pair_id.cmp(&b.pair_id))
    });
    ranked
}

/// Fraction of the top-k that are relevant.
pub fn precision_at_k(
    ranking: &[RankedPair],
    relevant: &BTreeSet<String>,
    k: usize,
) -> Result<f64, EvalError> {
    if k == 0 || k > ranking.len() {
        return Err(EvalError::KOutOfRange {
            k,
            pool: ranking.len(),
        });
    }
    let hits = ranking[..k]
        .iter()
        .filter(|r| relevant.contains(&r.pair_id))
        .count();
    Ok(hits as f64 / k as f64)
}

/// Mean 1-based rank of the relevant items; `None` when none are relevant.
pub fn average_rank(ranking: &[RankedPair], relevant: &BTreeSet<String>) -> Option<f64> {
    let ranks: Vec<f64> = ranking
        .iter()
        .enumerate()
        .filter(|(_, r)| relevant.contains(&r.pair_id))
        .map(|(i, _)| (i + 1) as f64)
        .collect();
    if ranks.is_empty() {
        None
    } else {
        Some(ranks.iter().sum::<f64>() / ranks.len() as f64)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub precision_at: std::collections::BTreeMap<usize, f64>,
    pub average_rank: Option<f64>,
    pub ranking: Vec<RankedPair>,
}

/// Ranks the pool by surprise and evaluates precision at each requested k.
pub fn retrieval_report(
    pool: &[PredictionRecord],
    relevant: &BTreeSet<String>,
    ks: &[usize],
) -> Result<RetrievalReport, EvalError> {
    if pool.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let ranking = rank_by_surprise(pool);
    let mut precision_at = std::collections::BTreeMap::new();
    if !relevant.is_empty() {
        for &k in ks {
            precision_at.insert(k, precision_at_k(&ranking, relevant, k)?);
        }
    }
    Ok(RetrievalReport {
        precision_at,
        average_rank: average_rank(&ranking, relevant),
        ranking,
    })
}

/// Expected retrieval performance of a uniformly random ranking:
/// precision `n_relevant / n_pool` at every k, average rank `(1 + n_pool)/2`.
pub fn expected_random_baseline(
    n_relevant: usize,
    n_pool: usize,
) -> Result<(f64, f64), EvalError> {
    if n_relevant == 0 || n_relevant > n_pool {
        return Err(EvalError::InvalidBaseline { n_relevant, n_pool });
    }
    Ok((
        n_relevant as f64 / n_pool as f64,
        (1.0 + n_pool as f64) / 2.0,
    ))
}
