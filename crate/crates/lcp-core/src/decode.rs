//! Turning a recorded token trace into a discrete probability distribution
//! over correlation values.
//!
//! The pipeline: locate the value field of the structured response inside the
//! trace, enumerate the top-k token alternatives over that span, parse each
//! concatenation as a float in [-1, 1], merge duplicate values in log space,
//! and normalize with a softmax.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::logsumexp2;
use crate::trace::{TokenTrace, ValueSpan};

/// Default number of alternatives substituted at each span position.
pub const DEFAULT_TOP_K: usize = 10;
/// Default pruning margin in nats. Paths this far below the best complete
/// sequence contribute < 2e-9 relative mass.
pub const DEFAULT_PRUNE_MARGIN: f64 = 20.0;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("value field {key:?} not found or not terminated in trace text")]
    SpanNotFound { key: String },
    #[error("value field {key:?} occurs {count} times; expected exactly one")]
    AmbiguousSpan { key: String, count: usize },
    #[error("no enumerated token sequence parsed as a float in [-1, 1]")]
    EmptyCandidates,
    #[error("k must be >= 1")]
    InvalidK,
    #[error("prune margin must be > 0 (got {0})")]
    InvalidPruneMargin(f64),
    #[error("invalid discrete prior: {0}")]
    InvalidPrior(String),
}

/// Describes the structured-output field that carries the numeric value,
/// e.g. the `coefficient` key of `{"coefficient": "<value>"}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValueFieldTemplate {
    pub key: String,
}

impl Default for ValueFieldTemplate {
    fn default() -> Self {
        Self {
            key: "coefficient".to_string(),
        }
    }
}

impl ValueFieldTemplate {
    pub fn new(key: impl Into<String>) -> Self {
        Self { key: key.into() }
    }

    /// Byte range of the value text in `text`, excluding the surrounding
    /// quotes when present.
    fn value_byte_range(&self, text: &str) -> Result<(usize, usize), DecodeError> {
        let needle = format!("\"{}\"", self.key);
        let occurrences: Vec<usize> = text.match_indices(&needle).map(|(i, _)| i).collect();
        match occurrences.len() {
            0 => {
                return Err(DecodeError::SpanNotFound {
                    key: self.key.clone(),
                })
            }
            1 => {}
            count => {
                return Err(DecodeError::AmbiguousSpan {
                    key: self.key.clone(),
                    count,
                })
            }
        }
        let after_key = occurrences[0] + needle.len();
        let bytes = text.as_bytes();
        let mut pos = after_key;
        while pos < bytes.len() && (bytes[pos] as char).is_whitespace() {
            pos += 1;
        }
        if pos >= bytes.len() || bytes[pos] != b':' {
            return Err(DecodeError::SpanNotFound {
                key: self.key.clone(),
            });
        }
        pos += 1;
        while pos < bytes.len() && (bytes[pos] as char).is_whitespace() {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(DecodeError::SpanNotFound {
                key: self.key.clone(),
            });
        }
        if bytes[pos] == b'"' {
            let start = pos + 1;
            let close = text[start..]
                .find('"')
                .ok_or_else(|| DecodeError::SpanNotFound {
                    key: self.key.clone(),
                })?;
            if close == 0 {
                return Err(DecodeError::SpanNotFound {
                    key: self.key.clone(),
                });
            }
            Ok((start, start + close))
        } else {
            // Bare value: runs until a JSON delimiter or whitespace.
            let start = pos;
            let rel = text[start..]
                .find(|c: char| c == ',' || c == '}' || c.is_whitespace())
                .ok_or_else(|| DecodeError::SpanNotFound {
                    key: self.key.clone(),
                })?;
            if rel == 0 {
                return Err(DecodeError::SpanNotFound {
                    key: self.key.clone(),
                });
            }
            Ok((start, start + rel))
        }
    }
}

/// One enumerated token sequence that parsed to an in-range value.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateValue {
    pub value: f64,
    pub joint_logprob: f64,
    pub source_strings: Vec<String>,
}

/// Provenance carried alongside a decoded distribution.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub prompt_id: String,
    pub model_id: String,
}

/// Normalized discrete distribution over decoded correlation values, sorted
/// by ascending value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretePrior {
    pub support: Vec<(f64, f64)>,
    #[serde(default)]
    pub provenance: Provenance,
}

impl DiscretePrior {
    pub fn new(support: Vec<(f64, f64)>, provenance: Provenance) -> Result<Self, DecodeError> {
        if support.is_empty() {
            return Err(DecodeError::InvalidPrior("empty support".to_string()));
        }
        for window in support.windows(2) {
            if window[0].0 >= window[1].0 {
                return Err(DecodeError::InvalidPrior(
                    "support not strictly increasing".to_string(),
                ));
            }
        }
        let mut total = 0.0;
        for &(r, p) in &support {
            if !(-1.0..=1.0).contains(&r) {
                return Err(DecodeError::InvalidPrior(format!(
                    "support point {r} outside [-1, 1]"
                )));
            }
            if !(p > 0.0 && p <= 1.0) {
                return Err(DecodeError::InvalidPrior(format!(
                    "probability {p} outside (0, 1]"
                )));
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(DecodeError::InvalidPrior(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self {
            support,
            provenance,
        })
    }

    /// Single atom with probability one.
    pub fn singleton(r: f64) -> Self {
        Self {
            support: vec![(r, 1.0)],
            provenance: Provenance::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Probability-weighted mean of the support.
    pub fn mean(&self) -> f64 {
        self.support.iter().map(|&(r, p)| r * p).sum()
    }

    /// Probability-weighted variance of the support.
    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.support
            .iter()
            .map(|&(r, p)| (r - mu) * (r - mu) * p)
            .sum()
    }
}

/// Locates the minimal contiguous step range whose concatenated tokens cover
/// the value substring. Tokens straddling the value boundary are included.
pub fn find_value_span(
    trace: &TokenTrace,
    template: &ValueFieldTemplate,
) -> Result<ValueSpan, DecodeError> {
    let text = trace.full_text();
    let (vstart, vend) = template.value_byte_range(&text)?;
    let offsets = trace.byte_offsets();
    let mut start = None;
    let mut end = None;
    for i in 0..trace.steps.len() {
        let (tok_start, tok_end) = (offsets[i], offsets[i + 1]);
        // Token overlaps [vstart, vend)?
        if tok_start < vend && tok_end > vstart {
            if start.is_none() {
                start = Some(i);
            }
            end = Some(i);
        }
    }
    match (start, end) {
        (Some(start), Some(end)) => Ok(ValueSpan { start, end }),
        _ => Err(DecodeError::SpanNotFound {
            key: template.key.clone(),
        }),
    }
}

/// Pinned float grammar for span concatenations: leading/trailing delimiter
/// characters that tokenizers glue onto digits are stripped, then the maximal
/// numeric prefix (optional sign, digits, at most one decimal point) is
/// parsed. No exponents, no NaN/inf, no interior whitespace.
pub fn parse_span_value(raw: &str) -> Option<f64> {
    let s = raw.trim();
    let start = s.find(|c: char| c.is_ascii_digit() || c == '-' || c == '+' || c == '.')?;
    let s = &s[start..];
    let mut end = 0;
    let mut seen_dot = false;
    let mut seen_digit = false;
    for (i, c) in s.char_indices() {
        match c {
            '-' | '+' if i == 0 => end = 1,
            '0'..='9' => {
                seen_digit = true;
                end = i + 1;
            }
            '.' if !seen_dot => {
                seen_dot = true;
                end = i + 1;
            }
            _ => break,
        }
    }
    if !seen_digit {
        return None;
    }
    s[..end].parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Rounds to 10 significant decimal digits so tokenization variants of the
/// same number ("0.65", ".65", "0.650") merge onto one support point.
fn canonical_value(v: f64) -> f64 {
    if v == 0.0 {
        return 0.0;
    }
    format!("{v:.9e}").parse().expect("canonical round-trip")
}

/// Enumerates token sequences from the top-k alternatives at each span
/// position, keeping those whose concatenation parses as a float in [-1, 1].
///
/// A sequence is pruned when even its best possible completion falls more
/// than `prune_margin` nats below the best complete sequence, so the result
/// is exactly the set of sequences within `prune_margin` of the maximum
/// joint logprob. `prune_margin = f64::INFINITY` enumerates everything.
pub fn enumerate_candidates(
    trace: &TokenTrace,
    span: ValueSpan,
    k: usize,
    prune_margin: f64,
) -> Result<Vec<CandidateValue>, DecodeError> {
    if k == 0 {
        return Err(DecodeError::InvalidK);
    }
    if !(prune_margin > 0.0) {
        return Err(DecodeError::InvalidPruneMargin(prune_margin));
    }
    let steps = &trace.steps[span.start..=span.end];
    // The endpoint may deliver fewer alternatives than requested; run with
    // what is available at each position.
    let alts: Vec<&[(String, f64)]> = steps
        .iter()
        .map(|s| &s.alternatives[..k.min(s.alternatives.len())])
        .collect();
    if alts.iter().any(|a| a.is_empty()) {
        return Err(DecodeError::EmptyCandidates);
    }

    // suffix_max[i] = max achievable logprob over positions i.. ; used for
    // order-independent pruning against the best complete sequence.
    let mut suffix_max = vec![0.0; alts.len() + 1];
    for i in (0..alts.len()).rev() {
        let step_max = alts[i]
            .iter()
            .map(|&(_, lp)| lp)
            .fold(f64::NEG_INFINITY, f64::max);
        suffix_max[i] = step_max + suffix_max[i + 1];
    }
    let best_complete = suffix_max[0];

    let mut out = Vec::new();
    let mut prefix = String::new();
    enumerate_rec(
        &alts,
        &suffix_max,
        best_complete,
        prune_margin,
        0,
        0.0,
        &mut prefix,
        &mut out,
    );

    if out.is_empty() {
        return Err(DecodeError::EmptyCandidates);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn enumerate_rec(
    alts: &[&[(String, f64)]],
    suffix_max: &[f64],
    best_complete: f64,
    prune_margin: f64,
    pos: usize,
    prefix_lp: f64,
    prefix: &mut String,
    out: &mut Vec<CandidateValue>,
) {
    if prefix_lp + suffix_max[pos] < best_complete - prune_margin {
        return;
    }
    if pos == alts.len() {
        if let Some(value) = parse_span_value(prefix) {
            if (-1.0..=1.0).contains(&value) {
                out.push(CandidateValue {
                    value,
                    joint_logprob: prefix_lp,
                    source_strings: vec![prefix.clone()],
                });
            }
        }
        return;
    }
    for (token, lp) in alts[pos] {
        let saved = prefix.len();
        prefix.push_str(token);
        enumerate_rec(
            alts,
            suffix_max,
            best_complete,
            prune_margin,
            pos + 1,
            prefix_lp + lp,
            prefix,
            out,
        );
        prefix.truncate(saved);
    }
}

/// Duplicate values merged in log space, sorted by ascending value.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedLogProbs {
    pub entries: Vec<(f64, f64)>,
}

/// Merges candidates that parse to the same numeric value (compared on a
/// 10-significant-digit canonical form) with a stable log-sum-exp.
pub fn aggregate(candidates: &[CandidateValue]) -> Result<AggregatedLogProbs, DecodeError> {
    if candidates.is_empty() {
        return Err(DecodeError::EmptyCandidates);
    }
    let mut map: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for cand in candidates {
        let canon = canonical_value(cand.value);
        let key = format!("{canon:.9e}");
        map.entry(key)
            .and_modify(|(_, lp)| *lp = logsumexp2(*lp, cand.joint_logprob))
            .or_insert((canon, cand.joint_logprob));
    }
    let mut entries: Vec<(f64, f64)> = map.into_values().collect();
    entries.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(AggregatedLogProbs { entries })
}

/// Softmax over the merged log-probabilities.
pub fn normalize(
    aggregated: &AggregatedLogProbs,
    provenance: Provenance,
) -> Result<DiscretePrior, DecodeError> {
    if aggregated.entries.is_empty() {
        return Err(DecodeError::EmptyCandidates);
    }
    let max_lp = aggregated
        .entries
        .iter()
        .map(|&(_, lp)| lp)
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = aggregated
        .entries
        .iter()
        .map(|&(_, lp)| (lp - max_lp).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let support = aggregated
        .entries
        .iter()
        .zip(&weights)
        .map(|(&(r, _), &w)| (r, w / total))
        .collect();
    DiscretePrior::new(support, provenance)
}

/// Full decoding pipeline: span location, top-k enumeration, duplicate
/// aggregation, and normalization.
pub fn decode_discrete_prior(
    trace: &TokenTrace,
    template: &ValueFieldTemplate,
    k: usize,
    prune_margin: f64,
) -> Result<DiscretePrior, DecodeError> {
    let span = find_value_span(trace, template)?;
    let candidates = enumerate_candidates(trace, span, k, prune_margin)?;
    let aggregated = aggregate(&candidates)?;
    normalize(
        &aggregated,
        Provenance {
            prompt_id: trace.prompt_id.clone(),
            model_id: trace.model_id.clone(),
        },
    )
}
