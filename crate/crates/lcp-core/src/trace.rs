//! Recorded decoding traces: per-step chosen tokens plus top-k alternatives
//! with log-probabilities (nats).
//!
//! The on-disk format is one JSON object per line:
//! `{"model_id": ..., "prompt_id": ..., "steps": [{"token": ..., "logprob": ...,
//! "top_alternatives": [[token, logprob], ...]}, ...]}`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace has no steps")]
    Empty,
    #[error("step {step}: alternative logprob {logprob} is positive")]
    PositiveLogProb { step: usize, logprob: f64 },
    #[error("step {step}: alternatives not sorted by descending logprob")]
    UnsortedAlternatives { step: usize },
    #[error("step {step}: chosen token {token:?} missing from alternatives")]
    ChosenNotListed { step: usize, token: String },
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One decoding step: the emitted token and the top-k alternatives the model
/// considered at that position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenStep {
    #[serde(rename = "token")]
    pub token_text: String,
    pub logprob: f64,
    /// Sorted by descending logprob; always contains the chosen token.
    #[serde(rename = "top_alternatives")]
    pub alternatives: Vec<(String, f64)>,
}

/// A full recorded completion with per-step logprob alternatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenTrace {
    pub model_id: String,
    pub prompt_id: String,
    pub steps: Vec<TokenStep>,
}

impl TokenTrace {
    pub fn new(
        model_id: impl Into<String>,
        prompt_id: impl Into<String>,
        steps: Vec<TokenStep>,
    ) -> Result<Self, TraceError> {
        let trace = Self {
            model_id: model_id.into(),
            prompt_id: prompt_id.into(),
            steps,
        };
        trace.validate()?;
        Ok(trace)
    }

    /// Checks the recording-layer guarantees: non-empty, alternatives sorted
    /// descending with logprobs <= 0, chosen token listed among them.
    pub fn validate(&self) -> Result<(), TraceError> {
        if self.steps.is_empty() {
            return Err(TraceError::Empty);
        }
        for (i, step) in self.steps.iter().enumerate() {
            for window in step.alternatives.windows(2) {
                if window[0].1 < window[1].1 {
                    return Err(TraceError::UnsortedAlternatives { step: i });
                }
            }
            if let Some((_, lp)) = step.alternatives.iter().find(|(_, lp)| *lp > 0.0) {
                return Err(TraceError::PositiveLogProb {
                    step: i,
                    logprob: *lp,
                });
            }
            if !step.alternatives.iter().any(|(t, _)| t == &step.token_text) {
                return Err(TraceError::ChosenNotListed {
                    step: i,
                    token: step.token_text.clone(),
                });
            }
        }
        Ok(())
    }

    /// Concatenation of the chosen token texts.
    pub fn full_text(&self) -> String {
        self.steps.iter().map(|s| s.token_text.as_str()).collect()
    }

    /// Byte offset of each step's token within `full_text`, plus the total
    /// length as the final entry.
    pub fn byte_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.steps.len() + 1);
        let mut pos = 0;
        for step in &self.steps {
            offsets.push(pos);
            pos += step.token_text.len();
        }
        offsets.push(pos);
        offsets
    }
}

/// Contiguous, inclusive range of step indices covering the value field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueSpan {
    pub start: usize,
    pub end: usize,
}

impl ValueSpan {
    /// Number of steps covered (always >= 1).
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }
}

/// Parses a trace store file (one JSON trace per line). Blank lines are
/// ignored; any malformed line is an error with its 1-based line number.
pub fn read_traces(path: impl AsRef<std::path::Path>) -> Result<Vec<TokenTrace>, TraceError> {
    let content = std::fs::read_to_string(path)?;
    let mut traces = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let trace: TokenTrace =
            serde_json::from_str(line).map_err(|source| TraceError::Parse {
                line: i + 1,
                source,
            })?;
        trace.validate()?;
        traces.push(trace);
    }
    Ok(traces)
}
