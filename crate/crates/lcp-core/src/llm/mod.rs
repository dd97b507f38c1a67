//! Prompt rendering, logprob-bearing completion requests, and trace
//! record/replay. Everything network-facing lives here; the rest of the
//! crate stays pure.

mod client;
mod store;
mod templates;

pub use client::{request_with_logprobs, CompletionConfig, DEFAULT_API_KEY_ENV};
pub use store::{composite_prompt_id, split_prompt_id, TraceStore};
pub use templates::{
    render_column_semantics, render_prompt, TemplateError, TemplateId,
    COLUMN_SEMANTICS_TEMPLATE, GAUSSIAN_PREDICT_TEMPLATE, LCP_PREDICT_TEMPLATE,
    PREDICT_WITH_CONTEXT_TEMPLATE,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("endpoint returned status {status}: {body}")]
    Endpoint { status: u16, body: String },
    #[error("request timed out after retries")]
    Timeout,
    #[error("response did not match the expected schema: {0}")]
    MalformedResponse(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("no recorded trace for pair {pair_id} template {template}")]
    NotFound { pair_id: String, template: String },
    #[error("could not parse verbalized parameters: {0}")]
    ParseError(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Trace(#[from] crate::trace::TraceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mean and standard deviation stated directly by the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerbalizedGaussian {
    pub mu: f64,
    pub sigma: f64,
}

impl VerbalizedGaussian {
    pub fn to_prior(self) -> crate::prior::PriorDensity {
        crate::prior::PriorDensity::truncated_gaussian(self.mu, self.sigma)
            .expect("sigma clamped positive at parse time")
    }
}

/// Extracts `{"coefficient": ..., "standard deviation": ...}` from a response
/// body. Numbers may be string-wrapped. The mean is clamped into [-1, 1] and
/// the deviation is floor-clamped to 1e-3 so the result always defines a
/// usable density.
pub fn parse_verbalized_gaussian(response_text: &str) -> Result<VerbalizedGaussian, LlmError> {
    let start = response_text
        .find('{')
        .ok_or_else(|| LlmError::ParseError("no JSON object in response".to_string()))?;
    let end = response_text
        .rfind('}')
        .filter(|&end| end > start)
        .ok_or_else(|| LlmError::ParseError("unterminated JSON object".to_string()))?;
    let value: serde_json::Value = serde_json::from_str(&response_text[start..=end])
        .map_err(|e| LlmError::ParseError(e.to_string()))?;

    let number = |key: &str| -> Result<f64, LlmError> {
        let field = value
            .get(key)
            .ok_or_else(|| LlmError::ParseError(format!("missing key {key:?}")))?;
        match field {
            serde_json::Value::Number(n) => n
                .as_f64()
                .ok_or_else(|| LlmError::ParseError(format!("{key:?} is not finite"))),
            serde_json::Value::String(s) => s
                .trim()
                .parse::<f64>()
                .map_err(|_| LlmError::ParseError(format!("{key:?} is not numeric: {s:?}"))),
            other => Err(LlmError::ParseError(format!(
                "{key:?} has unexpected type: {other}"
            ))),
        }
    };

    let mu_raw = number("coefficient")?;
    let sigma_raw = number("standard deviation")?;
    let mu = mu_raw.clamp(-1.0, 1.0);
    if mu != mu_raw {
        log::warn!("verbalized mean {mu_raw} clamped into [-1, 1]");
    }
    let sigma = if sigma_raw < 1e-3 {
        log::warn!("verbalized deviation {sigma_raw} clamped up to 1e-3");
        1e-3
    } else {
        sigma_raw
    };
    Ok(VerbalizedGaussian { mu, sigma })
}
