//! Blocking chat-completion client that records per-token top-k logprobs.
//!
//! This is the only place in the crate that touches the network. The wire
//! shape is the de-facto chat-completion format with `logprobs` enabled;
//! other endpoints can be adapted behind [`request_with_logprobs`].

use serde::{Deserialize, Serialize};

use super::LlmError;
use crate::trace::{TokenStep, TokenTrace};

/// Environment variable consulted for the bearer token by default.
pub const DEFAULT_API_KEY_ENV: &str = "LCP_API_KEY";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompletionConfig {
    pub model_id: String,
    pub endpoint: String,
    /// Alternatives requested per token. Endpoints may cap this lower; the
    /// decoder then runs with whatever k was delivered.
    pub top_logprobs: usize,
    pub max_tokens: usize,
    /// Zero keeps the greedy value span stable across runs.
    pub temperature: f64,
    pub timeout_secs: u64,
    pub max_retries: usize,
    pub max_concurrency: usize,
    pub retry_backoff_ms: u64,
    /// Name of the environment variable holding the API key. The key itself
    /// never appears in flags or config files.
    pub api_key_env: String,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        Self {
            model_id: String::new(),
            endpoint: String::new(),
            top_logprobs: 10,
            max_tokens: 64,
            temperature: 0.0,
            timeout_secs: 60,
            max_retries: 3,
            max_concurrency: 4,
            retry_backoff_ms: 500,
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
        }
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    logprobs: bool,
    top_logprobs: usize,
    max_tokens: usize,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    logprobs: Option<ChoiceLogProbs>,
}

#[derive(Deserialize)]
struct ChoiceLogProbs {
    content: Option<Vec<TokenLogProb>>,
}

#[derive(Deserialize)]
struct TokenLogProb {
    token: String,
    logprob: f64,
    #[serde(default)]
    top_logprobs: Vec<TopLogProb>,
}

#[derive(Deserialize)]
struct TopLogProb {
    token: String,
    logprob: f64,
}

/// Issues one completion request and converts the response into a trace.
/// Retries transient failures (HTTP 429/5xx, timeouts) with exponential
/// backoff up to `max_retries`.
pub fn request_with_logprobs(
    config: &CompletionConfig,
    prompt_id: &str,
    prompt: &str,
) -> Result<TokenTrace, LlmError> {
    let client = reqwest::blocking::Client::builder()
        .timeout(std::time::Duration::from_secs(config.timeout_secs))
        .build()
        .map_err(|e| LlmError::Transport(e.to_string()))?;
    let body = ChatRequest {
        model: &config.model_id,
        messages: vec![ChatMessage {
            role: "user",
            content: prompt,
        }],
        temperature: config.temperature,
        logprobs: true,
        top_logprobs: config.top_logprobs,
        max_tokens: config.max_tokens,
    };
    let api_key = std::env::var(&config.api_key_env).ok();

    let mut attempt = 0;
    loop {
        log::info!(
            "completion request prompt_id={prompt_id} model={} attempt={attempt}",
            config.model_id
        );
        let mut request = client.post(&config.endpoint).json(&body);
        if let Some(key) = &api_key {
            request = request.bearer_auth(key);
        }
        let outcome = request.send();
        let retryable = match outcome {
            Ok(response) => {
                let status = response.status();
                if status.is_success() {
                    let parsed: ChatResponse = response
                        .json()
                        .map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
                    return trace_from_response(parsed, config, prompt_id);
                }
                let transient = status.as_u16() == 429 || status.is_server_error();
                if !transient || attempt >= config.max_retries {
                    let text = response.text().unwrap_or_default();
                    return Err(LlmError::Endpoint {
                        status: status.as_u16(),
                        body: text,
                    });
                }
                format!("http status {status}")
            }
            Err(e) if e.is_timeout() => {
                if attempt >= config.max_retries {
                    return Err(LlmError::Timeout);
                }
                "timeout".to_string()
            }
            Err(e) => {
                if attempt >= config.max_retries {
                    return Err(LlmError::Transport(e.to_string()));
                }
                e.to_string()
            }
        };
        attempt += 1;
        let backoff = config.retry_backoff_ms.saturating_mul(1 << (attempt - 1).min(8));
        log::warn!(
            "completion request prompt_id={prompt_id} retry {attempt}/{}: {retryable}, backing off {backoff} ms",
            config.max_retries
        );
        std::thread::sleep(std::time::Duration::from_millis(backoff));
    }
}

fn trace_from_response(
    response: ChatResponse,
    config: &CompletionConfig,
    prompt_id: &str,
) -> Result<TokenTrace, LlmError> {
    let choice = response
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| LlmError::MalformedResponse("no choices".to_string()))?;
    let content = choice
        .logprobs
        .and_then(|lp| lp.content)
        .ok_or_else(|| LlmError::MalformedResponse("missing logprobs content".to_string()))?;
    if content.is_empty() {
        return Err(LlmError::MalformedResponse("empty logprobs content".to_string()));
    }
    let steps: Vec<TokenStep> = content.into_iter().map(sanitize_step).collect();
    TokenTrace::new(config.model_id.clone(), prompt_id.to_string(), steps)
        .map_err(|e| LlmError::MalformedResponse(e.to_string()))
}

/// Recording-layer guarantees: logprobs clamped to <= 0, alternatives sorted
/// by descending logprob, and the chosen token always listed.
fn sanitize_step(raw: TokenLogProb) -> TokenStep {
    let chosen_lp = raw.logprob.min(0.0);
    let mut alternatives: Vec<(String, f64)> = raw
        .top_logprobs
        .into_iter()
        .map(|alt| (alt.token, alt.logprob.min(0.0)))
        .collect();
    if !alternatives.iter().any(|(t, _)| t == &raw.token) {
        alternatives.push((raw.token.clone(), chosen_lp));
    }
    alternatives.sort_by(|a, b| b.1.total_cmp(&a.1));
    TokenStep {
        token_text: raw.token,
        logprob: chosen_lp,
        alternatives,
    }
}
