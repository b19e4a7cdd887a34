//! Listwise ranker backed by a chat-completions endpoint.
//!
//! Candidates are labelled `[1]`, `[2]`, … in the prompt and the model is
//! asked to answer with an ordering such as `[2] > [3] > [1]`. Whatever the
//! model returns is repaired into a complete permutation rather than
//! rejected.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{invalid, Result};
use crate::model::Candidate;
use crate::rankers::UsageRecord;
#[cfg(feature = "http")]
use crate::rankers::{RankedBlock, RankerError};

/// Bumped whenever the prompt text changes.
pub const PROMPT_VERSION: &str = "listwise-v1";

/// Passages longer than this many characters are truncated in the prompt.
pub const MAX_PASSAGE_CHARS: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    pub endpoint_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env_var: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub request_timeout: Duration,
    /// Largest block the prompt builder accepts.
    pub max_block_size: usize,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "https://api.openai.com/v1/chat/completions".into(),
            model_name: "gpt-4.1-mini".into(),
            api_key_env_var: "OPENAI_API_KEY".into(),
            temperature: 0.0,
            max_output_tokens: 1024,
            request_timeout: Duration::from_secs(60),
            max_block_size: 100,
        }
    }
}

impl LlmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.endpoint_url.trim().is_empty() {
            return Err(invalid("endpoint_url must not be empty"));
        }
        if !(self.temperature >= 0.0) {
            return Err(invalid("temperature must be >= 0"));
        }
        if self.max_block_size == 0 {
            return Err(invalid("max_block_size must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    fn new(role: &str, content: String) -> Self {
        Self {
            role: role.into(),
            content,
        }
    }
}

fn passage(text: &str) -> String {
    let flat = text.split_whitespace().collect::<Vec<_>>().join(" ");
    match flat.char_indices().nth(MAX_PASSAGE_CHARS) {
        Some((cut, _)) => flat[..cut].to_string(),
        None => flat,
    }
}

/// Builds the system and user messages for ranking `items` against `query`.
/// The output is byte-stable for equal inputs.
pub fn build_prompt(query: &str, items: &[Candidate], max_block_size: usize) -> Result<Vec<ChatMessage>> {
    if items.is_empty() {
        return Err(invalid("cannot build a ranking prompt for an empty block"));
    }
    if items.len() > max_block_size {
        return Err(invalid(format!(
            "block of {} items exceeds the cap of {max_block_size}",
            items.len()
        )));
    }
    let n = items.len();
    let system = "You are RankGPT, an intelligent assistant that can rank passages based on their relevancy to the query.".to_string();
    let mut user = format!(
        "I will provide you with {n} passages, each indicated by a numerical identifier []. \
         Rank the passages based on their relevance to the search query: {query}\n\n"
    );
    for (i, item) in items.iter().enumerate() {
        user.push_str(&format!("[{}] {}\n", i + 1, passage(&item.text)));
    }
    user.push_str(&format!(
        "\nSearch Query: {query}\n\
         Rank the {n} passages above based on their relevance to the search query. \
         All the passages should be included and listed using identifiers, in descending order of relevance. \
         The output format should be [] > [], e.g., [2] > [1]. Only respond with the ranking results, do not say any word or explain."
    ));
    Ok(vec![ChatMessage::new("system", system), ChatMessage::new("user", user)])
}

/// What [`parse_permutation`] had to fix.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseReport {
    /// Identifiers taken from the text, in order.
    pub extracted: usize,
    pub duplicates_dropped: usize,
    pub out_of_range_dropped: usize,
    /// Identifiers missing from the text, appended in input order.
    pub missing_appended: usize,
}

impl ParseReport {
    pub fn repaired(&self) -> bool {
        self.duplicates_dropped + self.out_of_range_dropped + self.missing_appended > 0
    }

    /// No usable identifier was found at all.
    pub fn full_repair(&self) -> bool {
        self.extracted == 0
    }
}

/// Turns model output into a permutation of `[0, n)`.
///
/// Bracketed integers are read in order of appearance (1-based). Repeats
/// after the first occurrence and out-of-range identifiers are dropped;
/// identifiers never mentioned are appended in input order.
pub fn parse_permutation(text: &str, n: usize) -> (Vec<usize>, ParseReport) {
    let mut report = ParseReport::default();
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'[' {
            i += 1;
            continue;
        }
        let digits_start = i + 1;
        let mut j = digits_start;
        while j < bytes.len() && bytes[j].is_ascii_whitespace() {
            j += 1;
        }
        let num_start = j;
        while j < bytes.len() && bytes[j].is_ascii_digit() {
            j += 1;
        }
        let num_end = j;
        while j < bytes.len() && bytes[j].is_ascii_whitespace() {
            j += 1;
        }
        if num_end > num_start && j < bytes.len() && bytes[j] == b']' {
            let id = text[num_start..num_end].parse::<usize>().ok();
            match id {
                Some(id) if (1..=n).contains(&id) => {
                    if seen[id - 1] {
                        report.duplicates_dropped += 1;
                    } else {
                        seen[id - 1] = true;
                        order.push(id - 1);
                        report.extracted += 1;
                    }
                }
                _ => report.out_of_range_dropped += 1,
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    for (id, was_seen) in seen.into_iter().enumerate() {
        if !was_seen {
            order.push(id);
            report.missing_appended += 1;
        }
    }
    (order, report)
}

/// Renders a permutation in the answer format the prompt asks for.
pub fn render_permutation(order: &[usize]) -> String {
    order
        .iter()
        .map(|i| format!("[{}]", i + 1))
        .collect::<Vec<_>>()
        .join(" > ")
}

/// Request body for the chat-completions call.
pub fn request_body(cfg: &LlmConfig, messages: &[ChatMessage]) -> Value {
    json!({
        "model": cfg.model_name,
        "messages": messages,
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_output_tokens,
    })
}

/// Token counts as reported by the endpoint, if present.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReportedUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Parsed response: the answer text (empty when the body is malformed) and
/// any reported usage.
pub fn parse_response_body(body: &str) -> (String, Option<ReportedUsage>) {
    let Ok(value) = serde_json::from_str::<Value>(body) else {
        return (String::new(), None);
    };
    let content = value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    let usage = value.get("usage").and_then(|u| {
        Some(ReportedUsage {
            prompt_tokens: u.get("prompt_tokens")?.as_u64()?,
            completion_tokens: u.get("completion_tokens")?.as_u64()?,
        })
    });
    (content, usage)
}

/// Rough token count used when the endpoint reports none: characters / 4.
pub fn approx_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

/// Maps a response body to a permutation and usage record. Malformed bodies
/// are repaired into the identity permutation.
pub fn interpret_response(
    body: &str,
    messages: &[ChatMessage],
    n: usize,
    latency: Duration,
) -> (Vec<usize>, UsageRecord, ParseReport) {
    let (content, reported) = parse_response_body(body);
    let (order, report) = parse_permutation(&content, n);
    let usage = match reported {
        Some(u) => UsageRecord {
            prompt_tokens: u.prompt_tokens,
            generated_tokens: u.completion_tokens,
            latency,
        },
        None => UsageRecord {
            prompt_tokens: messages.iter().map(|m| approx_tokens(&m.content)).sum(),
            generated_tokens: approx_tokens(&content),
            latency,
        },
    };
    (order, usage, report)
}

/// Sends one block to the endpoint and returns the repaired permutation with
/// its usage. Transport, timeout and HTTP status failures are errors so the
/// dispatcher can retry them.
#[cfg(feature = "http")]
pub fn http_rank_block(
    cfg: &LlmConfig,
    query: &str,
    items: &[Candidate],
) -> std::result::Result<(Vec<usize>, UsageRecord), RankerError> {
    let messages = build_prompt(query, items, cfg.max_block_size).map_err(|e| RankerError::Other(e.to_string()))?;
    let body = request_body(cfg, &messages);
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(cfg.request_timeout))
        .http_status_as_error(false)
        .build()
        .into();
    let mut request = agent.post(&cfg.endpoint_url).header("Content-Type", "application/json");
    match std::env::var(&cfg.api_key_env_var) {
        Ok(key) if !key.is_empty() => {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        _ => log::debug!("{} is not set; sending request without credentials", cfg.api_key_env_var),
    }
    let started = std::time::Instant::now();
    let mut response = request.send_json(&body).map_err(|e| transport_error(e, cfg.request_timeout))?;
    let status = response.status().as_u16();
    let text = response
        .body_mut()
        .read_to_string()
        .map_err(|e| transport_error(e, cfg.request_timeout))?;
    let latency = started.elapsed();
    if !(200..300).contains(&status) {
        return Err(RankerError::Status { status, body: text });
    }
    let (order, usage, report) = interpret_response(&text, &messages, items.len(), latency);
    if report.repaired() {
        log::debug!("repaired model output: {report:?}");
    }
    Ok((order, usage))
}

#[cfg(feature = "http")]
fn transport_error(e: ureq::Error, timeout: Duration) -> RankerError {
    match e {
        ureq::Error::Timeout(_) => RankerError::Timeout(timeout),
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut || io.kind() == std::io::ErrorKind::WouldBlock => {
            RankerError::Timeout(timeout)
        }
        other => RankerError::Transport(other.to_string()),
    }
}

/// [`crate::rankers::ListwiseRanker`] over a chat-completions endpoint.
#[cfg(feature = "http")]
#[derive(Debug, Clone)]
pub struct HttpRanker {
    pub config: LlmConfig,
}

#[cfg(feature = "http")]
impl HttpRanker {
    pub fn new(config: LlmConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }
}

#[cfg(feature = "http")]
impl crate::rankers::ListwiseRanker for HttpRanker {
    fn rank_block(&self, query: &str, items: &[Candidate]) -> std::result::Result<RankedBlock, RankerError> {
        let (order, usage) = http_rank_block(&self.config, query, items)?;
        Ok(RankedBlock {
            order,
            usage: Some(usage),
        })
    }
}
