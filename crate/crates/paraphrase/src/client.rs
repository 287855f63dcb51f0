//! Chat-completion client with bounded concurrency and retry backoff.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use fgmdm_core::description::FineGrainedDescription;
use futures::{StreamExt, TryStreamExt};
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, Semaphore};

use crate::cache::{cache_key, CacheEntry, ParaphraseCache};
use crate::error::{Error, Result};
use crate::parse::parse_answer;
use crate::prompt::{build_prompt, PROMPT_VERSION};
use crate::rule::{rule_paraphrase, Lexicon};

pub const API_KEY_ENV: &str = "FGMDM_API_KEY";

#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmClientConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(skip)]
    pub api_key: Option<String>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub max_in_flight: usize,
    /// First retry delay; doubles on each further retry.
    pub backoff_ms: u64,
}

impl Default for LlmClientConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-3.5-turbo".into(),
            api_key: None,
            timeout_secs: 60,
            max_retries: 5,
            max_in_flight: 4,
            backoff_ms: 500,
        }
    }
}

impl fmt::Debug for LlmClientConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LlmClientConfig")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("timeout_secs", &self.timeout_secs)
            .field("max_retries", &self.max_retries)
            .field("max_in_flight", &self.max_in_flight)
            .field("backoff_ms", &self.backoff_ms)
            .finish()
    }
}

impl LlmClientConfig {
    /// Picks up the key from the environment, leaving it unset if absent.
    pub fn with_env_key(mut self) -> Self {
        self.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_in_flight == 0 {
            return Err(Error::Config(
                "paraphrase.max_in_flight must be at least 1".into(),
            ));
        }
        if self.endpoint.trim().is_empty() {
            return Err(Error::Config(
                "paraphrase.endpoint must be non-empty".into(),
            ));
        }
        if self.timeout_secs == 0 {
            return Err(Error::Config(
                "paraphrase.timeout_secs must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    content: String,
}

fn extract_content(body: &str) -> Result<String> {
    let resp: ChatResponse = serde_json::from_str(body)
        .map_err(|e| Error::Parse(format!("malformed completion body: {e}")))?;
    resp.choices
        .into_iter()
        .next()
        .map(|c| c.message.content)
        .filter(|c| !c.trim().is_empty())
        .ok_or_else(|| Error::Parse("completion has no content".into()))
}

#[derive(Debug)]
pub struct LlmClient {
    config: LlmClientConfig,
    http: reqwest::Client,
    permits: Semaphore,
    requests: AtomicU64,
    backoffs: AtomicU64,
}

impl LlmClient {
    pub fn new(config: LlmClientConfig) -> Result<Self> {
        config.validate()?;
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(Self {
            permits: Semaphore::new(config.max_in_flight),
            config,
            http,
            requests: AtomicU64::new(0),
            backoffs: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &LlmClientConfig {
        &self.config
    }

    /// HTTP requests sent so far, retries included.
    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }

    /// Retry sleeps taken so far.
    pub fn backoffs(&self) -> u64 {
        self.backoffs.load(Ordering::SeqCst)
    }

    fn key(&self) -> Result<&str> {
        self.config
            .api_key
            .as_deref()
            .ok_or_else(|| Error::Config(format!("{API_KEY_ENV} is not set")))
    }

    /// Sends one prompt. 429, 5xx and connection failures are retried with
    /// exponential backoff; other statuses fail immediately.
    pub async fn complete(&self, prompt: &str) -> Result<String> {
        let key = self.key()?;
        let body = ChatRequest {
            model: &self.config.model,
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: 0.0,
        };
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            let reason = {
                let _permit = self.permits.acquire().await.map_err(|e| Error::Transport {
                    attempts,
                    message: e.to_string(),
                })?;
                self.requests.fetch_add(1, Ordering::SeqCst);
                let sent = self
                    .http
                    .post(&self.config.endpoint)
                    .bearer_auth(key)
                    .json(&body)
                    .send()
                    .await;
                match sent {
                    Ok(resp) => {
                        let status = resp.status();
                        let text = resp.text().await;
                        match text {
                            Ok(text) if status.is_success() => return extract_content(&text),
                            Ok(text) if status.as_u16() == 429 || status.is_server_error() => {
                                format!("HTTP {status}: {}", text.trim())
                            }
                            Ok(text) => {
                                return Err(Error::Transport {
                                    attempts,
                                    message: format!("HTTP {status}: {}", text.trim()),
                                })
                            }
                            Err(e) => e.to_string(),
                        }
                    }
                    Err(e) => e.to_string(),
                }
            };
            if attempts > self.config.max_retries {
                return Err(Error::Transport {
                    attempts,
                    message: reason,
                });
            }
            let delay = self
                .config
                .backoff_ms
                .saturating_mul(1 << (attempts - 1).min(16));
            tracing::warn!(attempts, delay_ms = delay, %reason, "retrying completion");
            self.backoffs.fetch_add(1, Ordering::SeqCst);
            tokio::time::sleep(Duration::from_millis(delay)).await;
        }
    }
}

/// Paraphrases one sentence. Offline uses the lexicon; online consults the
/// cache first and stores every fresh answer.
pub async fn call_llm_cached(
    sentence: &str,
    client: Option<&LlmClient>,
    cache: &Mutex<ParaphraseCache>,
    lexicon: &Lexicon,
    offline: bool,
) -> Result<FineGrainedDescription> {
    let sentence = sentence.trim();
    if sentence.is_empty() {
        return Err(Error::Contract("sentence must be non-empty".into()));
    }
    if offline {
        return Ok(rule_paraphrase(sentence, lexicon));
    }
    let client =
        client.ok_or_else(|| Error::Config("online paraphrasing needs a client".into()))?;
    client.key()?;
    let key = cache_key(PROMPT_VERSION, sentence);
    if let Some(hit) = cache.lock().await.get(&key) {
        return hit.description();
    }
    let raw = client.complete(&build_prompt(sentence)?).await?;
    let parsed = parse_answer(&raw)?;
    cache
        .lock()
        .await
        .insert(CacheEntry::new(key, sentence, raw, &parsed))?;
    Ok(parsed)
}

/// Paraphrases many sentences with at most `max_in_flight` outstanding
/// requests, preserving input order.
pub async fn paraphrase_all(
    sentences: &[String],
    client: Option<&LlmClient>,
    cache: &Mutex<ParaphraseCache>,
    lexicon: &Lexicon,
    offline: bool,
) -> Result<Vec<FineGrainedDescription>> {
    let width = client.map_or(1, |c| c.config.max_in_flight);
    futures::stream::iter(sentences)
        .map(|s| call_llm_cached(s, client, cache, lexicon, offline))
        .buffered(width)
        .try_collect()
        .await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn debug_redacts_key() {
        let cfg = LlmClientConfig {
            api_key: Some("sk-secret".into()),
            ..LlmClientConfig::default()
        };
        let s = format!("{cfg:?}");
        assert!(!s.contains("sk-secret"));
        assert!(s.contains("redacted"));
    }

    #[test]
    fn content_extraction() {
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":"His arms swing."}}]}"#;
        assert_eq!(extract_content(ok).unwrap(), "His arms swing.");
        assert!(matches!(extract_content("{"), Err(Error::Parse(_))));
        assert!(matches!(
            extract_content(r#"{"choices":[]}"#),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn zero_in_flight_rejected() {
        let cfg = LlmClientConfig {
            max_in_flight: 0,
            ..LlmClientConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
