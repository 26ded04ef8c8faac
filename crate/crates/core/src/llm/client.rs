use std::collections::VecDeque;
use std::num::NonZeroU32;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use governor::clock::{Clock, DefaultClock};
use governor::{DefaultDirectRateLimiter, Quota, RateLimiter};
use serde::{Deserialize, Serialize};

use crate::corpus::Document;

/// Structured view of a group comparison. Remote clients only read the
/// prompt; offline stand-ins may score the documents directly.
#[derive(Clone, Debug)]
pub struct RankingTask<'a> {
    pub target: &'a Document,
    pub candidates: Vec<(&'a str, &'a Document)>,
}

#[derive(Clone, Copy, Debug)]
pub struct CompletionRequest<'a> {
    pub prompt: &'a str,
    pub task: Option<&'a RankingTask<'a>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum LlmError {
    /// Worth retrying: timeouts, rate limiting, 5xx.
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request rejected: {0}")]
    Fatal(String),
}

pub trait LlmClient: Send + Sync {
    fn model_tag(&self) -> &str;

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, LlmError>;
}

/// Rough token estimate for clients that do not report usage.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ChatSettings {
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token. Never the token itself.
    pub auth_env: Option<String>,
    pub timeout_secs: u64,
    pub temperature: Option<f64>,
    /// Extra decoding fields merged into the request body.
    #[serde(default)]
    pub decoding: serde_json::Map<String, serde_json::Value>,
    pub requests_per_minute: Option<u32>,
}

impl Default for ChatSettings {
    fn default() -> Self {
        ChatSettings {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o-mini".into(),
            auth_env: Some("DAS_LLM_API_KEY".into()),
            timeout_secs: 120,
            temperature: Some(0.0),
            decoding: serde_json::Map::new(),
            requests_per_minute: None,
        }
    }
}

/// OpenAI-compatible chat-completions client with an optional shared rate limit.
pub struct HttpChatClient {
    settings: ChatSettings,
    agent: ureq::Agent,
    limiter: Option<DefaultDirectRateLimiter>,
}

impl HttpChatClient {
    pub fn new(settings: ChatSettings) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(settings.timeout_secs))
            .build();
        let limiter = settings
            .requests_per_minute
            .and_then(NonZeroU32::new)
            .map(|rpm| RateLimiter::direct(Quota::per_minute(rpm)));
        HttpChatClient {
            settings,
            agent,
            limiter,
        }
    }

    fn wait_for_slot(&self) {
        let Some(limiter) = &self.limiter else {
            return;
        };
        let clock = DefaultClock::default();
        while let Err(not_until) = limiter.check() {
            std::thread::sleep(not_until.wait_time_from(clock.now()));
        }
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

impl LlmClient for HttpChatClient {
    fn model_tag(&self) -> &str {
        &self.settings.model
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, LlmError> {
        self.wait_for_slot();
        let mut body = serde_json::json!({
            "model": self.settings.model,
            "messages": [{ "role": "user", "content": request.prompt }],
        });
        if let Some(t) = self.settings.temperature {
            body["temperature"] = t.into();
        }
        for (k, v) in &self.settings.decoding {
            body[k] = v.clone();
        }

        let mut req = self.agent.post(&self.settings.endpoint);
        if let Some(var) = &self.settings.auth_env {
            let token = std::env::var(var)
                .map_err(|_| LlmError::Fatal(format!("environment variable {var} is not set")))?;
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        let resp = match req.send_json(body) {
            Ok(resp) => resp,
            Err(ureq::Error::Status(code, resp)) => {
                let detail = resp.into_string().unwrap_or_default();
                let msg = format!(
                    "HTTP {code}: {}",
                    detail.chars().take(300).collect::<String>()
                );
                return Err(if code == 429 || code >= 500 {
                    LlmError::Transport(msg)
                } else {
                    LlmError::Fatal(msg)
                });
            }
            Err(e) => return Err(LlmError::Transport(e.to_string())),
        };
        let parsed: ChatResponse = resp
            .into_json()
            .map_err(|e| LlmError::Transport(format!("bad response body: {e}")))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        let (prompt_tokens, completion_tokens) = match parsed.usage {
            Some(u) => (u.prompt_tokens, u.completion_tokens),
            None => (estimate_tokens(request.prompt), estimate_tokens(&text)),
        };
        Ok(Completion {
            text,
            prompt_tokens,
            completion_tokens,
        })
    }
}

/// Replays canned replies in order; used to drive parser and retry paths.
pub struct ScriptedClient {
    tag: String,
    replies: Mutex<VecDeque<Result<String, LlmError>>>,
    calls: AtomicUsize,
}

impl ScriptedClient {
    pub fn new(replies: impl IntoIterator<Item = Result<String, LlmError>>) -> Self {
        ScriptedClient {
            tag: "scripted".into(),
            replies: Mutex::new(replies.into_iter().collect()),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn from_texts<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self::new(replies.into_iter().map(|s| Ok(s.into())))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl LlmClient for ScriptedClient {
    fn model_tag(&self) -> &str {
        &self.tag
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let reply = self
            .replies
            .lock()
            .expect("script poisoned")
            .pop_front()
            .unwrap_or_else(|| Err(LlmError::Fatal("script exhausted".into())))?;
        Ok(Completion {
            prompt_tokens: estimate_tokens(request.prompt),
            completion_tokens: estimate_tokens(&reply),
            text: reply,
        })
    }
}
