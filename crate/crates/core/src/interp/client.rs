use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::InterpError;

/// Something that turns a prompt into a completion.
pub trait CompletionClient: Send + Sync {
    fn model(&self) -> &str;
    fn complete(&self, prompt: &str, temperature: f64) -> Result<String, InterpError>;
}

pub const ENV_BASE_URL: &str = "SOFTLOGIC_LLM_BASE_URL";
pub const ENV_MODEL: &str = "SOFTLOGIC_LLM_MODEL";
pub const ENV_API_KEY: &str = "SOFTLOGIC_LLM_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout_secs: u64,
}

impl EndpointConfig {
    /// Reads the endpoint from the environment; `None` unless both the
    /// base URL and model are set.
    pub fn from_env() -> Option<Self> {
        let base_url = std::env::var(ENV_BASE_URL).ok().filter(|s| !s.is_empty())?;
        let model = std::env::var(ENV_MODEL).ok().filter(|s| !s.is_empty())?;
        Some(Self {
            base_url,
            model,
            api_key: std::env::var(ENV_API_KEY).ok().filter(|s| !s.is_empty()),
            timeout_secs: 60,
        })
    }
}

/// Blocking client for a chat-completion endpoint
/// (`POST {base_url}/chat/completions`).
pub struct HttpClient {
    config: EndpointConfig,
    agent: ureq::Agent,
}

impl HttpClient {
    pub fn new(config: EndpointConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build();
        Self { config, agent }
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

impl CompletionClient for HttpClient {
    fn model(&self) -> &str {
        &self.config.model
    }

    fn complete(&self, prompt: &str, temperature: f64) -> Result<String, InterpError> {
        let url = format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        );
        let body = json!({
            "model": self.config.model,
            "temperature": temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut req = self.agent.post(&url);
        if let Some(key) = &self.config.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let resp = req.send_json(body).map_err(|e| match e {
            ureq::Error::Status(code, _) => {
                InterpError::Endpoint(format!("{url} returned status {code}"))
            }
            ureq::Error::Transport(t) => InterpError::EndpointUnavailable(t.to_string()),
        })?;
        let parsed: ChatResponse = resp
            .into_json()
            .map_err(|e| InterpError::Endpoint(format!("malformed response: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| InterpError::Endpoint("response has no message content".into()))
    }
}
