use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::prompt::ChatMessage;
use crate::error::{Error, Result};

pub const DEFAULT_API_KEY_ENV: &str = "DIMASR_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    /// Instance key, `sentence_id#aspect_index`.
    pub key: String,
    pub attempt: u32,
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
}

pub trait ChatTransport: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttemptStatus {
    Ok,
    ParseFailure,
    TransportError,
}

/// One request/response exchange, as written to and replayed from a
/// transcript file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub key: String,
    pub attempt: u32,
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
    pub response: Option<String>,
    pub error: Option<String>,
    pub parsed: Option<String>,
    pub status: AttemptStatus,
}

pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| Error::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_transcript(path: &Path, records: &[TranscriptRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(|e| Error::json("encoding transcript", e))?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Answers requests from a recorded transcript, never touching the network.
/// A request whose messages differ from the recording is an error.
#[derive(Debug, Clone, Default)]
pub struct ReplayTransport {
    records: HashMap<(String, u32), TranscriptRecord>,
}

impl ReplayTransport {
    pub fn new(records: Vec<TranscriptRecord>) -> Self {
        Self {
            records: records
                .into_iter()
                .map(|r| ((r.key.clone(), r.attempt), r))
                .collect(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Ok(Self::new(read_transcript(path)?))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl ChatTransport for ReplayTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let record = self
            .records
            .get(&(request.key.clone(), request.attempt))
            .ok_or_else(|| {
                Error::Transport(format!(
                    "no recorded response for {} attempt {}",
                    request.key, request.attempt
                ))
            })?;
        if record.messages != request.messages {
            return Err(Error::Transport(format!(
                "prompt for {} differs from the recorded one",
                request.key
            )));
        }
        match (&record.response, &record.error) {
            (Some(r), _) => Ok(r.clone()),
            (None, Some(e)) => Err(Error::Transport(e.clone())),
            (None, None) => Err(Error::Transport(format!("empty recording for {}", request.key))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    /// Base URL of an OpenAI-compatible API, e.g. `https://api.openai.com/v1`.
    pub base_url: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_tokens: u32,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            timeout_secs: 60,
            max_tokens: 32,
        }
    }
}

/// Chat-completions client for OpenAI-compatible endpoints.
pub struct HttpTransport {
    agent: ureq::Agent,
    url: String,
    api_key: String,
    max_tokens: u32,
}

impl HttpTransport {
    pub fn new(config: &EndpointConfig) -> Result<Self> {
        let api_key = std::env::var(&config.api_key_env).map_err(|_| {
            Error::Config(format!(
                "environment variable {} must hold the API key for {}",
                config.api_key_env, config.base_url
            ))
        })?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            url: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            api_key,
            max_tokens: config.max_tokens,
        })
    }
}

impl ChatTransport for HttpTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let body = json!({
            "model": request.model,
            "temperature": request.temperature,
            "max_tokens": self.max_tokens,
            "messages": request.messages,
        });
        let mut response = self
            .agent
            .post(&self.url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| Error::Transport(format!("{}: {e}", self.url)))?;
        let status = response.status();
        let value: Value = response
            .body_mut()
            .read_json()
            .map_err(|e| Error::Transport(format!("{}: unreadable response ({status}): {e}", self.url)))?;
        if !status.is_success() {
            return Err(Error::Transport(format!("{}: HTTP {status}: {value}", self.url)));
        }
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Error::Transport(format!("{}: response without message content", self.url)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::prompt::Role;

    fn record(key: &str, attempt: u32, response: Option<&str>) -> TranscriptRecord {
        TranscriptRecord {
            key: key.into(),
            attempt,
            model: "m".into(),
            temperature: 0.1,
            messages: vec![ChatMessage {
                role: Role::User,
                content: format!("q {key}"),
            }],
            response: response.map(str::to_string),
            error: response.is_none().then(|| "timeout".to_string()),
            parsed: None,
            status: AttemptStatus::Ok,
        }
    }

    fn request(key: &str, attempt: u32, content: &str) -> ChatRequest {
        ChatRequest {
            key: key.into(),
            attempt,
            model: "m".into(),
            temperature: 0.1,
            messages: vec![ChatMessage {
                role: Role::User,
                content: content.into(),
            }],
        }
    }

    #[test]
    fn replay_matches_key_attempt_and_prompt() {
        let t = ReplayTransport::new(vec![record("a#0", 0, Some("7#7")), record("b#0", 0, None)]);
        assert_eq!(t.complete(&request("a#0", 0, "q a#0")).unwrap(), "7#7");
        assert!(t.complete(&request("a#0", 1, "q a#0")).is_err());
        assert!(t.complete(&request("a#0", 0, "other")).is_err());
        assert!(t.complete(&request("b#0", 0, "q b#0")).unwrap_err().to_string().contains("timeout"));
    }

    #[test]
    fn transcript_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let recs = vec![record("a#0", 0, Some("7#7")), record("b#0", 0, None)];
        write_transcript(&path, &recs).unwrap();
        assert_eq!(read_transcript(&path).unwrap(), recs);
    }

    #[test]
    fn http_needs_credential() {
        let config = EndpointConfig {
            api_key_env: "DIMASR_TEST_UNSET_KEY_VARIABLE".into(),
            ..Default::default()
        };
        let err = HttpTransport::new(&config).err().unwrap();
        assert!(err.to_string().contains("DIMASR_TEST_UNSET_KEY_VARIABLE"));
        assert_eq!(err.exit_code(), 1);
    }
}
