use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::prompt::ExchangeKind;
use crate::corpus::Span;
use crate::error::{CorefError, Result};

/// What an exchange is about: one mention, or a cluster's mentions in
/// numbering order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetRef {
    Mention(Span),
    Cluster { id: usize, spans: Vec<Span> },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub doc_id: String,
    pub kind: ExchangeKind,
    pub prompt: String,
    pub target: TargetRef,
}

pub trait LlmClient: Send + Sync {
    fn complete(&self, request: &LlmRequest) -> Result<String>;
}

impl<F> LlmClient for F
where
    F: Fn(&LlmRequest) -> Result<String> + Send + Sync,
{
    fn complete(&self, request: &LlmRequest) -> Result<String> {
        self(request)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmClientConfig {
    /// Root of an OpenAI-style API; `/chat/completions` is appended.
    pub base_url: String,
    pub api_key_env: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_retries: u32,
    pub timeout_secs: u64,
    pub backoff_ms: u64,
    pub max_parallel: usize,
}

impl Default for LlmClientConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            api_key_env: "COREF_LLM_API_KEY".into(),
            model_name: "gpt-4".into(),
            temperature: 0.0,
            max_retries: 3,
            timeout_secs: 60,
            backoff_ms: 500,
            max_parallel: 4,
        }
    }
}

impl LlmClientConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature != 0.0 {
            return Err(CorefError::Config(format!("llm temperature must be 0, got {}", self.temperature)));
        }
        if self.max_parallel == 0 {
            return Err(CorefError::Config("llm max_parallel must be at least 1".into()));
        }
        if self.base_url.is_empty() || self.model_name.is_empty() {
            return Err(CorefError::Config("llm base_url and model_name are required".into()));
        }
        Ok(())
    }
}

/// Chat-completions client over HTTP with exponential backoff on
/// transport and server errors.
pub struct HttpLlmClient {
    cfg: LlmClientConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpLlmClient {
    pub fn new(cfg: LlmClientConfig) -> Result<Self> {
        cfg.validate()?;
        let api_key = std::env::var(&cfg.api_key_env).ok();
        if api_key.is_none() {
            log::warn!("{} is not set; sending requests without a bearer token", cfg.api_key_env);
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .build()
            .into();
        Ok(Self { cfg, api_key, agent })
    }

    fn attempt(&self, prompt: &str) -> std::result::Result<String, String> {
        let url = format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'));
        let body = json!({
            "model": self.cfg.model_name,
            "temperature": self.cfg.temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut req = self.agent.post(&url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| e.to_string())?;
        let value: Value = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| format!("response has no message content: {value}"))
    }
}

impl LlmClient for HttpLlmClient {
    fn complete(&self, request: &LlmRequest) -> Result<String> {
        let mut last = String::new();
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                let wait = self.cfg.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(wait));
            }
            match self.attempt(&request.prompt) {
                Ok(reply) => return Ok(reply),
                Err(e) => {
                    log::warn!("llm request for {} failed (attempt {}): {e}", request.doc_id, attempt + 1);
                    last = e;
                }
            }
        }
        Err(CorefError::Llm(last))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serves one canned `(status, body)` per connection and returns the
    /// request bodies it saw.
    fn serve(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut seen = Vec::new();
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                seen.push(String::from_utf8(buf).unwrap());
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            seen
        });
        (url, handle)
    }

    fn request() -> LlmRequest {
        LlmRequest {
            doc_id: "d".into(),
            kind: ExchangeKind::MentionCheck,
            prompt: "check [this]".into(),
            target: TargetRef::Mention(Span::new(0, 0)),
        }
    }

    fn config(url: String) -> LlmClientConfig {
        LlmClientConfig { base_url: url, backoff_ms: 1, max_retries: 2, api_key_env: "COREF_TEST_UNSET_KEY".into(), ..Default::default() }
    }

    #[test]
    fn retries_server_errors_then_succeeds() {
        let ok = json!({"choices": [{"message": {"role": "assistant", "content": "Fine. Yes"}}]}).to_string();
        let (url, server) = serve(vec![(500, "{}".into()), (200, ok)]);
        let client = HttpLlmClient::new(config(url)).unwrap();
        assert_eq!(client.complete(&request()).unwrap(), "Fine. Yes");
        let bodies = server.join().unwrap();
        assert_eq!(bodies.len(), 2);
        let sent: Value = serde_json::from_str(&bodies[1]).unwrap();
        assert_eq!(sent["temperature"], 0.0);
        assert_eq!(sent["messages"][0]["content"], "check [this]");
    }

    #[test]
    fn gives_up_after_max_retries() {
        let (url, server) = serve(vec![(503, "{}".into()), (503, "{}".into()), (503, "{}".into())]);
        let client = HttpLlmClient::new(config(url)).unwrap();
        assert!(matches!(client.complete(&request()), Err(CorefError::Llm(_))));
        assert_eq!(server.join().unwrap().len(), 3);
    }

    #[test]
    fn config_rules() {
        assert!(LlmClientConfig::default().validate().is_ok());
        assert!(LlmClientConfig { temperature: 0.7, ..Default::default() }.validate().is_err());
        assert!(LlmClientConfig { max_parallel: 0, ..Default::default() }.validate().is_err());
    }
}
