//! External text-completion client: a single `complete(prompt) -> text`
//! operation over a configurable HTTP endpoint.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Transport-level failure, tagged with a request id for log correlation.
#[derive(Debug, Clone, thiserror::Error)]
#[error("request {request_id}: {msg}")]
pub struct ClientError {
    pub request_id: String,
    pub msg: String,
}

/// The one operation the annotation pipeline needs from a generator.
pub trait TextCompletionClient: Send + Sync {
    fn complete(&self, prompt: &str) -> std::result::Result<String, ClientError>;
}

/// Endpoint settings. The API key is read from the environment variable named
/// here, never stored in config files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClientConfig {
    pub endpoint: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: u64,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: usize,
    #[serde(default = "default_max_concurrency")]
    pub max_concurrency: usize,
}

fn default_timeout_s() -> u64 {
    30
}

fn default_max_attempts() -> usize {
    2
}

fn default_max_concurrency() -> usize {
    4
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct CompletionResponse {
    completion: String,
}

/// Blocking HTTP client speaking a minimal JSON protocol:
/// POST `{"prompt": ...}` -> `{"completion": ...}`.
pub struct HttpCompletionClient {
    endpoint: String,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
}

impl HttpCompletionClient {
    pub fn from_config(cfg: &ClientConfig) -> Result<HttpCompletionClient> {
        let api_key = match &cfg.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                Error::Config(format!("api key environment variable '{var}' not set"))
            })?),
            None => None,
        };
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_s))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(HttpCompletionClient {
            endpoint: cfg.endpoint.clone(),
            api_key,
            http,
        })
    }
}

impl TextCompletionClient for HttpCompletionClient {
    fn complete(&self, prompt: &str) -> std::result::Result<String, ClientError> {
        let request_id = uuid::Uuid::new_v4().to_string();
        let mut req = self
            .http
            .post(&self.endpoint)
            .header("x-request-id", &request_id)
            .json(&CompletionRequest { prompt });
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| ClientError {
            request_id: request_id.clone(),
            msg: e.to_string(),
        })?;
        if !resp.status().is_success() {
            return Err(ClientError {
                request_id,
                msg: format!("endpoint returned status {}", resp.status()),
            });
        }
        let body: CompletionResponse = resp.json().map_err(|e| ClientError {
            request_id: request_id.clone(),
            msg: format!("invalid response body: {e}"),
        })?;
        Ok(body.completion)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    /// One-shot HTTP server answering a canned completion.
    fn serve_once(body: &'static str, status: &'static str) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            if let Ok((mut stream, _)) = listener.accept() {
                let mut buf = [0u8; 4096];
                let _ = stream.read(&mut buf);
                let response = format!(
                    "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                let _ = stream.write_all(response.as_bytes());
            }
        });
        format!("http://{addr}/complete")
    }

    #[test]
    fn http_client_roundtrip() {
        let endpoint = serve_once(r#"{"completion":"hello from server"}"#, "200 OK");
        let client = HttpCompletionClient::from_config(&ClientConfig {
            endpoint,
            api_key_env: None,
            timeout_s: 5,
            max_attempts: 1,
            max_concurrency: 1,
        })
        .unwrap();
        assert_eq!(client.complete("hi").unwrap(), "hello from server");
    }

    #[test]
    fn http_client_maps_error_status() {
        let endpoint = serve_once(r#"{"error":"nope"}"#, "500 Internal Server Error");
        let client = HttpCompletionClient::from_config(&ClientConfig {
            endpoint,
            api_key_env: None,
            timeout_s: 5,
            max_attempts: 1,
            max_concurrency: 1,
        })
        .unwrap();
        let err = client.complete("hi").unwrap_err();
        assert!(err.msg.contains("500"), "{}", err.msg);
        assert!(!err.request_id.is_empty());
    }

    #[test]
    fn missing_api_key_env_is_config_error() {
        let cfg = ClientConfig {
            endpoint: "http://localhost:1/x".into(),
            api_key_env: Some("AURICLE_TEST_KEY_THAT_IS_NOT_SET".into()),
            timeout_s: 1,
            max_attempts: 1,
            max_concurrency: 1,
        };
        assert!(HttpCompletionClient::from_config(&cfg).is_err());
    }
}
