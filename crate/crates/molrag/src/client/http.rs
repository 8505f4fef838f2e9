use std::time::Duration;

use molrag_core::backend::{BackendErrorKind, FinishReason};
use molrag_core::prompt::ChatPrompt;
use reqwest::blocking::Client as HttpClient;
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::{AttemptError, Reply, Transport};
use crate::config::BackendConfig;

const CONTEXT_CODE: &str = "context_length_exceeded";

/// OpenAI-style `chat/completions` over HTTPS. The key is read from the
/// configured environment variable on every request and never stored.
pub struct HttpTransport {
    config: BackendConfig,
    http: HttpClient,
}

impl HttpTransport {
    pub fn new(config: &BackendConfig) -> Result<HttpTransport, reqwest::Error> {
        let http = HttpClient::builder()
            .timeout(Duration::from_secs(config.request_timeout_secs))
            .build()?;
        Ok(HttpTransport {
            config: config.clone(),
            http,
        })
    }

    fn body(&self, prompt: &ChatPrompt) -> Value {
        json!({
            "model": self.config.model_name,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_output_tokens,
            "messages": [
                {"role": "system", "content": prompt.system_text},
                {"role": "user", "content": prompt.user_text},
            ],
        })
    }
}

/// Replaces every occurrence of `secret` in `text`.
pub fn redact(text: &str, secret: &str) -> String {
    if secret.is_empty() {
        return text.to_string();
    }
    text.replace(secret, "[redacted]")
}

fn snippet(body: &str) -> String {
    let flat: String = body.chars().take(300).map(|c| if c.is_control() { ' ' } else { c }).collect();
    flat.trim().to_string()
}

fn error_code(body: &Value) -> Option<&str> {
    let err = body.get("error").unwrap_or(body);
    ["code", "type"]
        .iter()
        .find_map(|k| err.get(k).and_then(Value::as_str))
}

fn retry_after(headers: &reqwest::header::HeaderMap) -> Option<Duration> {
    let v = headers.get(reqwest::header::RETRY_AFTER)?.to_str().ok()?;
    v.trim().parse::<f64>().ok().filter(|s| s.is_finite() && *s >= 0.0).map(Duration::from_secs_f64)
}

/// Maps a status and error body to an error kind.
pub(crate) fn classify(status: StatusCode, body: &Value) -> BackendErrorKind {
    if error_code(body) == Some(CONTEXT_CODE) {
        return BackendErrorKind::ContextLengthExceeded;
    }
    match status.as_u16() {
        429 => BackendErrorKind::RateLimited,
        401 | 403 => BackendErrorKind::Auth,
        413 => BackendErrorKind::ContextLengthExceeded,
        408 => BackendErrorKind::Network,
        500..=599 => BackendErrorKind::Server,
        _ => BackendErrorKind::MalformedResponse,
    }
}

pub(crate) fn parse_success(body: &Value) -> Option<Reply> {
    let choice = body.get("choices")?.get(0)?;
    let raw_text = choice.get("message")?.get("content")?.as_str()?.to_string();
    let finish_reason = choice
        .get("finish_reason")
        .and_then(Value::as_str)
        .map_or(FinishReason::Other, FinishReason::from_wire);
    Some(Reply { raw_text, finish_reason })
}

impl Transport for HttpTransport {
    fn send(&self, prompt: &ChatPrompt) -> Result<Reply, AttemptError> {
        let var = &self.config.api_key_env_var;
        let key = std::env::var(var).map_err(|_| {
            AttemptError::new(
                BackendErrorKind::Auth,
                format!("environment variable {var} is not set"),
            )
        })?;
        let fail = |kind, message: String| AttemptError::new(kind, redact(&message, &key));
        let resp = self
            .http
            .post(&self.config.endpoint_url)
            .bearer_auth(&key)
            .json(&self.body(prompt))
            .send()
            .map_err(|e| fail(BackendErrorKind::Network, e.without_url().to_string()))?;
        let status = resp.status();
        let hint = retry_after(resp.headers());
        let text = resp
            .text()
            .map_err(|e| fail(BackendErrorKind::Network, e.without_url().to_string()))?;
        let body: Value = serde_json::from_str(&text).unwrap_or(Value::Null);
        if status.is_success() {
            return parse_success(&body).ok_or_else(|| {
                fail(
                    BackendErrorKind::MalformedResponse,
                    format!("response lacks choices[0].message.content: {}", snippet(&text)),
                )
            });
        }
        let kind = classify(status, &body);
        let mut err = fail(kind, format!("HTTP {}: {}", status.as_u16(), snippet(&text)));
        err.retry_after = hint;
        Err(err)
    }
}
