//! Abstract chat-completion backend.

use alloc::string::String;
use core::fmt;
use core::str::FromStr;
use core::time::Duration;

use serde::{Deserialize, Serialize};

use crate::prompt::ChatPrompt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    ContentFilter,
    Other,
}

impl FinishReason {
    /// Maps the wire value; anything unrecognised is `Other`.
    pub fn from_wire(s: &str) -> FinishReason {
        match s {
            "stop" => FinishReason::Stop,
            "length" => FinishReason::Length,
            "content_filter" => FinishReason::ContentFilter,
            _ => FinishReason::Other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionResult {
    pub raw_text: String,
    pub finish_reason: FinishReason,
    pub latency: Duration,
    /// Transport attempts spent on this call, at least 1.
    pub attempt_count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendErrorKind {
    RateLimited,
    ContextLengthExceeded,
    Network,
    Auth,
    Server,
    MalformedResponse,
}

impl BackendErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendErrorKind::RateLimited => "rate_limited",
            BackendErrorKind::ContextLengthExceeded => "context_length_exceeded",
            BackendErrorKind::Network => "network",
            BackendErrorKind::Auth => "auth",
            BackendErrorKind::Server => "server",
            BackendErrorKind::MalformedResponse => "malformed_response",
        }
    }

    /// Kinds worth retrying at the transport level.
    pub fn is_transient(self) -> bool {
        matches!(
            self,
            BackendErrorKind::RateLimited | BackendErrorKind::Network | BackendErrorKind::Server
        )
    }
}

impl fmt::Display for BackendErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackendErrorKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Ok(match s {
            "rate_limited" => BackendErrorKind::RateLimited,
            "context_length_exceeded" => BackendErrorKind::ContextLengthExceeded,
            "network" => BackendErrorKind::Network,
            "auth" => BackendErrorKind::Auth,
            "server" => BackendErrorKind::Server,
            "malformed_response" => BackendErrorKind::MalformedResponse,
            _ => return Err(()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendError {
    pub kind: BackendErrorKind,
    pub message: String,
    /// Attempts spent before giving up.
    pub attempt_count: u32,
}

impl BackendError {
    pub fn new(kind: BackendErrorKind, message: impl Into<String>) -> BackendError {
        BackendError {
            kind,
            message: message.into(),
            attempt_count: 1,
        }
    }
}

impl fmt::Display for BackendError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl core::error::Error for BackendError {}

pub trait ChatBackend {
    fn complete(&self, prompt: &ChatPrompt) -> Result<CompletionResult, BackendError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn complete(&self, prompt: &ChatPrompt) -> Result<CompletionResult, BackendError> {
        (**self).complete(prompt)
    }
}
