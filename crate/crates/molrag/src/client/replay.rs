use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use molrag_core::backend::{BackendError, BackendErrorKind, FinishReason};
use molrag_core::prompt::ChatPrompt;
use serde::{Deserialize, Serialize};

use super::{AttemptError, Reply, Transport};

/// Recorded reply text, either bare or with its finish reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ResponseSpec {
    Text(String),
    Full {
        text: String,
        #[serde(default = "stop")]
        finish_reason: FinishReason,
    },
}

fn stop() -> FinishReason {
    FinishReason::Stop
}

impl ResponseSpec {
    fn reply(&self) -> Reply {
        match self {
            ResponseSpec::Text(t) => Reply {
                raw_text: t.clone(),
                finish_reason: FinishReason::Stop,
            },
            ResponseSpec::Full { text, finish_reason } => Reply {
                raw_text: text.clone(),
                finish_reason: *finish_reason,
            },
        }
    }

    fn from_reply(reply: &Reply) -> ResponseSpec {
        if reply.finish_reason == FinishReason::Stop {
            ResponseSpec::Text(reply.raw_text.clone())
        } else {
            ResponseSpec::Full {
                text: reply.raw_text.clone(),
                finish_reason: reply.finish_reason,
            }
        }
    }
}

/// One attempt in an error script.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptStep {
    Error {
        error: BackendErrorKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        message: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        retry_after_ms: Option<u64>,
    },
    Response { response: ResponseSpec },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FixtureLine {
    digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    response: Option<ResponseSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error_script: Option<Vec<ScriptStep>>,
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("MissingFixture: no recorded response for prompt digest {digest}")]
    MissingFixture { digest: String },
    #[error("FixtureParseError: {}:{line}: {message}", path.display())]
    FixtureParseError {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Serves recorded replies keyed by prompt digest. Each digest's steps are
/// played in order per instance; the last one repeats once the script ends.
/// Never touches the network.
#[derive(Debug)]
pub struct ReplayTransport {
    steps: HashMap<String, Vec<ScriptStep>>,
    cursor: Mutex<HashMap<String, usize>>,
}

impl ReplayTransport {
    pub fn open(path: &Path) -> Result<ReplayTransport, ReplayError> {
        let text = std::fs::read_to_string(path).map_err(|source| ReplayError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        ReplayTransport::parse(&text, path)
    }

    /// `origin` only labels parse errors.
    pub fn parse(text: &str, origin: &Path) -> Result<ReplayTransport, ReplayError> {
        let mut steps: HashMap<String, Vec<ScriptStep>> = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| ReplayError::FixtureParseError {
                path: origin.to_path_buf(),
                line: i + 1,
                message,
            };
            let entry: FixtureLine = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
            let script = match (entry.response, entry.error_script) {
                (Some(r), None) => vec![ScriptStep::Response { response: r }],
                (None, Some(s)) if !s.is_empty() => s,
                (None, Some(_)) => return Err(bad("error_script is empty".to_string())),
                _ => return Err(bad("expected exactly one of response or error_script".to_string())),
            };
            steps.entry(entry.digest).or_default().extend(script);
        }
        Ok(ReplayTransport {
            steps,
            cursor: Mutex::new(HashMap::new()),
        })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// The next step for `digest`, advancing its cursor.
    pub fn lookup(&self, digest: &str) -> Result<ScriptStep, ReplayError> {
        let script = self.steps.get(digest).ok_or_else(|| ReplayError::MissingFixture {
            digest: digest.to_string(),
        })?;
        let mut cursor = self.cursor.lock().unwrap();
        let at = cursor.entry(digest.to_string()).or_insert(0);
        let step = script[(*at).min(script.len() - 1)].clone();
        *at += 1;
        Ok(step)
    }
}

fn step_result(step: ScriptStep) -> Result<Reply, AttemptError> {
    match step {
        ScriptStep::Response { response } => Ok(response.reply()),
        ScriptStep::Error {
            error,
            message,
            retry_after_ms,
        } => Err(AttemptError {
            error: BackendError::new(error, message.unwrap_or_else(|| "replayed error".to_string())),
            retry_after: retry_after_ms.map(Duration::from_millis),
        }),
    }
}

impl Transport for ReplayTransport {
    fn send(&self, prompt: &ChatPrompt) -> Result<Reply, AttemptError> {
        match self.lookup(&prompt.digest()) {
            Ok(step) => step_result(step),
            Err(e) => Err(AttemptError::new(BackendErrorKind::MalformedResponse, e.to_string())),
        }
    }
}

/// Forwards to an inner transport and keeps every attempt's outcome, per
/// digest in call order, for writing out as a replay fixture.
pub struct RecordingTransport<T> {
    inner: T,
    log: Mutex<BTreeMap<String, Vec<ScriptStep>>>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T) -> RecordingTransport<T> {
        RecordingTransport {
            inner,
            log: Mutex::new(BTreeMap::new()),
        }
    }

    /// Starts from the exchanges already in `text`, so a resumed recording
    /// keeps what earlier runs captured.
    pub fn preload(&self, text: &str, origin: &Path) -> Result<(), ReplayError> {
        let earlier = ReplayTransport::parse(text, origin)?;
        let mut log = self.log.lock().unwrap();
        for (digest, steps) in earlier.steps {
            log.entry(digest).or_default().extend(steps);
        }
        Ok(())
    }

    /// Fixture lines sorted by digest.
    pub fn fixture_text(&self) -> String {
        let log = self.log.lock().unwrap();
        let mut out = String::new();
        for (digest, script) in log.iter() {
            let line = match script.as_slice() {
                [ScriptStep::Response { response }] => FixtureLine {
                    digest: digest.clone(),
                    response: Some(response.clone()),
                    error_script: None,
                },
                _ => FixtureLine {
                    digest: digest.clone(),
                    response: None,
                    error_script: Some(script.clone()),
                },
            };
            out.push_str(&serde_json::to_string(&line).expect("fixture line serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_fixture(&self, path: &Path) -> std::io::Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.fixture_text())
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn send(&self, prompt: &ChatPrompt) -> Result<Reply, AttemptError> {
        let result = self.inner.send(prompt);
        let step = match &result {
            Ok(reply) => ScriptStep::Response {
                response: ResponseSpec::from_reply(reply),
            },
            Err(e) => ScriptStep::Error {
                error: e.error.kind,
                message: Some(e.error.message.clone()),
                retry_after_ms: e.retry_after.map(|d| d.as_millis() as u64),
            },
        };
        self.log.lock().unwrap().entry(prompt.digest()).or_default().push(step);
        result
    }
}
