//! Run configuration: TOML file layered under command-line flags.
//! Precedence is flags, then file, then defaults.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use molrag_core::calibration::{CalibrationPolicy, ExtractionStrategy};
use molrag_core::store::RetrievalStrategy;
use molrag_core::Task;
use serde::{Deserialize, Serialize};

pub const MAX_SHOTS: usize = 10;
pub const DEFAULT_CONCURRENCY: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Syntax { path: PathBuf, message: String },
    #[error("{}: key {key:?} looks like a secret; keep API keys in the environment variable named by backend.api_key_env_var", path.display())]
    SecretInConfig { path: PathBuf, key: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub request_timeout_secs: u64,
    pub max_retries: u32,
    pub retry_backoff_base_ms: u64,
    /// Name of the variable holding the key, never the key itself.
    pub api_key_env_var: String,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            endpoint_url: "https://api.openai.com/v1/chat/completions".to_string(),
            model_name: "gpt-3.5-turbo".to_string(),
            temperature: 0.0,
            max_output_tokens: 512,
            request_timeout_secs: 60,
            max_retries: 3,
            retry_backoff_base_ms: 500,
            api_key_env_var: "OPENAI_API_KEY".to_string(),
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.endpoint_url.trim().is_empty() {
            return Err(ConfigError::Invalid("backend.endpoint_url is empty".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(ConfigError::Invalid("backend.temperature must be a finite number >= 0".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(ConfigError::Invalid("backend.max_output_tokens must be positive".into()));
        }
        if self.request_timeout_secs == 0 {
            return Err(ConfigError::Invalid("backend.request_timeout_secs must be positive".into()));
        }
        if self.api_key_env_var.trim().is_empty() {
            return Err(ConfigError::Invalid("backend.api_key_env_var is empty".into()));
        }
        Ok(())
    }
}

/// Where replies come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BackendMode {
    Http,
    /// Recorded replies only; no network.
    Replay { fixture: PathBuf },
    /// Live HTTP, with every exchange written to `fixture` at the end.
    Record { fixture: PathBuf },
}

/// Strategy as named on the command line. `bm25` means caption BM25 for
/// caption queries and SMILES 3-gram BM25 for molecule queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyName {
    Random,
    Bm25,
    MorganFts,
    Bm25Caption,
    Bm25SmilesChargram,
}

impl StrategyName {
    pub const ALL: [StrategyName; 5] = [
        StrategyName::Random,
        StrategyName::Bm25,
        StrategyName::MorganFts,
        StrategyName::Bm25Caption,
        StrategyName::Bm25SmilesChargram,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyName::Random => "random",
            StrategyName::Bm25 => "bm25",
            StrategyName::MorganFts => "morgan_fts",
            StrategyName::Bm25Caption => "bm25_caption",
            StrategyName::Bm25SmilesChargram => "bm25_smiles_chargram",
        }
    }

    /// `None` when the strategy cannot serve this task's queries.
    pub fn resolve(self, task: Task, seed: u64) -> Option<RetrievalStrategy> {
        match (self, task) {
            (StrategyName::Random, _) => Some(RetrievalStrategy::Random { seed }),
            (StrategyName::Bm25 | StrategyName::Bm25Caption, Task::Cap2Mol) => Some(RetrievalStrategy::Bm25Caption),
            (StrategyName::Bm25 | StrategyName::Bm25SmilesChargram, Task::Mol2Cap) => {
                Some(RetrievalStrategy::Bm25SmilesChargram)
            }
            (StrategyName::MorganFts, Task::Mol2Cap) => Some(RetrievalStrategy::MorganFts),
            _ => None,
        }
    }
}

impl fmt::Display for StrategyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        StrategyName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| format!("unknown strategy {s:?}; expected one of random, bm25, morgan_fts, bm25_caption, bm25_smiles_chargram"))
    }
}

/// Fully resolved settings for one run. Echoed into every manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub store: PathBuf,
    pub task: Task,
    pub n_shots: usize,
    pub strategy: StrategyName,
    pub seed: u64,
    pub backend: BackendConfig,
    pub mode: BackendMode,
    pub calibration: CalibrationPolicy,
    /// Custom template file; the built-in one for the task when absent.
    pub template: Option<PathBuf>,
    pub concurrency: usize,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_shots > MAX_SHOTS {
            return Err(ConfigError::Invalid(format!("n_shots must be between 0 and {MAX_SHOTS}")));
        }
        if self.concurrency == 0 {
            return Err(ConfigError::Invalid("concurrency must be at least 1".into()));
        }
        if self.n_shots > 0 && self.retrieval().is_none() {
            return Err(ConfigError::Invalid(format!(
                "strategy {} does not apply to {} queries",
                self.strategy, self.task
            )));
        }
        self.calibration
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.backend.validate()
    }

    pub fn retrieval(&self) -> Option<RetrievalStrategy> {
        self.strategy.resolve(self.task, self.seed)
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct BackendFile {
    endpoint_url: Option<String>,
    model_name: Option<String>,
    temperature: Option<f64>,
    max_output_tokens: Option<u32>,
    request_timeout_secs: Option<u64>,
    max_retries: Option<u32>,
    retry_backoff_base_ms: Option<u64>,
    api_key_env_var: Option<String>,
    replay: Option<PathBuf>,
    record: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrationFile {
    max_error_allowance: Option<u32>,
    correction_strategies: Option<Vec<ExtractionStrategy>>,
    prompt_token_budget: Option<usize>,
}

/// Contents of a config file. Every field is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    store: Option<PathBuf>,
    task: Option<Task>,
    n_shots: Option<usize>,
    strategy: Option<StrategyName>,
    seed: Option<u64>,
    template: Option<PathBuf>,
    concurrency: Option<usize>,
    out: Option<PathBuf>,
    test_tsv: Option<PathBuf>,
    #[serde(default)]
    backend: BackendFile,
    #[serde(default)]
    calibration: CalibrationFile,
}

fn looks_secret(key: &str) -> bool {
    let k = key.to_ascii_lowercase().replace('-', "_");
    if k.ends_with("_env_var") {
        return false;
    }
    ["api_key", "apikey", "secret", "token", "password", "authorization", "bearer"]
        .iter()
        .any(|s| k.contains(s))
        && k != "max_output_tokens"
}

fn find_secret(table: &toml::Table) -> Option<String> {
    for (k, v) in table {
        if looks_secret(k) {
            return Some(k.clone());
        }
        if let toml::Value::Table(t) = v {
            if let Some(inner) = find_secret(t) {
                return Some(format!("{k}.{inner}"));
            }
        }
    }
    None
}

impl FileConfig {
    /// Parses a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<FileConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = FileConfig::parse(&text, path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(x) = p.as_mut().filter(|x| x.is_relative()) {
                *x = base.join(&*x);
            }
        };
        fix(&mut cfg.store);
        fix(&mut cfg.template);
        fix(&mut cfg.out);
        fix(&mut cfg.test_tsv);
        fix(&mut cfg.backend.replay);
        fix(&mut cfg.backend.record);
        Ok(cfg)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<FileConfig, ConfigError> {
        let syntax = |message: String| ConfigError::Syntax {
            path: origin.to_path_buf(),
            message,
        };
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| syntax(e.message().to_string()))?;
        if let Some(key) = find_secret(&table) {
            return Err(ConfigError::SecretInConfig {
                path: origin.to_path_buf(),
                key,
            });
        }
        toml::from_str(text).map_err(|e: toml::de::Error| syntax(e.message().to_string()))
    }

    pub fn out(&self) -> Option<&Path> {
        self.out.as_deref()
    }

    pub fn test_tsv(&self) -> Option<&Path> {
        self.test_tsv.as_deref()
    }
}

/// Command-line values; `None` means not given.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub store: Option<PathBuf>,
    pub task: Option<Task>,
    pub n_shots: Option<usize>,
    pub strategy: Option<StrategyName>,
    pub seed: Option<u64>,
    pub endpoint_url: Option<String>,
    pub model_name: Option<String>,
    pub replay: Option<PathBuf>,
    pub record: Option<PathBuf>,
    pub template: Option<PathBuf>,
    pub concurrency: Option<usize>,
    pub max_retries: Option<u32>,
    pub max_error_allowance: Option<u32>,
}

pub fn resolve(flags: &Overrides, file: &FileConfig) -> Result<RunConfig, ConfigError> {
    let d = BackendConfig::default();
    let fb = &file.backend;
    let backend = BackendConfig {
        endpoint_url: flags.endpoint_url.clone().or(fb.endpoint_url.clone()).unwrap_or(d.endpoint_url),
        model_name: flags.model_name.clone().or(fb.model_name.clone()).unwrap_or(d.model_name),
        temperature: fb.temperature.unwrap_or(d.temperature),
        max_output_tokens: fb.max_output_tokens.unwrap_or(d.max_output_tokens),
        request_timeout_secs: fb.request_timeout_secs.unwrap_or(d.request_timeout_secs),
        max_retries: flags.max_retries.or(fb.max_retries).unwrap_or(d.max_retries),
        retry_backoff_base_ms: fb.retry_backoff_base_ms.unwrap_or(d.retry_backoff_base_ms),
        api_key_env_var: fb.api_key_env_var.clone().unwrap_or(d.api_key_env_var),
    };
    // A replay or record flag replaces whatever mode the file chose; an
    // explicit endpoint flag selects live HTTP.
    let mode = if let Some(f) = &flags.replay {
        BackendMode::Replay { fixture: f.clone() }
    } else if let Some(f) = &flags.record {
        BackendMode::Record { fixture: f.clone() }
    } else if flags.endpoint_url.is_some() {
        BackendMode::Http
    } else if let Some(f) = &fb.replay {
        BackendMode::Replay { fixture: f.clone() }
    } else if let Some(f) = &fb.record {
        BackendMode::Record { fixture: f.clone() }
    } else {
        BackendMode::Http
    };
    let dc = CalibrationPolicy::default();
    let calibration = CalibrationPolicy {
        max_error_allowance: flags
            .max_error_allowance
            .or(file.calibration.max_error_allowance)
            .unwrap_or(dc.max_error_allowance),
        correction_strategies: file
            .calibration
            .correction_strategies
            .clone()
            .unwrap_or(dc.correction_strategies),
        prompt_token_budget: file.calibration.prompt_token_budget.or(dc.prompt_token_budget),
    };
    let task = flags.task.or(file.task).ok_or_else(|| ConfigError::Invalid("task is required (--task mol2cap|cap2mol)".into()))?;
    let cfg = RunConfig {
        store: flags
            .store
            .clone()
            .or(file.store.clone())
            .ok_or_else(|| ConfigError::Invalid("store path is required (--store)".into()))?,
        task,
        n_shots: flags.n_shots.or(file.n_shots).unwrap_or(MAX_SHOTS),
        strategy: flags.strategy.or(file.strategy).unwrap_or(match task {
            Task::Mol2Cap => StrategyName::MorganFts,
            Task::Cap2Mol => StrategyName::Bm25,
        }),
        seed: flags.seed.or(file.seed).unwrap_or(0),
        backend,
        mode,
        calibration,
        template: flags.template.clone().or(file.template.clone()),
        concurrency: flags.concurrency.or(file.concurrency).unwrap_or(DEFAULT_CONCURRENCY),
    };
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<FileConfig, ConfigError> {
        FileConfig::parse(text, Path::new("cfg.toml"))
    }

    #[test]
    fn precedence_flags_file_defaults() {
        let file = parse("store = \"s\"\ntask = \"cap2mol\"\nn_shots = 2\nseed = 7\n[backend]\nmodel_name = \"m-file\"\nmax_retries = 9\n").unwrap();
        let flags = Overrides {
            n_shots: Some(5),
            model_name: Some("m-flag".into()),
            ..Overrides::default()
        };
        let cfg = resolve(&flags, &file).unwrap();
        assert_eq!(cfg.n_shots, 5);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.backend.model_name, "m-flag");
        assert_eq!(cfg.backend.max_retries, 9);
        assert_eq!(cfg.backend.temperature, 0.0);
        assert_eq!(cfg.strategy, StrategyName::Bm25);
        assert_eq!(cfg.retrieval(), Some(RetrievalStrategy::Bm25Caption));
        assert_eq!(cfg.calibration, CalibrationPolicy::default());
    }

    #[test]
    fn secrets_are_refused_without_echo() {
        let err = parse("[backend]\napi_key = \"sk-live-123\"\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("backend.api_key"), "{msg}");
        assert!(!msg.contains("sk-live-123"));
        assert!(parse("[backend]\napi_key_env_var = \"MY_KEY\"\nmax_output_tokens = 10\n").is_ok());
    }

    #[test]
    fn unknown_keys_and_bad_values() {
        assert!(parse("nshots = 3\n").is_err());
        let file = parse("store = \"s\"\ntask = \"cap2mol\"\nstrategy = \"morgan_fts\"\n").unwrap();
        assert!(resolve(&Overrides::default(), &file).is_err());
        let file = parse("store = \"s\"\ntask = \"mol2cap\"\nn_shots = 11\n").unwrap();
        assert!(resolve(&Overrides::default(), &file).is_err());
    }

    #[test]
    fn replay_flag_wins() {
        let file = parse("store = \"s\"\ntask = \"mol2cap\"\n[backend]\nrecord = \"r.jsonl\"\n").unwrap();
        let flags = Overrides {
            replay: Some("p.jsonl".into()),
            ..Overrides::default()
        };
        assert_eq!(
            resolve(&flags, &file).unwrap().mode,
            BackendMode::Replay { fixture: "p.jsonl".into() }
        );
        assert_eq!(
            resolve(&Overrides::default(), &file).unwrap().mode,
            BackendMode::Record { fixture: "r.jsonl".into() }
        );
    }

    #[test]
    fn run_config_round_trips_through_json() {
        let file = parse("store = \"s\"\ntask = \"mol2cap\"\n").unwrap();
        let cfg = resolve(&Overrides::default(), &file).unwrap();
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
