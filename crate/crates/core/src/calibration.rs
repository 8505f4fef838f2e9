//! Output extraction and the validate, repair and re-query loop.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::{BackendErrorKind, ChatBackend, FinishReason};
use crate::prompt::{build_prompt, longest_example_index, PromptTemplate, TemplateError};
use crate::smiles::{is_valid_molecule, parse_smiles, BondOrder};
use crate::store::{MoleculeRecord, RetrievalStrategy, Store, StoreError};
use crate::Task;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionStrategy {
    /// The whole reply is a JSON object holding the task key.
    StrictJson,
    /// First balanced `{...}` object inside surrounding prose or code fences.
    EmbeddedJson,
    /// Case-insensitive key, single quotes, bare keys, trailing commas.
    LenientJson,
    /// Longest valid SMILES token (cap2mol) or text after a caption label (mol2cap).
    PatternFallback,
}

impl ExtractionStrategy {
    pub const ALL: [ExtractionStrategy; 4] = [
        ExtractionStrategy::StrictJson,
        ExtractionStrategy::EmbeddedJson,
        ExtractionStrategy::LenientJson,
        ExtractionStrategy::PatternFallback,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExtractionStrategy::StrictJson => "strict_json",
            ExtractionStrategy::EmbeddedJson => "embedded_json",
            ExtractionStrategy::LenientJson => "lenient_json",
            ExtractionStrategy::PatternFallback => "pattern_fallback",
        }
    }
}

impl fmt::Display for ExtractionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExtractionStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        ExtractionStrategy::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| alloc::format!("unknown extraction strategy `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extraction {
    pub value: String,
    pub strategy: ExtractionStrategy,
}

/// No enabled strategy produced a value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormatError {
    pub raw_text: String,
}

impl fmt::Display for FormatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "no extraction strategy accepted a {}-byte reply", self.raw_text.len())
    }
}

impl core::error::Error for FormatError {}

/// Applies `strategies` in order and returns the first accepted value.
///
/// For cap2mol a candidate is accepted only when it is a valid SMILES string;
/// otherwise the next strategy is tried.
pub fn extract_payload(
    raw_text: &str,
    task: Task,
    strategies: &[ExtractionStrategy],
) -> Result<Extraction, FormatError> {
    let accept = |v: &str| -> Option<String> {
        let v = v.trim();
        let ok = match task {
            Task::Mol2Cap => !v.is_empty(),
            Task::Cap2Mol => crate::smiles::is_valid_smiles(v),
        };
        ok.then(|| v.to_string())
    };
    let key = task.output_key();
    for &strategy in strategies {
        let found = match strategy {
            ExtractionStrategy::StrictJson => serde_json::from_str::<Value>(raw_text.trim())
                .ok()
                .and_then(|v| json_key(&v, key).and_then(&accept)),
            ExtractionStrategy::EmbeddedJson => brace_starts(raw_text).find_map(|start| {
                let end = balanced_end(raw_text, start)?;
                let v: Value = serde_json::from_str(&raw_text[start..end]).ok()?;
                json_key(&v, key).and_then(&accept)
            }),
            ExtractionStrategy::LenientJson => brace_starts(raw_text).find_map(|start| {
                lenient_object(raw_text, start)?
                    .into_iter()
                    .find(|(k, _)| k.trim().eq_ignore_ascii_case(key))
                    .and_then(|(_, v)| accept(&v))
            }),
            ExtractionStrategy::PatternFallback => match task {
                Task::Cap2Mol => longest_smiles_token(raw_text),
                Task::Mol2Cap => labelled_caption(raw_text).and_then(|s| accept(&s)),
            },
        };
        if let Some(value) = found {
            return Ok(Extraction { value, strategy });
        }
    }
    Err(FormatError {
        raw_text: raw_text.to_string(),
    })
}

fn json_key<'a>(v: &'a Value, key: &str) -> Option<&'a str> {
    v.as_object()?.get(key)?.as_str()
}

fn brace_starts(text: &str) -> impl Iterator<Item = usize> + '_ {
    text.char_indices().filter(|&(_, c)| c == '{').map(|(i, _)| i)
}

/// Byte index one past the `}` matching the `{` at `start`, skipping braces
/// inside double-quoted strings.
fn balanced_end(text: &str, start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(start + i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

struct Cursor {
    chars: Vec<char>,
    pos: usize,
}

impl Cursor {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    /// True when only whitespace separates `pos` from `,` or `}`.
    fn at_value_end(&self, from: usize) -> bool {
        self.chars[from..]
            .iter()
            .find(|c| !c.is_whitespace())
            .is_some_and(|&c| c == ',' || c == '}')
    }

    /// Quoted string in `q` quotes. A closing quote counts only when followed
    /// by `,`, `}` or `:` so apostrophes inside single-quoted prose survive.
    fn quoted(&mut self, q: char, is_key: bool) -> Option<String> {
        self.pos += 1;
        let mut out = String::new();
        while let Some(c) = self.peek() {
            self.pos += 1;
            if c == '\\' {
                let e = self.peek()?;
                self.pos += 1;
                match e {
                    'n' => out.push('\n'),
                    't' => out.push('\t'),
                    'r' => out.push('\r'),
                    'u' => {
                        let hex: String = self.chars.get(self.pos..self.pos + 4)?.iter().collect();
                        self.pos += 4;
                        out.push(char::from_u32(u32::from_str_radix(&hex, 16).ok()?).unwrap_or('\u{fffd}'));
                    }
                    other => out.push(other),
                }
            } else if c == q {
                let closes = if is_key {
                    self.chars[self.pos..]
                        .iter()
                        .find(|c| !c.is_whitespace())
                        .is_some_and(|&c| c == ':')
                } else {
                    self.at_value_end(self.pos)
                };
                if closes {
                    return Some(out);
                }
                out.push(c);
            } else {
                out.push(c);
            }
        }
        None
    }

    fn skip_nested(&mut self) -> Option<()> {
        let mut depth = 0i32;
        while let Some(c) = self.peek() {
            self.pos += 1;
            match c {
                '{' | '[' => depth += 1,
                '}' | ']' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(());
                    }
                }
                _ => {}
            }
        }
        None
    }
}

/// Parses a flat object leniently; only string-valued members are returned.
fn lenient_object(text: &str, start: usize) -> Option<Vec<(String, String)>> {
    let mut cur = Cursor {
        chars: text[start..].chars().collect(),
        pos: 0,
    };
    if !cur.eat('{') {
        return None;
    }
    let mut members = Vec::new();
    loop {
        cur.skip_ws();
        if cur.eat('}') {
            return Some(members);
        }
        let key = match cur.peek()? {
            q @ ('"' | '\'') => cur.quoted(q, true)?,
            c if c.is_alphanumeric() || c == '_' => {
                let mut k = String::new();
                while let Some(c) = cur.peek().filter(|c| c.is_alphanumeric() || *c == '_' || *c == '-') {
                    k.push(c);
                    cur.pos += 1;
                }
                k
            }
            _ => return None,
        };
        cur.skip_ws();
        if !cur.eat(':') {
            return None;
        }
        cur.skip_ws();
        match cur.peek()? {
            q @ ('"' | '\'') => {
                let v = cur.quoted(q, false)?;
                members.push((key, v));
            }
            '{' | '[' => cur.skip_nested()?,
            _ => {
                while cur.peek().is_some_and(|c| c != ',' && c != '}') {
                    cur.pos += 1;
                }
            }
        }
        cur.skip_ws();
        if !cur.eat(',') && cur.peek() != Some('}') {
            return None;
        }
    }
}

fn is_smiles_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || "()[]=#$:/\\@+-%.*".contains(c)
}

/// Fallback screen against prose words: every aromatic atom must sit in an
/// aromatic system, and letter-only tokens need at least three characters.
fn plausible_molecule(candidate: &str) -> bool {
    if candidate.chars().all(|c| c.is_ascii_alphabetic()) && candidate.len() < 3 {
        return false;
    }
    let Ok(mol) = parse_smiles(candidate) else {
        return false;
    };
    if !is_valid_molecule(&mol) {
        return false;
    }
    (0..mol.atom_count()).all(|a| {
        !mol.atoms()[a].aromatic
            || mol
                .neighbors(a)
                .iter()
                .filter(|&&(_, b)| mol.bonds()[b].order == BondOrder::Aromatic)
                .count()
                >= 2
    })
}

/// Longest run of SMILES characters that is a plausible valid molecule.
/// Trailing sentence punctuation and a leading `label:` are trimmed.
fn longest_smiles_token(text: &str) -> Option<String> {
    let mut best: Option<&str> = None;
    for run in text.split(|c: char| !is_smiles_char(c)) {
        let trimmed = run.trim_end_matches(['.', ':']).trim_start_matches(':');
        let mut candidates = vec![trimmed];
        if let Some((_, tail)) = trimmed.rsplit_once(':') {
            candidates.push(tail);
        }
        for c in candidates {
            if c.is_empty() || best.is_some_and(|b| b.len() >= c.len()) {
                continue;
            }
            if plausible_molecule(c) {
                best = Some(c);
            }
        }
    }
    best.map(ToString::to_string)
}

const CAPTION_LABELS: [&str; 2] = ["caption", "description"];

/// Text after a `caption:`-style label, to end of line; an empty line tail
/// takes the following paragraph instead.
fn labelled_caption(text: &str) -> Option<String> {
    let lower = text.to_ascii_lowercase();
    let mut hits: Vec<(usize, usize)> = Vec::new();
    for label in CAPTION_LABELS {
        let mut from = 0;
        while let Some(i) = lower[from..].find(label) {
            hits.push((from + i, label.len()));
            from += i + label.len();
        }
    }
    hits.sort_unstable();
    for (at, len) in hits {
        let rest = &text[at + len..];
        let after_marks = rest.trim_start_matches(['*', '"', '\'', ' ', '_']);
        let Some(body) = after_marks.strip_prefix(':') else {
            continue;
        };
        let body = body.trim_start_matches(['*', '_']);
        let (line, remainder) = body.split_once('\n').unwrap_or((body, ""));
        let clean = |s: &str| s.trim().trim_matches(['*', '"', '\'', '`', '_']).trim().to_string();
        let value = clean(line);
        if !value.is_empty() {
            return Some(value);
        }
        let paragraph: Vec<&str> = remainder
            .lines()
            .skip_while(|l| l.trim().is_empty())
            .take_while(|l| !l.trim().is_empty())
            .map(str::trim)
            .collect();
        let value = clean(&paragraph.join(" "));
        if !value.is_empty() {
            return Some(value);
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationPolicy {
    /// Charged backend calls permitted per item.
    pub max_error_allowance: u32,
    pub correction_strategies: Vec<ExtractionStrategy>,
    /// Evict examples before sending while the prompt's token estimate
    /// exceeds this budget. These evictions cost no backend call.
    pub prompt_token_budget: Option<usize>,
}

impl Default for CalibrationPolicy {
    fn default() -> Self {
        CalibrationPolicy {
            max_error_allowance: 5,
            correction_strategies: ExtractionStrategy::ALL.to_vec(),
            prompt_token_budget: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyError {
    ZeroAllowance,
    NoStrategies,
}

impl fmt::Display for PolicyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyError::ZeroAllowance => "max_error_allowance must be at least 1",
            PolicyError::NoStrategies => "at least one correction strategy must be enabled",
        })
    }
}

impl core::error::Error for PolicyError {}

impl CalibrationPolicy {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.max_error_allowance == 0 {
            return Err(PolicyError::ZeroAllowance);
        }
        if self.correction_strategies.is_empty() {
            return Err(PolicyError::NoStrategies);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AttemptOutcome {
    Accepted {
        raw_text: String,
        strategy: ExtractionStrategy,
        finish_reason: FinishReason,
    },
    FormatError {
        raw_text: String,
        finish_reason: FinishReason,
    },
    BackendError {
        kind: BackendErrorKind,
        message: String,
    },
    /// Dropped before sending because the estimate exceeded the budget.
    BudgetEviction { token_estimate: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub shot_count: usize,
    pub prompt_digest: String,
    #[serde(flatten)]
    pub outcome: AttemptOutcome,
    /// Whether this step consumed error allowance.
    pub charged: bool,
    /// Id of the example removed after this step, if any.
    pub evicted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibratedOutput {
    pub value: String,
    /// Calls charged against the allowance, including the accepted one.
    pub query_count: u32,
    /// All backend calls, charged or not.
    pub backend_calls: u32,
    /// Non-strict strategy that produced the value; empty for strict JSON.
    pub repairs_applied: Vec<ExtractionStrategy>,
    pub extraction: ExtractionStrategy,
    pub initial_shot_count: usize,
    pub final_shot_count: usize,
    /// Ids of the examples in the accepted prompt, in prompt order.
    pub examples_used: Vec<String>,
    pub prompt_digest: String,
    pub transcript: Vec<TranscriptEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FailureReason {
    AllowanceExhausted,
    Auth(String),
    Template(TemplateError),
    Policy(PolicyError),
    Retrieval(StoreError),
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FailureReason::AllowanceExhausted => f.write_str("error allowance exhausted"),
            FailureReason::Auth(m) => write!(f, "authentication failed: {m}"),
            FailureReason::Template(e) => write!(f, "{e}"),
            FailureReason::Policy(e) => write!(f, "{e}"),
            FailureReason::Retrieval(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationFailure {
    pub reason: FailureReason,
    /// Charged calls made.
    pub attempts: u32,
    pub backend_calls: u32,
    pub last_raw_text: Option<String>,
    pub transcript: Vec<TranscriptEntry>,
}

impl fmt::Display for CalibrationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "calibration failed after {} charged queries ({} backend calls): {}",
            self.attempts, self.backend_calls, self.reason
        )
    }
}

impl core::error::Error for CalibrationFailure {}

fn setup_failure(reason: FailureReason) -> CalibrationFailure {
    CalibrationFailure {
        reason,
        attempts: 0,
        backend_calls: 0,
        last_raw_text: None,
        transcript: Vec::new(),
    }
}

/// Runs the query loop for one item with the given ranked examples.
///
/// A length error evicts the longest example for free, at most once per shot
/// count; with no examples left it is charged like any other backend error.
/// A reply no strategy can read is charged and the identical prompt is sent
/// again. Auth errors abort. At most `max_error_allowance + examples.len()`
/// backend calls are made.
pub fn calibrated_query<B: ChatBackend + ?Sized>(
    backend: &B,
    template: &PromptTemplate,
    task: Task,
    query: &str,
    examples: &[&MoleculeRecord],
    policy: &CalibrationPolicy,
) -> Result<CalibratedOutput, CalibrationFailure> {
    policy.validate().map_err(|e| setup_failure(FailureReason::Policy(e)))?;
    let initial = examples.len();
    let mut current: Vec<&MoleculeRecord> = examples.to_vec();
    let mut transcript = Vec::new();
    let mut charged = 0u32;
    let mut calls = 0u32;
    let mut last_raw = None;
    let mut free_evictions = initial;
    let fail = |reason, charged, calls, last_raw, transcript| CalibrationFailure {
        reason,
        attempts: charged,
        backend_calls: calls,
        last_raw_text: last_raw,
        transcript,
    };
    loop {
        if charged >= policy.max_error_allowance {
            return Err(fail(FailureReason::AllowanceExhausted, charged, calls, last_raw, transcript));
        }
        let prompt = match build_prompt(template, task, query, &current) {
            Ok(p) => p,
            Err(e) => return Err(fail(FailureReason::Template(e), charged, calls, last_raw, transcript)),
        };
        let digest = prompt.digest();
        if let Some(budget) = policy.prompt_token_budget {
            if prompt.token_estimate > budget && !current.is_empty() {
                let (rest, dropped) = evict(template, &current);
                transcript.push(TranscriptEntry {
                    shot_count: current.len(),
                    prompt_digest: digest,
                    outcome: AttemptOutcome::BudgetEviction {
                        token_estimate: prompt.token_estimate,
                    },
                    charged: false,
                    evicted: Some(dropped),
                });
                current = rest;
                continue;
            }
        }
        calls += 1;
        let shot_count = current.len();
        match backend.complete(&prompt) {
            Ok(result) => {
                charged += 1;
                match extract_payload(&result.raw_text, task, &policy.correction_strategies) {
                    Ok(ex) => {
                        transcript.push(TranscriptEntry {
                            shot_count,
                            prompt_digest: digest.clone(),
                            outcome: AttemptOutcome::Accepted {
                                raw_text: result.raw_text,
                                strategy: ex.strategy,
                                finish_reason: result.finish_reason,
                            },
                            charged: true,
                            evicted: None,
                        });
                        let repairs_applied = if ex.strategy == ExtractionStrategy::StrictJson {
                            Vec::new()
                        } else {
                            vec![ex.strategy]
                        };
                        return Ok(CalibratedOutput {
                            value: ex.value,
                            query_count: charged,
                            backend_calls: calls,
                            repairs_applied,
                            extraction: ex.strategy,
                            initial_shot_count: initial,
                            final_shot_count: shot_count,
                            examples_used: current.iter().map(|r| r.id.clone()).collect(),
                            prompt_digest: digest,
                            transcript,
                        });
                    }
                    Err(_) => {
                        last_raw = Some(result.raw_text.clone());
                        transcript.push(TranscriptEntry {
                            shot_count,
                            prompt_digest: digest,
                            outcome: AttemptOutcome::FormatError {
                                raw_text: result.raw_text,
                                finish_reason: result.finish_reason,
                            },
                            charged: true,
                            evicted: None,
                        });
                    }
                }
            }
            Err(err) => {
                let mut entry = TranscriptEntry {
                    shot_count,
                    prompt_digest: digest,
                    outcome: AttemptOutcome::BackendError {
                        kind: err.kind,
                        message: err.message.clone(),
                    },
                    charged: true,
                    evicted: None,
                };
                match err.kind {
                    BackendErrorKind::ContextLengthExceeded if !current.is_empty() => {
                        if free_evictions > 0 {
                            free_evictions -= 1;
                            entry.charged = false;
                        } else {
                            charged += 1;
                        }
                        let (rest, dropped) = evict(template, &current);
                        entry.evicted = Some(dropped);
                        current = rest;
                        transcript.push(entry);
                    }
                    BackendErrorKind::Auth => {
                        charged += 1;
                        transcript.push(entry);
                        return Err(fail(
                            FailureReason::Auth(err.message),
                            charged,
                            calls,
                            last_raw,
                            transcript,
                        ));
                    }
                    _ => {
                        charged += 1;
                        transcript.push(entry);
                    }
                }
            }
        }
    }
}

fn evict<'a>(template: &PromptTemplate, current: &[&'a MoleculeRecord]) -> (Vec<&'a MoleculeRecord>, String) {
    let i = longest_example_index(template, current).expect("caller checked non-empty");
    let mut rest = current.to_vec();
    let dropped = rest.remove(i).id.clone();
    (rest, dropped)
}

/// Retrieves `n` examples from `store` and runs [`calibrated_query`].
#[allow(clippy::too_many_arguments)]
pub fn calibrated_query_with_store<B: ChatBackend + ?Sized>(
    backend: &B,
    store: &Store,
    template: &PromptTemplate,
    task: Task,
    query: &str,
    n: usize,
    strategy: RetrievalStrategy,
    policy: &CalibrationPolicy,
) -> Result<CalibratedOutput, CalibrationFailure> {
    let examples = if n == 0 {
        Vec::new()
    } else {
        let got = match task {
            Task::Mol2Cap => store.retrieve_mol2cap(query, n, strategy),
            Task::Cap2Mol => store.retrieve_cap2mol(query, n, strategy),
        };
        got.map_err(|e| setup_failure(FailureReason::Retrieval(e)))?
    };
    calibrated_query(backend, template, task, query, &examples, policy)
}
