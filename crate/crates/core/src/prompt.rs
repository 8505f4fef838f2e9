//! Prompt templates and chat prompt assembly.
//!
//! A template file is UTF-8 text split into sections by `@@ name` header
//! lines. Required sections:
//!
//! - `version`: free-form identifier recorded in run manifests
//! - `direction`: `mol2cap` or `cap2mol`
//! - `role`, `task`, `output_instruction`: the fixed system-prompt blocks
//! - `example`: pattern for one context example, slots `{{input}}`,
//!   `{{output}}` and optionally `{{index}}` (1-based)
//! - `system`: layout with `{{role}}`, `{{task}}`, `{{examples}}` and
//!   `{{output_instruction}}`, in that order
//! - `user`: the user message, slot `{{query}}`
//!
//! Lines starting with `@@#` are comments. Each section's text runs up to the
//! next header with surrounding blank lines removed.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use sha2::{Digest, Sha256};

use crate::store::MoleculeRecord;
use crate::Task;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TemplateError {
    MissingSection(&'static str),
    /// A required `{{slot}}` is absent from a section.
    TemplateSlotMissing { section: &'static str, slot: &'static str },
    UnknownSlot { section: String, slot: String },
    /// System layout slots are out of order.
    BlockOrder,
    BadDirection(String),
    /// The output instruction must name exactly the task's JSON key.
    OutputKey(Task),
    DirectionMismatch { template: Task, requested: Task },
    UnknownSection(String),
}

impl fmt::Display for TemplateError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TemplateError::MissingSection(s) => write!(f, "template has no `@@ {s}` section"),
            TemplateError::TemplateSlotMissing { section, slot } => {
                write!(f, "section `{section}` is missing the {{{{{slot}}}}} slot")
            }
            TemplateError::UnknownSlot { section, slot } => {
                write!(f, "section `{section}` uses unknown slot {{{{{slot}}}}}")
            }
            TemplateError::BlockOrder => f.write_str(
                "system layout must place role, task, examples, output_instruction in that order",
            ),
            TemplateError::BadDirection(d) => write!(f, "unknown direction `{d}`"),
            TemplateError::OutputKey(t) => write!(
                f,
                "output instruction for {t} must name the JSON key \"{}\" and no other task key",
                t.output_key()
            ),
            TemplateError::DirectionMismatch { template, requested } => {
                write!(f, "template is for {template} but {requested} was requested")
            }
            TemplateError::UnknownSection(s) => write!(f, "unknown template section `{s}`"),
        }
    }
}

impl core::error::Error for TemplateError {}

/// The four system-prompt parts plus the example pattern and user message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub version: String,
    pub task: Task,
    pub role_identification: String,
    pub task_description: String,
    pub example_format: String,
    pub output_instruction: String,
    pub system_layout: String,
    pub user_layout: String,
}

const SECTIONS: [&str; 8] = [
    "version",
    "direction",
    "role",
    "task",
    "example",
    "output_instruction",
    "system",
    "user",
];

impl PromptTemplate {
    pub fn parse(text: &str) -> Result<PromptTemplate, TemplateError> {
        let mut sections: BTreeMap<String, Vec<&str>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for line in text.lines() {
            if line.starts_with("@@#") {
                continue;
            }
            if let Some(name) = line.strip_prefix("@@ ") {
                let name = name.trim().to_string();
                if !SECTIONS.contains(&name.as_str()) {
                    return Err(TemplateError::UnknownSection(name));
                }
                sections.insert(name.clone(), Vec::new());
                current = Some(name);
            } else if let Some(name) = &current {
                sections.get_mut(name).expect("current section exists").push(line);
            }
        }
        let take = |name: &'static str| -> Result<String, TemplateError> {
            let lines = sections.get(name).ok_or(TemplateError::MissingSection(name))?;
            Ok(lines.join("\n").trim_matches('\n').to_string())
        };
        let direction = take("direction")?;
        let task: Task = direction
            .trim()
            .parse()
            .map_err(|_| TemplateError::BadDirection(direction.clone()))?;
        let template = PromptTemplate {
            version: take("version")?.trim().to_string(),
            task,
            role_identification: take("role")?,
            task_description: take("task")?,
            example_format: take("example")?,
            output_instruction: take("output_instruction")?,
            system_layout: take("system")?,
            user_layout: take("user")?,
        };
        template.validate()?;
        Ok(template)
    }

    fn validate(&self) -> Result<(), TemplateError> {
        check_slots("example", &self.example_format, &["input", "output"], &["index"])?;
        check_slots(
            "system",
            &self.system_layout,
            &["role", "task", "examples", "output_instruction"],
            &[],
        )?;
        check_slots("user", &self.user_layout, &["query"], &[])?;
        for (name, text) in [
            ("role", &self.role_identification),
            ("task", &self.task_description),
            ("output_instruction", &self.output_instruction),
        ] {
            check_slots(name, text, &[], &[])?;
        }
        let positions: Vec<usize> = ["{{role}}", "{{task}}", "{{examples}}", "{{output_instruction}}"]
            .iter()
            .map(|s| self.system_layout.find(s).unwrap_or(usize::MAX))
            .collect();
        if positions.windows(2).any(|w| w[0] > w[1]) {
            return Err(TemplateError::BlockOrder);
        }
        let own = format!("\"{}\"", self.task.output_key());
        let other_task = match self.task {
            Task::Mol2Cap => Task::Cap2Mol,
            Task::Cap2Mol => Task::Mol2Cap,
        };
        let other = format!("\"{}\"", other_task.output_key());
        if !self.output_instruction.contains(&own) || self.output_instruction.contains(&other) {
            return Err(TemplateError::OutputKey(self.task));
        }
        Ok(())
    }

    /// Example pattern rendered for one `(input, output)` pair.
    pub fn render_example(&self, index: usize, input: &str, output: &str) -> String {
        let index = (index + 1).to_string();
        render(&self.example_format, &[("index", &index), ("input", input), ("output", output)])
    }

    /// Example rendered in the template's direction: `(m → c)` for Mol2Cap,
    /// `(c → m)` for Cap2Mol.
    pub fn render_record(&self, index: usize, record: &MoleculeRecord) -> String {
        match self.task {
            Task::Mol2Cap => self.render_example(index, &record.smiles, &record.caption),
            Task::Cap2Mol => self.render_example(index, &record.caption, &record.smiles),
        }
    }
}

fn slots_in(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                out.push(&after[..end]);
                rest = &after[end + 2..];
            }
            None => break,
        }
    }
    out
}

fn check_slots(
    section: &'static str,
    text: &str,
    required: &[&'static str],
    optional: &[&str],
) -> Result<(), TemplateError> {
    let found = slots_in(text);
    for slot in &found {
        if !required.contains(slot) && !optional.contains(slot) {
            return Err(TemplateError::UnknownSlot {
                section: section.to_string(),
                slot: slot.to_string(),
            });
        }
    }
    for slot in required {
        if !found.contains(slot) {
            return Err(TemplateError::TemplateSlotMissing { section, slot });
        }
    }
    Ok(())
}

/// Single-pass substitution; inserted values are never rescanned.
fn render(pattern: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(pattern.len());
    let mut rest = pattern;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                let name = &after[..end];
                match values.iter().find(|(k, _)| *k == name) {
                    Some((_, v)) => out.push_str(v),
                    None => {
                        out.push_str("{{");
                        out.push_str(name);
                        out.push_str("}}");
                    }
                }
                rest = &after[end + 2..];
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

/// Assembled `(system, user)` pair for one chat request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatPrompt {
    pub system_text: String,
    pub user_text: String,
    pub example_count: usize,
    pub token_estimate: usize,
}

impl ChatPrompt {
    /// Hex SHA-256 of the prompt, the key used by replay fixtures.
    pub fn digest(&self) -> String {
        prompt_digest(&self.system_text, &self.user_text)
    }
}

/// SHA-256 over `"system\0" ‖ system ‖ "\0user\0" ‖ user`, lowercase hex.
pub fn prompt_digest(system: &str, user: &str) -> String {
    let mut h = Sha256::new();
    h.update(b"system\0");
    h.update(system.as_bytes());
    h.update(b"\0user\0");
    h.update(user.as_bytes());
    let bytes = h.finalize();
    let mut out = String::with_capacity(64);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// `ceil(bytes / 3)`: a deliberately high token count for Latin-script text.
pub fn estimate_tokens(text: &str) -> usize {
    text.len().div_ceil(3)
}

pub fn build_mol2cap_prompt(
    template: &PromptTemplate,
    query_smiles: &str,
    examples: &[&MoleculeRecord],
) -> Result<ChatPrompt, TemplateError> {
    build_prompt(template, Task::Mol2Cap, query_smiles, examples)
}

pub fn build_cap2mol_prompt(
    template: &PromptTemplate,
    query_caption: &str,
    examples: &[&MoleculeRecord],
) -> Result<ChatPrompt, TemplateError> {
    build_prompt(template, Task::Cap2Mol, query_caption, examples)
}

/// Builds the prompt for `task`. With no examples the examples block holds a
/// single masked pattern whose output is the task's mask span.
pub fn build_prompt(
    template: &PromptTemplate,
    task: Task,
    query: &str,
    examples: &[&MoleculeRecord],
) -> Result<ChatPrompt, TemplateError> {
    if template.task != task {
        return Err(TemplateError::DirectionMismatch {
            template: template.task,
            requested: task,
        });
    }
    let examples_block = if examples.is_empty() {
        template.render_example(0, task.input_mask(), task.output_mask())
    } else {
        examples
            .iter()
            .enumerate()
            .map(|(i, r)| template.render_record(i, r))
            .collect::<Vec<_>>()
            .join("\n\n")
    };
    let system_text = render(
        &template.system_layout,
        &[
            ("role", &template.role_identification),
            ("task", &template.task_description),
            ("examples", &examples_block),
            ("output_instruction", &template.output_instruction),
        ],
    );
    let user_text = render(&template.user_layout, &[("query", query)]);
    let token_estimate = (estimate_tokens(&system_text) + estimate_tokens(&user_text)).max(1);
    Ok(ChatPrompt {
        system_text,
        user_text,
        example_count: examples.len(),
        token_estimate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoExamplesLeft;

impl fmt::Display for NoExamplesLeft {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("no examples left to drop")
    }
}

impl core::error::Error for NoExamplesLeft {}

/// Index of the example with the longest rendered text; on ties the
/// lower-ranked (later) one.
pub fn longest_example_index(template: &PromptTemplate, examples: &[&MoleculeRecord]) -> Option<usize> {
    let mut longest = None;
    let mut longest_len = 0;
    for (i, r) in examples.iter().enumerate() {
        let len = template.render_record(i, r).len();
        if longest.is_none() || len >= longest_len {
            longest = Some(i);
            longest_len = len;
        }
    }
    longest
}

/// Removes the example with the longest rendered text; on ties the
/// lower-ranked (later) one goes. Order of the rest is preserved.
pub fn drop_longest_example<'a>(
    template: &PromptTemplate,
    examples: &[&'a MoleculeRecord],
) -> Result<Vec<&'a MoleculeRecord>, NoExamplesLeft> {
    let longest = longest_example_index(template, examples).ok_or(NoExamplesLeft)?;
    let mut rest = examples.to_vec();
    rest.remove(longest);
    Ok(rest)
}
