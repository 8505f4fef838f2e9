//! Built-in prompt templates and loading of custom ones.

use std::path::{Path, PathBuf};

use molrag_core::prompt::{PromptTemplate, TemplateError};
use molrag_core::Task;

use crate::persist::sha256_hex;

pub const MOL2CAP_V1: &str = include_str!("../templates/mol2cap.v1.txt");
pub const CAP2MOL_V1: &str = include_str!("../templates/cap2mol.v1.txt");

pub fn builtin(task: Task) -> &'static str {
    match task {
        Task::Mol2Cap => MOL2CAP_V1,
        Task::Cap2Mol => CAP2MOL_V1,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TemplateLoadError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}: {error}")]
    Invalid { origin: String, error: TemplateError },
    #[error("{origin}: template is for {found}, run is {wanted}")]
    WrongTask { origin: String, found: Task, wanted: Task },
}

/// A parsed template with the SHA-256 of its source text.
#[derive(Debug, Clone)]
pub struct LoadedTemplate {
    pub template: PromptTemplate,
    pub sha256: String,
    pub origin: String,
}

pub fn load_template(path: Option<&Path>, task: Task) -> Result<LoadedTemplate, TemplateLoadError> {
    let (text, origin) = match path {
        Some(p) => (
            std::fs::read_to_string(p).map_err(|source| TemplateLoadError::Io {
                path: p.to_path_buf(),
                source,
            })?,
            p.display().to_string(),
        ),
        None => (builtin(task).to_string(), format!("builtin:{task}.v1")),
    };
    let template = PromptTemplate::parse(&text).map_err(|error| TemplateLoadError::Invalid {
        origin: origin.clone(),
        error,
    })?;
    if template.task != task {
        return Err(TemplateLoadError::WrongTask {
            origin,
            found: template.task,
            wanted: task,
        });
    }
    Ok(LoadedTemplate {
        template,
        sha256: sha256_hex(text.as_bytes()),
        origin,
    })
}
