use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

/// Translation direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// SMILES in, caption out.
    Mol2Cap,
    /// Caption in, SMILES out.
    Cap2Mol,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Mol2Cap => "mol2cap",
            Task::Cap2Mol => "cap2mol",
        }
    }

    /// JSON key the model must answer with.
    pub fn output_key(self) -> &'static str {
        match self {
            Task::Mol2Cap => "caption",
            Task::Cap2Mol => "molecule",
        }
    }

    /// Placeholder for the unknown output in zero-shot prompts.
    pub fn output_mask(self) -> &'static str {
        match self {
            Task::Mol2Cap => "[CAPTION_MASK]",
            Task::Cap2Mol => "[MOLECULE_MASK]",
        }
    }

    pub fn input_mask(self) -> &'static str {
        match self {
            Task::Mol2Cap => "[MOLECULE_MASK]",
            Task::Cap2Mol => "[CAPTION_MASK]",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = &'static str;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mol2cap" => Ok(Task::Mol2Cap),
            "cap2mol" => Ok(Task::Cap2Mol),
            _ => Err("task must be mol2cap or cap2mol"),
        }
    }
}
