//! JSON report files.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report types serialize") + "\n"
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        }
    }
    std::fs::write(path, to_json(value)).map_err(|e| HarnessError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::format(path, e))
}

/// Version written into every JSON document.
pub const FORMAT_VERSION: u32 = 1;

/// Versioned envelope of models, policies and reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Document<T> {
    pub version: u32,
    pub kind: String,
    pub content: T,
}

impl<T> Document<T> {
    pub fn new(kind: &str, content: T) -> Self {
        Self {
            version: FORMAT_VERSION,
            kind: kind.to_string(),
            content,
        }
    }
}

/// Read a document and check its version and kind.
pub fn read_document<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let doc: Document<T> = read_json(path)?;
    if doc.version != FORMAT_VERSION {
        return Err(HarnessError::format(
            path,
            format!("unsupported version {}", doc.version),
        ));
    }
    if doc.kind != kind {
        return Err(HarnessError::format(
            path,
            format!("expected a {kind} document, found {}", doc.kind),
        ));
    }
    Ok(doc.content)
}
