//! Filesystem helpers: atomic writes and corpus directory layout.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dsq_core::{Error, Result};

/// Writes a file via a temporary in the same directory, renamed into place
/// on success, so failures never leave partial output.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    tmp.write_all(bytes)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    tmp.persist(path)
        .map_err(|e| Error::io(path.display().to_string(), e.error))?;
    Ok(())
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Sorted list of feature files in a directory.
pub fn feature_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(std::result::Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "ftr"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no .ftr files in {}",
            dir.display()
        )));
    }
    Ok(files)
}

/// One line of `labels.jsonl`: the planted factors of a synthetic
/// utterance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UtteranceLabel {
    pub utterance: String,
    pub speaker: usize,
    pub content: Vec<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prosody: Vec<Vec<f64>>,
}

pub fn write_labels(path: &Path, labels: &[UtteranceLabel]) -> Result<()> {
    let mut out = Vec::new();
    for label in labels {
        serde_json::to_writer(&mut out, label).map_err(|e| Error::MalformedSection {
            context: "labels file",
            detail: e.to_string(),
        })?;
        out.push(b'\n');
    }
    write_atomic(path, &out)
}

pub fn read_labels(path: &Path) -> Result<Vec<UtteranceLabel>> {
    let text = read_text(path)?;
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        labels.push(
            serde_json::from_str(line).map_err(|e| Error::MalformedSection {
                context: "labels file",
                detail: format!("line {}: {e}", i + 1),
            })?,
        );
    }
    Ok(labels)
}
