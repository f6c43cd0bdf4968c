//! Plain-text corpora: a file, or a directory of files read in
//! lexicographic name order.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::FormatError;

/// What counts as one document.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocMode {
    /// Every non-empty line.
    Line,
    /// Every non-empty file.
    File,
}

impl FromStr for DocMode {
    type Err = FormatError;

    fn from_str(s: &str) -> Result<Self, FormatError> {
        match s {
            "line" => Ok(DocMode::Line),
            "file" => Ok(DocMode::File),
            _ => Err(FormatError::Invalid(format!("unknown doc mode `{s}` (expected line or file)"))),
        }
    }
}

pub fn corpus_files(path: &Path) -> Result<Vec<PathBuf>, FormatError> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(path).map_err(|e| FormatError::io(path, e))? {
        let entry = entry.map_err(|e| FormatError::io(path, e))?;
        if entry.file_type().map_err(|e| FormatError::io(path, e))?.is_file() {
            files.push(entry.path());
        }
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

pub fn read_corpus(path: &Path, mode: DocMode) -> Result<Vec<Vec<u8>>, FormatError> {
    let mut docs = Vec::new();
    for f in corpus_files(path)? {
        let bytes = fs::read(&f).map_err(|e| FormatError::io(&f, e))?;
        match mode {
            DocMode::File => {
                if !bytes.iter().all(u8::is_ascii_whitespace) {
                    docs.push(bytes);
                }
            }
            DocMode::Line => {
                for line in bytes.split(|&b| b == b'\n') {
                    let line = line.strip_suffix(b"\r").unwrap_or(line);
                    if !line.iter().all(u8::is_ascii_whitespace) {
                        docs.push(line.to_vec());
                    }
                }
            }
        }
    }
    if docs.is_empty() {
        return Err(FormatError::Invalid(format!("no documents under {}", path.display())));
    }
    Ok(docs)
}

/// One word per line; blank lines and surrounding whitespace are dropped.
pub fn read_words(path: &Path) -> Result<Vec<String>, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    Ok(text.lines().map(str::trim).filter(|w| !w.is_empty()).map(String::from).collect())
}
