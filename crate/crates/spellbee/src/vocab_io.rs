//! Tokenizer files.
//!
//! * rank file: one `base64(token) rank` pair per line (tiktoken style);
//! * mini-BPE file: a `spellbee-bpe 1` header, then one `left right` merge
//!   per line in rank order, then `special base64(bytes)` lines;
//! * byte fallback: no file at all.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use spellbee_core::tokenspell::{VocabKind, Vocabulary, END_OF_TEXT};

use crate::FormatError;

const BPE_HEADER: &str = "spellbee-bpe 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VocabFormat {
    RankFile,
    MiniBpe,
    ByteFallback,
}

impl FromStr for VocabFormat {
    type Err = FormatError;

    fn from_str(s: &str) -> Result<Self, FormatError> {
        match s {
            "rank-file" => Ok(VocabFormat::RankFile),
            "mini-bpe" => Ok(VocabFormat::MiniBpe),
            "byte-fallback" => Ok(VocabFormat::ByteFallback),
            _ => Err(FormatError::Invalid(format!(
                "unknown tokenizer format `{s}` (expected rank-file, mini-bpe, byte-fallback)"
            ))),
        }
    }
}

impl fmt::Display for VocabFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VocabFormat::RankFile => "rank-file",
            VocabFormat::MiniBpe => "mini-bpe",
            VocabFormat::ByteFallback => "byte-fallback",
        })
    }
}

impl From<VocabKind> for VocabFormat {
    fn from(k: VocabKind) -> Self {
        match k {
            VocabKind::RankFile => VocabFormat::RankFile,
            VocabKind::MiniBpe => VocabFormat::MiniBpe,
            VocabKind::ByteFallback => VocabFormat::ByteFallback,
        }
    }
}

/// Parses rank-file text. The vocabulary has exactly the listed tokens.
pub fn parse_rank_file(text: &str) -> Result<Vocabulary, FormatError> {
    let mut tokens = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(tok), Some(rank), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(FormatError::Line { line: n, msg: "expected `<base64> <rank>`".into() });
        };
        let bytes = STANDARD
            .decode(tok)
            .map_err(|e| FormatError::Line { line: n, msg: format!("bad base64: {e}") })?;
        let rank: u32 = rank
            .parse()
            .map_err(|e| FormatError::Line { line: n, msg: format!("bad rank `{rank}`: {e}") })?;
        tokens.push((bytes, rank));
    }
    Ok(Vocabulary::from_ranks(tokens)?)
}

/// Parses a mini-BPE file.
pub fn parse_mini_bpe(text: &str) -> Result<Vocabulary, FormatError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == BPE_HEADER => {}
        _ => return Err(FormatError::Line { line: 1, msg: format!("missing `{BPE_HEADER}` header") }),
    }
    let mut merges = Vec::new();
    let mut specials = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("special ") {
            let bytes = STANDARD
                .decode(rest.trim())
                .map_err(|e| FormatError::Line { line: n, msg: format!("bad base64: {e}") })?;
            specials.push(bytes);
            continue;
        }
        if !specials.is_empty() {
            return Err(FormatError::Line { line: n, msg: "merge after special tokens".into() });
        }
        let ids: Vec<u32> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| FormatError::Line { line: n, msg: format!("bad merge: {e}") })?;
        let [a, b] = ids[..] else {
            return Err(FormatError::Line { line: n, msg: "expected `<left> <right>`".into() });
        };
        merges.push((a, b));
    }
    let mut vocab = Vocabulary::from_merges(merges)?;
    for s in specials {
        let id = vocab.push_special(&s);
        if s == END_OF_TEXT {
            vocab.set_end_of_text(id)?;
        }
    }
    Ok(vocab)
}

pub fn format_mini_bpe(vocab: &Vocabulary) -> String {
    let mut out = String::from(BPE_HEADER);
    out.push('\n');
    for (a, b) in vocab.merges() {
        out.push_str(&format!("{a} {b}\n"));
    }
    for &id in vocab.specials() {
        let bytes = vocab.token(id).unwrap_or_default();
        out.push_str(&format!("special {}\n", STANDARD.encode(bytes)));
    }
    out
}

pub fn format_rank_file(vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for (id, bytes) in vocab.entries().iter().enumerate() {
        if !vocab.is_special(id as u32) {
            out.push_str(&format!("{} {}\n", STANDARD.encode(bytes), id));
        }
    }
    out
}

/// Mini-BPE when the file opens with the mini-BPE header, else rank file.
pub fn detect_format(path: &Path) -> Result<VocabFormat, FormatError> {
    let text = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    Ok(if text.starts_with(BPE_HEADER.as_bytes()) { VocabFormat::MiniBpe } else { VocabFormat::RankFile })
}

/// Loads a vocabulary. Mini-BPE files carry their own specials; rank files
/// and the byte fallback get an end-of-text special appended.
pub fn load_vocab(path: Option<&Path>, format: VocabFormat) -> Result<Vocabulary, FormatError> {
    let read = |p: Option<&Path>| -> Result<String, FormatError> {
        let p = p.ok_or_else(|| FormatError::Invalid(format!("{format} tokenizer needs a file")))?;
        fs::read_to_string(p).map_err(|e| FormatError::io(p, e))
    };
    Ok(match format {
        VocabFormat::RankFile => parse_rank_file(&read(path)?)?.with_end_of_text(),
        VocabFormat::MiniBpe => parse_mini_bpe(&read(path)?)?,
        VocabFormat::ByteFallback => Vocabulary::byte_fallback().with_end_of_text(),
    })
}

/// Writes `vocab` in its native format (nothing for byte fallback).
pub fn save_vocab(path: &Path, vocab: &Vocabulary) -> Result<(), FormatError> {
    let text = match vocab.kind() {
        VocabKind::MiniBpe => format_mini_bpe(vocab),
        VocabKind::RankFile => format_rank_file(vocab),
        VocabKind::ByteFallback => return Ok(()),
    };
    fs::write(path, text).map_err(|e| FormatError::io(path, e))
}
