//! JSONL datasets and vocabulary files.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use plugin_core::corpus::{CorpusError, Record, Tokenizer, Vocab};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),
    #[error("line {line}: missing string field \"{field}\"")]
    MissingField { line: usize, field: &'static str },
    #[error("line {0}: not a JSON object")]
    MalformedLine(usize),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Vocab(#[from] CorpusError),
}

/// One line of a dataset before tokenization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextRecord {
    pub prompt: String,
    pub target: String,
}

fn read(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => DataError::FileNotFound(path.to_path_buf()),
        _ => DataError::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })
}

/// Records in file order. Blank lines are skipped; line numbers are 1-based
/// and count them.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<TextRecord>, DataError> {
    parse_jsonl(&read(path.as_ref())?)
}

pub fn parse_jsonl(text: &str) -> Result<Vec<TextRecord>, DataError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(line).map_err(|_| DataError::MalformedLine(line_no))?;
        let obj = value.as_object().ok_or(DataError::MalformedLine(line_no))?;
        let field = |name: &'static str| {
            obj.get(name)
                .and_then(Value::as_str)
                .map(str::to_owned)
                .ok_or(DataError::MissingField {
                    line: line_no,
                    field: name,
                })
        };
        out.push(TextRecord {
            prompt: field("prompt")?,
            target: field("target")?,
        });
    }
    Ok(out)
}

pub fn encode_records(records: &[TextRecord], vocab: &Vocab, tokenizer: Tokenizer) -> Vec<Record> {
    records
        .iter()
        .map(|r| Record::from_text(&r.prompt, &r.target, vocab, tokenizer))
        .collect()
}

pub fn write_vocab(path: impl AsRef<Path>, vocab: &Vocab) -> io::Result<()> {
    fs::write(path, vocab.to_text())
}

pub fn read_vocab(path: impl AsRef<Path>) -> Result<Vocab, DataError> {
    Ok(Vocab::from_text(&read(path.as_ref())?)?)
}

/// Word names for synthetic vocabularies: reserved tokens, then `w3`, `w4`, ...
pub fn synthetic_vocab(size: usize) -> Vocab {
    Vocab::from_tokens((3..size).map(|i| format!("w{i}")))
}
