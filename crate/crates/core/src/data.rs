//! JSON Lines dataset ingestion and text cleanup.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenizer::{Role, Vocab};
use crate::trainer::Sample;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub document: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

/// A reference/system pair as read by `evaluate`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedRecord {
    pub summary: String,
    pub generated: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

/// Lazily parses one object per line. Blank lines are skipped; every
/// failure carries its 1-based line number and iteration continues.
pub struct JsonLines<R, T> {
    lines: std::io::Lines<R>,
    line: usize,
    _marker: std::marker::PhantomData<T>,
}

impl<R: BufRead, T: DeserializeOwned> JsonLines<R, T> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: reader.lines(),
            line: 0,
            _marker: std::marker::PhantomData,
        }
    }
}

impl<R: BufRead, T: DeserializeOwned> Iterator for JsonLines<R, T> {
    type Item = Result<T, DataError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = self.lines.next()?;
            self.line += 1;
            let line = self.line;
            let text = match text {
                Ok(t) => t,
                Err(e) => return Some(Err(DataError::Line { line, message: e.to_string() })),
            };
            if text.trim().is_empty() {
                continue;
            }
            return Some(serde_json::from_str(&text).map_err(|e| DataError::Line {
                line,
                message: e.to_string(),
            }));
        }
    }
}

pub fn read_jsonl<R: BufRead, T: DeserializeOwned>(reader: R) -> JsonLines<R, T> {
    JsonLines::new(reader)
}

pub fn load_jsonl(path: &Path) -> Result<JsonLines<BufReader<File>, DatasetRecord>, DataError> {
    Ok(JsonLines::new(BufReader::new(File::open(path)?)))
}

/// Checks the invariants of a training or evaluation record.
pub fn require_summary(record: &DatasetRecord, line: usize) -> Result<(), DataError> {
    if record.document.trim().is_empty() {
        return Err(DataError::Line { line, message: "empty document".into() });
    }
    match &record.summary {
        Some(s) if !s.trim().is_empty() => Ok(()),
        _ => Err(DataError::Line { line, message: "missing summary".into() }),
    }
}

fn unescape_once(s: &str) -> String {
    s.replace("\\n", "\n").replace("\\t", "\t").replace("\\\"", "\"")
}

/// Replaces literal `\n`, `\t` and `\"` with their characters, then collapses
/// whitespace runs to one space and trims. Idempotent.
pub fn clean_text(text: &str) -> String {
    let mut cur = text.to_string();
    loop {
        let next = unescape_once(&cur);
        if next == cur {
            break;
        }
        cur = next;
    }
    cur.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn preprocess(record: DatasetRecord) -> DatasetRecord {
    DatasetRecord {
        document: clean_text(&record.document),
        summary: record.summary.as_deref().map(clean_text),
        id: record.id,
    }
}

/// Tokenizes records that carry a summary into training samples.
pub fn to_samples(vocab: &Vocab, records: &[DatasetRecord]) -> Vec<Sample> {
    records
        .iter()
        .filter_map(|r| {
            Some(Sample {
                doc: vocab.encode(&r.document, Role::Document),
                reference: vocab.encode(r.summary.as_deref()?, Role::Reference),
            })
        })
        .collect()
}

/// Parses and preprocesses every line, failing on the first bad one.
pub fn read_all<R: BufRead>(reader: R) -> Result<Vec<DatasetRecord>, DataError> {
    read_jsonl(reader).map(|r| r.map(preprocess)).collect()
}

/// The bundled 16-pair synthetic corpus.
pub const FIXTURE_CORPUS: &str = include_str!("../fixtures/corpus.jsonl");
/// The first eight corpus pairs, used for overfitting runs.
pub const FIXTURE_TRAIN8: &str = include_str!("../fixtures/train8.jsonl");
