//! JSON and JSON-lines readers and writers for the on-disk formats.
//!
//! Readers accept a stream of JSON values separated by whitespace, so a
//! single pretty-printed object and a JSON-lines file both parse.

use std::io::{self, Read, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::Utterance;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{what}, record {record}: {source}")]
    Parse {
        what: &'static str,
        record: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{what}: {message}")]
    Invalid { what: &'static str, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One reference document: `{"doc_id", "text"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefRecord {
    pub doc_id: String,
    pub text: String,
}

pub fn read_records<T: DeserializeOwned>(mut reader: impl Read, what: &'static str) -> Result<Vec<T>, FormatError> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    parse_records(&text, what)
}

pub fn parse_records<T: DeserializeOwned>(text: &str, what: &'static str) -> Result<Vec<T>, FormatError> {
    let mut out = Vec::new();
    for (i, item) in serde_json::Deserializer::from_str(text).into_iter::<T>().enumerate() {
        out.push(item.map_err(|source| FormatError::Parse {
            what,
            record: i + 1,
            source,
        })?);
    }
    Ok(out)
}

/// Writes one compact JSON object per line.
pub fn write_records<T: Serialize>(mut writer: impl Write, records: &[T]) -> Result<(), FormatError> {
    for r in records {
        serde_json::to_writer(&mut writer, r).map_err(io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads utterances and validates every segment lattice.
pub fn read_utterances(reader: impl Read) -> Result<Vec<Utterance>, FormatError> {
    let utts: Vec<Utterance> = read_records(reader, "lattice file")?;
    for u in &utts {
        if u.segments.is_empty() {
            return Err(FormatError::Invalid {
                what: "lattice file",
                message: format!("utterance `{}` has no segments", u.utterance_id),
            });
        }
        for seg in &u.segments {
            seg.ensure_valid().map_err(|e| FormatError::Invalid {
                what: "lattice file",
                message: format!("utterance `{}`: {e}", u.utterance_id),
            })?;
        }
    }
    Ok(utts)
}
