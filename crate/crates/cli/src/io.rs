use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

use lmrescore::formats::{parse_records, read_utterances, write_records, RefRecord};
use lmrescore::metrics::tokenize;
use lmrescore::Utterance;

use crate::error::{Context, Failure, Outcome};

pub fn check_input(path: &Path) -> Outcome {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::usage(format!(
            "input file `{}` does not exist",
            path.display()
        )))
    }
}

pub fn check_output(path: &Path) -> Outcome {
    if path.is_dir() {
        return Err(Failure::usage(format!("output `{}` is a directory", path.display())));
    }
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => Err(Failure::usage(format!(
            "output directory `{}` does not exist",
            p.display()
        ))),
        _ => Ok(()),
    }
}

pub fn read_text(path: &Path) -> Outcome<String> {
    fs::read_to_string(path).map_err(|e| Failure::data(format!("reading `{}`: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Outcome {
    fs::write(path, text).map_err(|e| Failure::data(format!("writing `{}`: {e}", path.display())))
}

pub fn write_lines<T: Serialize>(path: &Path, records: &[T]) -> Outcome {
    let mut buf = Vec::new();
    write_records(&mut buf, records)?;
    fs::write(path, buf).map_err(|e| Failure::data(format!("writing `{}`: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome {
    let mut text = serde_json::to_string_pretty(value).map_err(Failure::data)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_lattices(path: &Path) -> Outcome<Vec<Utterance>> {
    let utts = read_utterances(read_text(path)?.as_bytes()).context(path.display())?;
    if utts.is_empty() {
        return Err(Failure::data(format!("`{}` holds no utterances", path.display())));
    }
    Ok(utts)
}

/// Non-empty lines, trimmed.
pub fn read_sentences(path: &Path) -> Outcome<Vec<String>> {
    Ok(read_text(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}

pub fn read_refs(path: &Path) -> Outcome<Vec<RefRecord>> {
    let refs: Vec<RefRecord> = parse_records(&read_text(path)?, "reference file").context(path.display())?;
    let mut seen = std::collections::BTreeSet::new();
    for r in &refs {
        if !seen.insert(r.doc_id.as_str()) {
            return Err(Failure::data(format!(
                "{}: duplicate doc_id `{}`",
                path.display(),
                r.doc_id
            )));
        }
    }
    Ok(refs)
}

/// Reference tokens per utterance: from the reference file (doc ids are
/// utterance ids) when given, else embedded in the lattices.
pub struct References {
    by_id: BTreeMap<String, Vec<String>>,
}

impl References {
    pub fn load(path: Option<&Path>, lowercase: bool) -> Outcome<Option<Self>> {
        let Some(path) = path else { return Ok(None) };
        let by_id = read_refs(path)?
            .into_iter()
            .map(|r| (r.doc_id, tokenize(&r.text, lowercase)))
            .collect();
        Ok(Some(Self { by_id }))
    }

    pub fn get(&self, utterance_id: &str) -> Option<&Vec<String>> {
        self.by_id.get(utterance_id)
    }

    pub fn raw(&self, utterance_id: &str) -> Option<String> {
        self.by_id.get(utterance_id).map(|t| t.join(" "))
    }
}

pub fn reference_for(utt: &Utterance, refs: Option<&References>, lowercase: bool) -> Outcome<Vec<String>> {
    if let Some(r) = refs {
        return r
            .get(&utt.utterance_id)
            .cloned()
            .ok_or_else(|| Failure::data(format!("no reference for utterance `{}`", utt.utterance_id)));
    }
    utt.reference.as_deref().map(|t| tokenize(t, lowercase)).ok_or_else(|| {
        Failure::data(format!(
            "utterance `{}` has no embedded reference; pass --refs",
            utt.utterance_id
        ))
    })
}
