//! JSON-lines datasets.
//!
//! Main files hold `{"text": string, "label": integer}` per line. Auxiliary
//! files need only `"text"`; any label they carry is dropped.

use std::path::Path;

use after_core::data::{Dataset, Domain, Example, Split, Vocab};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::fsio::{read_to_string, write_jsonl};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Main,
    Auxiliary,
}

/// One parsed line. `label` is always `None` for auxiliary files.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

fn bad(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), line, message: message.into() }
}

/// Parses `content` as the lines of `path`. Blank lines are skipped; line
/// numbers in errors are 1-based.
pub fn parse_records(path: &Path, content: &str, kind: Kind) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    for (i, raw) in content.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(raw).map_err(|e| bad(path, line, format!("malformed JSON: {e}")))?;
        let obj = value.as_object().ok_or_else(|| bad(path, line, "expected a JSON object"))?;
        let text = match obj.get("text") {
            Some(Value::String(s)) => s.clone(),
            Some(_) => return Err(bad(path, line, "\"text\" must be a string")),
            None => return Err(bad(path, line, "missing field \"text\"")),
        };
        let label = match kind {
            Kind::Auxiliary => None,
            Kind::Main => match obj.get("label") {
                Some(v) => Some(
                    v.as_u64()
                        .and_then(|l| usize::try_from(l).ok())
                        .ok_or_else(|| bad(path, line, format!("\"label\" must be a non-negative integer, got {v}")))?,
                ),
                None => return Err(bad(path, line, "missing field \"label\"")),
            },
        };
        out.push(Record { text, label });
    }
    Ok(out)
}

pub fn read_records(path: &Path, kind: Kind) -> Result<Vec<Record>> {
    parse_records(path, &read_to_string(path)?, kind)
}

/// Reads and tokenizes a dataset file.
pub fn load_jsonl(path: &Path, kind: Kind, vocab: &Vocab, max_len: usize, split: Split) -> Result<Dataset> {
    let records = read_records(path, kind)?;
    let examples = records
        .iter()
        .map(|r| {
            let ids = vocab.encode_text(&r.text, max_len);
            match r.label {
                Some(l) => Example::main(ids, l),
                None => Example::auxiliary(ids),
            }
        })
        .collect();
    let domain = match kind {
        Kind::Main => Domain::Main,
        Kind::Auxiliary => Domain::Auxiliary,
    };
    Ok(Dataset::new(crate::fsio::stem(path), domain, split, examples)?)
}

pub fn write_records(path: &Path, records: &[Record]) -> Result<()> {
    write_jsonl(path, records)
}

/// Raw texts of a corpus file: the `"text"` fields of a `.jsonl` file, or the
/// non-blank lines of anything else.
pub fn read_texts(path: &Path) -> Result<Vec<String>> {
    let is_jsonl = path.extension().is_some_and(|e| e == "jsonl");
    if is_jsonl {
        return Ok(read_records(path, Kind::Auxiliary)?.into_iter().map(|r| r.text).collect());
    }
    Ok(read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(content: &str, kind: Kind) -> Result<Vec<Record>> {
        parse_records(Path::new("x.jsonl"), content, kind)
    }

    #[test]
    fn main_lines_keep_integer_labels() {
        let r = parse("{\"text\":\"good movie\",\"label\":1}\n\n{\"text\":\"bad\",\"label\":0}\n", Kind::Main).unwrap();
        assert_eq!(r, vec![
            Record { text: "good movie".into(), label: Some(1) },
            Record { text: "bad".into(), label: Some(0) },
        ]);
    }

    #[test]
    fn auxiliary_lines_drop_labels() {
        let r = parse("{\"text\":\"the court ruled\",\"label\":\"x\"}", Kind::Auxiliary).unwrap();
        assert_eq!(r, vec![Record { text: "the court ruled".into(), label: None }]);
    }

    #[test]
    fn errors_name_the_line() {
        let err = parse("{\"text\":\"a\",\"label\":1}\n{\"text\":\"b\",\"lab", Kind::Main).unwrap_err();
        assert!(matches!(err, Error::Format { line: 2, .. }), "{err}");
        assert!(err.to_string().starts_with("x.jsonl:2:"));

        for (content, needle) in [
            ("{\"label\":1}", "missing field \"text\""),
            ("{\"text\":\"a\"}", "missing field \"label\""),
            ("{\"text\":\"a\",\"label\":\"x\"}", "non-negative integer"),
            ("{\"text\":\"a\",\"label\":1.5}", "non-negative integer"),
            ("{\"text\":\"a\",\"label\":-1}", "non-negative integer"),
            ("[1,2]", "JSON object"),
            ("{\"text\":3,\"label\":0}", "must be a string"),
        ] {
            let msg = parse(content, Kind::Main).unwrap_err().to_string();
            assert!(msg.contains(needle) && msg.starts_with("x.jsonl:1:"), "{content} -> {msg}");
        }
    }
}
