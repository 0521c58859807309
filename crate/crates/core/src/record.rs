//! Record identifiers and text records.

use std::borrow::Borrow;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Identifier of a query or corpus record.
///
/// Non-empty UTF-8 without tab or newline characters. Ordering is bytewise.
/// Cloning is cheap; ids are shared across top-k tables and run files.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RecordId(Arc<str>);

impl RecordId {
    pub fn new(id: &str) -> Result<Self> {
        if Self::is_valid(id) {
            Ok(RecordId(Arc::from(id)))
        } else {
            Err(Error::InvalidId(id.to_owned()))
        }
    }

    pub fn is_valid(id: &str) -> bool {
        !id.is_empty() && !id.bytes().any(|b| matches!(b, b'\t' | b'\n' | b'\r'))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(&*self.0, f)
    }
}

impl fmt::Display for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Borrow<str> for RecordId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl AsRef<str> for RecordId {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl TryFrom<&str> for RecordId {
    type Error = Error;

    fn try_from(value: &str) -> Result<Self> {
        RecordId::new(value)
    }
}

impl Serialize for RecordId {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for RecordId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        RecordId::new(&s).map_err(serde::de::Error::custom)
    }
}

/// One query or corpus entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextRecord {
    pub id: RecordId,
    pub title: Option<String>,
    pub text: String,
}

impl TextRecord {
    pub fn new(id: RecordId, title: Option<String>, text: impl Into<String>) -> Result<Self> {
        let record = TextRecord {
            id,
            title,
            text: text.into(),
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        if self.text.is_empty() && self.title.as_deref().is_none_or(str::is_empty) {
            return Err(Error::InvalidRecord {
                id: self.id.to_string(),
                reason: "text may be empty only when a title is present".into(),
            });
        }
        Ok(())
    }

    /// Title and text joined by a single space, as fed to encoders.
    pub fn full_text(&self) -> String {
        match &self.title {
            Some(title) if !title.is_empty() => format!("{title} {}", self.text),
            _ => self.text.clone(),
        }
    }
}

#[derive(Deserialize)]
struct JsonRecord {
    #[serde(rename = "_id")]
    id: Option<String>,
    title: Option<String>,
    text: Option<String>,
}

/// Parses one JSONL line (`{"_id", "title"?, "text"}`).
///
/// Errors carry `line` (1-based) for the caller's path.
pub(crate) fn parse_jsonl_record(
    path: &std::path::Path,
    line_no: u64,
    line: &str,
) -> Result<TextRecord> {
    let raw: JsonRecord = serde_json::from_str(line)
        .map_err(|e| Error::parse(path, line_no, format!("malformed JSON: {e}")))?;
    let id = raw
        .id
        .ok_or_else(|| Error::parse(path, line_no, "missing \"_id\""))?;
    let id = RecordId::new(&id).map_err(|e| Error::parse(path, line_no, e.to_string()))?;
    let text = raw
        .text
        .ok_or_else(|| Error::parse(path, line_no, "missing \"text\""))?;
    TextRecord::new(id, raw.title, text).map_err(|e| Error::parse(path, line_no, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    #[test]
    fn id_rules() {
        assert!(RecordId::new("d1").is_ok());
        assert!(RecordId::new("").is_err());
        assert!(RecordId::new("a\tb").is_err());
        assert!(RecordId::new("a\nb").is_err());
        // bytewise: uppercase sorts before lowercase
        assert!(RecordId::new("Z").unwrap() < RecordId::new("a").unwrap());
    }

    #[test]
    fn empty_text_needs_title() {
        let id = RecordId::new("x").unwrap();
        assert!(TextRecord::new(id.clone(), None, "").is_err());
        assert!(TextRecord::new(id.clone(), Some(String::new()), "").is_err());
        assert!(TextRecord::new(id, Some("t".into()), "").is_ok());
    }

    #[test]
    fn jsonl_errors_name_line() {
        let p = Path::new("c.jsonl");
        let err = parse_jsonl_record(p, 7, "{not json").unwrap_err();
        assert!(err.to_string().contains("c.jsonl:7"), "{err}");
        let err = parse_jsonl_record(p, 3, r#"{"text":"x"}"#).unwrap_err();
        assert!(err.to_string().contains("_id"), "{err}");
        let rec = parse_jsonl_record(p, 1, r#"{"_id":"d1","title":"T","text":"body"}"#).unwrap();
        assert_eq!(rec.title.as_deref(), Some("T"));
        assert_eq!(rec.full_text(), "T body");
    }
}
