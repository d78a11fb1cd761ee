//! JSON Lines envelope shared by databases, models and query files.
//!
//! Line 1 is a header object; every following line is one record. The header
//! carries a SHA-256 checksum over the record lines (each including its
//! trailing newline) so truncation at a line boundary is still detected.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub schema_version: u32,
    pub kind: String,
    pub config_hash: String,
    pub seed: u64,
    pub checksum: String,
}

/// A value persisted as a header plus one JSON record per line.
pub trait Persist: Sized {
    const KIND: &'static str;
    type Record: Serialize + DeserializeOwned;

    fn config_hash(&self) -> &str;
    fn seed(&self) -> u64;
    fn records(&self) -> Vec<Self::Record>;
    fn from_records(config_hash: String, seed: u64, records: Vec<Self::Record>) -> Result<Self>;
}

pub fn encode<T: Persist>(value: &T) -> Result<String> {
    let mut body = String::new();
    for r in value.records() {
        let line = serde_json::to_string(&r)
            .map_err(|e| Error::invalid(format!("serialize record: {e}")))?;
        body.push_str(&line);
        body.push('\n');
    }
    let header = Header {
        schema_version: SCHEMA_VERSION,
        kind: T::KIND.to_string(),
        config_hash: value.config_hash().to_string(),
        seed: value.seed(),
        checksum: checksum(body.as_bytes()),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    out.push_str(&body);
    Ok(out)
}

pub fn decode<T: Persist>(text: &str) -> Result<T> {
    let (header, body) = split_header(text)?;
    if header.kind != T::KIND {
        return Err(Error::KindMismatch {
            expected: T::KIND.to_string(),
            found: header.kind,
        });
    }
    let mut records = Vec::new();
    for (i, line) in body.split_inclusive('\n').enumerate() {
        let line_no = i + 2;
        let trimmed = line.strip_suffix('\n').unwrap_or(line);
        if trimmed.is_empty() {
            return Err(Error::MalformedLine {
                line: line_no,
                reason: "empty line".into(),
            });
        }
        let record = serde_json::from_str(trimmed).map_err(|e| Error::MalformedLine {
            line: line_no,
            reason: e.to_string(),
        })?;
        records.push(record);
    }
    let actual = checksum(body.as_bytes());
    if actual != header.checksum {
        return Err(Error::ChecksumMismatch {
            expected: header.checksum,
            actual,
        });
    }
    T::from_records(header.config_hash, header.seed, records)
}

/// Reads only the header of an envelope, validating its version.
pub fn read_header(path: &Path) -> Result<Header> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    split_header(&text).map(|(h, _)| h)
}

fn split_header(text: &str) -> Result<(Header, &str)> {
    let (first, body) = match text.find('\n') {
        Some(i) => (&text[..i], &text[i + 1..]),
        None => (text, ""),
    };
    let header: Header = serde_json::from_str(first).map_err(|e| Error::MalformedLine {
        line: 1,
        reason: e.to_string(),
    })?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(Error::VersionMismatch {
            found: header.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    Ok((header, body))
}

fn checksum(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn save<T: Persist>(value: &T, path: &Path) -> Result<()> {
    let text = encode(value)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load<T: Persist>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq)]
    struct Numbers {
        hash: String,
        values: Vec<f64>,
    }

    impl Persist for Numbers {
        const KIND: &'static str = "numbers";
        type Record = f64;

        fn config_hash(&self) -> &str {
            &self.hash
        }
        fn seed(&self) -> u64 {
            3
        }
        fn records(&self) -> Vec<f64> {
            self.values.clone()
        }
        fn from_records(config_hash: String, _seed: u64, values: Vec<f64>) -> Result<Self> {
            Ok(Self {
                hash: config_hash,
                values,
            })
        }
    }

    fn sample() -> Numbers {
        Numbers {
            hash: "abc".into(),
            values: vec![0.1, 1.0 / 3.0, -2.5e-300, 7.0],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let text = encode(&sample()).unwrap();
        assert!(text
            .starts_with(r#"{"schema_version":1,"kind":"numbers","config_hash":"abc","seed":3,"#));
        assert_eq!(decode::<Numbers>(&text).unwrap(), sample());
    }

    #[test]
    fn truncation_mid_line_is_malformed_with_line_number() {
        let text = encode(&sample()).unwrap();
        let cut = &text[..text.find("e-300").unwrap() + 1];
        match decode::<Numbers>(cut) {
            Err(Error::MalformedLine { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dropped_line_is_checksum_mismatch() {
        let text = encode(&sample()).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines.pop();
        let cut = lines.join("\n") + "\n";
        assert!(matches!(
            decode::<Numbers>(&cut),
            Err(Error::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn unknown_version_rejected() {
        let text =
            encode(&sample())
                .unwrap()
                .replacen("\"schema_version\":1", "\"schema_version\":0", 1);
        assert!(matches!(
            decode::<Numbers>(&text),
            Err(Error::VersionMismatch {
                found: 0,
                expected: 1
            })
        ));
    }

    #[test]
    fn wrong_kind_rejected() {
        let text = encode(&sample()).unwrap().replacen("numbers", "wifi", 1);
        assert!(matches!(
            decode::<Numbers>(&text),
            Err(Error::KindMismatch { .. })
        ));
    }
}
