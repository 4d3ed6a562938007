//! JSON encoding conventions shared by every file and wire format.
//!
//! All documents are UTF-8 JSON with snake_case field names. Strict parsing
//! rejects unknown fields; lenient parsing ignores them.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum CodecError {
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    #[default]
    Strict,
    Lenient,
}

pub fn from_json<T: DeserializeOwned>(text: &str, mode: ParseMode) -> Result<T, CodecError> {
    match mode {
        ParseMode::Lenient => Ok(serde_json::from_str(text)?),
        ParseMode::Strict => {
            let mut unknown = Vec::new();
            let de = &mut serde_json::Deserializer::from_str(text);
            let value: T = serde_ignored::deserialize(de, |path| unknown.push(path.to_string()))?;
            match unknown.into_iter().next() {
                Some(path) => Err(CodecError::UnknownField(path)),
                None => Ok(value),
            }
        }
    }
}

pub fn from_json_strict<T: DeserializeOwned>(text: &str) -> Result<T, CodecError> {
    from_json(text, ParseMode::Strict)
}

pub fn read_json<T: DeserializeOwned>(path: &Path, mode: ParseMode) -> Result<T, CodecError> {
    let text = std::fs::read_to_string(path).map_err(|source| CodecError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_json(&text, mode)
}

/// Pretty JSON with a trailing newline; the on-disk form of every output file.
pub fn to_json_pretty<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    text
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CodecError> {
    std::fs::write(path, to_json_pretty(value)).map_err(|source| CodecError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of the compact JSON encoding of a value.
pub fn json_digest<T: Serialize>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("serializable value"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Deserialize, PartialEq)]
    struct Probe {
        a: u32,
        #[serde(default)]
        b: Option<String>,
    }

    #[test]
    fn strict_rejects_unknown_fields() {
        let err = from_json_strict::<Probe>(r#"{"a": 1, "zzz": 2}"#).unwrap_err();
        assert!(matches!(err, CodecError::UnknownField(ref p) if p == "zzz"));
    }

    #[test]
    fn lenient_ignores_unknown_fields() {
        let p: Probe = from_json(r#"{"a": 1, "zzz": 2}"#, ParseMode::Lenient).unwrap();
        assert_eq!(p, Probe { a: 1, b: None });
    }

    #[test]
    fn sha256_matches_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
