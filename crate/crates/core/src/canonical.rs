//! Canonical JSON encoding used for every persisted document.
//!
//! Object keys are emitted in alphabetical order (serde_json's default map is
//! ordered), so two structurally equal values always encode to the same bytes.

use serde::Serialize;
use serde_json::Value;

/// Pretty-printed canonical form with a trailing newline. Used for files an
/// operator is expected to read or edit.
pub fn to_canonical_pretty<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let v = serde_json::to_value(value)?;
    let mut out = serde_json::to_string_pretty(&v)?;
    out.push('\n');
    Ok(out)
}

/// Compact canonical form without a trailing newline. Used for trail lines
/// and digest input.
pub fn to_canonical_compact<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let v = serde_json::to_value(value)?;
    serde_json::to_string(&v)
}

/// Re-encode an arbitrary JSON document in canonical pretty form.
pub fn canonicalize(text: &str) -> serde_json::Result<String> {
    let v: Value = serde_json::from_str(text)?;
    to_canonical_pretty(&v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_sorted() {
        let s = canonicalize(r#"{"b":1,"a":{"d":2,"c":3}}"#).unwrap();
        assert_eq!(s, "{\n  \"a\": {\n    \"c\": 3,\n    \"d\": 2\n  },\n  \"b\": 1\n}\n");
    }

    #[test]
    fn compact_has_no_whitespace() {
        let s = to_canonical_compact(&serde_json::json!({"z": [1, 2], "a": "x y"})).unwrap();
        assert_eq!(s, r#"{"a":"x y","z":[1,2]}"#);
    }
}
