//! Canonical JSON: UTF-8, keys sorted lexicographically at every depth, no
//! insignificant whitespace. Every hash, signature and size in the crate is
//! computed over this form.

use serde::Serialize;
use serde_json::{Map, Value};

/// Serializes `value` to canonical JSON bytes.
pub fn to_canonical_vec<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<Vec<u8>> {
    let value = serde_json::to_value(value)?;
    Ok(canonical_value_bytes(&value))
}

/// Canonical bytes of an already-built JSON value.
pub fn canonical_value_bytes(value: &Value) -> Vec<u8> {
    // Serializing a `Value` cannot fail.
    serde_json::to_vec(&sorted(value)).expect("json value serializes")
}

fn sorted(value: &Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut entries: Vec<_> = map.iter().collect();
            entries.sort_by(|a, b| a.0.cmp(b.0));
            let mut out = Map::new();
            for (k, v) in entries {
                out.insert(k.clone(), sorted(v));
            }
            Value::Object(out)
        }
        Value::Array(items) => Value::Array(items.iter().map(sorted).collect()),
        other => other.clone(),
    }
}
