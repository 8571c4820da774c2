//! Canonical JSON: sorted object keys, integer timestamps, shortest
//! round-trip reals. Equal values always produce equal bytes.

use serde::Serialize;

pub fn to_canonical_vec<T: Serialize>(value: &T) -> serde_json::Result<Vec<u8>> {
    // serde_json::Map is a BTreeMap without the preserve_order feature, so
    // going through Value sorts every object's keys.
    let v = serde_json::to_value(value)?;
    serde_json::to_vec(&v)
}

pub fn to_canonical_string<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let v = serde_json::to_value(value)?;
    serde_json::to_string(&v)
}
