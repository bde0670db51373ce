//! Canonical JSON: lexicographically sorted object keys, no insignificant
//! whitespace. Every file format and wire frame in this crate goes through
//! [`to_canonical_vec`], so byte equality implies structural equality.

use serde::Serialize;
use serde_json::Value;

/// Serializes `value` into canonical JSON bytes.
pub fn to_canonical_vec<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let tree = serde_json::to_value(value).expect("in-memory types always serialize");
    let mut out = Vec::with_capacity(128);
    write_value(&tree, &mut out);
    out
}

/// Canonical JSON as a `String`.
pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> String {
    String::from_utf8(to_canonical_vec(value)).expect("serde_json emits UTF-8")
}

/// Re-emits an arbitrary JSON tree in canonical form.
pub fn canonicalize(value: &Value) -> Vec<u8> {
    let mut out = Vec::new();
    write_value(value, &mut out);
    out
}

fn write_value(value: &Value, out: &mut Vec<u8>) {
    match value {
        Value::Object(map) => {
            // Sorting here keeps the output independent of serde_json's
            // `preserve_order` feature, which other crates may turn on.
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push(b'{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_string(key, out);
                out.push(b':');
                write_value(&map[key.as_str()], out);
            }
            out.push(b'}');
        }
        Value::Array(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_value(item, out);
            }
            out.push(b']');
        }
        Value::String(s) => write_string(s, out),
        other => out.extend_from_slice(other.to_string().as_bytes()),
    }
}

fn write_string(s: &str, out: &mut Vec<u8>) {
    let quoted = serde_json::to_string(s).expect("strings always serialize");
    out.extend_from_slice(quoted.as_bytes());
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn sorts_nested_keys() {
        let v = json!({"b": {"z": 1, "a": [true, null]}, "a": "x"});
        assert_eq!(
            canonicalize(&v),
            br#"{"a":"x","b":{"a":[true,null],"z":1}}"#.to_vec()
        );
    }

    #[test]
    fn escapes_strings() {
        let v = json!({"k": "line\n\"q\""});
        assert_eq!(
            String::from_utf8(canonicalize(&v)).unwrap(),
            r#"{"k":"line\n\"q\""}"#
        );
    }

    #[test]
    fn floats_keep_fraction() {
        let v = json!({"x": 1.5, "y": 2});
        assert_eq!(canonicalize(&v), br#"{"x":1.5,"y":2}"#.to_vec());
    }
}
