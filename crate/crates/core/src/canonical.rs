//! Canonical text form shared by scene files, packs, logs and state hashes.
//!
//! Object keys are sorted by byte order, arrays keep their order, numbers
//! use the shortest decimal that round-trips, output is UTF-8 with LF line
//! endings, two-space indentation and a trailing newline.

use serde::Serialize;
use serde_json::Value as Json;
use sha2::{Digest, Sha256};

/// Renders any serializable value in canonical multi-line form.
pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> String {
    let json = serde_json::to_value(value).expect("canonical values serialize to JSON");
    let mut out = String::new();
    write_pretty(&json, 0, &mut out);
    out.push('\n');
    out
}

/// Renders a value canonically on a single line (for line-delimited logs).
pub fn to_canonical_line<T: Serialize + ?Sized>(value: &T) -> String {
    let json = serde_json::to_value(value).expect("canonical values serialize to JSON");
    let mut out = String::new();
    write_compact(&json, &mut out);
    out
}

/// SHA-256 of the canonical form, lowercase hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn sorted_entries(map: &serde_json::Map<String, Json>) -> Vec<(&String, &Json)> {
    let mut entries: Vec<_> = map.iter().collect();
    entries.sort_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
    entries
}

fn write_scalar(value: &Json, out: &mut String) {
    match value {
        Json::Null => out.push_str("null"),
        Json::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Json::Number(n) => out.push_str(&n.to_string()),
        Json::String(s) => out.push_str(&serde_json::to_string(s).expect("strings serialize")),
        Json::Array(_) | Json::Object(_) => unreachable!("containers are not scalars"),
    }
}

fn indent(level: usize, out: &mut String) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

fn write_pretty(value: &Json, level: usize, out: &mut String) {
    match value {
        Json::Array(items) if items.is_empty() => out.push_str("[]"),
        Json::Array(items) => {
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                indent(level + 1, out);
                write_pretty(item, level + 1, out);
                if i + 1 < items.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            indent(level, out);
            out.push(']');
        }
        Json::Object(map) if map.is_empty() => out.push_str("{}"),
        Json::Object(map) => {
            out.push_str("{\n");
            let entries = sorted_entries(map);
            let last = entries.len() - 1;
            for (i, (key, item)) in entries.into_iter().enumerate() {
                indent(level + 1, out);
                out.push_str(&serde_json::to_string(key).expect("keys serialize"));
                out.push_str(": ");
                write_pretty(item, level + 1, out);
                if i < last {
                    out.push(',');
                }
                out.push('\n');
            }
            indent(level, out);
            out.push('}');
        }
        scalar => write_scalar(scalar, out),
    }
}

fn write_compact(value: &Json, out: &mut String) {
    match value {
        Json::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_compact(item, out);
            }
            out.push(']');
        }
        Json::Object(map) => {
            out.push('{');
            for (i, (key, item)) in sorted_entries(map).into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(key).expect("keys serialize"));
                out.push(':');
                write_compact(item, out);
            }
            out.push('}');
        }
        scalar => write_scalar(scalar, out),
    }
}
