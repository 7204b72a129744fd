//! Flat `field,value` CSV view of a JSON report.

use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::failure::{CliResult, Failure, PathContext};

/// Scalar leaves of `value` keyed by dotted path; array items are keyed by
/// index. Numbers keep serde_json's shortest round-trip spelling.
pub fn flatten(value: &Value) -> Vec<(String, String)> {
    let mut out = Vec::new();
    walk(value, String::new(), &mut out);
    out
}

fn walk(value: &Value, path: String, out: &mut Vec<(String, String)>) {
    let join = |key: &str| {
        if path.is_empty() {
            key.to_string()
        } else {
            format!("{path}.{key}")
        }
    };
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                walk(v, join(k), out);
            }
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                walk(v, join(&i.to_string()), out);
            }
        }
        Value::Null => out.push((path, String::new())),
        Value::String(s) => out.push((path, s.clone())),
        other => out.push((path, other.to_string())),
    }
}

/// Writes `<stem>.json` and `<stem>.csv` into `dir`.
pub fn write_report<T: Serialize>(dir: &Path, stem: &str, report: &T) -> CliResult<()> {
    let value = serde_json::to_value(report).map_err(|e| Failure::Runtime(e.to_string()))?;
    let json_path = dir.join(format!("{stem}.json"));
    let mut text = serde_json::to_string_pretty(&value).map_err(|e| Failure::Runtime(e.to_string()))?;
    text.push('\n');
    std::fs::write(&json_path, text).at("output", &json_path)?;

    let csv_path = dir.join(format!("{stem}.csv"));
    let mut w = csv::Writer::from_path(&csv_path).at("output", &csv_path)?;
    w.write_record(["field", "value"]).at("output", &csv_path)?;
    for (k, v) in flatten(&value) {
        w.write_record([k, v]).at("output", &csv_path)?;
    }
    w.flush().at("output", &csv_path)
}
