//! Tolerant extraction of JSON objects from model replies.
//!
//! Models wrap their structured output in prose, code fences, or both. The
//! scanner here walks the reply for a balanced `{...}` region (string- and
//! escape-aware), tries to parse it, and moves on to the next candidate brace
//! on failure — so the first parseable object wins, wherever it sits.

use serde_json::{Map, Value};

/// Returns the first parseable JSON object in `text`, if any.
pub fn extract_json_object(text: &str) -> Option<Map<String, Value>> {
    let bytes = text.as_bytes();
    let mut search_from = 0usize;
    while let Some(offset) = text[search_from..].find('{') {
        let start = search_from + offset;
        if let Some(end) = balanced_end(bytes, start) {
            if let Ok(Value::Object(map)) = serde_json::from_str::<Value>(&text[start..=end]) {
                return Some(map);
            }
        }
        // Not parseable from this brace; try the next one (which also
        // recovers objects nested inside unparseable outer braces).
        search_from = start + 1;
    }
    None
}

/// Byte index of the `}` closing the brace at `start`, honoring strings and
/// escapes. Brace/quote/backslash are ASCII, so byte scanning is UTF-8 safe.
fn balanced_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

/// Reads a field as a string, coercing scalar JSON values. Arrays and
/// objects do not coerce.
pub fn field_str(map: &Map<String, Value>, name: &str) -> Option<String> {
    match map.get(name)? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

/// Reads a field as an integer, accepting `4`, `4.0`, and `"4"`.
pub fn field_i64(map: &Map<String, Value>, name: &str) -> Option<i64> {
    match map.get(name)? {
        Value::Number(n) => n
            .as_i64()
            .or_else(|| n.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64)),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// Reads a field as a list of strings. A bare string becomes a one-element
/// list (models sometimes flatten singleton lists); list items coerce like
/// [`field_str`].
pub fn field_str_list(map: &Map<String, Value>, name: &str) -> Option<Vec<String>> {
    match map.get(name)? {
        Value::Array(items) => {
            let mut out = Vec::with_capacity(items.len());
            for item in items {
                match item {
                    Value::String(s) => out.push(s.clone()),
                    Value::Number(n) => out.push(n.to_string()),
                    Value::Bool(b) => out.push(b.to_string()),
                    _ => return None,
                }
            }
            Some(out)
        }
        Value::String(s) => Some(vec![s.clone()]),
        _ => None,
    }
}
