pub mod check;
pub mod data;
pub mod eval;
pub mod ingest;
pub mod train;

use serde_json::json;

/// Structured event on stdout, one JSON object per line.
pub fn emit_event(event: &str, fields: serde_json::Value) {
    let mut object = json!({ "event": event });
    if let (Some(map), Some(extra)) = (object.as_object_mut(), fields.as_object()) {
        for (k, v) in extra {
            map.insert(k.clone(), v.clone());
        }
    }
    println!("{object}");
}

/// Parse a comma-separated list of values.
pub fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> longtail::Result<Vec<T>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| longtail::Error::invalid(format!("bad {what} value `{s}`")))
        })
        .collect()
}
