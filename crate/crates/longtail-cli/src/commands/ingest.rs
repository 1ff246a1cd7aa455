use std::path::Path;

use longtail::ingest::{merge, parse_detections, read_metadata, write_rejects, MergeOptions};
use longtail::manifest::{read_labels, write_manifest, Provenance};
use longtail::{Error, Result};
use serde_json::json;

use super::{emit_event, parse_list};

#[allow(clippy::too_many_arguments)]
pub fn run(
    detections_path: &Path,
    metadata_path: &Path,
    labels_path: &Path,
    out: &Path,
    drop: &str,
    reject_threshold: f64,
    min_conf: f64,
) -> Result<()> {
    let detections = parse_detections(detections_path)?;
    let metadata = read_metadata(metadata_path)?;
    let labels = read_labels(labels_path)?;
    let options = MergeOptions {
        drop_labels: parse_list::<String>(drop, "drop label")?
            .into_iter()
            .collect(),
        min_conf,
    };
    let outcome = merge(&detections, &metadata, &labels, &options);

    write_manifest(out, &outcome.records)?;
    let rejects_path = out.with_extension("rejects.jsonl");
    if !outcome.rejects.is_empty() {
        write_rejects(&rejects_path, &outcome.rejects)?;
    }
    Provenance::new(
        "ingest",
        json!({
            "drop": options.drop_labels,
            "reject_threshold": reject_threshold,
            "min_conf": min_conf,
        }),
    )
    .with_input(detections_path)?
    .with_input(metadata_path)?
    .with_input(labels_path)?
    .write_for(out)?;

    let reject_ratio = if metadata.is_empty() {
        0.0
    } else {
        outcome.rejects.len() as f64 / metadata.len() as f64
    };
    emit_event(
        "ingest_summary",
        json!({
            "records": outcome.records.len(),
            "excluded": outcome.excluded,
            "rejects": outcome.rejects.len(),
            "reject_ratio": reject_ratio,
        }),
    );
    eprintln!(
        "ingest: {} records, {} excluded, {} rejects",
        outcome.records.len(),
        outcome.excluded_total(),
        outcome.rejects.len()
    );
    if reject_ratio > reject_threshold {
        return Err(Error::invalid(format!(
            "reject ratio {reject_ratio:.4} exceeds threshold {reject_threshold} (see {})",
            rejects_path.display()
        )));
    }
    Ok(())
}
