//! Detector-output ingestion: parse detection JSON, parse species metadata,
//! and merge the two into a validated sample manifest.
//!
//! The detector is never run here and its category field is never trusted
//! for species identity; species come from the metadata side only. Each
//! image keeps the single highest-confidence detection, matching the
//! one-box-per-sample record schema.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::data::{parse_lenient_timestamp, BBox, LabelMap, SampleRecord};
use crate::error::{Error, Result};

/// One detection attached to an image.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub category: String,
    pub bbox: BBox,
    pub conf: f64,
}

/// One image entry from a detection file.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionEntry {
    pub image_ref: String,
    pub detections: Vec<Detection>,
}

/// Parsed and validated detector output. Image refs are unique and every
/// bbox is in relative coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionFile {
    pub entries: Vec<DetectionEntry>,
}

#[derive(Deserialize)]
struct RawDetectionFile {
    images: Vec<RawDetectionEntry>,
}

#[derive(Deserialize)]
struct RawDetectionEntry {
    #[serde(alias = "image_ref")]
    file: String,
    #[serde(default)]
    detections: Vec<RawDetection>,
    #[serde(default)]
    width: Option<u32>,
    #[serde(default)]
    height: Option<u32>,
}

#[derive(Deserialize)]
struct RawDetection {
    category: String,
    bbox: [f64; 4],
    conf: f64,
}

/// Parse a detection JSON file.
///
/// Syntax errors carry the byte offset; schema errors name the offending
/// field and entry. Absolute pixel boxes are normalized to relative
/// coordinates using the entry's `width`/`height`.
pub fn parse_detections(path: &Path) -> Result<DetectionFile> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut de = serde_json::Deserializer::from_str(&raw);
    let parsed: RawDetectionFile = match serde_path_to_error::deserialize(&mut de) {
        Ok(v) => v,
        Err(err) => {
            let inner = err.inner();
            if inner.is_syntax() || inner.is_eof() {
                let (line, column) = (inner.line(), inner.column());
                return Err(Error::Json {
                    path: path.to_path_buf(),
                    line,
                    column,
                    offset: byte_offset(&raw, line, column),
                    message: inner.to_string(),
                });
            }
            return Err(Error::Schema {
                path: path.to_path_buf(),
                at: err.path().to_string(),
                message: inner.to_string(),
            });
        }
    };

    let mut seen = BTreeSet::new();
    let mut entries = Vec::with_capacity(parsed.images.len());
    for (i, raw_entry) in parsed.images.into_iter().enumerate() {
        let at = |field: &str| format!("images[{i}].{field}");
        if !seen.insert(raw_entry.file.clone()) {
            return Err(Error::Schema {
                path: path.to_path_buf(),
                at: at("file"),
                message: format!("duplicate image_ref `{}`", raw_entry.file),
            });
        }
        let mut detections = Vec::with_capacity(raw_entry.detections.len());
        for (j, det) in raw_entry.detections.into_iter().enumerate() {
            let at = |field: &str| format!("images[{i}].detections[{j}].{field}");
            if !(0.0..=1.0).contains(&det.conf) || !det.conf.is_finite() {
                return Err(Error::Schema {
                    path: path.to_path_buf(),
                    at: at("conf"),
                    message: format!("confidence {} outside [0, 1]", det.conf),
                });
            }
            let mut bbox = BBox::from(det.bbox);
            let absolute = [bbox.x, bbox.y, bbox.w, bbox.h].iter().any(|&v| v > 1.0);
            if absolute {
                let (Some(w), Some(h)) = (raw_entry.width, raw_entry.height) else {
                    return Err(Error::Schema {
                        path: path.to_path_buf(),
                        at: at("bbox"),
                        message: "absolute bbox requires image width and height".to_string(),
                    });
                };
                bbox = BBox {
                    x: bbox.x / w as f64,
                    y: bbox.y / h as f64,
                    w: bbox.w / w as f64,
                    h: bbox.h / h as f64,
                };
            }
            detections.push(Detection {
                category: det.category,
                bbox,
                conf: det.conf,
            });
        }
        entries.push(DetectionEntry {
            image_ref: raw_entry.file,
            detections,
        });
    }
    Ok(DetectionFile { entries })
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (i, l) in text.split('\n').enumerate() {
        if i + 1 == line {
            return offset + column.saturating_sub(1);
        }
        offset += l.len() + 1;
    }
    offset
}

/// One species metadata entry.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct MetadataEntry {
    pub image_ref: String,
    #[serde(alias = "species")]
    pub species_name: String,
    #[serde(default)]
    pub site: Option<String>,
    #[serde(default, deserialize_with = "de_timestamp")]
    pub timestamp: Option<DateTime<Utc>>,
}

fn de_timestamp<'de, D>(de: D) -> std::result::Result<Option<DateTime<Utc>>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    let raw: Option<String> = Option::deserialize(de)?;
    Ok(raw.as_deref().and_then(parse_lenient_timestamp))
}

/// Read metadata from JSONL, or header-less CSV when the file ends in `.csv`
/// (columns: `image_ref,species_name,site,timestamp`).
pub fn read_metadata(path: &Path) -> Result<Vec<MetadataEntry>> {
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
    {
        return read_metadata_csv(path);
    }
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: MetadataEntry = serde_json::from_str(line).map_err(|e| Error::Line {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        entries.push(entry);
    }
    Ok(entries)
}

fn read_metadata_csv(path: &Path) -> Result<Vec<MetadataEntry>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Line {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
    let mut entries = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Line {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if row.len() < 2 {
            return Err(Error::Line {
                path: path.to_path_buf(),
                line: i + 1,
                message: "expected at least image_ref and species_name columns".to_string(),
            });
        }
        let field = |idx: usize| row.get(idx).unwrap_or("").trim().to_string();
        let site = field(2);
        entries.push(MetadataEntry {
            image_ref: field(0),
            species_name: field(1),
            site: if site.is_empty() { None } else { Some(site) },
            timestamp: parse_lenient_timestamp(&field(3)),
        });
    }
    Ok(entries)
}

/// A metadata entry that could not be resolved against the label map.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reject {
    pub image_ref: String,
    pub species_name: String,
    pub reason: String,
}

/// Merge options. `drop_labels` holds reserved species names excluded from
/// the manifest (counted, not rejected); detections below `min_conf` are
/// ignored when picking the top box.
#[derive(Debug, Clone)]
pub struct MergeOptions {
    pub drop_labels: BTreeSet<String>,
    pub min_conf: f64,
}

impl Default for MergeOptions {
    fn default() -> Self {
        Self {
            drop_labels: ["empty", "vehicle"].iter().map(|s| s.to_string()).collect(),
            min_conf: 0.0,
        }
    }
}

/// Merge outcome. For every metadata entry exactly one of the following
/// holds: it became a record, it was excluded by a dropped label, or it was
/// rejected; so `records.len() + excluded_total() + rejects.len()` equals the
/// metadata entry count.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeOutcome {
    pub records: Vec<SampleRecord>,
    pub excluded: BTreeMap<String, usize>,
    pub rejects: Vec<Reject>,
}

impl MergeOutcome {
    pub fn excluded_total(&self) -> usize {
        self.excluded.values().sum()
    }
}

/// Merge detections with species metadata into sample records.
///
/// Output order follows metadata entry order, so the merge is deterministic
/// regardless of how the inputs were produced. Images with metadata but no
/// usable detection get the full-frame bbox with confidence 0. Unresolvable
/// species names are reported as rejects, never silently dropped.
pub fn merge(
    detections: &DetectionFile,
    metadata: &[MetadataEntry],
    labels: &LabelMap,
    options: &MergeOptions,
) -> MergeOutcome {
    // Top detection per image: highest confidence at or above min_conf,
    // ties broken by first occurrence in the file.
    let mut best: HashMap<&str, &Detection> = HashMap::new();
    for entry in &detections.entries {
        let mut top: Option<&Detection> = None;
        for det in &entry.detections {
            if det.conf < options.min_conf {
                continue;
            }
            if top.is_none_or(|t| det.conf > t.conf) {
                top = Some(det);
            }
        }
        if let Some(det) = top {
            best.insert(entry.image_ref.as_str(), det);
        }
    }

    let index = labels.index_map();
    let mut outcome = MergeOutcome {
        records: Vec::new(),
        excluded: BTreeMap::new(),
        rejects: Vec::new(),
    };
    for entry in metadata {
        if options.drop_labels.contains(&entry.species_name) {
            *outcome
                .excluded
                .entry(entry.species_name.clone())
                .or_insert(0) += 1;
            continue;
        }
        let Some(&label) = index.get(entry.species_name.as_str()) else {
            outcome.rejects.push(Reject {
                image_ref: entry.image_ref.clone(),
                species_name: entry.species_name.clone(),
                reason: "species name not in label map".to_string(),
            });
            continue;
        };
        let (bbox, conf) = match best.get(entry.image_ref.as_str()) {
            Some(det) => (det.bbox, det.conf),
            None => (BBox::FULL_FRAME, 0.0),
        };
        outcome.records.push(SampleRecord {
            image_ref: entry.image_ref.clone(),
            label,
            bbox: Some(bbox),
            conf,
            site: entry.site.clone(),
            timestamp: entry.timestamp,
            features: None,
        });
    }
    outcome
}

/// Write the rejects sidecar next to a manifest.
pub fn write_rejects(path: &Path, rejects: &[Reject]) -> Result<()> {
    let mut out = Vec::new();
    for r in rejects {
        serde_json::to_writer(&mut out, r).expect("reject serialization cannot fail");
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn labels() -> LabelMap {
        LabelMap::new(vec!["cow".into(), "horse".into()]).unwrap()
    }

    fn write_detections(json: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempdir().unwrap();
        let path = dir.path().join("det.json");
        fs::write(&path, json).unwrap();
        (dir, path)
    }

    #[test]
    fn parses_two_images_with_one_detection_each() {
        let (_d, path) = write_detections(
            r#"{"images":[
                {"file":"a.jpg","detections":[{"category":"1","bbox":[0.1,0.1,0.2,0.2],"conf":0.9}]},
                {"file":"b.jpg","detections":[{"category":"1","bbox":[0.3,0.3,0.1,0.1],"conf":0.5}]}
            ]}"#,
        );
        let parsed = parse_detections(&path).unwrap();
        assert_eq!(parsed.entries.len(), 2);
        assert_eq!(parsed.entries[0].detections.len(), 1);
    }

    #[test]
    fn keeps_entries_with_empty_detections() {
        let (_d, path) = write_detections(r#"{"images":[{"file":"a.jpg","detections":[]}]}"#);
        let parsed = parse_detections(&path).unwrap();
        assert_eq!(parsed.entries.len(), 1);
        assert!(parsed.entries[0].detections.is_empty());
    }

    #[test]
    fn normalizes_absolute_bboxes() {
        let (_d, path) = write_detections(
            r#"{"images":[{"file":"a.jpg","width":512,"height":512,
                "detections":[{"category":"1","bbox":[128,128,256,256],"conf":0.9}]}]}"#,
        );
        let parsed = parse_detections(&path).unwrap();
        let b = parsed.entries[0].detections[0].bbox;
        assert_eq!((b.x, b.y, b.w, b.h), (0.25, 0.25, 0.5, 0.5));
    }

    #[test]
    fn syntax_error_reports_byte_offset() {
        let (_d, path) = write_detections("{\"images\": [\n  {broken\n]}");
        match parse_detections(&path) {
            Err(Error::Json { line, offset, .. }) => {
                assert_eq!(line, 2);
                assert!(offset > 0);
            }
            other => panic!("expected Json error, got {other:?}"),
        }
    }

    #[test]
    fn missing_field_names_entry_and_field() {
        let (_d, path) = write_detections(
            r#"{"images":[{"file":"a.jpg","detections":[{"category":"1","conf":0.9}]}]}"#,
        );
        match parse_detections(&path) {
            Err(Error::Schema { at, message, .. }) => {
                assert!(at.contains("images[0].detections[0]"), "at = {at}");
                assert!(message.contains("bbox"), "message = {message}");
            }
            other => panic!("expected Schema error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_image_ref_is_rejected() {
        let (_d, path) = write_detections(
            r#"{"images":[{"file":"a.jpg","detections":[]},{"file":"a.jpg","detections":[]}]}"#,
        );
        assert!(matches!(parse_detections(&path), Err(Error::Schema { .. })));
    }

    #[test]
    fn conf_out_of_range_is_schema_error() {
        let (_d, path) = write_detections(
            r#"{"images":[{"file":"a.jpg","detections":[{"category":"1","bbox":[0,0,0.1,0.1],"conf":1.5}]}]}"#,
        );
        match parse_detections(&path) {
            Err(Error::Schema { at, .. }) => assert!(at.ends_with("conf")),
            other => panic!("expected Schema error, got {other:?}"),
        }
    }

    fn meta(image: &str, species: &str) -> MetadataEntry {
        MetadataEntry {
            image_ref: image.to_string(),
            species_name: species.to_string(),
            site: None,
            timestamp: None,
        }
    }

    #[test]
    fn merge_picks_highest_confidence_detection() {
        let detections = DetectionFile {
            entries: vec![DetectionEntry {
                image_ref: "a.jpg".into(),
                detections: vec![
                    Detection {
                        category: "1".into(),
                        bbox: BBox {
                            x: 0.0,
                            y: 0.0,
                            w: 0.1,
                            h: 0.1,
                        },
                        conf: 0.9,
                    },
                    Detection {
                        category: "1".into(),
                        bbox: BBox {
                            x: 0.5,
                            y: 0.5,
                            w: 0.1,
                            h: 0.1,
                        },
                        conf: 0.4,
                    },
                ],
            }],
        };
        let out = merge(
            &detections,
            &[meta("a.jpg", "cow")],
            &labels(),
            &MergeOptions::default(),
        );
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].conf, 0.9);
        assert_eq!(out.records[0].bbox.unwrap().x, 0.0);
    }

    #[test]
    fn merge_excludes_dropped_labels_with_counts() {
        let detections = DetectionFile { entries: vec![] };
        let out = merge(
            &detections,
            &[meta("a.jpg", "vehicle"), meta("b.jpg", "cow")],
            &labels(),
            &MergeOptions::default(),
        );
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.excluded.get("vehicle"), Some(&1));
    }

    #[test]
    fn merge_defaults_full_frame_when_no_detection() {
        let detections = DetectionFile { entries: vec![] };
        let out = merge(
            &detections,
            &[meta("a.jpg", "horse")],
            &labels(),
            &MergeOptions::default(),
        );
        let r = &out.records[0];
        assert_eq!(r.bbox, Some(BBox::FULL_FRAME));
        assert_eq!(r.conf, 0.0);
    }

    #[test]
    fn merge_rejects_unknown_species() {
        let detections = DetectionFile { entries: vec![] };
        let out = merge(
            &detections,
            &[meta("a.jpg", "unicorn")],
            &labels(),
            &MergeOptions::default(),
        );
        assert!(out.records.is_empty());
        assert_eq!(out.rejects.len(), 1);
        assert_eq!(out.rejects[0].species_name, "unicorn");
    }

    #[test]
    fn merge_accounting_invariant() {
        let detections = DetectionFile { entries: vec![] };
        let metadata = vec![
            meta("a.jpg", "cow"),
            meta("b.jpg", "vehicle"),
            meta("c.jpg", "unicorn"),
            meta("d.jpg", "horse"),
            meta("e.jpg", "empty"),
        ];
        let out = merge(&detections, &metadata, &labels(), &MergeOptions::default());
        assert_eq!(
            out.records.len() + out.excluded_total() + out.rejects.len(),
            metadata.len()
        );
    }

    #[test]
    fn merge_respects_min_conf() {
        let detections = DetectionFile {
            entries: vec![DetectionEntry {
                image_ref: "a.jpg".into(),
                detections: vec![Detection {
                    category: "1".into(),
                    bbox: BBox {
                        x: 0.2,
                        y: 0.2,
                        w: 0.2,
                        h: 0.2,
                    },
                    conf: 0.3,
                }],
            }],
        };
        let options = MergeOptions {
            min_conf: 0.5,
            ..Default::default()
        };
        let out = merge(&detections, &[meta("a.jpg", "cow")], &labels(), &options);
        assert_eq!(out.records[0].bbox, Some(BBox::FULL_FRAME));
        assert_eq!(out.records[0].conf, 0.0);
    }

    #[test]
    fn metadata_csv_is_accepted() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("meta.csv");
        fs::write(
            &path,
            "a.jpg,cow,site_1,2016-05-01 08:00:00\nb.jpg,horse,,\n",
        )
        .unwrap();
        let entries = read_metadata(&path).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].site.as_deref(), Some("site_1"));
        assert!(entries[0].timestamp.is_some());
        assert_eq!(entries[1].site, None);
    }
}
