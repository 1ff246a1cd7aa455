//! Manifest and artifact file IO.
//!
//! Manifests are JSON-lines, one [`SampleRecord`] per line, UTF-8. A
//! header-less CSV export with the same column order is accepted on input:
//! `image_ref,label,x,y,w,h,conf,site,timestamp`, with empty fields for
//! absent values. All writers are deterministic: identical inputs produce
//! byte-identical files.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{parse_lenient_timestamp, BBox, LabelMap, SampleRecord};
use crate::error::{Error, Result};

/// Read a manifest, dispatching on the `.csv` extension; anything else is
/// treated as JSONL.
pub fn read_manifest(path: &Path) -> Result<Vec<SampleRecord>> {
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
    {
        read_manifest_csv(path)
    } else {
        read_manifest_jsonl(path)
    }
}

pub fn read_manifest_jsonl(path: &Path) -> Result<Vec<SampleRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SampleRecord = serde_json::from_str(&line).map_err(|e| Error::Line {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

pub fn write_manifest(path: &Path, records: &[SampleRecord]) -> Result<()> {
    let mut out = Vec::new();
    for record in records {
        serde_json::to_writer(&mut out, record).expect("record serialization cannot fail");
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_manifest_csv(path: &Path) -> Result<Vec<SampleRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .from_path(path)
        .map_err(|e| Error::Line {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 1;
        let bad = |message: String| Error::Line {
            path: path.to_path_buf(),
            line,
            message,
        };
        let row = row.map_err(|e| bad(e.to_string()))?;
        if row.len() != 9 {
            return Err(bad(format!("expected 9 columns, got {}", row.len())));
        }
        let field = |idx: usize| row.get(idx).unwrap_or("").trim();
        let label: usize = field(1)
            .parse()
            .map_err(|_| bad(format!("bad label `{}`", field(1))))?;
        let bbox_fields = [field(2), field(3), field(4), field(5)];
        let bbox = if bbox_fields.iter().all(|f| f.is_empty()) {
            None
        } else if bbox_fields.iter().any(|f| f.is_empty()) {
            return Err(bad("bbox must have all of x,y,w,h or none".to_string()));
        } else {
            let mut vals = [0.0f64; 4];
            for (v, raw) in vals.iter_mut().zip(bbox_fields) {
                *v = raw
                    .parse()
                    .map_err(|_| bad(format!("bad bbox value `{raw}`")))?;
            }
            Some(BBox::from(vals))
        };
        let conf: f64 = if field(6).is_empty() {
            0.0
        } else {
            field(6)
                .parse()
                .map_err(|_| bad(format!("bad conf `{}`", field(6))))?
        };
        let site = match field(7) {
            "" => None,
            s => Some(s.to_string()),
        };
        records.push(SampleRecord {
            image_ref: field(0).to_string(),
            label,
            bbox,
            conf,
            site,
            timestamp: parse_lenient_timestamp(field(8)),
            features: None,
        });
    }
    Ok(records)
}

pub fn read_labels(path: &Path) -> Result<LabelMap> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&raw).map_err(|e| Error::Line {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn write_labels(path: &Path, labels: &LabelMap) -> Result<()> {
    write_json_pretty(path, labels)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&raw).map_err(|e| Error::Line {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = serde_json::to_vec_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    out.push(b'\n');
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// SHA-256 content digest as lowercase hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Provenance metadata written next to every produced artifact as
/// `<artifact>.meta.json`: the resolved configuration plus content digests
/// of all inputs, so re-runs are verifiable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: std::collections::BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Self {
            tool: "longtail".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config,
            inputs: Default::default(),
        }
    }

    pub fn with_input(mut self, path: &Path) -> Result<Self> {
        self.inputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(self)
    }

    pub fn write_for(&self, artifact: &Path) -> Result<()> {
        let meta_path = meta_path_for(artifact);
        write_json_pretty(&meta_path, self)
    }
}

pub fn meta_path_for(artifact: &Path) -> PathBuf {
    let mut name = artifact
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.push_str(".meta.json");
    artifact.with_file_name(name)
}

/// Append JSONL lines to a writer, one serialized value per line.
pub fn write_jsonl_line<W: Write, T: Serialize>(writer: &mut W, value: &T) -> Result<()> {
    let line = serde_json::to_string(value).map_err(|e| Error::invalid(e.to_string()))?;
    writeln!(writer, "{line}").map_err(|e| Error::io("<stream>", e))
}
