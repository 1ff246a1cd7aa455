//! Canonical data model shared by every stage: labeled samples, class
//! statistics, the head/tail/few-shot partition, and the preprocessing
//! specification.
//!
//! All types are immutable value objects after construction and safe to
//! share between workers.

use std::collections::{BTreeSet, HashMap};

use chrono::{DateTime, NaiveDateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

/// Ordered class names with contiguous 0-based ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawLabelMap")]
pub struct LabelMap {
    classes: Vec<String>,
}

#[derive(Deserialize)]
struct RawLabelMap {
    classes: Vec<String>,
}

impl TryFrom<RawLabelMap> for LabelMap {
    type Error = Error;

    fn try_from(raw: RawLabelMap) -> Result<Self> {
        LabelMap::new(raw.classes)
    }
}

impl LabelMap {
    pub fn new(classes: Vec<String>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::invalid("label map has no classes"));
        }
        let mut seen = BTreeSet::new();
        for name in &classes {
            if name.is_empty() {
                return Err(Error::invalid("label map contains an empty class name"));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::invalid(format!("duplicate class name `{name}`")));
            }
        }
        Ok(Self { classes })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.classes.get(id).map(String::as_str)
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    /// Name-to-id lookup table for bulk resolution.
    pub fn index_map(&self) -> HashMap<&str, usize> {
        self.classes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect()
    }
}

/// Detection box in relative coordinates, `0 <= x, y, x+w, y+h <= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 4]", from = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const FULL_FRAME: BBox = BBox {
        x: 0.0,
        y: 0.0,
        w: 1.0,
        h: 1.0,
    };
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox {
            x: v[0],
            y: v[1],
            w: v[2],
            h: v[3],
        }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

/// One labeled camera-trap sample: an image reference, its class label, and
/// the highest-confidence detection attached to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub image_ref: String,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
    #[serde(default)]
    pub conf: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site: Option<String>,
    #[serde(
        default,
        deserialize_with = "deserialize_lenient_timestamp",
        skip_serializing_if = "Option::is_none"
    )]
    pub timestamp: Option<DateTime<Utc>>,
    /// Precomputed feature vector for the vectors training mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
}

impl SampleRecord {
    pub fn new(image_ref: impl Into<String>, label: usize) -> Self {
        Self {
            image_ref: image_ref.into(),
            label,
            bbox: None,
            conf: 0.0,
            site: None,
            timestamp: None,
            features: None,
        }
    }
}

/// Camera-trap timestamps are dirty; unparseable values become absent, never
/// a fatal error.
pub fn parse_lenient_timestamp(raw: &str) -> Option<DateTime<Utc>> {
    let raw = raw.trim();
    if raw.is_empty() {
        return None;
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(dt.with_timezone(&Utc));
    }
    // EXIF-style and plain formats, assumed UTC.
    for fmt in [
        "%Y-%m-%d %H:%M:%S",
        "%Y:%m:%d %H:%M:%S",
        "%Y-%m-%dT%H:%M:%S",
    ] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(naive.and_utc());
        }
    }
    None
}

fn deserialize_lenient_timestamp<'de, D>(
    de: D,
) -> std::result::Result<Option<DateTime<Utc>>, D::Error>
where
    D: Deserializer<'de>,
{
    let raw: Option<String> = Option::deserialize(de)?;
    Ok(raw.as_deref().and_then(parse_lenient_timestamp))
}

/// Per-class sample counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassStats {
    counts: Vec<u64>,
    total: u64,
}

impl ClassStats {
    pub fn new(counts: Vec<u64>) -> Self {
        let total = counts.iter().sum();
        Self { counts, total }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn count(&self, class: usize) -> u64 {
        self.counts[class]
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    /// Counts from a plain label sequence.
    pub fn from_labels(labels: &[usize], num_classes: usize) -> Result<Self> {
        let mut counts = vec![0u64; num_classes];
        for (i, &label) in labels.iter().enumerate() {
            if label >= num_classes {
                return Err(Error::UnknownLabel {
                    index: i,
                    image_ref: String::new(),
                    label,
                    num_classes,
                });
            }
            counts[label] += 1;
        }
        Ok(Self::new(counts))
    }
}

/// Count labeled records per class. Permutation-invariant over the input.
pub fn class_stats(records: &[SampleRecord], labels: &LabelMap) -> Result<ClassStats> {
    let mut counts = vec![0u64; labels.len()];
    for (i, record) in records.iter().enumerate() {
        if record.label >= labels.len() {
            return Err(Error::UnknownLabel {
                index: i,
                image_ref: record.image_ref.clone(),
                label: record.label,
                num_classes: labels.len(),
            });
        }
        counts[record.label] += 1;
    }
    Ok(ClassStats::new(counts))
}

/// A single invariant violation found in a record. Violations are data, not
/// errors; callers decide what to do with them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

/// Check every record invariant and return all violations, not just the first.
pub fn validate_record(record: &SampleRecord, labels: &LabelMap) -> Vec<Violation> {
    let mut violations = Vec::new();
    if record.label >= labels.len() {
        violations.push(Violation {
            field: "label",
            message: format!(
                "label {} out of range for {} classes",
                record.label,
                labels.len()
            ),
        });
    }
    if !(0.0..=1.0).contains(&record.conf) || !record.conf.is_finite() {
        violations.push(Violation {
            field: "conf",
            message: format!("conf out of range: {}", record.conf),
        });
    }
    if let Some(b) = record.bbox {
        if !(b.x.is_finite() && b.y.is_finite() && b.w.is_finite() && b.h.is_finite()) {
            violations.push(Violation {
                field: "bbox",
                message: "bbox has non-finite coordinates".to_string(),
            });
        } else {
            if b.x < 0.0 || b.y < 0.0 {
                violations.push(Violation {
                    field: "bbox",
                    message: format!("bbox origin negative: ({}, {})", b.x, b.y),
                });
            }
            if b.w <= 0.0 || b.h <= 0.0 {
                violations.push(Violation {
                    field: "bbox",
                    message: format!("bbox has non-positive extent: {}x{}", b.w, b.h),
                });
            }
            if b.x + b.w > 1.0 || b.y + b.h > 1.0 {
                violations.push(Violation {
                    field: "bbox",
                    message: format!("bbox exceeds frame: x+w={}, y+h={}", b.x + b.w, b.y + b.h),
                });
            }
        }
    }
    violations
}

/// Which frequency group a class belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Head,
    Tail,
    FewShot,
}

/// Assignment of every class to exactly one of head, tail, or few-shot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPartition")]
pub struct LongTailPartition {
    head: BTreeSet<usize>,
    tail: BTreeSet<usize>,
    few_shot: BTreeSet<usize>,
    head_share: f64,
    few_shot_threshold: u64,
}

#[derive(Deserialize)]
struct RawPartition {
    head: BTreeSet<usize>,
    tail: BTreeSet<usize>,
    few_shot: BTreeSet<usize>,
    head_share: f64,
    few_shot_threshold: u64,
}

impl TryFrom<RawPartition> for LongTailPartition {
    type Error = Error;

    fn try_from(raw: RawPartition) -> Result<Self> {
        let num_classes = raw.head.len() + raw.tail.len() + raw.few_shot.len();
        LongTailPartition::from_sets(
            raw.head,
            raw.tail,
            raw.few_shot,
            num_classes,
            raw.head_share,
            raw.few_shot_threshold,
        )
    }
}

impl LongTailPartition {
    /// Build from explicit sets, enforcing the disjoint-cover invariant over
    /// `0..num_classes`. The count-based invariants are properties of the
    /// partitioning rule, checked where partitions are derived.
    pub fn from_sets(
        head: BTreeSet<usize>,
        tail: BTreeSet<usize>,
        few_shot: BTreeSet<usize>,
        num_classes: usize,
        head_share: f64,
        few_shot_threshold: u64,
    ) -> Result<Self> {
        if head.len() + tail.len() + few_shot.len() != num_classes {
            return Err(Error::invalid(format!(
                "partition covers {} classes, expected {num_classes}",
                head.len() + tail.len() + few_shot.len()
            )));
        }
        for id in head.iter().chain(&tail).chain(&few_shot) {
            if *id >= num_classes {
                return Err(Error::invalid(format!("class id {id} out of range")));
            }
        }
        if head.intersection(&tail).next().is_some()
            || head.intersection(&few_shot).next().is_some()
            || tail.intersection(&few_shot).next().is_some()
        {
            return Err(Error::invalid("partition groups overlap"));
        }
        Ok(Self {
            head,
            tail,
            few_shot,
            head_share,
            few_shot_threshold,
        })
    }

    pub fn head(&self) -> &BTreeSet<usize> {
        &self.head
    }

    pub fn tail(&self) -> &BTreeSet<usize> {
        &self.tail
    }

    pub fn few_shot(&self) -> &BTreeSet<usize> {
        &self.few_shot
    }

    pub fn head_share(&self) -> f64 {
        self.head_share
    }

    pub fn few_shot_threshold(&self) -> u64 {
        self.few_shot_threshold
    }

    pub fn num_classes(&self) -> usize {
        self.head.len() + self.tail.len() + self.few_shot.len()
    }

    pub fn group_of(&self, class: usize) -> Option<Group> {
        if self.head.contains(&class) {
            Some(Group::Head)
        } else if self.tail.contains(&class) {
            Some(Group::Tail)
        } else if self.few_shot.contains(&class) {
            Some(Group::FewShot)
        } else {
            None
        }
    }

    pub fn classes_in(&self, group: Group) -> &BTreeSet<usize> {
        match group {
            Group::Head => &self.head,
            Group::Tail => &self.tail,
            Group::FewShot => &self.few_shot,
        }
    }
}

/// Image preprocessing parameters recorded for provenance and applied by the
/// tiny-image feature mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    /// Target (height, width) in pixels.
    pub target_size: (u32, u32),
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for PreprocessSpec {
    fn default() -> Self {
        Self {
            target_size: (256, 256),
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

impl PreprocessSpec {
    pub fn validate(&self) -> Result<()> {
        if self.target_size.0 == 0 || self.target_size.1 == 0 {
            return Err(Error::invalid("preprocess target size must be positive"));
        }
        if self.std.iter().any(|&s| s <= 0.0) {
            return Err(Error::invalid("preprocess std components must be positive"));
        }
        Ok(())
    }
}
