//! Class-capped balancing, deterministic stratified splits, long-tail
//! partitioning, and reduced-bias cross-domain test construction.
//!
//! Every operation here is a pure function of `(records, parameters, seed)`.
//! Per-class work draws from an independent RNG stream keyed by the class
//! id, so outputs do not depend on processing order, and all outputs keep
//! the original manifest order.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::{class_stats, ClassStats, LabelMap, LongTailPartition, SampleRecord};
use crate::error::{Error, Result};
use crate::rng::{streams, SeededRng};

/// Train/validation/test fractions plus the split seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            fractions: [0.8, 0.1, 0.1],
            seed: 42,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for f in self.fractions {
            if !f.is_finite() || f <= 0.0 || f >= 1.0 {
                return Err(Error::invalid(format!("split fraction {f} outside (0, 1)")));
            }
        }
        let sum: f64 = self.fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "split fractions sum to {sum}, not 1"
            )));
        }
        Ok(())
    }
}

/// Reduced-bias test construction parameters: the shared class names and
/// what counts as temporal/spatial overlap with the source pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedBiasSpec {
    pub shared_classes: BTreeSet<String>,
    /// Records at the same site within this many seconds of a source record
    /// are removed as overlap.
    pub time_window_secs: i64,
}

impl ReducedBiasSpec {
    pub fn validate(&self) -> Result<()> {
        if self.shared_classes.is_empty() {
            return Err(Error::invalid("shared_classes must be non-empty"));
        }
        if self.time_window_secs < 0 {
            return Err(Error::invalid("time window must be >= 0"));
        }
        Ok(())
    }
}

fn indices_by_class(records: &[SampleRecord]) -> BTreeMap<usize, Vec<usize>> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_class.entry(r.label).or_default().push(i);
    }
    by_class
}

/// Cap every class at `cap` records, chosen by seeded uniform sampling
/// without replacement. Classes at or below the cap are untouched. Retained
/// records keep their original manifest order.
pub fn cap_classes(records: &[SampleRecord], cap: u64, seed: u64) -> Result<Vec<SampleRecord>> {
    if cap == 0 {
        return Err(Error::invalid("cap must be >= 1"));
    }
    let mut keep = vec![true; records.len()];
    for (class, indices) in indices_by_class(records) {
        if indices.len() as u64 <= cap {
            continue;
        }
        let mut rng = SeededRng::with_stream(seed, streams::CAP | class as u64);
        let perm = rng.permutation(indices.len());
        for &p in &perm[cap as usize..] {
            keep[indices[p]] = false;
        }
    }
    Ok(records
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(r, _)| r.clone())
        .collect())
}

/// Integer part of `f * n`, tolerant of representation error when the
/// product should be exact (e.g. 0.8 * 10).
fn stable_floor(x: f64) -> u64 {
    let rounded = x.round();
    if (x - rounded).abs() < 1e-9 {
        rounded as u64
    } else {
        x.floor() as u64
    }
}

/// Stratified split into (train, val, test).
///
/// Per class, split sizes are the floors of `fraction * n` with leftover
/// records assigned train, then val, then test. A seeded per-class shuffle
/// determines membership; identical inputs and seed reproduce the exact
/// split, and different seeds change membership but not the per-class
/// counts. Each output keeps original manifest order.
pub fn stratified_split(
    records: &[SampleRecord],
    spec: &SplitSpec,
) -> Result<(Vec<SampleRecord>, Vec<SampleRecord>, Vec<SampleRecord>)> {
    spec.validate()?;
    let mut assignment = vec![0u8; records.len()];
    for (class, indices) in indices_by_class(records) {
        let n = indices.len() as u64;
        let mut counts = [
            stable_floor(spec.fractions[0] * n as f64),
            stable_floor(spec.fractions[1] * n as f64),
            stable_floor(spec.fractions[2] * n as f64),
        ];
        let mut remainder = n - counts.iter().sum::<u64>();
        for c in counts.iter_mut() {
            if remainder == 0 {
                break;
            }
            *c += 1;
            remainder -= 1;
        }
        let mut rng = SeededRng::with_stream(spec.seed, streams::SPLIT | class as u64);
        let perm = rng.permutation(indices.len());
        for (rank, &p) in perm.iter().enumerate() {
            let rank = rank as u64;
            let bucket = if rank < counts[0] {
                0
            } else if rank < counts[0] + counts[1] {
                1
            } else {
                2
            };
            assignment[indices[p]] = bucket;
        }
    }
    let collect = |bucket: u8| {
        records
            .iter()
            .zip(&assignment)
            .filter(|(_, &a)| a == bucket)
            .map(|(r, _)| r.clone())
            .collect::<Vec<_>>()
    };
    Ok((collect(0), collect(1), collect(2)))
}

/// Split by an externally supplied assignment of `image_ref` to one of
/// `train`, `val`, `test`, used to reproduce published splits exactly.
pub fn split_by_assignment(
    records: &[SampleRecord],
    assignment: &BTreeMap<String, String>,
) -> Result<(Vec<SampleRecord>, Vec<SampleRecord>, Vec<SampleRecord>)> {
    let mut out = (Vec::new(), Vec::new(), Vec::new());
    for r in records {
        match assignment.get(&r.image_ref).map(String::as_str) {
            Some("train") => out.0.push(r.clone()),
            Some("val") => out.1.push(r.clone()),
            Some("test") => out.2.push(r.clone()),
            Some(other) => {
                return Err(Error::invalid(format!(
                    "image `{}` assigned to unknown split `{other}`",
                    r.image_ref
                )))
            }
            None => {
                return Err(Error::invalid(format!(
                    "image `{}` missing from the split assignment",
                    r.image_ref
                )))
            }
        }
    }
    Ok(out)
}

/// Assign classes to head, tail, and few-shot groups.
///
/// Few-shot classes have fewer than `few_shot_threshold` samples. Among the
/// remaining classes sorted by descending count (ties by ascending id), the
/// head is the shortest prefix whose cumulative share of the total strictly
/// exceeds `head_share`; the tail is the rest. If no prefix exceeds the
/// share (the non-few-shot mass itself is too small), every non-few-shot
/// class lands in the head.
pub fn partition_long_tail(
    stats: &ClassStats,
    head_share: f64,
    few_shot_threshold: u64,
) -> Result<LongTailPartition> {
    if stats.total() == 0 {
        return Err(Error::invalid("cannot partition empty statistics"));
    }
    if !(0.0..1.0).contains(&head_share) {
        return Err(Error::invalid(format!(
            "head share {head_share} outside [0, 1)"
        )));
    }
    let mut few_shot = BTreeSet::new();
    let mut rest: Vec<usize> = Vec::new();
    for (c, &n) in stats.counts().iter().enumerate() {
        if n < few_shot_threshold {
            few_shot.insert(c);
        } else {
            rest.push(c);
        }
    }
    rest.sort_by(|&a, &b| stats.count(b).cmp(&stats.count(a)).then_with(|| a.cmp(&b)));

    let total = stats.total() as f64;
    let mut head = BTreeSet::new();
    let mut tail = BTreeSet::new();
    let mut cumulative = 0u64;
    let mut exceeded = false;
    for &c in &rest {
        if exceeded {
            tail.insert(c);
        } else {
            cumulative += stats.count(c);
            head.insert(c);
            exceeded = cumulative as f64 / total > head_share;
        }
    }
    LongTailPartition::from_sets(
        head,
        tail,
        few_shot,
        stats.num_classes(),
        head_share,
        few_shot_threshold,
    )
}

/// Outcome of reduced-bias construction: relabeled records plus warnings for
/// shared classes that contributed nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedBiasOutcome {
    pub records: Vec<SampleRecord>,
    pub warnings: Vec<String>,
    pub removed_overlap: usize,
    pub removed_class: usize,
}

/// Build a reduced-bias test set from an external manifest.
///
/// External records are filtered to the shared classes, records overlapping
/// the source pool (same site, timestamps within the window) are removed,
/// and survivors are relabeled into the source label space.
pub fn build_reduced_bias(
    source: &[SampleRecord],
    source_labels: &LabelMap,
    external: &[SampleRecord],
    external_labels: &LabelMap,
    spec: &ReducedBiasSpec,
) -> Result<ReducedBiasOutcome> {
    spec.validate()?;
    for name in &spec.shared_classes {
        if source_labels.id(name).is_none() {
            return Err(Error::LabelMismatch(format!(
                "shared class `{name}` not in the source label map"
            )));
        }
    }

    // Site -> sorted timestamps of source records, for the overlap check.
    let mut source_times: BTreeMap<&str, Vec<i64>> = BTreeMap::new();
    for r in source {
        if let (Some(site), Some(ts)) = (&r.site, r.timestamp) {
            source_times
                .entry(site.as_str())
                .or_default()
                .push(ts.timestamp());
        }
    }
    for times in source_times.values_mut() {
        times.sort_unstable();
    }
    let overlaps = |site: &str, ts: i64| -> bool {
        let Some(times) = source_times.get(site) else {
            return false;
        };
        let lo = ts - spec.time_window_secs;
        let hi = ts + spec.time_window_secs;
        let start = times.partition_point(|&t| t < lo);
        start < times.len() && times[start] <= hi
    };

    let source_index = source_labels.index_map();
    let mut seen_classes: BTreeSet<&str> = BTreeSet::new();
    let mut outcome = ReducedBiasOutcome {
        records: Vec::new(),
        warnings: Vec::new(),
        removed_overlap: 0,
        removed_class: 0,
    };
    for (i, r) in external.iter().enumerate() {
        let Some(name) = external_labels.name(r.label) else {
            return Err(Error::UnknownLabel {
                index: i,
                image_ref: r.image_ref.clone(),
                label: r.label,
                num_classes: external_labels.len(),
            });
        };
        if !spec.shared_classes.contains(name) {
            outcome.removed_class += 1;
            continue;
        }
        seen_classes.insert(name);
        if let (Some(site), Some(ts)) = (&r.site, r.timestamp) {
            if overlaps(site, ts.timestamp()) {
                outcome.removed_overlap += 1;
                continue;
            }
        }
        let mut record = r.clone();
        record.label = source_index[name];
        outcome.records.push(record);
    }
    for name in &spec.shared_classes {
        if !seen_classes.contains(name.as_str()) {
            outcome.warnings.push(format!(
                "shared class `{name}` absent from the external manifest; it will appear with zero prevalence"
            ));
        }
    }
    Ok(outcome)
}

/// Convenience wrapper: stats for a record list against a label map.
pub fn stats_for(records: &[SampleRecord], labels: &LabelMap) -> Result<ClassStats> {
    class_stats(records, labels)
}
