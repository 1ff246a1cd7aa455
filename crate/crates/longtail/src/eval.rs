//! Per-class and grouped evaluation metrics, prediction-collapse analysis,
//! and report emission.
//!
//! Inference is loss-agnostic: predictions are plain argmax over logits
//! (ties to the lowest class id) and never consume margins or class
//! weights.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{Group, LabelMap, LongTailPartition};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::Matrix;
use crate::train::{Checkpoint, Dataset};

/// Argmax predictions per row; ties resolve to the lowest class id.
pub fn predict(model: &Model, features: &Matrix) -> Result<Vec<usize>> {
    let logits = model.forward(features)?;
    Ok(argmax_rows(&logits))
}

pub fn argmax_rows(logits: &Matrix) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Confusion counts, rows are true classes, columns predicted classes.
pub fn confusion_counts(
    truth: &[usize],
    predictions: &[usize],
    num_classes: usize,
) -> Vec<Vec<u64>> {
    debug_assert_eq!(truth.len(), predictions.len());
    let mut confusion = vec![vec![0u64; num_classes]; num_classes];
    for (&t, &p) in truth.iter().zip(predictions) {
        confusion[t][p] += 1;
    }
    confusion
}

/// Sample-weighted accuracy over all rows.
pub fn micro_accuracy(confusion: &[Vec<u64>]) -> Option<f64> {
    let total: u64 = confusion.iter().flatten().sum();
    if total == 0 {
        return None;
    }
    let diag: u64 = confusion.iter().enumerate().map(|(i, row)| row[i]).sum();
    Some(diag as f64 / total as f64)
}

/// Mean of per-class recall over classes with at least one sample.
pub fn macro_recall(confusion: &[Vec<u64>]) -> Option<f64> {
    let mut sum = 0.0;
    let mut classes = 0;
    for (i, row) in confusion.iter().enumerate() {
        let prevalence: u64 = row.iter().sum();
        if prevalence > 0 {
            sum += row[i] as f64 / prevalence as f64;
            classes += 1;
        }
    }
    if classes == 0 {
        None
    } else {
        Some(sum / classes as f64)
    }
}

/// Micro and macro accuracy for one class group. Absent when the group has
/// no evaluated samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAcc {
    pub micro: Option<f64>,
    #[serde(rename = "macro")]
    pub macro_avg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracies {
    pub head: GroupAcc,
    pub tail: GroupAcc,
    pub few_shot: GroupAcc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClassRow {
    pub class: String,
    pub accuracy: f64,
    pub prevalence: u64,
}

/// Full evaluation report: overall and grouped accuracy, per-class accuracy
/// with prevalence (zero-prevalence classes are absent, not zero), and the
/// raw confusion matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub labels: Vec<String>,
    pub overall_top1: f64,
    pub group_acc: GroupAccuracies,
    pub per_class: Vec<PerClassRow>,
    pub confusion: Vec<Vec<u64>>,
}

impl EvalReport {
    pub fn from_confusion(
        confusion: Vec<Vec<u64>>,
        labels: &LabelMap,
        partition: &LongTailPartition,
    ) -> Result<Self> {
        let c = labels.len();
        if confusion.len() != c || confusion.iter().any(|row| row.len() != c) {
            return Err(Error::ShapeMismatch {
                expected: format!("{c}x{c} confusion"),
                got: format!("{} rows", confusion.len()),
            });
        }
        if partition.num_classes() != c {
            return Err(Error::invalid(format!(
                "partition covers {} classes, label map has {c}",
                partition.num_classes()
            )));
        }
        let overall = micro_accuracy(&confusion)
            .ok_or_else(|| Error::invalid("empty test set: no samples to evaluate"))?;

        let group = |g: Group| -> GroupAcc {
            let classes = partition.classes_in(g);
            let mut diag = 0u64;
            let mut total = 0u64;
            let mut acc_sum = 0.0;
            let mut with_samples = 0usize;
            for &cid in classes {
                let prevalence: u64 = confusion[cid].iter().sum();
                diag += confusion[cid][cid];
                total += prevalence;
                if prevalence > 0 {
                    acc_sum += confusion[cid][cid] as f64 / prevalence as f64;
                    with_samples += 1;
                }
            }
            GroupAcc {
                micro: (total > 0).then(|| diag as f64 / total as f64),
                macro_avg: (with_samples > 0).then(|| acc_sum / with_samples as f64),
            }
        };

        let mut per_class = Vec::new();
        for (cid, row) in confusion.iter().enumerate() {
            let prevalence: u64 = row.iter().sum();
            if prevalence > 0 {
                per_class.push(PerClassRow {
                    class: labels.name(cid).unwrap_or_default().to_string(),
                    accuracy: row[cid] as f64 / prevalence as f64,
                    prevalence,
                });
            }
        }

        Ok(EvalReport {
            labels: labels.classes().to_vec(),
            overall_top1: overall,
            group_acc: GroupAccuracies {
                head: group(Group::Head),
                tail: group(Group::Tail),
                few_shot: group(Group::FewShot),
            },
            per_class,
            confusion,
        })
    }

    pub fn prevalence(&self, class_id: usize) -> u64 {
        self.confusion[class_id].iter().sum()
    }
}

/// Evaluate a checkpoint on a featurized test set.
///
/// The checkpoint's label space must match the manifest's, either exactly or
/// through the supplied name mapping (manifest name -> checkpoint name);
/// mismatches are an error listing the unmatched names. Truth labels are
/// translated into the checkpoint space before the confusion matrix is
/// accumulated, so predictions may land on any trained class.
pub fn evaluate(
    checkpoint: &Checkpoint,
    dataset: &Dataset,
    labels: &LabelMap,
    partition: &LongTailPartition,
    name_map: Option<&BTreeMap<String, String>>,
) -> Result<EvalReport> {
    let ckpt_labels = LabelMap::new(checkpoint.labels.clone())?;
    let mut translation = Vec::with_capacity(labels.len());
    let mut unmatched = Vec::new();
    for name in labels.classes() {
        let target = name_map
            .and_then(|m| m.get(name))
            .map(String::as_str)
            .unwrap_or(name);
        match ckpt_labels.id(target) {
            Some(id) => translation.push(id),
            None => {
                unmatched.push(name.clone());
                translation.push(usize::MAX);
            }
        }
    }
    if !unmatched.is_empty() {
        return Err(Error::LabelMismatch(format!(
            "classes not in the checkpoint label space: {}",
            unmatched.join(", ")
        )));
    }
    if partition.num_classes() != ckpt_labels.len() {
        return Err(Error::invalid(format!(
            "partition covers {} classes, checkpoint has {}",
            partition.num_classes(),
            ckpt_labels.len()
        )));
    }

    let model = checkpoint.model()?;
    let predictions = predict(&model, &dataset.features)?;
    let truth: Vec<usize> = dataset.labels.iter().map(|&l| translation[l]).collect();
    let confusion = confusion_counts(&truth, &predictions, ckpt_labels.len());
    EvalReport::from_confusion(confusion, &ckpt_labels, partition)
}

/// Half-up rounding to one decimal place.
pub fn round_half_up_1(x: f64) -> f64 {
    (x * 10.0 + 0.5).floor() / 10.0
}

/// Half-up rounding to two decimal places, returned in hundredths so the
/// digits can be rendered exactly.
fn percent_hundredths(fraction: f64) -> i64 {
    (fraction * 10_000.0 + 0.5).floor() as i64
}

/// Format a fraction as a percent with exactly two decimals, half-up.
pub fn format_percent(fraction: f64) -> String {
    let h = percent_hundredths(fraction);
    format!("{}.{:02}%", h / 100, (h % 100).abs())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionShare {
    pub class: String,
    pub class_id: usize,
    pub count: u64,
    /// Percent of the class's samples, half-up to one decimal.
    pub percent: f64,
}

/// Distribution of predictions for one true class, sorted by descending
/// count then ascending class id. Counts always sum to the prevalence.
pub fn prediction_distribution(
    report: &EvalReport,
    class_id: usize,
) -> Result<Vec<PredictionShare>> {
    if class_id >= report.confusion.len() {
        return Err(Error::invalid(format!("class id {class_id} out of range")));
    }
    let prevalence = report.prevalence(class_id);
    if prevalence == 0 {
        return Err(Error::ZeroPrevalence {
            class: report
                .labels
                .get(class_id)
                .cloned()
                .unwrap_or_else(|| class_id.to_string()),
        });
    }
    let mut shares: Vec<PredictionShare> = report.confusion[class_id]
        .iter()
        .enumerate()
        .filter(|(_, &count)| count > 0)
        .map(|(predicted, &count)| PredictionShare {
            class: report.labels[predicted].clone(),
            class_id: predicted,
            count,
            percent: round_half_up_1(count as f64 / prevalence as f64 * 100.0),
        })
        .collect();
    shares.sort_by(|a, b| b.count.cmp(&a.count).then(a.class_id.cmp(&b.class_id)));
    Ok(shares)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassDelta {
    pub class: String,
    pub baseline_pct: f64,
    pub candidate_pct: f64,
    /// Candidate minus baseline, in percentage points.
    pub delta_points: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImprovementChart {
    pub per_class: Vec<ClassDelta>,
    pub improved: usize,
    pub regressed: usize,
    pub unchanged: usize,
    pub overall_delta_points: f64,
}

/// Per-class accuracy deltas between a baseline and a candidate report over
/// the same label space. Classes evaluated in only one report are omitted
/// from the per-class rows.
pub fn improvement_chart(
    baseline: &EvalReport,
    candidate: &EvalReport,
) -> Result<ImprovementChart> {
    if baseline.labels != candidate.labels {
        return Err(Error::LabelMismatch(
            "baseline and candidate reports cover different class sets".to_string(),
        ));
    }
    let index = |report: &EvalReport| -> BTreeMap<String, f64> {
        report
            .per_class
            .iter()
            .map(|row| (row.class.clone(), row.accuracy))
            .collect()
    };
    let base = index(baseline);
    let cand = index(candidate);
    let mut chart = ImprovementChart {
        per_class: Vec::new(),
        improved: 0,
        regressed: 0,
        unchanged: 0,
        overall_delta_points: (candidate.overall_top1 - baseline.overall_top1) * 100.0,
    };
    for (class, &b) in &base {
        let Some(&c) = cand.get(class) else { continue };
        let delta = (c - b) * 100.0;
        if delta > 0.0 {
            chart.improved += 1;
        } else if delta < 0.0 {
            chart.regressed += 1;
        } else {
            chart.unchanged += 1;
        }
        chart.per_class.push(ClassDelta {
            class: class.clone(),
            baseline_pct: b * 100.0,
            candidate_pct: c * 100.0,
            delta_points: delta,
        });
    }
    Ok(chart)
}

impl ImprovementChart {
    /// Plot-ready CSV with a fixed column order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,baseline_pct,candidate_pct,delta_points\n");
        for row in &self.per_class {
            out.push_str(&format!(
                "{},{},{},{}\n",
                row.class, row.baseline_pct, row.candidate_pct, row.delta_points
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            other => Err(Error::invalid(format!("unknown report format `{other}`"))),
        }
    }
}

/// Render a report: lossless JSON, fixed-column CSV, or a markdown table
/// with accuracies at two decimals.
pub fn emit_report(report: &EvalReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => {
            let mut s =
                serde_json::to_string_pretty(report).map_err(|e| Error::invalid(e.to_string()))?;
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Csv => {
            let mut out = String::from("class,accuracy,prevalence\n");
            for row in &report.per_class {
                out.push_str(&format!(
                    "{},{},{}\n",
                    row.class, row.accuracy, row.prevalence
                ));
            }
            Ok(out)
        }
        ReportFormat::Markdown => {
            let fmt_group = |g: &GroupAcc| -> String {
                match (g.micro, g.macro_avg) {
                    (Some(mi), Some(ma)) => {
                        format!("{} / {}", format_percent(mi), format_percent(ma))
                    }
                    _ => "-".to_string(),
                }
            };
            let mut out = String::new();
            out.push_str("| METRIC | VALUE |\n|---|---:|\n");
            out.push_str(&format!(
                "| overall top-1 | {} |\n",
                format_percent(report.overall_top1)
            ));
            out.push_str(&format!(
                "| head (micro / macro) | {} |\n",
                fmt_group(&report.group_acc.head)
            ));
            out.push_str(&format!(
                "| tail (micro / macro) | {} |\n",
                fmt_group(&report.group_acc.tail)
            ));
            out.push_str(&format!(
                "| few-shot (micro / macro) | {} |\n",
                fmt_group(&report.group_acc.few_shot)
            ));
            out.push('\n');
            out.push_str("| CLASS | ACCURACY (%) | PREVALENCE |\n|---|---:|---:|\n");
            for row in &report.per_class {
                out.push_str(&format!(
                    "| {} | {} | {} |\n",
                    row.class,
                    format_percent(row.accuracy),
                    row.prevalence
                ));
            }
            Ok(out)
        }
    }
}
