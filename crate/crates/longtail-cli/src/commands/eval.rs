use std::collections::BTreeMap;
use std::path::Path;

use longtail::data::LongTailPartition;
use longtail::eval::{emit_report, evaluate, prediction_distribution, EvalReport, ReportFormat};
use longtail::manifest::{read_json, read_labels, read_manifest, Provenance};
use longtail::model::{featurize, FeatureMode};
use longtail::train::{Checkpoint, Dataset};
use longtail::{Error, Result};
use serde_json::json;

use super::emit_event;

#[allow(clippy::too_many_arguments)]
pub fn run(
    checkpoint_path: &Path,
    manifest_path: &Path,
    labels_path: Option<&Path>,
    partition_path: &Path,
    out: &Path,
    features: &str,
    standardize: bool,
    image_base: Option<&Path>,
    label_map_path: Option<&Path>,
) -> Result<()> {
    let checkpoint = Checkpoint::load(checkpoint_path)?;
    let records = read_manifest(manifest_path)?;
    let labels = match labels_path {
        Some(path) => read_labels(path)?,
        None => longtail::data::LabelMap::new(checkpoint.labels.clone())?,
    };
    let partition: LongTailPartition = read_json(partition_path)?;
    let name_map: Option<BTreeMap<String, String>> = match label_map_path {
        Some(path) => Some(read_json(path)?),
        None => None,
    };

    let mode = match features {
        "vectors" => FeatureMode::Vectors { standardize },
        // The checkpoint's recorded preprocess spec keeps evaluation
        // consistent with training.
        "tiny-image" => FeatureMode::TinyImage {
            spec: checkpoint.config.preprocess.clone(),
            base_dir: image_base.map(Path::to_path_buf),
        },
        other => return Err(Error::invalid(format!("unknown feature mode `{other}`"))),
    };
    let featurized = featurize(&records, &mode)?;
    for (index, reason) in &featurized.skipped {
        eprintln!("warning: skipped record {index}: {reason}");
    }
    let dataset = Dataset::new(featurized.features, featurized.labels)?;

    let report = evaluate(
        &checkpoint,
        &dataset,
        &labels,
        &partition,
        name_map.as_ref(),
    )?;
    std::fs::write(out, emit_report(&report, ReportFormat::Json)?)
        .map_err(|e| Error::io(out, e))?;
    let mut provenance = Provenance::new(
        "eval",
        json!({ "features": features, "standardize": standardize }),
    )
    .with_input(checkpoint_path)?
    .with_input(manifest_path)?
    .with_input(partition_path)?;
    if let Some(path) = labels_path {
        provenance = provenance.with_input(path)?;
    }
    provenance.write_for(out)?;

    emit_event(
        "eval_summary",
        json!({
            "overall_top1": report.overall_top1,
            "tail_micro": report.group_acc.tail.micro,
            "tail_macro": report.group_acc.tail.macro_avg,
            "classes_evaluated": report.per_class.len(),
        }),
    );
    eprintln!(
        "eval: overall top-1 {:.4}, {} classes with samples",
        report.overall_top1,
        report.per_class.len()
    );
    Ok(())
}

pub fn report(report_path: &Path, format: &str, out: Option<&Path>) -> Result<()> {
    let report: EvalReport = read_json(report_path)?;
    let format: ReportFormat = format.parse()?;
    let rendered = emit_report(&report, format)?;
    match out {
        Some(path) => std::fs::write(path, rendered).map_err(|e| Error::io(path, e))?,
        None => print!("{rendered}"),
    }
    Ok(())
}

pub fn collapse(report_path: &Path, class: &str, out: Option<&Path>) -> Result<()> {
    let report: EvalReport = read_json(report_path)?;
    let class_id = report
        .labels
        .iter()
        .position(|name| name == class)
        .ok_or_else(|| Error::invalid(format!("class `{class}` not in the report")))?;
    let distribution = prediction_distribution(&report, class_id)?;

    let mut rendered = String::from("| PREDICTED CLS | COUNT | PERCENT (%) |\n|---|---:|---:|\n");
    for share in &distribution {
        rendered.push_str(&format!(
            "| {} | {} | {:.1} |\n",
            share.class, share.count, share.percent
        ));
    }
    match out {
        Some(path) => std::fs::write(path, &rendered).map_err(|e| Error::io(path, e))?,
        None => print!("{rendered}"),
    }
    emit_event(
        "collapse_summary",
        json!({
            "class": class,
            "prevalence": distribution.iter().map(|s| s.count).sum::<u64>(),
            "distinct_predictions": distribution.len(),
        }),
    );
    Ok(())
}
