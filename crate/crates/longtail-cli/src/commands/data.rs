use std::collections::BTreeMap;
use std::path::Path;

use longtail::data::class_stats;
use longtail::manifest::{
    read_json, read_labels, read_manifest, write_json_pretty, write_manifest, Provenance,
};
use longtail::sampler::{
    build_reduced_bias, cap_classes, partition_long_tail, split_by_assignment, stratified_split,
    ReducedBiasSpec, SplitSpec,
};
use longtail::{Error, Result};
use serde_json::json;

use super::{emit_event, parse_list};

pub fn balance(input: &Path, out: &Path, cap: u64, seed: u64) -> Result<()> {
    let records = read_manifest(input)?;
    let capped = cap_classes(&records, cap, seed)?;
    write_manifest(out, &capped)?;
    Provenance::new("balance", json!({ "cap": cap, "seed": seed }))
        .with_input(input)?
        .write_for(out)?;
    emit_event(
        "balance_summary",
        json!({ "in": records.len(), "out": capped.len() }),
    );
    eprintln!(
        "balance: {} -> {} records (cap {cap})",
        records.len(),
        capped.len()
    );
    Ok(())
}

pub fn split(
    input: &Path,
    out_dir: &Path,
    fractions: &str,
    seed: u64,
    assignments: Option<&Path>,
) -> Result<()> {
    let records = read_manifest(input)?;
    let (train, val, test, config) = match assignments {
        Some(path) => {
            let map: BTreeMap<String, String> = read_json(path)?;
            let (train, val, test) = split_by_assignment(&records, &map)?;
            (
                train,
                val,
                test,
                json!({ "assignments": path.display().to_string() }),
            )
        }
        None => {
            let parts = parse_list::<f64>(fractions, "fraction")?;
            let spec = SplitSpec {
                fractions: parts
                    .try_into()
                    .map_err(|_| Error::invalid("expected exactly three fractions"))?,
                seed,
            };
            let (train, val, test) = stratified_split(&records, &spec)?;
            (train, val, test, serde_json::to_value(&spec).unwrap())
        }
    };

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for (name, subset) in [("train", &train), ("val", &val), ("test", &test)] {
        let path = out_dir.join(format!("{name}.jsonl"));
        write_manifest(&path, subset)?;
        Provenance::new("split", config.clone())
            .with_input(input)?
            .write_for(&path)?;
    }
    emit_event(
        "split_summary",
        json!({ "train": train.len(), "val": val.len(), "test": test.len() }),
    );
    eprintln!(
        "split: {} / {} / {} records",
        train.len(),
        val.len(),
        test.len()
    );
    Ok(())
}

pub fn partition(
    input: &Path,
    labels_path: &Path,
    out: &Path,
    head_share: f64,
    fewshot: u64,
) -> Result<()> {
    let records = read_manifest(input)?;
    let labels = read_labels(labels_path)?;
    let stats = class_stats(&records, &labels)?;
    let partition = partition_long_tail(&stats, head_share, fewshot)?;
    write_json_pretty(out, &partition)?;
    Provenance::new(
        "partition",
        json!({ "head_share": head_share, "few_shot_threshold": fewshot }),
    )
    .with_input(input)?
    .with_input(labels_path)?
    .write_for(out)?;
    emit_event(
        "partition_summary",
        json!({
            "head": partition.head().len(),
            "tail": partition.tail().len(),
            "few_shot": partition.few_shot().len(),
            "total_samples": stats.total(),
        }),
    );
    eprintln!(
        "partition: head {} / tail {} / few-shot {} classes over {} samples",
        partition.head().len(),
        partition.tail().len(),
        partition.few_shot().len(),
        stats.total()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn reduced_bias(
    source: &Path,
    source_labels_path: &Path,
    external: &Path,
    external_labels_path: &Path,
    shared: &str,
    out: &Path,
    dt: i64,
) -> Result<()> {
    let source_records = read_manifest(source)?;
    let source_labels = read_labels(source_labels_path)?;
    let external_records = read_manifest(external)?;
    let external_labels = read_labels(external_labels_path)?;
    let spec = ReducedBiasSpec {
        shared_classes: parse_list::<String>(shared, "class name")?
            .into_iter()
            .collect(),
        time_window_secs: dt,
    };
    let outcome = build_reduced_bias(
        &source_records,
        &source_labels,
        &external_records,
        &external_labels,
        &spec,
    )?;
    write_manifest(out, &outcome.records)?;
    Provenance::new("reduced-bias", serde_json::to_value(&spec).unwrap())
        .with_input(source)?
        .with_input(external)?
        .with_input(source_labels_path)?
        .with_input(external_labels_path)?
        .write_for(out)?;
    for warning in &outcome.warnings {
        eprintln!("warning: {warning}");
    }
    emit_event(
        "reduced_bias_summary",
        json!({
            "records": outcome.records.len(),
            "removed_overlap": outcome.removed_overlap,
            "removed_class": outcome.removed_class,
            "warnings": outcome.warnings,
        }),
    );
    eprintln!(
        "reduced-bias: kept {} records ({} overlap removed, {} outside shared classes)",
        outcome.records.len(),
        outcome.removed_overlap,
        outcome.removed_class
    );
    Ok(())
}
