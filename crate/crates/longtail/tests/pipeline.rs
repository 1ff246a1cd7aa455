//! End-to-end flows through the library: detector ingest to partition, and
//! manifest to trained checkpoint to rendered report.

use std::collections::BTreeSet;
use std::fs;

use longtail::data::{class_stats, LabelMap, SampleRecord};
use longtail::eval::{evaluate, prediction_distribution, ReportFormat};
use longtail::ingest::{merge, parse_detections, read_metadata, MergeOptions};
use longtail::losses::LossSpec;
use longtail::manifest::{read_manifest, write_manifest};
use longtail::model::{featurize, FeatureMode, ModelConfig};
use longtail::numerics::Matrix;
use longtail::optim::OptimConfig;
use longtail::rng::SeededRng;
use longtail::sampler::{cap_classes, partition_long_tail, stratified_split, SplitSpec};
use longtail::train::{train, Dataset, TrainConfig};

#[test]
fn ingest_to_partition_flow() {
    let dir = tempfile::tempdir().unwrap();
    let detections_path = dir.path().join("detections.json");
    let metadata_path = dir.path().join("metadata.csv");

    // 30 cow images with detections, 8 horses without, plus noise rows.
    let mut det_entries = Vec::new();
    let mut meta_lines = Vec::new();
    for i in 0..30 {
        det_entries.push(format!(
            r#"{{"file":"cow_{i}.jpg","detections":[{{"category":"1","bbox":[0.1,0.1,0.4,0.4],"conf":0.9}},{{"category":"1","bbox":[0.5,0.5,0.2,0.2],"conf":0.4}}]}}"#
        ));
        meta_lines.push(format!(
            "cow_{i}.jpg,cow,site_a,2016-05-01 10:{:02}:00",
            i % 60
        ));
    }
    for i in 0..8 {
        meta_lines.push(format!("horse_{i}.jpg,horse,site_b,"));
    }
    meta_lines.push("junk_0.jpg,vehicle,site_a,".to_string());
    meta_lines.push("junk_1.jpg,empty,site_a,".to_string());
    meta_lines.push("junk_2.jpg,pegasus,site_a,".to_string());
    fs::write(
        &detections_path,
        format!("{{\"images\":[{}]}}", det_entries.join(",")),
    )
    .unwrap();
    fs::write(&metadata_path, meta_lines.join("\n")).unwrap();

    let labels = LabelMap::new(vec!["cow".into(), "horse".into()]).unwrap();
    let detections = parse_detections(&detections_path).unwrap();
    let metadata = read_metadata(&metadata_path).unwrap();
    let outcome = merge(&detections, &metadata, &labels, &MergeOptions::default());

    assert_eq!(outcome.records.len(), 38);
    assert_eq!(outcome.excluded_total(), 2);
    assert_eq!(outcome.rejects.len(), 1);
    assert_eq!(
        outcome.records.len() + outcome.excluded_total() + outcome.rejects.len(),
        metadata.len()
    );
    // Cow records carry the 0.9 detection, horses the full-frame default.
    assert!(outcome
        .records
        .iter()
        .filter(|r| r.label == 0)
        .all(|r| r.conf == 0.9));
    assert!(outcome
        .records
        .iter()
        .filter(|r| r.label == 1)
        .all(|r| r.conf == 0.0));

    // Manifest round trip keeps everything.
    let manifest_path = dir.path().join("manifest.jsonl");
    write_manifest(&manifest_path, &outcome.records).unwrap();
    let records = read_manifest(&manifest_path).unwrap();
    assert_eq!(records, outcome.records);

    // Cap cows at 10, split, partition.
    let capped = cap_classes(&records, 10, 7).unwrap();
    let stats = class_stats(&capped, &labels).unwrap();
    assert_eq!(stats.counts(), &[10, 8]);

    let (train_split, val_split, test_split) = stratified_split(
        &capped,
        &SplitSpec {
            fractions: [0.8, 0.1, 0.1],
            seed: 5,
        },
    )
    .unwrap();
    assert_eq!(
        train_split.len() + val_split.len() + test_split.len(),
        capped.len()
    );

    let partition = partition_long_tail(&stats, 0.5, 5).unwrap();
    assert_eq!(partition.head(), &BTreeSet::from([0]));
    assert_eq!(partition.tail(), &BTreeSet::from([1]));
    assert!(partition.few_shot().is_empty());
}

fn synthetic_manifest(counts: &[usize], dims: usize, seed: u64) -> (Vec<SampleRecord>, LabelMap) {
    let labels =
        LabelMap::new((0..counts.len()).map(|c| format!("species_{c}")).collect()).unwrap();
    let mut rng = SeededRng::new(seed);
    let means: Vec<Vec<f64>> = (0..counts.len())
        .map(|_| (0..dims).map(|_| rng.normal() * 2.5).collect())
        .collect();
    let mut records = Vec::new();
    for (class, &count) in counts.iter().enumerate() {
        for i in 0..count {
            let mut record = SampleRecord::new(format!("s{class}_{i}"), class);
            record.features = Some(
                means[class]
                    .iter()
                    .map(|&m| m + rng.normal() * 0.5)
                    .collect(),
            );
            records.push(record);
        }
    }
    (records, labels)
}

#[test]
fn train_eval_report_flow() {
    let dir = tempfile::tempdir().unwrap();
    let (records, labels) = synthetic_manifest(&[60, 30, 12], 6, 11);
    let manifest_path = dir.path().join("manifest.jsonl");
    write_manifest(&manifest_path, &records).unwrap();
    let records = read_manifest(&manifest_path).unwrap();

    let (train_records, val_records, test_records) = stratified_split(
        &records,
        &SplitSpec {
            fractions: [0.8, 0.1, 0.1],
            seed: 3,
        },
    )
    .unwrap();
    let to_dataset = |records: &[SampleRecord]| {
        let f = featurize(records, &FeatureMode::Vectors { standardize: false }).unwrap();
        Dataset::new(f.features, f.labels).unwrap()
    };
    let train_set = to_dataset(&train_records);
    let val_set = to_dataset(&val_records);
    let test_set = to_dataset(&test_records);

    let mut cfg = TrainConfig::new(ModelConfig::linear(6, 3, 1), LossSpec::ldam(0.5, 10.0));
    cfg.optim = OptimConfig::adamw(0.05, 1e-2);
    cfg.batch_size = 16;
    cfg.max_epochs = 60;
    cfg.seed = 9;
    let outcome = train(&train_set, &val_set, &labels, &cfg).unwrap();
    assert!(outcome.best.metric > 0.5, "metric {}", outcome.best.metric);

    let stats = class_stats(&records, &labels).unwrap();
    let partition = partition_long_tail(&stats, 0.5, 5).unwrap();
    let report = evaluate(&outcome.best, &test_set, &labels, &partition, None).unwrap();
    assert!(report.overall_top1 > 0.5);
    let total: u64 = report.confusion.iter().flatten().sum();
    assert_eq!(total as usize, test_set.len());

    // Rendered outputs.
    let json = longtail::eval::emit_report(&report, ReportFormat::Json).unwrap();
    let parsed: longtail::eval::EvalReport = serde_json::from_str(&json).unwrap();
    assert_eq!(parsed, report);
    let md = longtail::eval::emit_report(&report, ReportFormat::Markdown).unwrap();
    assert!(md.contains("| CLASS | ACCURACY (%) | PREVALENCE |"));
    let csv = longtail::eval::emit_report(&report, ReportFormat::Csv).unwrap();
    assert!(csv.lines().count() >= 2);

    // Collapse distribution for the rarest class sums to its prevalence.
    let rare = 2usize;
    let prevalence = report.prevalence(rare);
    if prevalence > 0 {
        let dist = prediction_distribution(&report, rare).unwrap();
        assert_eq!(dist.iter().map(|d| d.count).sum::<u64>(), prevalence);
    }
}

#[test]
fn eval_rejects_mismatched_label_spaces() {
    let (records, labels) = synthetic_manifest(&[10, 10], 4, 2);
    let f = featurize(&records, &FeatureMode::Vectors { standardize: false }).unwrap();
    let dataset = Dataset::new(f.features, f.labels).unwrap();
    let mut cfg = TrainConfig::new(ModelConfig::linear(4, 2, 1), LossSpec::ce());
    cfg.optim = OptimConfig::adam(1e-2);
    cfg.max_epochs = 2;
    cfg.batch_size = 8;
    let outcome = train(&dataset, &dataset, &labels, &cfg).unwrap();

    let stats = class_stats(&records, &labels).unwrap();
    let partition = partition_long_tail(&stats, 0.5, 2).unwrap();
    let other_labels = LabelMap::new(vec!["species_0".into(), "zebra".into()]).unwrap();
    let err = evaluate(&outcome.best, &dataset, &other_labels, &partition, None).unwrap_err();
    assert!(err.to_string().contains("zebra"), "{err}");

    // A name mapping repairs the mismatch.
    let map: std::collections::BTreeMap<String, String> =
        [("zebra".to_string(), "species_1".to_string())]
            .into_iter()
            .collect();
    evaluate(
        &outcome.best,
        &dataset,
        &other_labels,
        &partition,
        Some(&map),
    )
    .unwrap();
}

#[test]
fn margins_never_reach_inference() {
    // Two checkpoints with identical weights, one trained under LDAM
    // margins: evaluation consumes only weights, so reports are identical.
    let (records, labels) = synthetic_manifest(&[20, 10], 4, 8);
    let f = featurize(&records, &FeatureMode::Vectors { standardize: false }).unwrap();
    let dataset = Dataset::new(f.features, f.labels).unwrap();
    let mut cfg = TrainConfig::new(ModelConfig::linear(4, 2, 3), LossSpec::ldam(0.5, 30.0));
    cfg.optim = OptimConfig::adamw(0.05, 1e-2);
    cfg.max_epochs = 4;
    cfg.batch_size = 8;
    let outcome = train(&dataset, &dataset, &labels, &cfg).unwrap();

    let mut as_ce = outcome.best.clone();
    as_ce.config.loss = LossSpec::ce();
    let stats = class_stats(&records, &labels).unwrap();
    let partition = partition_long_tail(&stats, 0.5, 2).unwrap();
    let ldam_report = evaluate(&outcome.best, &dataset, &labels, &partition, None).unwrap();
    let ce_report = evaluate(&as_ce, &dataset, &labels, &partition, None).unwrap();
    assert_eq!(ldam_report, ce_report);
}

#[test]
fn matrix_featurize_round_trip_order() {
    // kept indices refer to the original record order.
    let (records, _) = synthetic_manifest(&[3, 3], 4, 4);
    let f = featurize(&records, &FeatureMode::Vectors { standardize: false }).unwrap();
    assert_eq!(f.kept, (0..6).collect::<Vec<_>>());
    let row: Vec<f64> = f.features.row(4).to_vec();
    assert_eq!(Some(row), records[4].features.clone());
    let _ = Matrix::zeros(1, 1);
}
