use std::path::{Path, PathBuf};

use longtail::manifest::{read_json, read_labels, read_manifest, Provenance};
use longtail::model::{featurize, FeatureMode};
use longtail::train::{train, write_history, Dataset, StopReason, TrainConfig};
use longtail::{Error, Result};
use serde::Deserialize;
use serde_json::json;

use super::emit_event;

/// Experiment configuration file: input paths, the feature mode, and the
/// full training configuration.
#[derive(Debug, Clone, Deserialize)]
pub struct ExperimentConfig {
    pub paths: ExperimentPaths,
    #[serde(default)]
    pub features: FeatureMode,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ExperimentPaths {
    pub train_manifest: PathBuf,
    pub val_manifest: PathBuf,
    pub labels: PathBuf,
    pub out_dir: PathBuf,
}

fn load_dataset(path: &Path, mode: &FeatureMode) -> Result<Dataset> {
    let records = read_manifest(path)?;
    let featurized = featurize(&records, mode)?;
    for (index, reason) in &featurized.skipped {
        eprintln!("warning: skipped record {index}: {reason}");
    }
    Dataset::new(featurized.features, featurized.labels)
}

pub fn run(config_path: &Path) -> Result<()> {
    let experiment: ExperimentConfig = read_json(config_path)?;
    let paths = &experiment.paths;
    for path in [&paths.train_manifest, &paths.val_manifest, &paths.labels] {
        if !path.exists() {
            return Err(Error::invalid(format!(
                "input path does not exist: {}",
                path.display()
            )));
        }
    }
    let labels = read_labels(&paths.labels)?;
    let train_set = load_dataset(&paths.train_manifest, &experiment.features)?;
    let val_set = load_dataset(&paths.val_manifest, &experiment.features)?;

    // Resolve an unspecified input dimension from the data.
    let mut cfg = experiment.train.clone();
    if cfg.model.input_dim == 0 {
        cfg.model.input_dim = train_set.features.cols();
    }
    if cfg.model.num_classes == 0 {
        cfg.model.num_classes = labels.len();
    }

    eprintln!(
        "train: {} train / {} val samples, {} classes, {} features",
        train_set.len(),
        val_set.len(),
        labels.len(),
        cfg.model.input_dim
    );
    let outcome = train(&train_set, &val_set, &labels, &cfg)?;

    std::fs::create_dir_all(&paths.out_dir).map_err(|e| Error::io(&paths.out_dir, e))?;
    let checkpoint_path = paths.out_dir.join("checkpoint.json");
    let history_path = paths.out_dir.join("history.jsonl");
    outcome.best.save(&checkpoint_path)?;
    write_history(&history_path, &outcome.history)?;
    let provenance = Provenance::new("train", serde_json::to_value(&cfg).unwrap())
        .with_input(&paths.train_manifest)?
        .with_input(&paths.val_manifest)?
        .with_input(&paths.labels)?;
    provenance.write_for(&checkpoint_path)?;
    provenance.write_for(&history_path)?;

    for window in outcome.history.windows(2) {
        if window[1].lr != window[0].lr {
            emit_event(
                "lr_change",
                json!({
                    "epoch": window[1].epoch,
                    "from": window[0].lr,
                    "to": window[1].lr,
                }),
            );
        }
    }
    let stop = match outcome.stop {
        StopReason::EarlyStop { epoch } => {
            emit_event("early_stop", json!({ "epoch": epoch }));
            json!({ "early_stop": epoch })
        }
        StopReason::MaxEpochs => json!("max_epochs"),
    };
    emit_event(
        "train_summary",
        json!({
            "best_epoch": outcome.best.epoch,
            "best_metric": outcome.best.metric,
            "epochs_run": outcome.history.len(),
            "stop": stop,
            "checkpoint": checkpoint_path.display().to_string(),
        }),
    );
    eprintln!(
        "train: best epoch {} (metric {:.6}), {} epochs run",
        outcome.best.epoch,
        outcome.best.metric,
        outcome.history.len()
    );
    Ok(())
}
