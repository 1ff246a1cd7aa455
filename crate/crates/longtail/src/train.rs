//! The training loop: seeded shuffling, mini-batch updates, per-epoch
//! validation, plateau scheduling, early stopping, and best-checkpoint
//! tracking.
//!
//! A `(dataset, config, seed)` triple fully determines the history and the
//! final weights; training is strictly sequential so re-runs are
//! bit-identical.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{ClassStats, LabelMap, PreprocessSpec};
use crate::error::{Error, Result};
use crate::eval::{argmax_rows, confusion_counts, macro_recall, micro_accuracy};
use crate::losses::{LossFn, LossSpec};
use crate::manifest;
use crate::model::{Model, ModelConfig};
use crate::numerics::Matrix;
use crate::optim::{
    select_best_checkpoint, EarlyStopConfig, EarlyStopper, MetricName, Mode, OptimConfig,
    Optimizer, PlateauConfig, PlateauScheduler, StopDecision,
};
use crate::rng::{streams, SeededRng};

/// Featurized samples ready for training or evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} labels", features.rows()),
                got: format!("{}", labels.len()),
            });
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Every knob of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossSpec,
    pub optim: OptimConfig,
    pub scheduler: PlateauConfig,
    /// Mirrors the no-scheduler baselines: when false the learning rate
    /// stays constant, while the monitored metric still drives early
    /// stopping and checkpoint selection.
    #[serde(default = "default_true")]
    pub scheduler_enabled: bool,
    pub early_stop: EarlyStopConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Recorded for provenance; applied only by the tiny-image feature mode.
    pub preprocess: PreprocessSpec,
}

fn default_true() -> bool {
    true
}

impl TrainConfig {
    pub fn new(model: ModelConfig, loss: LossSpec) -> Self {
        Self {
            model,
            loss,
            optim: OptimConfig::default(),
            scheduler: PlateauConfig::default(),
            scheduler_enabled: true,
            early_stop: EarlyStopConfig::default(),
            batch_size: 128,
            max_epochs: 300,
            seed: 42,
            preprocess: PreprocessSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.optim.validate()?;
        self.scheduler.validate()?;
        self.early_stop.validate()?;
        self.preprocess.validate()?;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("max_epochs must be >= 1"));
        }
        Ok(())
    }
}

/// One line of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub val_macro_recall: f64,
    /// Learning rate used for this epoch's updates.
    pub lr: f64,
    /// Value of the monitored metric this epoch.
    pub monitored: f64,
    pub improved: bool,
}

/// Saved best model: weights, the epoch and metric that selected it, the
/// full resolved config, the label names, and a digest of the shuffle RNG
/// state for provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub labels: Vec<String>,
    pub epoch: usize,
    pub metric: f64,
    pub config: TrainConfig,
    pub rng_digest: String,
    pub weights: Vec<f64>,
}

impl Checkpoint {
    pub fn model(&self) -> Result<Model> {
        Model::from_parts(self.config.model.clone(), self.weights.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        manifest::write_json_pretty(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Checkpoint = manifest::read_json(path)?;
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint version {}",
                ckpt.format_version
            )));
        }
        Ok(ckpt)
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StopReason {
    EarlyStop { epoch: usize },
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub stop: StopReason,
}

/// Metrics computed on one dataset with a fixed model.
pub struct EvalPass {
    pub loss: f64,
    pub accuracy: f64,
    pub macro_recall: f64,
}

/// Forward the whole set, compute loss and the monitored metrics. The loss
/// uses the training loss definition at the given epoch, so deferred
/// re-weighting is reflected in validation numbers too.
pub fn eval_pass(
    model: &Model,
    lossfn: &LossFn,
    set: &Dataset,
    num_classes: usize,
    epoch: usize,
) -> Result<EvalPass> {
    let logits = model.forward(&set.features)?;
    let (loss, _) = lossfn.evaluate(&logits, &set.labels, epoch)?;
    let predictions = argmax_rows(&logits);
    let confusion = confusion_counts(&set.labels, &predictions, num_classes);
    Ok(EvalPass {
        loss,
        accuracy: micro_accuracy(&confusion).unwrap_or(0.0),
        macro_recall: macro_recall(&confusion).unwrap_or(0.0),
    })
}

fn monitored_value(metric: MetricName, pass: &EvalPass) -> f64 {
    match metric {
        MetricName::ValMacroRecall => pass.macro_recall,
        MetricName::ValAccuracy => pass.accuracy,
        MetricName::ValLoss => pass.loss,
    }
}

/// Train a model and return the best checkpoint plus the full history.
pub fn train(
    train_set: &Dataset,
    val_set: &Dataset,
    labels: &LabelMap,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let num_classes = labels.len();
    if cfg.model.num_classes != num_classes {
        return Err(Error::invalid(format!(
            "model covers {} classes, label map has {num_classes}",
            cfg.model.num_classes
        )));
    }
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::invalid(
            "train and validation sets must be non-empty",
        ));
    }
    for set in [train_set, val_set] {
        if let Some(&bad) = set.labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if set.features.cols() != cfg.model.input_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{} feature dims", cfg.model.input_dim),
                got: format!("{}", set.features.cols()),
            });
        }
    }

    let stats = ClassStats::from_labels(&train_set.labels, num_classes)?;
    let lossfn = LossFn::new(cfg.loss.clone(), &stats)?;
    let mut model = Model::new(cfg.model.clone())?;
    let mut optimizer = Optimizer::new(cfg.optim.clone(), model.params().len())?;
    let mut scheduler = PlateauScheduler::new(cfg.scheduler.clone(), cfg.optim.lr)?;
    let mut stopper = EarlyStopper::new(
        cfg.early_stop.clone(),
        cfg.scheduler.mode,
        cfg.scheduler.threshold,
    )?;

    let mut history: Vec<EpochRecord> = Vec::new();
    let mut best: Option<(usize, f64, Vec<f64>, String)> = None;
    let mut stop = StopReason::MaxEpochs;
    let mut lr = cfg.optim.lr;

    for epoch in 0..cfg.max_epochs {
        // Fresh shuffle stream per epoch, keyed by (seed, epoch).
        let mut shuffle_rng =
            SeededRng::with_stream(cfg.seed, streams::EPOCH_SHUFFLE | epoch as u64);
        let order = shuffle_rng.permutation(train_set.len());
        let rng_digest = shuffle_rng.state_digest();

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (batch_index, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut rows = Vec::with_capacity(chunk.len());
            let mut targets = Vec::with_capacity(chunk.len());
            for &i in chunk {
                rows.push(train_set.features.row(i).to_vec());
                targets.push(train_set.labels[i]);
            }
            let batch = Matrix::from_rows(&rows)?;
            let (logits, cache) = model.forward_cached(&batch)?;
            // Divergence surfaces either as non-finite logits or a
            // non-finite loss; both abort naming the epoch and batch.
            let (loss, dlogits) = match lossfn.evaluate(&logits, &targets, epoch) {
                Ok(value) => value,
                Err(Error::NonFinite { .. }) => {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        batch: batch_index,
                    })
                }
                Err(other) => return Err(other),
            };
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_index,
                });
            }
            loss_sum += loss * chunk.len() as f64;
            for (p, &t) in argmax_rows(&logits).iter().zip(&targets) {
                if *p == t {
                    correct += 1;
                }
            }
            let grads = model.backward(&batch, &cache, &dlogits)?;
            optimizer.step(model.params_mut(), &grads, lr)?;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let train_accuracy = correct as f64 / train_set.len() as f64;

        let val = eval_pass(&model, &lossfn, val_set, num_classes, epoch)?;
        let monitored = monitored_value(cfg.scheduler.metric, &val);
        if !monitored.is_finite() {
            return Err(Error::NonFiniteMetric);
        }

        // Strictly-better tracking keeps the earliest maximum, matching
        // select_best_checkpoint's tie rule.
        let better = match (cfg.scheduler.mode, &best) {
            (_, None) => true,
            (Mode::Max, Some((_, metric, _, _))) => monitored > *metric,
            (Mode::Min, Some((_, metric, _, _))) => monitored < *metric,
        };
        if better {
            best = Some((epoch, monitored, model.params().to_vec(), rng_digest));
        }

        history.push(EpochRecord {
            epoch,
            train_loss,
            train_accuracy,
            val_loss: val.loss,
            val_accuracy: val.accuracy,
            val_macro_recall: val.macro_recall,
            lr,
            monitored,
            improved: better,
        });

        if cfg.scheduler_enabled {
            lr = scheduler.observe(monitored)?;
        }
        if stopper.observe(monitored) == StopDecision::Stop {
            stop = StopReason::EarlyStop { epoch };
            break;
        }
    }

    let (best_epoch, best_metric, best_weights, rng_digest) = best.expect("at least one epoch ran");
    let pairs: Vec<(usize, f64)> = history.iter().map(|h| (h.epoch, h.monitored)).collect();
    debug_assert_eq!(
        select_best_checkpoint(&pairs, cfg.scheduler.mode)?,
        best_epoch
    );
    Ok(TrainOutcome {
        best: Checkpoint {
            format_version: CHECKPOINT_VERSION,
            labels: labels.classes().to_vec(),
            epoch: best_epoch,
            metric: best_metric,
            config: cfg.clone(),
            rng_digest,
            weights: best_weights,
        },
        history,
        stop,
    })
}

/// Write the history as JSONL, one epoch record per line.
pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut out = Vec::new();
    for record in history {
        serde_json::to_writer(&mut out, record).expect("history serialization cannot fail");
        out.push(b'\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::ce_loss;

    fn tiny_labels(c: usize) -> LabelMap {
        LabelMap::new((0..c).map(|i| format!("class_{i}")).collect()).unwrap()
    }

    /// Balanced blob dataset: class means on coordinate axes, mild noise.
    fn blob_dataset(per_class: usize, classes: usize, dims: usize, seed: u64) -> Dataset {
        let mut rng = SeededRng::with_stream(seed, 900);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..classes {
            for _ in 0..per_class {
                let mut row = vec![0.0; dims];
                for (d, v) in row.iter_mut().enumerate() {
                    *v = if d == c % dims { 3.0 } else { 0.0 } + 0.5 * rng.normal();
                }
                rows.push(row);
                labels.push(c);
            }
        }
        Dataset::new(Matrix::from_rows(&rows).unwrap(), labels).unwrap()
    }

    fn quick_config(input_dim: usize, classes: usize) -> TrainConfig {
        let mut cfg = TrainConfig::new(ModelConfig::linear(input_dim, classes, 7), LossSpec::ce());
        cfg.optim = OptimConfig::adam(1e-2);
        cfg.batch_size = 16;
        cfg.max_epochs = 5;
        cfg.seed = 3;
        cfg
    }

    #[test]
    fn single_epoch_returns_epoch_zero_best() {
        let data = blob_dataset(8, 3, 4, 1);
        let val = blob_dataset(4, 3, 4, 2);
        let mut cfg = quick_config(4, 3);
        cfg.max_epochs = 1;
        let out = train(&data, &val, &tiny_labels(3), &cfg).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.best.epoch, 0);
        assert_eq!(out.stop, StopReason::MaxEpochs);
    }

    #[test]
    fn training_is_deterministic() {
        let data = blob_dataset(8, 3, 4, 1);
        let val = blob_dataset(4, 3, 4, 2);
        let cfg = quick_config(4, 3);
        let a = train(&data, &val, &tiny_labels(3), &cfg).unwrap();
        let b = train(&data, &val, &tiny_labels(3), &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.best.weights, b.best.weights);
        assert_eq!(a.best.rng_digest, b.best.rng_digest);
    }

    #[test]
    fn overfits_small_balanced_subset() {
        // Learnability smoke test: 32 samples, CE + Adam, 100% train
        // accuracy within 200 epochs.
        let data = blob_dataset(8, 4, 4, 5);
        assert_eq!(data.len(), 32);
        let mut cfg = quick_config(4, 4);
        cfg.max_epochs = 200;
        cfg.early_stop.patience = 200;
        cfg.scheduler_enabled = false;
        let out = train(&data, &data, &tiny_labels(4), &cfg).unwrap();
        let final_acc = out.history.last().unwrap().train_accuracy;
        assert_eq!(final_acc, 1.0, "history: {:?}", out.history.last());
    }

    #[test]
    fn initial_loss_is_ln_c_on_balanced_data() {
        // Near-uniform initial logits (small init scale) give CE of ln C on
        // balanced data before the first step.
        let classes = 5;
        let data = blob_dataset(10, classes, 8, 9);
        let mut cfg = quick_config(8, classes);
        cfg.model.init_scale = Some(0.01);
        let model = Model::new(cfg.model.clone()).unwrap();
        let logits = model.forward(&data.features).unwrap();
        let (loss, _) = ce_loss(&logits, &data.labels, None).unwrap();
        let ln_c = (classes as f64).ln();
        assert!(
            (loss - ln_c).abs() / ln_c < 0.05,
            "initial loss {loss} vs ln C {ln_c}"
        );
    }

    #[test]
    fn checkpoint_roundtrip_reproduces_metric() {
        let data = blob_dataset(8, 3, 4, 1);
        let val = blob_dataset(4, 3, 4, 2);
        let cfg = quick_config(4, 3);
        let labels = tiny_labels(3);
        let out = train(&data, &val, &labels, &cfg).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        out.best.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, out.best);

        let stats = ClassStats::from_labels(&data.labels, 3).unwrap();
        let lossfn = LossFn::new(loaded.config.loss.clone(), &stats).unwrap();
        let model = loaded.model().unwrap();
        let pass = eval_pass(&model, &lossfn, &val, 3, loaded.epoch).unwrap();
        let recomputed = monitored_value(loaded.config.scheduler.metric, &pass);
        assert!((recomputed - loaded.metric).abs() < 1e-10);
    }

    #[test]
    fn early_stop_truncates_history() {
        let data = blob_dataset(8, 3, 4, 1);
        let val = blob_dataset(4, 3, 4, 2);
        let mut cfg = quick_config(4, 3);
        cfg.max_epochs = 100;
        cfg.early_stop.patience = 3;
        let out = train(&data, &val, &tiny_labels(3), &cfg).unwrap();
        match out.stop {
            StopReason::EarlyStop { epoch } => {
                assert_eq!(out.history.len(), epoch + 1);
                assert!(epoch < 99);
            }
            StopReason::MaxEpochs => panic!("expected early stop"),
        }
    }

    #[test]
    fn hidden_layer_model_trains() {
        let data = blob_dataset(10, 3, 4, 4);
        let val = blob_dataset(4, 3, 4, 6);
        let mut cfg = quick_config(4, 3);
        cfg.model.hidden_dim = 8;
        cfg.max_epochs = 30;
        let out = train(&data, &val, &tiny_labels(3), &cfg).unwrap();
        assert!(out.best.metric > 0.5, "metric {}", out.best.metric);
        assert_eq!(out.best.weights.len(), cfg.model.param_count());
    }

    #[test]
    fn rejects_inconsistent_label_space() {
        let data = blob_dataset(4, 3, 4, 1);
        let cfg = quick_config(4, 3);
        assert!(train(&data, &data, &tiny_labels(2), &cfg).is_err());
    }

    #[test]
    fn divergence_aborts_naming_epoch_and_batch() {
        let data = blob_dataset(8, 3, 4, 1);
        let val = blob_dataset(4, 3, 4, 2);
        let mut cfg = quick_config(4, 3);
        // One full-size Adam step at this rate pushes weights to ~1e308, so
        // the next forward overflows.
        cfg.optim = OptimConfig::adam(1e308);
        match train(&data, &val, &tiny_labels(3), &cfg) {
            Err(Error::NonFiniteLoss { epoch, .. }) => assert_eq!(epoch, 0),
            other => panic!("expected NonFiniteLoss, got {other:?}"),
        }
    }

    #[test]
    fn rejects_empty_validation() {
        let data = blob_dataset(4, 3, 4, 1);
        let empty = Dataset::new(Matrix::zeros(0, 4), vec![]).unwrap();
        let cfg = quick_config(4, 3);
        assert!(train(&data, &empty, &tiny_labels(3), &cfg).is_err());
    }

    #[test]
    fn history_jsonl_roundtrips() {
        let data = blob_dataset(6, 2, 4, 1);
        let val = blob_dataset(3, 2, 4, 2);
        let cfg = quick_config(4, 2);
        let out = train(&data, &val, &tiny_labels(2), &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("history.jsonl");
        write_history(&path, &out.history).unwrap();
        let raw = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<EpochRecord> = raw
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines, out.history);
    }
}
