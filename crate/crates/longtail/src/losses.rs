//! Training losses with analytic gradients with respect to the logits:
//! cross-entropy, weighted cross-entropy, focal loss, and the
//! label-distribution-aware margin (LDAM) loss, plus class-weight schemes
//! and deferred re-weighting.
//!
//! All four losses reduce as the mean of per-sample weighted losses over the
//! batch (not a weight-normalized mean), so gradients are unambiguous:
//! `L = (1/B) * sum_i w_i * l_i`. Each per-row gradient is constructed so
//! that its entries sum to exactly 0.0, the discrete counterpart of the
//! softmax shift-invariance identity.

use serde::{Deserialize, Serialize};

use crate::data::ClassStats;
use crate::error::{Error, Result};
use crate::numerics::{log_softmax, Matrix};

/// How per-class weights are derived from class counts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum WeightScheme {
    #[default]
    Uniform,
    /// `w_c` proportional to `1 / n_c`.
    InverseFreq,
    /// `w_c` proportional to `(1 - beta) / (1 - beta^{n_c})`, the
    /// effective-number-of-samples weighting.
    EffectiveNumber { beta: f64 },
}

/// Deferred re-weighting: uniform weights until `defer_epoch`, then
/// effective-number weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrwSchedule {
    pub defer_epoch: usize,
    pub beta: f64,
}

/// Which loss to train with, with the hyperparameters that exist only for
/// that loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LossKind {
    Ce,
    Wce {
        #[serde(default = "default_wce_scheme")]
        scheme: WeightScheme,
        #[serde(default = "default_true")]
        normalize: bool,
    },
    Focal {
        gamma: f64,
        #[serde(default)]
        alpha: WeightScheme,
    },
    Ldam {
        #[serde(default = "default_c_max")]
        c_max: f64,
        #[serde(default = "default_ldam_scale")]
        scale: f64,
    },
}

fn default_wce_scheme() -> WeightScheme {
    WeightScheme::InverseFreq
}

fn default_true() -> bool {
    true
}

fn default_c_max() -> f64 {
    0.5
}

fn default_ldam_scale() -> f64 {
    30.0
}

/// Complete loss specification: the loss kind plus the optional deferred
/// re-weighting schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drw: Option<DrwSchedule>,
}

impl LossSpec {
    pub fn ce() -> Self {
        Self {
            kind: LossKind::Ce,
            drw: None,
        }
    }

    pub fn wce(scheme: WeightScheme) -> Self {
        Self {
            kind: LossKind::Wce {
                scheme,
                normalize: true,
            },
            drw: None,
        }
    }

    pub fn focal(gamma: f64) -> Self {
        Self {
            kind: LossKind::Focal {
                gamma,
                alpha: WeightScheme::Uniform,
            },
            drw: None,
        }
    }

    pub fn ldam(c_max: f64, scale: f64) -> Self {
        Self {
            kind: LossKind::Ldam { c_max, scale },
            drw: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            LossKind::Ce => {}
            LossKind::Wce { scheme, .. } => validate_scheme(scheme)?,
            LossKind::Focal { gamma, alpha } => {
                if !gamma.is_finite() || *gamma < 0.0 {
                    return Err(Error::invalid(format!("focal gamma {gamma} must be >= 0")));
                }
                validate_scheme(alpha)?;
            }
            LossKind::Ldam { c_max, scale } => {
                if !c_max.is_finite() || *c_max <= 0.0 {
                    return Err(Error::invalid(format!("ldam c_max {c_max} must be > 0")));
                }
                if !scale.is_finite() || *scale <= 0.0 {
                    return Err(Error::invalid(format!("ldam scale {scale} must be > 0")));
                }
            }
        }
        if let Some(drw) = &self.drw {
            if !(0.0..1.0).contains(&drw.beta) {
                return Err(Error::invalid(format!(
                    "drw beta {} outside [0, 1)",
                    drw.beta
                )));
            }
        }
        Ok(())
    }
}

fn validate_scheme(scheme: &WeightScheme) -> Result<()> {
    if let WeightScheme::EffectiveNumber { beta } = scheme {
        if !(0.0..1.0).contains(beta) {
            return Err(Error::invalid(format!("beta {beta} outside [0, 1)")));
        }
    }
    Ok(())
}

/// Per-class positive weights. Zeros are only possible through an explicit
/// mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    weights: Vec<f64>,
}

impl ClassWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|&w| !w.is_finite() || w <= 0.0) {
            return Err(Error::invalid("class weights must be positive and finite"));
        }
        Ok(Self { weights })
    }

    /// Allow zero weights at explicitly masked positions.
    pub fn with_mask(weights: Vec<f64>, masked: &[bool]) -> Result<Self> {
        if weights.len() != masked.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} mask entries", weights.len()),
                got: format!("{}", masked.len()),
            });
        }
        for (c, (&w, &m)) in weights.iter().zip(masked).enumerate() {
            if !w.is_finite() || w < 0.0 || (w == 0.0 && !m) || (m && w != 0.0) {
                return Err(Error::invalid(format!(
                    "weight {w} at class {c} inconsistent with mask"
                )));
            }
        }
        Ok(Self { weights })
    }

    pub fn uniform(num_classes: usize) -> Self {
        Self {
            weights: vec![1.0; num_classes],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Derive per-class weights from counts. With `normalize`, weights are
/// scaled to mean 1 so the loss magnitude stays comparable across schemes.
pub fn class_weights(
    stats: &ClassStats,
    scheme: &WeightScheme,
    normalize: bool,
) -> Result<ClassWeights> {
    validate_scheme(scheme)?;
    let mut weights = Vec::with_capacity(stats.num_classes());
    for (c, &n) in stats.counts().iter().enumerate() {
        let w = match scheme {
            WeightScheme::Uniform => 1.0,
            WeightScheme::InverseFreq => {
                if n == 0 {
                    return Err(Error::ZeroCount {
                        class: c.to_string(),
                    });
                }
                1.0 / n as f64
            }
            WeightScheme::EffectiveNumber { beta } => {
                if n == 0 {
                    return Err(Error::ZeroCount {
                        class: c.to_string(),
                    });
                }
                let effective = 1.0 - beta.powf(n as f64);
                (1.0 - beta) / effective
            }
        };
        weights.push(w);
    }
    if normalize {
        let mean = weights.iter().sum::<f64>() / weights.len() as f64;
        for w in &mut weights {
            *w /= mean;
        }
    }
    ClassWeights::new(weights)
}

/// Deferred re-weighting weights for an epoch: uniform before the defer
/// point, effective-number weights from it onward.
pub fn drw_weights(epoch: usize, sched: &DrwSchedule, stats: &ClassStats) -> Result<ClassWeights> {
    if epoch < sched.defer_epoch {
        Ok(ClassWeights::uniform(stats.num_classes()))
    } else {
        class_weights(
            stats,
            &WeightScheme::EffectiveNumber { beta: sched.beta },
            true,
        )
    }
}

/// Per-class LDAM margins, `C_max * n_j^{-1/4}` rescaled so the largest
/// margin (the rarest class) equals `C_max`. Margins never increase with
/// class count and are invariant to rescaling all counts by a constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    deltas: Vec<f64>,
}

impl Margins {
    pub fn zero(num_classes: usize) -> Self {
        Self {
            deltas: vec![0.0; num_classes],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.deltas
    }

    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.deltas.iter().cloned().fold(0.0, f64::max)
    }
}

pub fn ldam_margins(stats: &ClassStats, c_max: f64) -> Result<Margins> {
    if !c_max.is_finite() || c_max <= 0.0 {
        return Err(Error::invalid(format!("c_max {c_max} must be > 0")));
    }
    let mut inv_quarter = Vec::with_capacity(stats.num_classes());
    for (c, &n) in stats.counts().iter().enumerate() {
        if n == 0 {
            return Err(Error::ZeroCount {
                class: c.to_string(),
            });
        }
        inv_quarter.push((n as f64).powf(-0.25));
    }
    let max = inv_quarter.iter().cloned().fold(f64::MIN, f64::max);
    let deltas = inv_quarter.iter().map(|&v| c_max * v / max).collect();
    Ok(Margins { deltas })
}

fn check_inputs(logits: &Matrix, targets: &[usize], sample_weights: Option<&[f64]>) -> Result<()> {
    if targets.len() != logits.rows() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} targets", logits.rows()),
            got: format!("{}", targets.len()),
        });
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= logits.cols()) {
        return Err(Error::invalid(format!(
            "target class {bad} out of range for {} classes",
            logits.cols()
        )));
    }
    if let Some(w) = sample_weights {
        if w.len() != logits.rows() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} sample weights", logits.rows()),
                got: format!("{}", w.len()),
            });
        }
    }
    if logits.rows() == 0 {
        return Err(Error::invalid("empty batch"));
    }
    Ok(())
}

/// Fill one gradient row for a softmax-family loss: `scale * (p_j - [j=y])`.
/// The true-class entry is the negated sum of the others, which makes the
/// row sum exactly 0.0 in floating point.
fn softmax_grad_row(grad_row: &mut [f64], probs_row: &[f64], target: usize, scale: f64) {
    let mut others = 0.0;
    for (j, (&p, g)) in probs_row.iter().zip(grad_row.iter_mut()).enumerate() {
        if j != target {
            let v = scale * p;
            *g = v;
            others += v;
        }
    }
    grad_row[target] = -others;
}

/// Cross-entropy: mean over the batch of `-w_i * log p_{y_i}`, with the
/// analytic gradient with respect to the logits.
pub fn ce_loss(
    logits: &Matrix,
    targets: &[usize],
    sample_weights: Option<&[f64]>,
) -> Result<(f64, Matrix)> {
    check_inputs(logits, targets, sample_weights)?;
    let ls = log_softmax(logits)?;
    let batch = logits.rows() as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for (i, &y) in targets.iter().enumerate() {
        let w = sample_weights.map_or(1.0, |w| w[i]);
        loss += -w * ls.get(i, y);
        let probs: Vec<f64> = ls.row(i).iter().map(|&v| v.exp()).collect();
        softmax_grad_row(grad.row_mut(i), &probs, y, w / batch);
    }
    Ok((loss / batch, grad))
}

/// Focal loss: mean of `-alpha_y * (1 - p_y)^gamma * log p_y`.
///
/// The gradient carries both the modulating factor and its derivative:
/// `d l / d z_j = g * (p_j - [j=y])` with
/// `g = alpha * ((1-p_t)^gamma - gamma * p_t * (1-p_t)^{gamma-1} * log p_t)`.
pub fn focal_loss(
    logits: &Matrix,
    targets: &[usize],
    gamma: f64,
    alpha: Option<&ClassWeights>,
) -> Result<(f64, Matrix)> {
    if !gamma.is_finite() || gamma < 0.0 {
        return Err(Error::invalid(format!("gamma {gamma} must be >= 0")));
    }
    check_inputs(logits, targets, None)?;
    if let Some(a) = alpha {
        if a.len() != logits.cols() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} alpha weights", logits.cols()),
                got: format!("{}", a.len()),
            });
        }
    }
    let ls = log_softmax(logits)?;
    let batch = logits.rows() as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for (i, &y) in targets.iter().enumerate() {
        let a = alpha.map_or(1.0, |a| a.as_slice()[y]);
        let log_pt = ls.get(i, y);
        let p_t = log_pt.exp();
        // 1 - p_t computed stably even when p_t is within an ulp of 1.
        let one_minus_pt = (-log_pt.exp_m1()).max(0.0);
        loss += -a * one_minus_pt.powf(gamma) * log_pt;
        let factor = if one_minus_pt == 0.0 {
            // Limit as p_t -> 1: the modulating factor kills the gradient
            // for gamma > 0 and reduces to plain CE at gamma = 0.
            if gamma == 0.0 {
                a
            } else {
                0.0
            }
        } else {
            a * (one_minus_pt.powf(gamma) - gamma * p_t * one_minus_pt.powf(gamma - 1.0) * log_pt)
        };
        let probs: Vec<f64> = ls.row(i).iter().map(|&v| v.exp()).collect();
        softmax_grad_row(grad.row_mut(i), &probs, y, factor / batch);
    }
    Ok((loss / batch, grad))
}

/// LDAM loss: cross-entropy on margin-adjusted logits
/// `z'_j = s * (z_j - delta_j * [j = y])`, gradient back through the scale.
/// With zero margins and `s = 1` this is exactly `ce_loss`.
pub fn ldam_loss(
    logits: &Matrix,
    targets: &[usize],
    margins: &Margins,
    scale: f64,
    sample_weights: Option<&[f64]>,
) -> Result<(f64, Matrix)> {
    if !scale.is_finite() || scale <= 0.0 {
        return Err(Error::invalid(format!("scale {scale} must be > 0")));
    }
    check_inputs(logits, targets, sample_weights)?;
    if margins.len() != logits.cols() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} margins", logits.cols()),
            got: format!("{}", margins.len()),
        });
    }
    let mut adjusted = logits.clone();
    for (i, &y) in targets.iter().enumerate() {
        let row = adjusted.row_mut(i);
        row[y] -= margins.as_slice()[y];
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    let ls = log_softmax(&adjusted)?;
    let batch = logits.rows() as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for (i, &y) in targets.iter().enumerate() {
        let w = sample_weights.map_or(1.0, |w| w[i]);
        loss += -w * ls.get(i, y);
        let probs: Vec<f64> = ls.row(i).iter().map(|&v| v.exp()).collect();
        softmax_grad_row(grad.row_mut(i), &probs, y, scale * w / batch);
    }
    Ok((loss / batch, grad))
}

/// A loss specification bound to class statistics: weights and margins are
/// precomputed once, and `evaluate` dispatches per epoch (for deferred
/// re-weighting) to the loss functions above.
#[derive(Debug, Clone)]
pub struct LossFn {
    spec: LossSpec,
    num_classes: usize,
    base_weights: Option<ClassWeights>,
    drw_post_weights: Option<ClassWeights>,
    margins: Option<Margins>,
}

impl LossFn {
    pub fn new(spec: LossSpec, stats: &ClassStats) -> Result<Self> {
        spec.validate()?;
        let base_weights = match &spec.kind {
            LossKind::Wce { scheme, normalize } => Some(class_weights(stats, scheme, *normalize)?),
            LossKind::Focal { alpha, .. } => match alpha {
                WeightScheme::Uniform => None,
                other => Some(class_weights(stats, other, true)?),
            },
            _ => None,
        };
        let margins = match &spec.kind {
            LossKind::Ldam { c_max, .. } => Some(ldam_margins(stats, *c_max)?),
            _ => None,
        };
        let drw_post_weights = match &spec.drw {
            Some(sched) => Some(class_weights(
                stats,
                &WeightScheme::EffectiveNumber { beta: sched.beta },
                true,
            )?),
            None => None,
        };
        Ok(Self {
            spec,
            num_classes: stats.num_classes(),
            base_weights,
            drw_post_weights,
            margins,
        })
    }

    pub fn spec(&self) -> &LossSpec {
        &self.spec
    }

    /// Per-class weights in effect at an epoch, after the DRW schedule.
    fn effective_weights(&self, epoch: usize) -> Option<&ClassWeights> {
        if let Some(drw) = &self.spec.drw {
            if epoch < drw.defer_epoch {
                None
            } else {
                self.drw_post_weights.as_ref()
            }
        } else {
            self.base_weights.as_ref()
        }
    }

    pub fn evaluate(
        &self,
        logits: &Matrix,
        targets: &[usize],
        epoch: usize,
    ) -> Result<(f64, Matrix)> {
        if logits.cols() != self.num_classes {
            return Err(Error::ShapeMismatch {
                expected: format!("{} classes", self.num_classes),
                got: format!("{}", logits.cols()),
            });
        }
        let weights = self.effective_weights(epoch);
        let sample_weights: Option<Vec<f64>> =
            weights.map(|w| targets.iter().map(|&y| w.as_slice()[y]).collect());
        match &self.spec.kind {
            LossKind::Ce | LossKind::Wce { .. } => {
                ce_loss(logits, targets, sample_weights.as_deref())
            }
            LossKind::Focal { gamma, .. } => focal_loss(logits, targets, *gamma, weights),
            LossKind::Ldam { scale, .. } => ldam_loss(
                logits,
                targets,
                self.margins.as_ref().expect("margins precomputed"),
                *scale,
                sample_weights.as_deref(),
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, max_abs_diff, max_gradcheck_error};
    use crate::rng::SeededRng;

    fn random_case(rng: &mut SeededRng, batch: usize, classes: usize) -> (Matrix, Vec<usize>) {
        let data: Vec<f64> = (0..batch * classes).map(|_| rng.normal()).collect();
        let logits = Matrix::from_vec(batch, classes, data).unwrap();
        let targets: Vec<usize> = (0..batch)
            .map(|_| rng.below(classes as u64) as usize)
            .collect();
        (logits, targets)
    }

    #[test]
    fn ce_uniform_logits_is_ln_c() {
        let logits = Matrix::zeros(3, 4);
        let (loss, _) = ce_loss(&logits, &[0, 1, 2], None).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ce_confident_correct_approaches_zero() {
        let mut logits = Matrix::zeros(1, 4);
        logits.set(0, 2, 40.0);
        let (loss, _) = ce_loss(&logits, &[2], None).unwrap();
        assert!(loss < 1e-12, "loss {loss}");
    }

    #[test]
    fn ce_gradient_matches_finite_differences() {
        let mut rng = SeededRng::new(21);
        let (logits, targets) = random_case(&mut rng, 8, 12);
        let (_, grad) = ce_loss(&logits, &targets, None).unwrap();
        let fd = finite_diff_grad(|m| ce_loss(m, &targets, None).unwrap().0, &logits, 1e-3);
        assert!(max_gradcheck_error(&grad, &fd) < 1e-4);
    }

    #[test]
    fn ce_gradient_rows_sum_to_exactly_zero() {
        // The softmax identity, exact in floating point: the true-class
        // entry equals the negated (ordered) sum of the off-target entries,
        // for the unweighted and the weighted gradient alike.
        let mut rng = SeededRng::new(22);
        let (logits, targets) = random_case(&mut rng, 6, 9);
        let weights: Vec<f64> = (0..6).map(|i| 0.25 + i as f64).collect();
        for sample_weights in [None, Some(weights.as_slice())] {
            let (_, grad) = ce_loss(&logits, &targets, sample_weights).unwrap();
            for (r, &y) in targets.iter().enumerate() {
                let row = grad.row(r);
                let others: f64 = row
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != y)
                    .map(|(_, &v)| v)
                    .sum();
                assert_eq!(row[y], -others);
                let full: f64 = row.iter().sum();
                assert!(full.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn class_weights_equal_counts_are_uniform() {
        let stats = ClassStats::new(vec![50, 50, 50]);
        for scheme in [
            WeightScheme::InverseFreq,
            WeightScheme::EffectiveNumber { beta: 0.99 },
        ] {
            let w = class_weights(&stats, &scheme, true).unwrap();
            for &v in w.as_slice() {
                assert!((v - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn effective_number_beta_zero_is_uniform() {
        let stats = ClassStats::new(vec![100, 7, 3]);
        let w = class_weights(&stats, &WeightScheme::EffectiveNumber { beta: 0.0 }, false).unwrap();
        assert_eq!(w.as_slice(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn inverse_freq_worked_example() {
        // counts [100000, 100]: raw weights 1e-5 and 1e-2, mean-1 normalized
        // to exactly [2/1001, 2000/1001].
        let stats = ClassStats::new(vec![100_000, 100]);
        let w = class_weights(&stats, &WeightScheme::InverseFreq, true).unwrap();
        assert!((w.as_slice()[0] - 2.0 / 1001.0).abs() < 1e-15);
        assert!((w.as_slice()[1] - 2000.0 / 1001.0).abs() < 1e-12);
    }

    #[test]
    fn class_weights_reject_zero_count() {
        let stats = ClassStats::new(vec![10, 0]);
        assert!(matches!(
            class_weights(&stats, &WeightScheme::InverseFreq, true),
            Err(Error::ZeroCount { .. })
        ));
    }

    #[test]
    fn focal_gamma_zero_reduces_to_ce() {
        let mut rng = SeededRng::new(23);
        for _ in 0..50 {
            let (logits, targets) = random_case(&mut rng, 5, 7);
            let (ce, ce_grad) = ce_loss(&logits, &targets, None).unwrap();
            let (fl, fl_grad) = focal_loss(&logits, &targets, 0.0, None).unwrap();
            assert!((ce - fl).abs() < 1e-12);
            assert!(max_abs_diff(&ce_grad, &fl_grad) < 1e-12);
        }
    }

    #[test]
    fn focal_loss_vanishes_for_confident_correct() {
        let mut logits = Matrix::zeros(1, 3);
        logits.set(0, 0, 60.0);
        let (loss, grad) = focal_loss(&logits, &[0], 2.0, None).unwrap();
        assert!(loss.abs() < 1e-30, "loss {loss}");
        assert!(grad.data().iter().all(|&g| g.abs() < 1e-12));
    }

    #[test]
    fn focal_gradient_matches_finite_differences() {
        let mut rng = SeededRng::new(24);
        let stats = ClassStats::new(vec![500, 50, 5, 200, 100, 20, 10, 40, 80, 160, 320, 640]);
        let alpha = class_weights(&stats, &WeightScheme::InverseFreq, true).unwrap();
        for &gamma in &[0.5, 2.0] {
            let (logits, targets) = random_case(&mut rng, 8, 12);
            let (_, grad) = focal_loss(&logits, &targets, gamma, Some(&alpha)).unwrap();
            let fd = finite_diff_grad(
                |m| focal_loss(m, &targets, gamma, Some(&alpha)).unwrap().0,
                &logits,
                1e-3,
            );
            assert!(max_gradcheck_error(&grad, &fd) < 1e-4, "gamma {gamma}");
        }
    }

    #[test]
    fn ldam_margins_worked_example() {
        // (10000 / 625)^(1/4) = 2, so the frequent class gets half the
        // rare-class margin.
        let stats = ClassStats::new(vec![10_000, 625]);
        let m = ldam_margins(&stats, 0.5).unwrap();
        assert!((m.as_slice()[0] - 0.25).abs() < 1e-12);
        assert!((m.as_slice()[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ldam_margins_equal_counts_all_c_max() {
        let stats = ClassStats::new(vec![40, 40, 40]);
        let m = ldam_margins(&stats, 0.5).unwrap();
        assert!(m.as_slice().iter().all(|&d| (d - 0.5).abs() < 1e-12));
    }

    #[test]
    fn ldam_margins_single_class() {
        let stats = ClassStats::new(vec![17]);
        let m = ldam_margins(&stats, 0.5).unwrap();
        assert_eq!(m.as_slice(), &[0.5]);
    }

    #[test]
    fn ldam_margins_scale_invariant_in_counts() {
        let stats = ClassStats::new(vec![1000, 100, 10]);
        let scaled = ClassStats::new(vec![7000, 700, 70]);
        let a = ldam_margins(&stats, 0.5).unwrap();
        let b = ldam_margins(&scaled, 0.5).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn ldam_margins_non_increasing_in_count() {
        let stats = ClassStats::new(vec![5000, 400, 400, 20, 3]);
        let m = ldam_margins(&stats, 0.5).unwrap();
        let counts = stats.counts();
        for i in 0..counts.len() {
            for j in 0..counts.len() {
                if counts[i] > counts[j] {
                    assert!(m.as_slice()[i] <= m.as_slice()[j]);
                }
            }
        }
        assert!((m.max() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ldam_zero_margin_unit_scale_is_ce() {
        let mut rng = SeededRng::new(25);
        for _ in 0..50 {
            let (logits, targets) = random_case(&mut rng, 4, 6);
            let margins = Margins::zero(6);
            let (ce, ce_grad) = ce_loss(&logits, &targets, None).unwrap();
            let (ld, ld_grad) = ldam_loss(&logits, &targets, &margins, 1.0, None).unwrap();
            assert!((ce - ld).abs() < 1e-12);
            assert!(max_abs_diff(&ce_grad, &ld_grad) < 1e-12);
        }
    }

    #[test]
    fn ldam_loss_dominates_ce_at_unit_scale() {
        let mut rng = SeededRng::new(26);
        let stats = ClassStats::new(vec![1000, 100, 10, 50, 500, 250]);
        let margins = ldam_margins(&stats, 0.5).unwrap();
        for _ in 0..20 {
            let (logits, targets) = random_case(&mut rng, 6, 6);
            let (ce, _) = ce_loss(&logits, &targets, None).unwrap();
            let (ld, _) = ldam_loss(&logits, &targets, &margins, 1.0, None).unwrap();
            assert!(ld >= ce - 1e-12);
        }
    }

    #[test]
    fn ldam_gradient_matches_finite_differences() {
        let mut rng = SeededRng::new(27);
        let stats = ClassStats::new(vec![1000, 100, 10]);
        let margins = ldam_margins(&stats, 0.5).unwrap();
        let (logits, targets) = random_case(&mut rng, 8, 3);
        let (_, grad) = ldam_loss(&logits, &targets, &margins, 30.0, None).unwrap();
        let fd = finite_diff_grad(
            |m| ldam_loss(m, &targets, &margins, 30.0, None).unwrap().0,
            &logits,
            1e-3,
        );
        assert!(max_gradcheck_error(&grad, &fd) < 1e-4);
    }

    #[test]
    fn drw_uniform_before_defer_effective_after() {
        let stats = ClassStats::new(vec![5000, 50]);
        let sched = DrwSchedule {
            defer_epoch: 160,
            beta: 0.9999,
        };
        let before = drw_weights(0, &sched, &stats).unwrap();
        assert_eq!(before.as_slice(), &[1.0, 1.0]);

        let at = drw_weights(160, &sched, &stats).unwrap();
        let direct = class_weights(
            &stats,
            &WeightScheme::EffectiveNumber { beta: 0.9999 },
            true,
        )
        .unwrap();
        assert_eq!(at.as_slice(), direct.as_slice());

        // Independent arithmetic for the post-defer ratio:
        // w_rare / w_freq = (1 - beta^5000) / (1 - beta^50).
        let beta: f64 = 0.9999;
        let expected_ratio = (1.0 - beta.powi(5000)) / (1.0 - beta.powi(50));
        let ratio = at.as_slice()[1] / at.as_slice()[0];
        assert!((ratio - expected_ratio).abs() < 1e-9);
        assert!(ratio > 70.0 && ratio < 90.0, "ratio {ratio}");
    }

    #[test]
    fn wce_uniform_equals_ce() {
        let mut rng = SeededRng::new(28);
        let stats = ClassStats::new(vec![10, 10, 10, 10]);
        let lossfn = LossFn::new(LossSpec::wce(WeightScheme::Uniform), &stats).unwrap();
        let ce = LossFn::new(LossSpec::ce(), &stats).unwrap();
        for _ in 0..50 {
            let (logits, targets) = random_case(&mut rng, 5, 4);
            let (a, ga) = lossfn.evaluate(&logits, &targets, 0).unwrap();
            let (b, gb) = ce.evaluate(&logits, &targets, 0).unwrap();
            assert!((a - b).abs() < 1e-12);
            assert!(max_abs_diff(&ga, &gb) < 1e-12);
        }
    }

    #[test]
    fn lossfn_applies_drw_schedule() {
        let stats = ClassStats::new(vec![900, 9]);
        let spec = LossSpec {
            kind: LossKind::Ldam {
                c_max: 0.5,
                scale: 1.0,
            },
            drw: Some(DrwSchedule {
                defer_epoch: 5,
                beta: 0.999,
            }),
        };
        let lossfn = LossFn::new(spec, &stats).unwrap();
        let mut logits = Matrix::zeros(2, 2);
        logits.set(0, 0, 1.0);
        logits.set(1, 1, 1.0);
        let targets = [0usize, 1];
        let (early, _) = lossfn.evaluate(&logits, &targets, 0).unwrap();
        let (late, _) = lossfn.evaluate(&logits, &targets, 5).unwrap();
        assert!(
            (early - late).abs() > 1e-9,
            "re-weighting should change the loss"
        );
    }

    #[test]
    fn wce_scheme_defaults_to_inverse_freq() {
        let spec: LossSpec = serde_json::from_str(r#"{"kind":{"type":"wce"}}"#).unwrap();
        assert_eq!(
            spec.kind,
            LossKind::Wce {
                scheme: WeightScheme::InverseFreq,
                normalize: true,
            }
        );
    }

    #[test]
    fn loss_spec_serde_roundtrip() {
        let specs = vec![
            LossSpec::ce(),
            LossSpec::wce(WeightScheme::EffectiveNumber { beta: 0.9999 }),
            LossSpec::focal(2.0),
            LossSpec::ldam(0.5, 30.0),
            LossSpec {
                kind: LossKind::Ldam {
                    c_max: 0.5,
                    scale: 30.0,
                },
                drw: Some(DrwSchedule {
                    defer_epoch: 160,
                    beta: 0.9999,
                }),
            },
        ];
        for spec in specs {
            let json = serde_json::to_string(&spec).unwrap();
            let back: LossSpec = serde_json::from_str(&json).unwrap();
            assert_eq!(spec, back);
        }
    }

    #[test]
    fn masked_weights_allow_zero_only_where_masked() {
        assert!(ClassWeights::new(vec![1.0, 0.0]).is_err());
        let masked = ClassWeights::with_mask(vec![1.5, 0.0], &[false, true]).unwrap();
        assert_eq!(masked.as_slice(), &[1.5, 0.0]);
        // Zero without a mask, or a mask with a nonzero weight, both fail.
        assert!(ClassWeights::with_mask(vec![0.0, 1.0], &[false, false]).is_err());
        assert!(ClassWeights::with_mask(vec![1.0, 1.0], &[false, true]).is_err());
    }

    #[test]
    fn invalid_hyperparameters_are_rejected() {
        assert!(LossSpec::focal(-1.0).validate().is_err());
        assert!(LossSpec::ldam(0.0, 30.0).validate().is_err());
        assert!(LossSpec::ldam(0.5, 0.0).validate().is_err());
        assert!(LossSpec::wce(WeightScheme::EffectiveNumber { beta: 1.0 })
            .validate()
            .is_err());
    }
}
