//! Finite-difference verification of every analytic loss gradient.
//!
//! Each configuration is evaluated on seeded random batches; the analytic
//! gradient must match the central-difference estimate of the scalar loss
//! entrywise, with the largest relative error reported per configuration.

use crate::data::ClassStats;
use crate::error::Result;
use crate::losses::{ce_loss, class_weights, focal_loss, ldam_loss, ldam_margins, WeightScheme};
use crate::numerics::{finite_diff_grad, max_gradcheck_error, Matrix};
use crate::rng::SeededRng;

pub const GRADCHECK_BATCH: usize = 8;
pub const GRADCHECK_CLASSES: usize = 12;
pub const GRADCHECK_STEP: f64 = 1e-3;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Long-tailed counts used to derive weights and margins for the checks.
fn check_stats() -> ClassStats {
    ClassStats::new(vec![4000, 2000, 1000, 500, 250, 125, 63, 32, 16, 8, 4, 2])
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct GradCheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub instances: usize,
}

impl GradCheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < GRADCHECK_TOLERANCE
    }
}

/// Run the full gradient-check suite: CE, both WCE weightings, focal at two
/// gammas, and LDAM at two scales.
pub fn gradcheck_suite(seed: u64, instances: usize) -> Result<Vec<GradCheckResult>> {
    let stats = check_stats();
    let inverse = class_weights(&stats, &WeightScheme::InverseFreq, true)?;
    let effective = class_weights(
        &stats,
        &WeightScheme::EffectiveNumber { beta: 0.9999 },
        true,
    )?;
    let margins = ldam_margins(&stats, 0.5)?;

    type LossEval<'a> = Box<dyn Fn(&Matrix, &[usize]) -> Result<(f64, Matrix)> + 'a>;
    let configs: Vec<(&str, LossEval)> = vec![
        ("ce", Box::new(|z, t| ce_loss(z, t, None))),
        (
            "wce_inverse_freq",
            Box::new(|z, t| {
                let w: Vec<f64> = t.iter().map(|&y| inverse.as_slice()[y]).collect();
                ce_loss(z, t, Some(&w))
            }),
        ),
        (
            "wce_effective_number",
            Box::new(|z, t| {
                let w: Vec<f64> = t.iter().map(|&y| effective.as_slice()[y]).collect();
                ce_loss(z, t, Some(&w))
            }),
        ),
        (
            "focal_gamma_0.5",
            Box::new(|z, t| focal_loss(z, t, 0.5, None)),
        ),
        (
            "focal_gamma_2",
            Box::new(|z, t| focal_loss(z, t, 2.0, None)),
        ),
        (
            "ldam_s_1",
            Box::new(|z, t| ldam_loss(z, t, &margins, 1.0, None)),
        ),
        (
            "ldam_s_30",
            Box::new(|z, t| ldam_loss(z, t, &margins, 30.0, None)),
        ),
    ];

    let mut results = Vec::with_capacity(configs.len());
    for (config_index, (name, eval)) in configs.iter().enumerate() {
        let mut rng = SeededRng::with_stream(seed, config_index as u64);
        let mut worst = 0.0f64;
        for _ in 0..instances {
            let data: Vec<f64> = (0..GRADCHECK_BATCH * GRADCHECK_CLASSES)
                .map(|_| rng.normal())
                .collect();
            let logits = Matrix::from_vec(GRADCHECK_BATCH, GRADCHECK_CLASSES, data)?;
            let targets: Vec<usize> = (0..GRADCHECK_BATCH)
                .map(|_| rng.below(GRADCHECK_CLASSES as u64) as usize)
                .collect();
            let (_, analytic) = eval(&logits, &targets)?;
            let fd = finite_diff_grad(
                |m| eval(m, &targets).expect("loss evaluation").0,
                &logits,
                GRADCHECK_STEP,
            );
            worst = worst.max(max_gradcheck_error(&analytic, &fd));
        }
        results.push(GradCheckResult {
            name: name.to_string(),
            max_rel_err: worst,
            instances,
        });
    }
    Ok(results)
}
