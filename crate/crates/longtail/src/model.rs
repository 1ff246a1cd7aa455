//! Desk-scale classifier: a linear model or a one-hidden-layer ReLU network
//! over feature vectors, with a hand-written backward pass, plus the
//! featurization of manifest records.
//!
//! This model stands in for a large pretrained backbone; everything
//! downstream of it (losses, optimizer, scheduler, metrics) is agnostic to
//! that substitution.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{PreprocessSpec, SampleRecord};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::{streams, SeededRng};

/// Model shape and initialization. `hidden_dim == 0` selects the linear
/// model. Weights initialize uniformly in `+-sqrt(6 / (fan_in + fan_out))`
/// unless an explicit scale is given; biases start at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub init_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_scale: Option<f64>,
}

impl ModelConfig {
    pub fn linear(input_dim: usize, num_classes: usize, init_seed: u64) -> Self {
        Self {
            input_dim,
            hidden_dim: 0,
            num_classes,
            init_seed,
            init_scale: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes == 0 {
            return Err(Error::invalid(
                "model input_dim and num_classes must be >= 1",
            ));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        if self.hidden_dim == 0 {
            self.input_dim * self.num_classes + self.num_classes
        } else {
            self.input_dim * self.hidden_dim
                + self.hidden_dim
                + self.hidden_dim * self.num_classes
                + self.num_classes
        }
    }
}

/// Parameter layout inside the flat vector.
struct Layout {
    w1: std::ops::Range<usize>,
    b1: std::ops::Range<usize>,
    w2: Option<std::ops::Range<usize>>,
    b2: Option<std::ops::Range<usize>>,
}

/// The classifier. Parameters live in one flat vector so the optimizer and
/// checkpoints can treat them uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    cfg: ModelConfig,
    params: Vec<f64>,
}

/// Activations cached by the forward pass for the backward pass.
pub struct ForwardCache {
    hidden: Option<Matrix>,
}

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SeededRng::with_stream(cfg.init_seed, streams::MODEL_INIT);
        let mut params = vec![0.0; cfg.param_count()];
        let layout = Self::layout_for(&cfg);
        let bound = |fan_in: usize, fan_out: usize| {
            cfg.init_scale
                .unwrap_or_else(|| (6.0 / (fan_in + fan_out) as f64).sqrt())
        };
        if cfg.hidden_dim == 0 {
            let b = bound(cfg.input_dim, cfg.num_classes);
            for v in &mut params[layout.w1.clone()] {
                *v = rng.uniform_in(-b, b);
            }
        } else {
            let b1 = bound(cfg.input_dim, cfg.hidden_dim);
            for v in &mut params[layout.w1.clone()] {
                *v = rng.uniform_in(-b1, b1);
            }
            let b2 = bound(cfg.hidden_dim, cfg.num_classes);
            for v in &mut params[layout.w2.clone().unwrap()] {
                *v = rng.uniform_in(-b2, b2);
            }
        }
        Ok(Self { cfg, params })
    }

    pub fn from_parts(cfg: ModelConfig, params: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        if params.len() != cfg.param_count() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} parameters", cfg.param_count()),
                got: format!("{}", params.len()),
            });
        }
        Ok(Self { cfg, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layout_for(cfg: &ModelConfig) -> Layout {
        if cfg.hidden_dim == 0 {
            let w1 = 0..cfg.input_dim * cfg.num_classes;
            let b1 = w1.end..w1.end + cfg.num_classes;
            Layout {
                w1,
                b1,
                w2: None,
                b2: None,
            }
        } else {
            let w1 = 0..cfg.input_dim * cfg.hidden_dim;
            let b1 = w1.end..w1.end + cfg.hidden_dim;
            let w2 = b1.end..b1.end + cfg.hidden_dim * cfg.num_classes;
            let b2 = w2.end..w2.end + cfg.num_classes;
            Layout {
                w1,
                b1,
                w2: Some(w2),
                b2: Some(b2),
            }
        }
    }

    fn affine(&self, x: &Matrix, w: &[f64], b: &[f64], out_dim: usize) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), out_dim);
        for i in 0..x.rows() {
            let row = x.row(i);
            let dst = out.row_mut(i);
            dst.copy_from_slice(b);
            for (k, &xv) in row.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let w_row = &w[k * out_dim..(k + 1) * out_dim];
                for (d, &wv) in dst.iter_mut().zip(w_row) {
                    *d += xv * wv;
                }
            }
        }
        out
    }

    pub fn forward(&self, features: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(features)?.0)
    }

    pub fn forward_cached(&self, features: &Matrix) -> Result<(Matrix, ForwardCache)> {
        if features.cols() != self.cfg.input_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{} feature dims", self.cfg.input_dim),
                got: format!("{}", features.cols()),
            });
        }
        let layout = Self::layout_for(&self.cfg);
        if self.cfg.hidden_dim == 0 {
            let logits = self.affine(
                features,
                &self.params[layout.w1],
                &self.params[layout.b1],
                self.cfg.num_classes,
            );
            Ok((logits, ForwardCache { hidden: None }))
        } else {
            let mut hidden = self.affine(
                features,
                &self.params[layout.w1],
                &self.params[layout.b1],
                self.cfg.hidden_dim,
            );
            for v in hidden.data_mut() {
                *v = v.max(0.0);
            }
            let logits = self.affine(
                &hidden,
                &self.params[layout.w2.unwrap()],
                &self.params[layout.b2.unwrap()],
                self.cfg.num_classes,
            );
            Ok((
                logits,
                ForwardCache {
                    hidden: Some(hidden),
                },
            ))
        }
    }

    /// Chain-rule gradients of the loss with respect to every parameter,
    /// given the loss gradient with respect to the logits. Returned in the
    /// same flat layout as `params`.
    pub fn backward(
        &self,
        features: &Matrix,
        cache: &ForwardCache,
        dlogits: &Matrix,
    ) -> Result<Vec<f64>> {
        if dlogits.rows() != features.rows() || dlogits.cols() != self.cfg.num_classes {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", features.rows(), self.cfg.num_classes),
                got: format!("{}x{}", dlogits.rows(), dlogits.cols()),
            });
        }
        let layout = Self::layout_for(&self.cfg);
        let mut grads = vec![0.0; self.params.len()];
        if self.cfg.hidden_dim == 0 {
            let dw = features.t_mul(dlogits)?;
            grads[layout.w1].copy_from_slice(dw.data());
            col_sums_into(dlogits, &mut grads[layout.b1]);
        } else {
            let hidden = cache
                .hidden
                .as_ref()
                .ok_or_else(|| Error::invalid("forward cache missing hidden activations"))?;
            let dw2 = hidden.t_mul(dlogits)?;
            grads[layout.w2.clone().unwrap()].copy_from_slice(dw2.data());
            col_sums_into(dlogits, &mut grads[layout.b2.clone().unwrap()]);

            let w2 = Matrix::from_vec(
                self.cfg.hidden_dim,
                self.cfg.num_classes,
                self.params[layout.w2.unwrap()].to_vec(),
            )?;
            let mut dhidden = dlogits.mul_t(&w2)?;
            for (dh, &h) in dhidden.data_mut().iter_mut().zip(hidden.data()) {
                if h <= 0.0 {
                    *dh = 0.0;
                }
            }
            let dw1 = features.t_mul(&dhidden)?;
            grads[layout.w1].copy_from_slice(dw1.data());
            col_sums_into(&dhidden, &mut grads[layout.b1]);
        }
        Ok(grads)
    }
}

fn col_sums_into(m: &Matrix, out: &mut [f64]) {
    for r in 0..m.rows() {
        for (o, &v) in out.iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
}

/// How manifest records become feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum FeatureMode {
    /// Records carry precomputed feature vectors in their `features` field.
    Vectors {
        #[serde(default)]
        standardize: bool,
    },
    /// Records reference small decodable images; each is resized to the
    /// preprocess target, normalized per channel as `(x/255 - mean) / std`,
    /// and flattened in row-major RGB order.
    TinyImage {
        spec: PreprocessSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        base_dir: Option<PathBuf>,
    },
}

impl Default for FeatureMode {
    fn default() -> Self {
        FeatureMode::Vectors { standardize: false }
    }
}

/// Featurization output. `kept` maps feature rows back to record indices;
/// undecodable images are skipped and reported, not fatal.
pub struct Featurized {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub kept: Vec<usize>,
    pub skipped: Vec<(usize, String)>,
}

pub fn featurize(records: &[SampleRecord], mode: &FeatureMode) -> Result<Featurized> {
    match mode {
        FeatureMode::Vectors { standardize } => featurize_vectors(records, *standardize),
        FeatureMode::TinyImage { spec, base_dir } => {
            featurize_tiny_images(records, spec, base_dir.as_deref())
        }
    }
}

fn featurize_vectors(records: &[SampleRecord], standardize: bool) -> Result<Featurized> {
    let mut dim = None;
    let mut rows = Vec::with_capacity(records.len());
    let mut labels = Vec::with_capacity(records.len());
    let mut kept = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let Some(features) = &r.features else {
            return Err(Error::invalid(format!(
                "record {i} ({}) has no feature vector; vectors mode requires one per record",
                r.image_ref
            )));
        };
        match dim {
            None => dim = Some(features.len()),
            Some(d) if d != features.len() => {
                return Err(Error::ShapeMismatch {
                    expected: format!("{d}-dim features"),
                    got: format!("{}-dim at record {i} ({})", features.len(), r.image_ref),
                });
            }
            _ => {}
        }
        rows.push(features.clone());
        labels.push(r.label);
        kept.push(i);
    }
    let dim = dim.unwrap_or(0);
    if dim == 0 {
        return Err(Error::invalid("no records or zero-dimensional features"));
    }
    let mut features = Matrix::from_rows(&rows)?;
    if standardize {
        standardize_columns(&mut features);
    }
    Ok(Featurized {
        features,
        labels,
        kept,
        skipped: Vec::new(),
    })
}

fn standardize_columns(m: &mut Matrix) {
    let (rows, cols) = (m.rows(), m.cols());
    for c in 0..cols {
        let mut mean = 0.0;
        for r in 0..rows {
            mean += m.get(r, c);
        }
        mean /= rows as f64;
        let mut var = 0.0;
        for r in 0..rows {
            let d = m.get(r, c) - mean;
            var += d * d;
        }
        let std = (var / rows as f64).sqrt();
        for r in 0..rows {
            let v = m.get(r, c) - mean;
            m.set(r, c, if std > 0.0 { v / std } else { v });
        }
    }
}

fn featurize_tiny_images(
    records: &[SampleRecord],
    spec: &PreprocessSpec,
    base_dir: Option<&Path>,
) -> Result<Featurized> {
    spec.validate()?;
    let (height, width) = spec.target_size;
    let dim = (height * width * 3) as usize;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut kept = Vec::new();
    let mut skipped = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let path = match base_dir {
            Some(base) => base.join(&r.image_ref),
            None => PathBuf::from(&r.image_ref),
        };
        let decoded = match image::open(&path) {
            Ok(img) => img,
            Err(e) => {
                skipped.push((i, format!("{}: {e}", path.display())));
                continue;
            }
        };
        let resized = decoded.resize_exact(width, height, image::imageops::FilterType::Triangle);
        let rgb = resized.to_rgb8();
        let mut row = Vec::with_capacity(dim);
        for pixel in rgb.pixels() {
            for (c, &value) in pixel.0.iter().enumerate() {
                row.push((value as f64 / 255.0 - spec.mean[c]) / spec.std[c]);
            }
        }
        rows.push(row);
        labels.push(r.label);
        kept.push(i);
    }
    if rows.is_empty() {
        return Err(Error::invalid("no decodable images in the manifest"));
    }
    Ok(Featurized {
        features: Matrix::from_rows(&rows)?,
        labels,
        kept,
        skipped,
    })
}
