//! Test-time augmented prediction.
//!
//! Full TTA evaluates the five `crop`-sized windows (top-left, top-right,
//! bottom-left, bottom-right, center) under all eight D4 elements and averages
//! the 40 probability vectors in that fixed order.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::dataset::ManifestRecord;
use crate::error::{Error, Result};
use crate::image::{center_crop, d4_apply, tta_crops, ImageU8, D4};
use crate::io::write_atomic;
use crate::nn::loss::softmax;
use crate::nn::{Model, Scalar, Tensor};
use crate::par;
use crate::train::batch_tensor;

pub const FULL_TTA_VIEWS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    #[default]
    Probabilities,
    Logits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewMode {
    /// 5 crops × 8 dihedral elements.
    #[default]
    Full,
    /// The center crop only, untransformed.
    Center,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TtaConfig {
    pub crop: usize,
    pub views: ViewMode,
    pub averaging: Averaging,
}

impl Default for TtaConfig {
    fn default() -> Self {
        Self {
            crop: 480,
            views: ViewMode::Full,
            averaging: Averaging::Probabilities,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionVector {
    pub probs: Vec<f64>,
    pub class_id: usize,
    pub num_views: usize,
}

impl PredictionVector {
    fn from_probs(probs: Vec<f64>, num_views: usize) -> Self {
        Self {
            class_id: argmax(&probs),
            probs,
            num_views,
        }
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// A model plus a counter of forward views evaluated through it.
#[derive(Debug)]
pub struct Predictor<'a, T> {
    model: &'a Model<T>,
    views: AtomicUsize,
}

impl<'a, T: Scalar> Predictor<'a, T> {
    pub fn new(model: &'a Model<T>) -> Self {
        Self {
            model,
            views: AtomicUsize::new(0),
        }
    }

    pub fn model(&self) -> &Model<T> {
        self.model
    }

    /// Total views forwarded so far.
    pub fn views_evaluated(&self) -> usize {
        self.views.load(Ordering::Relaxed)
    }

    /// Logits for a batch of equally sized views, one row per view.
    fn view_logits(&self, views: &[ImageU8]) -> Result<Tensor<T>> {
        let x = batch_tensor::<T>(views)?;
        let logits = self.model.logits(&x)?;
        self.views.fetch_add(views.len(), Ordering::Relaxed);
        Ok(logits)
    }

    fn check_size(&self, img: &ImageU8, crop: usize) -> Result<()> {
        let min = self.model.config().min_input_size().max(crop);
        if img.height() < min || img.width() < min {
            return Err(Error::TooSmall {
                height: img.height(),
                width: img.width(),
                size: min,
            });
        }
        Ok(())
    }

    /// One forward pass over the whole patch.
    pub fn predict_patch(&self, patch: &ImageU8) -> Result<PredictionVector> {
        self.check_size(patch, 0)?;
        let probs = softmax(&self.view_logits(std::slice::from_ref(patch))?)?;
        Ok(PredictionVector::from_probs(
            probs.data().iter().map(|v| v.as_f64()).collect(),
            1,
        ))
    }

    /// Full 40-view TTA with probability averaging.
    pub fn tta_predict(&self, img: &ImageU8, crop: usize) -> Result<PredictionVector> {
        self.predict(
            img,
            &TtaConfig {
                crop,
                ..TtaConfig::default()
            },
        )
    }

    pub fn predict(&self, img: &ImageU8, cfg: &TtaConfig) -> Result<PredictionVector> {
        self.check_size(img, cfg.crop)?;
        if cfg.views == ViewMode::Center {
            return self.predict_patch(&center_crop(img, cfg.crop)?);
        }
        let classes = self.model.num_classes();
        let mut sum = vec![0.0f64; classes];
        // one forward per crop keeps memory bounded for large crops
        for c in tta_crops(img, cfg.crop)? {
            let views: Vec<ImageU8> = D4::ALL.iter().map(|&g| d4_apply(&c, g)).collect();
            let logits = self.view_logits(&views)?;
            let rows = match cfg.averaging {
                Averaging::Probabilities => softmax(&logits)?,
                Averaging::Logits => logits,
            };
            for row in rows.data().chunks_exact(classes) {
                for (s, v) in sum.iter_mut().zip(row) {
                    *s += v.as_f64();
                }
            }
        }
        let n = FULL_TTA_VIEWS as f64;
        let mean: Vec<f64> = sum.into_iter().map(|s| s / n).collect();
        let probs = match cfg.averaging {
            Averaging::Probabilities => mean,
            Averaging::Logits => softmax(&Tensor::new(vec![1, classes], mean)?)?.into_data(),
        };
        Ok(PredictionVector::from_probs(probs, FULL_TTA_VIEWS))
    }
}

/// One manifest entry and its prediction or the reason it failed.
#[derive(Debug, Clone)]
pub struct RecordPrediction {
    pub record: ManifestRecord,
    pub outcome: std::result::Result<PredictionVector, String>,
}

/// Predicts every record, in order. Unreadable or undersized images are
/// recorded as failures.
pub fn predict_manifest<T: Scalar>(
    predictor: &Predictor<'_, T>,
    records: &[ManifestRecord],
    cfg: &TtaConfig,
    workers: usize,
) -> Vec<RecordPrediction> {
    par::map_indexed(records, workers, |_, r| RecordPrediction {
        record: r.clone(),
        outcome: r
            .load_image()
            .and_then(|img| predictor.predict(&img, cfg))
            .map_err(|e| e.to_string()),
    })
}

/// Predictions CSV. Failed records keep their row with empty prediction cells.
pub fn predictions_csv(preds: &[RecordPrediction], num_classes: usize) -> String {
    let mut out = String::from("path,label,altered,pred_class");
    for c in 0..num_classes {
        write!(out, ",p{c}").expect("string write");
    }
    out.push('\n');
    for p in preds {
        let r = &p.record;
        write!(out, "{},{},{}", csv_field(&r.path.display().to_string()), r.class_id, r.altered)
            .expect("string write");
        match &p.outcome {
            Ok(v) => {
                write!(out, ",{}", v.class_id).expect("string write");
                for x in &v.probs {
                    write!(out, ",{x:?}").expect("string write");
                }
            }
            Err(_) => out.push_str(&",".repeat(num_classes + 1)),
        }
        out.push('\n');
    }
    out
}

pub fn write_predictions(path: impl AsRef<Path>, preds: &[RecordPrediction], num_classes: usize) -> Result<()> {
    write_atomic(path, predictions_csv(preds, num_classes).as_bytes())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
