//! Scores and the ablation harness: weighted and plain accuracy, robustness
//! sweeps over single manipulations, the crop-size sweep and train-size
//! ablation.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentOp;
use crate::dataset::{ManifestRecord, Split};
use crate::error::{Error, Result};
use crate::image::ImageU8;
use crate::infer::{PredictionVector, Predictor, TtaConfig, ViewMode};
use crate::io::write_atomic;
use crate::nn::loss::{cross_entropy, one_hot, LossKind};
use crate::nn::{Scalar, Tensor};
use crate::par;
use crate::rng::{stream_for, Domain};
use crate::train::{train, TrainConfig, TrainSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalWeights {
    pub unaltered: f64,
    pub altered: f64,
}

impl Default for EvalWeights {
    fn default() -> Self {
        Self {
            unaltered: 0.7,
            altered: 0.3,
        }
    }
}

impl EvalWeights {
    pub fn validate(&self) -> Result<()> {
        if self.unaltered > 0.0 && self.altered > 0.0 && self.unaltered.is_finite() && self.altered.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParam(format!("weights must be positive, got {self:?}")))
        }
    }

    pub fn weight(&self, altered: bool) -> f64 {
        if altered {
            self.altered
        } else {
            self.unaltered
        }
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a == 0 {
        return Err(Error::EmptyInput);
    }
    if a != b {
        return Err(Error::LengthMismatch(a, b));
    }
    Ok(())
}

/// `sum_i w_i [y_i = p_i] / sum_i w_i`.
pub fn weighted_accuracy(preds: &[usize], labels: &[usize], altered: &[bool], w: &EvalWeights) -> Result<f64> {
    check_lengths(preds.len(), labels.len())?;
    check_lengths(preds.len(), altered.len())?;
    w.validate()?;
    let mut hit = 0.0;
    let mut total = 0.0;
    for ((p, l), &a) in preds.iter().zip(labels).zip(altered) {
        let wi = w.weight(a);
        total += wi;
        if p == l {
            hit += wi;
        }
    }
    Ok(hit / total)
}

/// The score with an extra `1/n` factor in front, as the formula is sometimes
/// printed. A perfect prediction scores `1/n`.
pub fn weighted_accuracy_literal(
    preds: &[usize],
    labels: &[usize],
    altered: &[bool],
    w: &EvalWeights,
) -> Result<f64> {
    Ok(weighted_accuracy(preds, labels, altered, w)? / preds.len() as f64)
}

pub fn plain_accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(preds.len(), labels.len())?;
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Mean per-image loss of averaged prediction vectors.
pub fn mean_loss(preds: &[PredictionVector], labels: &[usize], kind: LossKind) -> Result<f64> {
    check_lengths(preds.len(), labels.len())?;
    let classes = preds[0].probs.len();
    let probs = Tensor::new(
        vec![preds.len(), classes],
        preds.iter().flat_map(|p| p.probs.iter().copied()).collect(),
    )?;
    cross_entropy(&probs, &one_hot::<f64>(labels, classes)?, kind)
}

/// Validation images held in memory.
#[derive(Debug, Clone, Default)]
pub struct ValSet {
    pub images: Vec<ImageU8>,
    pub labels: Vec<usize>,
}

impl ValSet {
    /// Loads the `split` records; unreadable images are returned separately.
    pub fn load(records: &[ManifestRecord], split: Split, workers: usize) -> (Self, Vec<(String, String)>) {
        let chosen: Vec<&ManifestRecord> = records.iter().filter(|r| r.split == split).collect();
        let loaded = par::map_indexed(&chosen, workers, |_, r| r.load_image());
        let mut set = ValSet::default();
        let mut failed = Vec::new();
        for (r, img) in chosen.iter().zip(loaded) {
            match img {
                Ok(img) => {
                    set.images.push(img);
                    set.labels.push(r.class_id);
                }
                Err(e) => failed.push((r.path.display().to_string(), e.to_string())),
            }
        }
        (set, failed)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Accuracy and mean loss over the images that could be predicted.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub accuracy: f64,
    pub loss: f64,
    pub n_images: usize,
    pub n_skipped: usize,
}

/// Predicts `images` (after `prepare`) and scores them. Images for which
/// `prepare` or prediction fails are counted as skipped.
pub fn evaluate_with<T: Scalar>(
    predictor: &Predictor<'_, T>,
    val: &ValSet,
    tta: &TtaConfig,
    workers: usize,
    prepare: impl Fn(&ImageU8) -> Result<ImageU8> + Sync,
) -> Result<EvalSummary> {
    let outcomes = par::map_indexed(&val.images, workers, |_, img| {
        prepare(img).and_then(|img| predictor.predict(&img, tta))
    });
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for (o, &l) in outcomes.into_iter().zip(&val.labels) {
        if let Ok(p) = o {
            preds.push(p);
            labels.push(l);
        }
    }
    let n_skipped = val.len() - preds.len();
    if preds.is_empty() {
        return Ok(EvalSummary {
            accuracy: f64::NAN,
            loss: f64::NAN,
            n_images: 0,
            n_skipped,
        });
    }
    let ids: Vec<usize> = preds.iter().map(|p| p.class_id).collect();
    Ok(EvalSummary {
        accuracy: plain_accuracy(&ids, &labels)?,
        loss: mean_loss(&preds, &labels, LossKind::SummedBinary)?,
        n_images: preds.len(),
        n_skipped,
    })
}

pub fn evaluate<T: Scalar>(
    predictor: &Predictor<'_, T>,
    val: &ValSet,
    tta: &TtaConfig,
    workers: usize,
) -> Result<EvalSummary> {
    evaluate_with(predictor, val, tta, workers, |img| Ok(img.clone()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepTransform {
    Gamma,
    Jpeg,
    Scale,
    Contrast,
    CropSize,
}

impl SweepTransform {
    pub const ALL: [SweepTransform; 5] = [
        SweepTransform::Gamma,
        SweepTransform::Jpeg,
        SweepTransform::Scale,
        SweepTransform::Contrast,
        SweepTransform::CropSize,
    ];

    /// Default grid: the training range plus points outside it. The crop-size
    /// grid depends on the data and has no default.
    pub fn default_grid(self) -> Vec<f64> {
        match self {
            SweepTransform::Gamma => (6..=14).map(|i| i as f64 / 10.0).collect(),
            SweepTransform::Jpeg => vec![50.0, 60.0, 70.0, 80.0, 90.0, 95.0],
            SweepTransform::Scale => vec![0.4, 0.5, 0.75, 1.0, 1.5, 2.0, 2.5],
            SweepTransform::Contrast => vec![0.6, 0.8, 1.0, 1.2, 1.4],
            SweepTransform::CropSize => Vec::new(),
        }
    }

    /// The manipulation for one grid value, or `None` at the identity value.
    pub fn op(self, param: f64) -> Option<AugmentOp> {
        match self {
            SweepTransform::Gamma if param != 1.0 => Some(AugmentOp::Gamma(param)),
            SweepTransform::Scale if param != 1.0 => Some(AugmentOp::Scale(param)),
            SweepTransform::Contrast if param != 1.0 => Some(AugmentOp::Contrast(param)),
            SweepTransform::Jpeg => Some(AugmentOp::Jpeg(param as u8)),
            _ => None,
        }
    }
}

impl fmt::Display for SweepTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepTransform::Gamma => "gamma",
            SweepTransform::Jpeg => "jpeg",
            SweepTransform::Scale => "scale",
            SweepTransform::Contrast => "contrast",
            SweepTransform::CropSize => "crop_size",
        })
    }
}

impl FromStr for SweepTransform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SweepTransform::ALL
            .into_iter()
            .find(|t| t.to_string() == s)
            .ok_or_else(|| Error::InvalidParam(format!("unknown transform `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub transform: SweepTransform,
    pub grid: Vec<f64>,
}

impl SweepSpec {
    pub fn new(transform: SweepTransform, grid: Vec<f64>) -> Result<Self> {
        let spec = Self { transform, grid };
        spec.validate()?;
        Ok(spec)
    }

    pub fn default_for(transform: SweepTransform) -> Self {
        Self {
            transform,
            grid: transform.default_grid(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::InvalidParam(format!("{} grid is empty", self.transform)));
        }
        for &p in &self.grid {
            let integral = p.fract() == 0.0;
            let ok = p.is_finite()
                && match self.transform {
                    SweepTransform::Gamma | SweepTransform::Scale | SweepTransform::Contrast => p > 0.0,
                    SweepTransform::Jpeg => integral && (1.0..=100.0).contains(&p),
                    SweepTransform::CropSize => integral && p >= 1.0,
                };
            if !ok {
                return Err(Error::InvalidParam(format!(
                    "{p} is outside the {} domain",
                    self.transform
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub param: f64,
    pub summary: EvalSummary,
    /// Set when no image could be evaluated at this point.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCurve {
    pub transform: SweepTransform,
    pub points: Vec<SweepPoint>,
}

impl SweepCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("transform,param,accuracy,loss,n_images,n_skipped\n");
        for p in &self.points {
            let s = &p.summary;
            writeln!(
                out,
                "{},{},{:?},{:?},{},{}",
                self.transform, p.param, s.accuracy, s.loss, s.n_images, s.n_skipped
            )
            .expect("string write");
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }

    pub fn point(&self, param: f64) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.param == param)
    }
}

fn sweep_point(param: f64, summary: EvalSummary) -> SweepPoint {
    let error = (summary.n_images == 0).then(|| format!("no image could be evaluated at {param}"));
    SweepPoint { param, summary, error }
}

/// Applies each grid manipulation to every validation image and evaluates
/// with `tta`. A crop-size spec is delegated to [`crop_size_sweep`].
pub fn robustness_sweep<T: Scalar>(
    predictor: &Predictor<'_, T>,
    val: &ValSet,
    spec: &SweepSpec,
    tta: &TtaConfig,
    workers: usize,
) -> Result<SweepCurve> {
    spec.validate()?;
    if spec.transform == SweepTransform::CropSize {
        let sizes: Vec<usize> = spec.grid.iter().map(|&p| p as usize).collect();
        return crop_size_sweep(predictor, val, &sizes, workers);
    }
    let points = spec
        .grid
        .iter()
        .map(|&param| {
            let op = spec.transform.op(param);
            let summary = evaluate_with(predictor, val, tta, workers, |img| match op {
                Some(op) => op.apply(img),
                None => Ok(img.clone()),
            })?;
            Ok(sweep_point(param, summary))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepCurve {
        transform: spec.transform,
        points,
    })
}

/// Single center view at each crop size. Images smaller than a size are
/// counted as skipped at that point.
pub fn crop_size_sweep<T: Scalar>(
    predictor: &Predictor<'_, T>,
    val: &ValSet,
    sizes: &[usize],
    workers: usize,
) -> Result<SweepCurve> {
    if sizes.is_empty() {
        return Err(Error::InvalidParam("crop size grid is empty".into()));
    }
    let points = sizes
        .iter()
        .map(|&size| {
            let tta = TtaConfig {
                crop: size,
                views: ViewMode::Center,
                ..TtaConfig::default()
            };
            Ok(sweep_point(size as f64, evaluate(predictor, val, &tta, workers)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepCurve {
        transform: SweepTransform::CropSize,
        points,
    })
}

/// Seeded subsample of `n` training images; the full set in its original
/// order when `n` covers it.
pub fn subsample(set: &TrainSet, n: usize, seed: u64) -> Result<TrainSet> {
    if n > set.len() {
        return Err(Error::InsufficientData {
            class: "any".into(),
            available: set.len(),
            required: n,
        });
    }
    if n == set.len() {
        return Ok(set.clone());
    }
    let mut idx: Vec<usize> = (0..set.len()).collect();
    idx.shuffle(&mut stream_for(seed, Domain::Subsample, n as u64));
    idx.truncate(n);
    idx.sort_unstable();
    TrainSet::from_images(
        idx.iter().map(|&i| set.images[i].clone()).collect(),
        idx.iter().map(|&i| set.labels[i]).collect(),
        set.num_classes,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationPoint {
    pub train_size: usize,
    pub summary: EvalSummary,
}

/// Trains one model per training-set size and evaluates each on `val`.
pub fn train_size_ablation<T: Scalar>(
    set: &TrainSet,
    val: &ValSet,
    sizes: &[usize],
    cfg: &TrainConfig,
    tta: &TtaConfig,
    workers: usize,
) -> Result<Vec<AblationPoint>> {
    if sizes.is_empty() {
        return Err(Error::InvalidParam("train size list is empty".into()));
    }
    sizes
        .iter()
        .map(|&n| {
            let sub = subsample(set, n, cfg.seed)?;
            let outcome = train::<T>(&sub, cfg, workers, None, |_| {})?;
            let predictor = Predictor::new(&outcome.model);
            Ok(AblationPoint {
                train_size: n,
                summary: evaluate(&predictor, val, tta, workers)?,
            })
        })
        .collect()
}

pub fn ablation_csv(points: &[AblationPoint]) -> String {
    let mut out = String::from("train_size,accuracy,loss,n_images,n_skipped\n");
    for p in points {
        let s = &p.summary;
        writeln!(
            out,
            "{},{:?},{:?},{},{}",
            p.train_size, s.accuracy, s.loss, s.n_images, s.n_skipped
        )
        .expect("string write");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{DenseBlockConfig, Model, ModelConfig};
    use proptest::prelude::*;
    use rand::Rng;

    fn brute(preds: &[usize], labels: &[usize], altered: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..preds.len() {
            let w = if altered[i] { 0.3 } else { 0.7 };
            den += w;
            if preds[i] == labels[i] {
                num += w;
            }
        }
        num / den
    }

    #[test]
    fn weighted_accuracy_examples() {
        let w = EvalWeights::default();
        assert_eq!(weighted_accuracy(&[1, 2, 3], &[1, 2, 3], &[false, true, true], &w).unwrap(), 1.0);
        let s = weighted_accuracy(&[0, 1, 2], &[0, 1, 0], &[false, true, true], &w).unwrap();
        assert_eq!(format!("{s:.6}"), "0.769231");
        assert_eq!(weighted_accuracy(&[1, 1], &[0, 0], &[false, true], &w).unwrap(), 0.0);
        let lit = weighted_accuracy_literal(&[1, 2, 3], &[1, 2, 3], &[false, true, true], &w).unwrap();
        assert!((lit - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(weighted_accuracy(&[], &[], &[], &w), Err(Error::EmptyInput)));
        assert!(matches!(
            weighted_accuracy(&[1], &[1, 2], &[false], &w),
            Err(Error::LengthMismatch(1, 2))
        ));
        assert!(weighted_accuracy(&[1], &[1], &[false], &EvalWeights { unaltered: 0.0, altered: 0.3 }).is_err());
    }

    #[test]
    fn plain_accuracy_examples() {
        assert_eq!(plain_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(plain_accuracy(&[1, 2, 3, 4], &[1, 2, 3, 0]).unwrap(), 0.75);
        let equal = EvalWeights {
            unaltered: 0.5,
            altered: 0.5,
        };
        let (p, l, a) = ([1, 0, 2, 2], [1, 1, 2, 0], [true, false, false, true]);
        assert!((weighted_accuracy(&p, &l, &a, &equal).unwrap() - plain_accuracy(&p, &l).unwrap()).abs() < 1e-15);
        assert!(matches!(plain_accuracy(&[], &[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn matches_brute_force_oracle() {
        let mut r = crate::rng::stream(42, 0);
        let w = EvalWeights::default();
        for _ in 0..1000 {
            let n = r.gen_range(1..40);
            let preds: Vec<usize> = (0..n).map(|_| r.gen_range(0..4)).collect();
            let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..4)).collect();
            let altered: Vec<bool> = (0..n).map(|_| r.gen()).collect();
            assert_eq!(weighted_accuracy(&preds, &labels, &altered, &w).unwrap(), brute(&preds, &labels, &altered));
        }
    }

    proptest! {
        #[test]
        fn bounded_and_permutation_invariant(
            rows in proptest::collection::vec((0usize..3, 0usize..3, any::<bool>()), 1..30),
            seed in any::<u64>(),
        ) {
            let w = EvalWeights::default();
            let preds: Vec<usize> = rows.iter().map(|r| r.0).collect();
            let labels: Vec<usize> = rows.iter().map(|r| r.1).collect();
            let altered: Vec<bool> = rows.iter().map(|r| r.2).collect();
            let s = weighted_accuracy(&preds, &labels, &altered, &w).unwrap();
            prop_assert!((0.0..=1.0).contains(&s));
            let all_right = preds == labels;
            let all_wrong = preds.iter().zip(&labels).all(|(p, l)| p != l);
            prop_assert_eq!(s == 1.0, all_right);
            prop_assert_eq!(s == 0.0, all_wrong);

            let mut perm: Vec<usize> = (0..rows.len()).collect();
            perm.shuffle(&mut crate::rng::stream(seed, 0));
            let p2: Vec<usize> = perm.iter().map(|&i| preds[i]).collect();
            let l2: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
            let a2: Vec<bool> = perm.iter().map(|&i| altered[i]).collect();
            let s2 = weighted_accuracy(&p2, &l2, &a2, &w).unwrap();
            prop_assert!((s - s2).abs() < 1e-12);
        }
    }

    #[test]
    fn sweep_spec_validation() {
        assert!(SweepSpec::new(SweepTransform::Gamma, vec![]).is_err());
        assert!(SweepSpec::new(SweepTransform::Jpeg, vec![70.5]).is_err());
        assert!(SweepSpec::new(SweepTransform::Jpeg, vec![101.0]).is_err());
        assert!(SweepSpec::new(SweepTransform::Scale, vec![-1.0]).is_err());
        assert!(SweepSpec::new(SweepTransform::CropSize, vec![16.0, 32.0]).is_ok());
        for t in SweepTransform::ALL {
            assert_eq!(t.to_string().parse::<SweepTransform>().unwrap(), t);
            if t != SweepTransform::CropSize {
                assert!(SweepSpec::default_for(t).validate().is_ok());
            }
        }
        assert_eq!(SweepTransform::Gamma.default_grid().len(), 9);
    }

    fn setup() -> (Model<f64>, ValSet) {
        let cfg = ModelConfig {
            in_channels: 3,
            stem_channels: 4,
            blocks: vec![DenseBlockConfig {
                num_layers: 2,
                growth_rate: 3,
            }],
            num_classes: 3,
        };
        let mut r = crate::rng::stream(5, 5);
        let images = (0..6)
            .map(|_| ImageU8::new(20, 20, (0..1200).map(|_| r.gen()).collect()).unwrap())
            .collect();
        (
            Model::new(cfg, 1).unwrap(),
            ValSet {
                images,
                labels: vec![0, 1, 2, 0, 1, 2],
            },
        )
    }

    #[test]
    fn identity_points_equal_baseline() {
        let (m, val) = setup();
        let p = Predictor::new(&m);
        let tta = TtaConfig {
            crop: 16,
            ..TtaConfig::default()
        };
        let base = evaluate(&p, &val, &tta, 1).unwrap();
        for t in [SweepTransform::Gamma, SweepTransform::Scale, SweepTransform::Contrast] {
            let curve = robustness_sweep(&p, &val, &SweepSpec::new(t, vec![0.9, 1.0, 1.1]).unwrap(), &tta, 2).unwrap();
            assert_eq!(curve.points.iter().map(|p| p.param).collect::<Vec<_>>(), vec![0.9, 1.0, 1.1]);
            assert_eq!(curve.point(1.0).unwrap().summary, base);
        }
        // scale below the crop makes every image too small
        let curve = robustness_sweep(&p, &val, &SweepSpec::new(SweepTransform::Scale, vec![0.5]).unwrap(), &tta, 1).unwrap();
        assert_eq!(curve.points[0].summary.n_skipped, 6);
        assert!(curve.points[0].error.is_some());

        let csv = curve.to_csv();
        assert!(csv.starts_with("transform,param,accuracy,loss,n_images,n_skipped\nscale,0.5,"));
    }

    #[test]
    fn crop_sweep_full_size_is_single_view_baseline() {
        let (m, val) = setup();
        let p = Predictor::new(&m);
        let curve = crop_size_sweep(&p, &val, &[8, 12, 20, 24], 1).unwrap();
        assert_eq!(curve.points.iter().map(|p| p.param).collect::<Vec<_>>(), vec![8.0, 12.0, 20.0, 24.0]);
        let mut preds = Vec::new();
        for img in &val.images {
            preds.push(p.predict_patch(img).unwrap());
        }
        let ids: Vec<usize> = preds.iter().map(|p| p.class_id).collect();
        let full = &curve.point(20.0).unwrap().summary;
        assert_eq!(full.accuracy, plain_accuracy(&ids, &val.labels).unwrap());
        assert_eq!(full.loss, mean_loss(&preds, &val.labels, LossKind::SummedBinary).unwrap());
        assert!(curve.point(24.0).unwrap().error.is_some());
    }

    #[test]
    fn subsample_is_seeded() {
        let (_, val) = setup();
        let set = TrainSet::from_images(val.images.clone(), val.labels.clone(), 3).unwrap();
        let a = subsample(&set, 4, 3);
        let b = subsample(&set, 4, 3);
        match (a, b) {
            (Ok(a), Ok(b)) => assert_eq!(a.labels, b.labels),
            (a, b) => assert_eq!(a.is_err(), b.is_err()),
        }
        assert_eq!(subsample(&set, 6, 3).unwrap().images, set.images);
        assert!(matches!(subsample(&set, 7, 3), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn full_size_ablation_equals_plain_training() {
        let (_, val) = setup();
        let set = TrainSet::from_images(val.images.clone(), val.labels.clone(), 3).unwrap();
        let cfg = TrainConfig {
            pre_crop: 20,
            train_crop: 16,
            batch_size: 2,
            iterations: 5,
            model: ModelConfig {
                in_channels: 3,
                stem_channels: 4,
                blocks: vec![DenseBlockConfig {
                    num_layers: 1,
                    growth_rate: 2,
                }],
                num_classes: 3,
            },
            ..TrainConfig::default()
        };
        let tta = TtaConfig {
            crop: 16,
            ..TtaConfig::default()
        };
        let pts = train_size_ablation::<f64>(&set, &val, &[6], &cfg, &tta, 1).unwrap();
        let m = train::<f64>(&set, &cfg, 1, None, |_| {}).unwrap().model;
        let direct = evaluate(&Predictor::new(&m), &val, &tta, 1).unwrap();
        assert_eq!(pts[0].summary, direct);
        assert!(ablation_csv(&pts).starts_with("train_size,accuracy"));
    }
}
