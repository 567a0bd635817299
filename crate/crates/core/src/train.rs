//! Training loop: seeded example sampling, the crop → augment → crop patch
//! pipeline, Adam updates, windowed loss logging and checkpoints.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{apply_ops, sample_train_augs, AugmentOp, AugmentPolicy};
use crate::dataset::{ManifestRecord, Split};
use crate::error::{Error, Result};
use crate::image::{random_crop, ImageU8};
use crate::io::write_atomic;
use crate::nn::checkpoint::save_checkpoint;
use crate::nn::loss::LossKind;
use crate::nn::{Adam, Model, ModelConfig, Scalar, Tensor};
use crate::par;
use crate::rng::{stream_for, Domain, Stream};

/// Multiplies the learning rate by `factor` every `every` iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepDecay {
    pub every: usize,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Side of the first random crop, taken before augmentation.
    pub pre_crop: usize,
    /// Side of the patch fed to the network.
    pub train_crop: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub lr_decay: Option<StepDecay>,
    /// Set from the run-wide seed rather than from a config file.
    #[serde(skip)]
    pub seed: u64,
    pub loss: LossKind,
    pub policy: AugmentPolicy,
    /// Iterations per logged loss window.
    pub log_every: usize,
    /// Write an intermediate checkpoint every this many iterations; 0 disables.
    pub checkpoint_every: usize,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            pre_crop: 960,
            train_crop: 480,
            batch_size: 8,
            iterations: 2000,
            learning_rate: 1e-3,
            lr_decay: None,
            seed: 0,
            loss: LossKind::SummedBinary,
            policy: AugmentPolicy::default(),
            log_every: 10,
            checkpoint_every: 0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        if self.train_crop == 0 || self.pre_crop < self.train_crop {
            return bad(format!(
                "pre_crop {} must be >= train_crop {} > 0",
                self.pre_crop, self.train_crop
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.log_every == 0 {
            return bad("log_every must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if let Some(d) = self.lr_decay {
            if d.every == 0 || !(d.factor > 0.0 && d.factor <= 1.0) {
                return bad(format!("invalid lr decay {d:?}"));
            }
        }
        if self.train_crop < self.model.min_input_size() {
            return bad(format!(
                "train_crop {} is below the network minimum {}",
                self.train_crop,
                self.model.min_input_size()
            ));
        }
        self.policy.validate()?;
        self.model.validate()
    }

    /// Learning rate in effect at 0-based `iteration`.
    pub fn learning_rate_at(&self, iteration: usize) -> f64 {
        match self.lr_decay {
            Some(d) => self.learning_rate * d.factor.powi((iteration / d.every) as i32),
            None => self.learning_rate,
        }
    }
}

/// Windowed mean losses, one point per `log_every` iterations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossCurve {
    pub points: Vec<(usize, f64)>,
}

impl LossCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,loss\n");
        for (it, loss) in &self.points {
            writeln!(out, "{it},{loss:?}").expect("string write");
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("iteration,loss") {
            return Err(Error::Format("loss CSV must start with `iteration,loss`".into()));
        }
        let points = lines
            .filter(|l| !l.is_empty())
            .map(|l| {
                let (a, b) = l
                    .split_once(',')
                    .ok_or_else(|| Error::Format(format!("bad loss row `{l}`")))?;
                let it = a.parse().map_err(|_| Error::Format(format!("bad iteration `{a}`")))?;
                let loss = b.parse().map_err(|_| Error::Format(format!("bad loss `{b}`")))?;
                Ok((it, loss))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { points })
    }

    /// Loss logged at exactly `iteration`.
    pub fn at(&self, iteration: usize) -> Option<f64> {
        self.points.iter().find(|p| p.0 == iteration).map(|p| p.1)
    }
}

/// Training images held in memory with their labels.
#[derive(Debug, Clone, Default)]
pub struct TrainSet {
    pub images: Vec<ImageU8>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    /// Records dropped because they could not be read or were below `pre_crop`.
    pub skipped: Vec<(PathBuf, String)>,
}

impl TrainSet {
    /// Loads the train split of `records`. `num_classes` comes from the whole
    /// manifest so that head size does not depend on which split is loaded.
    pub fn load(records: &[ManifestRecord], pre_crop: usize, workers: usize) -> Result<Self> {
        let num_classes = crate::dataset::class_count(records);
        let train: Vec<&ManifestRecord> = records.iter().filter(|r| r.split == Split::Train).collect();
        let loaded = par::map_indexed(&train, workers, |_, r| r.load_image());
        let mut set = TrainSet {
            num_classes,
            ..Default::default()
        };
        for (r, img) in train.iter().zip(loaded) {
            match img {
                Ok(img) if img.height() >= pre_crop && img.width() >= pre_crop => {
                    set.images.push(img);
                    set.labels.push(r.class_id);
                }
                Ok(img) => set.skipped.push((
                    r.path.clone(),
                    format!("{}x{} is below pre_crop {pre_crop}", img.width(), img.height()),
                )),
                Err(e) => set.skipped.push((r.path.clone(), e.to_string())),
            }
        }
        set.check_classes()?;
        Ok(set)
    }

    pub fn from_images(images: Vec<ImageU8>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::LengthMismatch(images.len(), labels.len()));
        }
        let set = TrainSet {
            images,
            labels,
            num_classes,
            skipped: Vec::new(),
        };
        set.check_classes()?;
        Ok(set)
    }

    fn check_classes(&self) -> Result<()> {
        if self.num_classes == 0 || self.images.is_empty() {
            return Err(Error::EmptyInput);
        }
        for class in 0..self.num_classes {
            if !self.labels.contains(&class) {
                return Err(Error::InsufficientData {
                    class: class.to_string(),
                    available: 0,
                    required: 1,
                });
            }
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::InvalidParam(format!("label {l} >= {} classes", self.num_classes)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Interleaved `u8` RGB to planar `[0, 1]` values.
pub fn to_chw<T: Scalar>(img: &ImageU8) -> Vec<T> {
    let (h, w) = (img.height(), img.width());
    let mut out = vec![T::zero(); 3 * h * w];
    for (i, px) in img.data().chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * h * w + i] = T::from_f64(px[c] as f64 / 255.0);
        }
    }
    out
}

/// Stacks equally sized images into an `(n, 3, h, w)` tensor.
pub fn batch_tensor<T: Scalar>(images: &[ImageU8]) -> Result<Tensor<T>> {
    let first = images.first().ok_or(Error::EmptyInput)?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if img.height() != h || img.width() != w {
            return Err(Error::ShapeMismatch(format!(
                "batch mixes {h}x{w} and {}x{}",
                img.height(),
                img.width()
            )));
        }
        data.extend(to_chw::<T>(img));
    }
    Tensor::new(vec![images.len(), 3, h, w], data)
}

/// Chooses the augmentation chain for one example, redrawing any scale
/// factor that would shrink the `pre_crop` intermediate below `train_crop`.
pub fn sample_example_ops(cfg: &TrainConfig, rng: &mut Stream) -> Vec<AugmentOp> {
    let mut ops = sample_train_augs(&cfg.policy, rng);
    let floor = cfg.train_crop as f64 / cfg.pre_crop as f64;
    for op in &mut ops {
        if let AugmentOp::Scale(f) = op {
            if (cfg.pre_crop as f64 * *f).round_ties_even() < cfg.train_crop as f64 {
                let [lo, hi] = cfg.policy.scale_range;
                let lo = lo.max(floor);
                *f = if lo < hi { rng.gen_range(lo..=hi) } else { lo };
            }
        }
    }
    ops
}

/// One augmented `train_crop` patch from `img`.
pub fn make_training_example(img: &ImageU8, cfg: &TrainConfig, rng: &mut Stream) -> Result<ImageU8> {
    if img.height() < cfg.pre_crop || img.width() < cfg.pre_crop {
        return Err(Error::TooSmall {
            height: img.height(),
            width: img.width(),
            size: cfg.pre_crop,
        });
    }
    let pre = random_crop(img, cfg.pre_crop, rng)?;
    let ops = sample_example_ops(cfg, rng);
    let aug = apply_ops(&pre, &ops)?;
    random_crop(&aug, cfg.train_crop, rng)
}

/// Deterministic order in which training examples are visited: a fresh
/// seeded permutation per epoch.
#[derive(Debug, Clone)]
pub struct Sampler {
    seed: u64,
    n: usize,
    epoch: Option<(usize, Vec<usize>)>,
}

impl Sampler {
    pub fn new(seed: u64, n: usize) -> Self {
        Self { seed, n, epoch: None }
    }

    /// Dataset index of the `global`-th example drawn.
    pub fn index(&mut self, global: usize) -> usize {
        let epoch = global / self.n;
        if self.epoch.as_ref().map(|e| e.0) != Some(epoch) {
            let mut perm: Vec<usize> = (0..self.n).collect();
            perm.shuffle(&mut stream_for(self.seed, Domain::Shuffle, epoch as u64));
            self.epoch = Some((epoch, perm));
        }
        self.epoch.as_ref().expect("just set").1[global % self.n]
    }
}

/// Progress report passed to the observer after every logging window.
#[derive(Debug, Clone, Copy)]
pub struct Progress {
    pub iteration: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: Model<T>,
    pub curve: LossCurve,
}

/// Runs `cfg.iterations` Adam steps on `set`.
///
/// Examples in a batch are prepared and differentiated independently, possibly
/// on several workers; their gradients are summed in batch order, so the
/// parameter trajectory is the same for every worker count.
pub fn train<T: Scalar>(
    set: &TrainSet,
    cfg: &TrainConfig,
    workers: usize,
    checkpoint_dir: Option<&Path>,
    mut observe: impl FnMut(Progress),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    set.check_classes()?;
    if cfg.model.num_classes != set.num_classes {
        return Err(Error::InvalidParam(format!(
            "model predicts {} classes, training set has {}",
            cfg.model.num_classes, set.num_classes
        )));
    }
    let mut model = Model::<T>::new(cfg.model.clone(), cfg.seed)?;
    let mut adam = Adam::new(model.params(), cfg.learning_rate);
    let mut sampler = Sampler::new(cfg.seed, set.len());
    let mut curve = LossCurve::default();
    let mut window = 0.0f64;
    let inv_batch = T::from_f64(1.0 / cfg.batch_size as f64);

    for it in 0..cfg.iterations {
        let picks: Vec<(usize, usize)> = (0..cfg.batch_size)
            .map(|j| {
                let global = it * cfg.batch_size + j;
                (global, sampler.index(global))
            })
            .collect();
        let results = par::map_indexed(&picks, workers, |_, &(global, idx)| {
            let mut rng = stream_for(cfg.seed, Domain::Example, global as u64);
            let patch = make_training_example(&set.images[idx], cfg, &mut rng)?;
            let x = batch_tensor::<T>(std::slice::from_ref(&patch))?;
            model.loss_and_grads(&x, &[set.labels[idx]], cfg.loss)
        });
        let mut loss = 0.0;
        let mut grads: Option<Vec<Tensor<T>>> = None;
        for r in results {
            let (l, g) = r?;
            loss += l.as_f64();
            match grads.as_mut() {
                None => grads = Some(g),
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(&g) {
                        a.add_assign(g)?;
                    }
                }
            }
        }
        let mut grads = grads.expect("batch_size >= 1");
        for g in &mut grads {
            for v in g.data_mut() {
                *v = *v * inv_batch;
            }
        }
        adam.lr = cfg.learning_rate_at(it);
        adam.step(model.params_mut(), &grads).map_err(|e| match e {
            Error::NonFiniteGradient(what) => Error::NonFiniteGradient(format!("iteration {}: {what}", it + 1)),
            other => other,
        })?;

        window += loss / cfg.batch_size as f64;
        let done = it + 1;
        if done % cfg.log_every == 0 {
            let mean = window / cfg.log_every as f64;
            curve.points.push((done, mean));
            observe(Progress {
                iteration: done,
                loss: mean,
            });
            window = 0.0;
        }
        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
                save_checkpoint(&model, dir.join(format!("checkpoint_{done:06}.cmid")))?;
            }
        }
    }
    Ok(TrainOutcome { model, curve })
}
