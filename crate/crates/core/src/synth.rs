//! Synthetic "camera trace" corpus.
//!
//! Each scene is a procedurally drawn, mostly smooth RGB image. Every class
//! renders the same scenes through its own fixed 3×3 per-channel filter and adds
//! noise with a class-specific texture: a spatially correlated field whose
//! mixing across the R, G and B channels differs per class. The class is only
//! recoverable from these low-level traces, never from content.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ManifestRecord, Split};
use crate::error::{Error, Result};
use crate::image::ImageU8;
use crate::io::create_dir_all;
use crate::par;
use crate::rng::{stream_for, Domain, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Square image side.
    pub size: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    /// Standard deviation of the class noise, in 8-bit levels.
    pub noise_sigma: f64,
    /// Weight of the class filter against the identity, in `[0, 1]`.
    pub filter_strength: f64,
    /// Grain components summed into each noise field, given as binomial blur
    /// passes applied to white noise. Coarser components survive resampling.
    pub noise_scales: Vec<usize>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            size: 128,
            train_per_class: 100,
            val_per_class: 20,
            noise_sigma: 30.0,
            filter_strength: 1.0,
            noise_scales: vec![1, 2, 6],
            seed: 0,
        }
    }
}

pub const NUM_CLASSES: usize = 3;
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["cam_a", "cam_b", "cam_c"];

type Kernel = [[f64; 3]; 3];

const IDENTITY: Kernel = [[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]];
const BINOMIAL: Kernel = [
    [1.0 / 16.0, 2.0 / 16.0, 1.0 / 16.0],
    [2.0 / 16.0, 4.0 / 16.0, 2.0 / 16.0],
    [1.0 / 16.0, 2.0 / 16.0, 1.0 / 16.0],
];
const CROSS: Kernel = [[0.0, 0.25, 0.0], [0.25, 0.0, 0.25], [0.0, 0.25, 0.0]];
const SHARPEN: Kernel = [[0.0, -0.25, 0.0], [-0.25, 2.0, -0.25], [0.0, -0.25, 0.0]];

/// Per-channel reconstruction kernels, loosely modelled on demosaicing:
/// interpolated channels are smoothed, native ones kept or sharpened.
fn class_filters(class: usize) -> [Kernel; 3] {
    match class {
        0 => [BINOMIAL, IDENTITY, BINOMIAL],
        1 => [IDENTITY, CROSS, IDENTITY],
        _ => [SHARPEN, SHARPEN, SHARPEN],
    }
}

/// How one unit of each of three independent noise fields enters R, G and B.
fn class_noise_mix(class: usize) -> [[f64; 3]; 3] {
    match class {
        // luminance grain
        0 => [[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
        // red/blue opponent grain
        1 => [[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]],
        // independent per-channel grain
        _ => [[0.8, 0.0, 0.0], [0.0, 0.8, 0.0], [0.0, 0.0, 0.8]],
    }
}

/// Planar float scene in `[0, 255]`: background gradient, soft shapes and
/// low-frequency value noise.
pub fn scene(size: usize, rng: &mut Stream) -> Vec<[f64; 3]> {
    let n = size as f64;
    let base: [f64; 3] = [rng.gen_range(60.0..190.0), rng.gen_range(60.0..190.0), rng.gen_range(60.0..190.0)];
    let grad: [[f64; 2]; 3] = std::array::from_fn(|_| [rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0)]);
    let mut img: Vec<[f64; 3]> = (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as f64 / n - 0.5, (i % size) as f64 / n - 0.5);
            std::array::from_fn(|c| base[c] + grad[c][0] * y + grad[c][1] * x)
        })
        .collect();

    // soft ellipses
    for _ in 0..rng.gen_range(3..7) {
        let (cy, cx) = (rng.gen_range(0.0..n), rng.gen_range(0.0..n));
        let (ry, rx) = (rng.gen_range(0.08..0.35) * n, rng.gen_range(0.08..0.35) * n);
        let color: [f64; 3] = std::array::from_fn(|_| rng.gen_range(40.0..215.0));
        let alpha = rng.gen_range(0.4..0.9);
        for (i, px) in img.iter_mut().enumerate() {
            let (y, x) = ((i / size) as f64, (i % size) as f64);
            let d = ((y - cy) / ry).powi(2) + ((x - cx) / rx).powi(2);
            // smooth step over the rim
            let t = (1.0 - ((d - 0.8) / 0.4).clamp(0.0, 1.0)) * alpha;
            for c in 0..3 {
                px[c] += t * (color[c] - px[c]);
            }
        }
    }

    // value noise on an 8×8 lattice, bilinearly interpolated
    let cells = 8;
    let lattice: Vec<f64> = (0..(cells + 1) * (cells + 1)).map(|_| rng.gen_range(-18.0..18.0)).collect();
    for (i, px) in img.iter_mut().enumerate() {
        let fy = (i / size) as f64 / n * cells as f64;
        let fx = (i % size) as f64 / n * cells as f64;
        let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
        let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
        let at = |y: usize, x: usize| lattice[y * (cells + 1) + x];
        let v = (1.0 - ty) * ((1.0 - tx) * at(y0, x0) + tx * at(y0, x0 + 1))
            + ty * ((1.0 - tx) * at(y0 + 1, x0) + tx * at(y0 + 1, x0 + 1));
        for s in px.iter_mut() {
            *s += v;
        }
    }
    img
}

fn convolve(img: &[[f64; 3]], size: usize, kernels: &[Kernel; 3], strength: f64) -> Vec<[f64; 3]> {
    let clamp = |v: isize| v.clamp(0, size as isize - 1) as usize;
    (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as isize, (i % size) as isize);
            std::array::from_fn(|c| {
                let mut acc = 0.0;
                for (dy, row) in kernels[c].iter().enumerate() {
                    for (dx, &k) in row.iter().enumerate() {
                        acc += k * img[clamp(y + dy as isize - 1) * size + clamp(x + dx as isize - 1)][c];
                    }
                }
                strength * acc + (1.0 - strength) * img[i][c]
            })
        })
        .collect()
}

/// White noise blurred `passes` times with the 3×3 binomial kernel, then
/// standardized.
fn grain(size: usize, passes: usize, rng: &mut Stream) -> Vec<f64> {
    let mut field: Vec<f64> = (0..size * size).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let clamp = |v: isize| v.clamp(0, size as isize - 1) as usize;
    for _ in 0..passes {
        field = (0..size * size)
            .map(|i| {
                let (y, x) = ((i / size) as isize, (i % size) as isize);
                let mut acc = 0.0;
                for (dy, row) in BINOMIAL.iter().enumerate() {
                    for (dx, &k) in row.iter().enumerate() {
                        acc += k * field[clamp(y + dy as isize - 1) * size + clamp(x + dx as isize - 1)];
                    }
                }
                acc
            })
            .collect();
    }
    standardize(field)
}

fn standardize(field: Vec<f64>) -> Vec<f64> {
    let n = field.len() as f64;
    let mean = field.iter().sum::<f64>() / n;
    let sd = (field.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
    field.iter().map(|v| (v - mean) / sd).collect()
}

/// Unit-variance noise field: the standardized sum of one grain per scale.
fn noise_field(size: usize, scales: &[usize], rng: &mut Stream) -> Vec<f64> {
    let mut acc = vec![0.0; size * size];
    for &passes in scales {
        for (a, g) in acc.iter_mut().zip(grain(size, passes, rng)) {
            *a += g;
        }
    }
    standardize(acc)
}

/// Renders `scene` as captured by camera `class`.
pub fn render(scene: &[[f64; 3]], size: usize, class: usize, cfg: &SynthConfig, rng: &mut Stream) -> Result<ImageU8> {
    if class >= NUM_CLASSES {
        return Err(Error::InvalidParam(format!("class {class} >= {NUM_CLASSES}")));
    }
    let filtered = convolve(scene, size, &class_filters(class), cfg.filter_strength);
    let fields: [Vec<f64>; 3] = std::array::from_fn(|_| noise_field(size, &cfg.noise_scales, rng));
    let mix = class_noise_mix(class);
    let mut data = Vec::with_capacity(size * size * 3);
    for (i, px) in filtered.iter().enumerate() {
        for c in 0..3 {
            let noise: f64 = (0..3).map(|f| mix[c][f] * fields[f][i]).sum();
            data.push(crate::augment::round_u8(px[c] + cfg.noise_sigma * noise));
        }
    }
    ImageU8::new(size, size, data)
}

/// One generated image with its label and split.
#[derive(Debug, Clone)]
pub struct SynthImage {
    pub image: ImageU8,
    pub class_id: usize,
    pub split: Split,
    pub scene: usize,
}

/// All images of the corpus. Train scenes come first, then validation scenes;
/// every scene is rendered once per class.
pub fn generate(cfg: &SynthConfig, workers: usize) -> Result<Vec<SynthImage>> {
    if cfg.size < 8 || cfg.train_per_class == 0 || cfg.noise_scales.is_empty() {
        return Err(Error::InvalidParam(format!("degenerate synth config {cfg:?}")));
    }
    let scenes = cfg.train_per_class + cfg.val_per_class;
    let jobs: Vec<(usize, usize)> = (0..scenes).flat_map(|s| (0..NUM_CLASSES).map(move |c| (s, c))).collect();
    par::map_indexed(&jobs, workers, |i, &(s, c)| {
        let base = scene(cfg.size, &mut stream_for(cfg.seed, Domain::Synth, s as u64));
        let mut rng = stream_for(cfg.seed, Domain::Synth, (1 << 32) + i as u64);
        Ok(SynthImage {
            image: render(&base, cfg.size, c, cfg, &mut rng)?,
            class_id: c,
            split: if s < cfg.train_per_class { Split::Train } else { Split::Val },
            scene: s,
        })
    })
    .into_iter()
    .collect()
}

/// Writes the corpus as `root/<class>/<split>_<scene>.png` and returns
/// manifest records with splits assigned.
pub fn write_corpus(cfg: &SynthConfig, root: impl AsRef<Path>, workers: usize) -> Result<Vec<ManifestRecord>> {
    let root = root.as_ref();
    for name in CLASS_NAMES {
        create_dir_all(root.join(name))?;
    }
    let images = generate(cfg, workers)?;
    par::map_indexed(&images, workers, |_, img| {
        let split = match img.split {
            Split::Train => "train",
            Split::Val => "val",
            Split::Eval => "eval",
        };
        let path = root
            .join(CLASS_NAMES[img.class_id])
            .join(format!("{split}_{:04}.png", img.scene));
        img.image.save_png(&path)?;
        let mut r = ManifestRecord::new(path, img.class_id, CLASS_NAMES[img.class_id]);
        r.split = img.split;
        r.width = img.image.width() as u32;
        r.height = img.image.height() as u32;
        Ok(r)
    })
    .into_iter()
    .collect()
}
