//! Pixel-level manipulations used for training augmentation and for building
//! altered evaluation images.
//!
//! Every float to `u8` conversion rounds half to even.

use std::fmt;

use jpeg_encoder::{ColorType, Encoder, QuantizationTableType, SamplingFactor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{d4_apply, ImageU8, D4};

/// A single parameterized manipulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentOp {
    Dihedral(D4),
    Gamma(f64),
    Jpeg(u8),
    Scale(f64),
    Contrast(f64),
}

impl AugmentOp {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            AugmentOp::Dihedral(_) => true,
            AugmentOp::Gamma(g) => g > 0.0 && g.is_finite(),
            AugmentOp::Jpeg(q) => (1..=100).contains(&q),
            AugmentOp::Scale(f) => f > 0.0 && f.is_finite(),
            AugmentOp::Contrast(c) => c > 0.0 && c.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParam(format!("{self} is out of range")))
        }
    }

    pub fn apply(&self, img: &ImageU8) -> Result<ImageU8> {
        match *self {
            AugmentOp::Dihedral(g) => Ok(d4_apply(img, g)),
            AugmentOp::Gamma(g) => apply_gamma(img, g),
            AugmentOp::Jpeg(q) => apply_jpeg(img, q),
            AugmentOp::Scale(f) => apply_scale(img, f),
            AugmentOp::Contrast(c) => apply_contrast(img, c),
        }
    }
}

impl fmt::Display for AugmentOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AugmentOp::Dihedral(g) => write!(f, "dihedral={g}"),
            AugmentOp::Gamma(v) => write!(f, "gamma={v}"),
            AugmentOp::Jpeg(q) => write!(f, "jpeg={q}"),
            AugmentOp::Scale(v) => write!(f, "scale={v}"),
            AugmentOp::Contrast(v) => write!(f, "contrast={v}"),
        }
    }
}

/// Training-time sampling policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentPolicy {
    pub gamma_range: [f64; 2],
    pub jpeg_range: [u8; 2],
    pub scale_range: [f64; 2],
    /// Probability that each of gamma, JPEG and scale is included.
    pub probability: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            gamma_range: [0.8, 1.2],
            jpeg_range: [70, 90],
            scale_range: [0.5, 2.0],
            probability: 0.5,
        }
    }
}

impl AugmentPolicy {
    /// Policy that only ever applies a dihedral element.
    pub fn dihedral_only() -> Self {
        Self {
            probability: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [g0, g1] = self.gamma_range;
        let [q0, q1] = self.jpeg_range;
        let [s0, s1] = self.scale_range;
        let ok = g0 > 0.0
            && g0 < g1
            && g1.is_finite()
            && q0 >= 1
            && q0 < q1
            && q1 <= 100
            && s0 > 0.0
            && s0 < s1
            && s1.is_finite()
            && (0.0..=1.0).contains(&self.probability);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParam(format!("invalid augment policy {self:?}")))
        }
    }
}

pub(crate) fn round_u8(v: f64) -> u8 {
    v.round_ties_even().clamp(0.0, 255.0) as u8
}

fn gamma_lut(gamma: f64) -> [u8; 256] {
    let mut lut = [0u8; 256];
    for (p, out) in lut.iter_mut().enumerate() {
        *out = round_u8(255.0 * (p as f64 / 255.0).powf(gamma));
    }
    lut
}

/// `out = round(255 * (p / 255)^gamma)` per sample.
pub fn apply_gamma(img: &ImageU8, gamma: f64) -> Result<ImageU8> {
    AugmentOp::Gamma(gamma).validate()?;
    let lut = gamma_lut(gamma);
    Ok(img.map_samples(|p| lut[p as usize]))
}

/// Linear stretch about mid-gray: `out = clamp(round((p - 127.5) c + 127.5))`.
pub fn apply_contrast(img: &ImageU8, c: f64) -> Result<ImageU8> {
    AugmentOp::Contrast(c).validate()?;
    let mut lut = [0u8; 256];
    for (p, out) in lut.iter_mut().enumerate() {
        *out = round_u8((p as f64 - 127.5) * c + 127.5);
    }
    Ok(img.map_samples(|p| lut[p as usize]))
}

/// Output dimensions of a resize by `f`.
pub fn scaled_dims(height: usize, width: usize, f: f64) -> (usize, usize) {
    (
        (f * height as f64).round_ties_even() as usize,
        (f * width as f64).round_ties_even() as usize,
    )
}

/// Bilinear resize with half-pixel-centered sampling and edge clamping.
pub fn apply_scale(img: &ImageU8, f: f64) -> Result<ImageU8> {
    AugmentOp::Scale(f).validate()?;
    let (h, w) = (img.height(), img.width());
    let (oh, ow) = scaled_dims(h, w, f);
    if oh == 0 || ow == 0 {
        return Err(Error::InvalidParam(format!(
            "scale {f} maps {h}x{w} to an empty image"
        )));
    }
    if (oh, ow) == (h, w) {
        return Ok(img.clone());
    }
    let taps = |out_len: usize, in_len: usize| -> Vec<(usize, usize, f64)> {
        let ratio = in_len as f64 / out_len as f64;
        (0..out_len)
            .map(|i| {
                let s = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (in_len - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(in_len - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let rows = taps(oh, h);
    let cols = taps(ow, w);
    let src = img.data();
    let at = |y: usize, x: usize, c: usize| src[(y * w + x) * 3 + c] as f64;
    let mut data = Vec::with_capacity(oh * ow * 3);
    for &(y0, y1, wy) in &rows {
        for &(x0, x1, wx) in &cols {
            for c in 0..3 {
                let top = at(y0, x0, c) * (1.0 - wx) + at(y0, x1, c) * wx;
                let bottom = at(y1, x0, c) * (1.0 - wx) + at(y1, x1, c) * wx;
                data.push(round_u8(top * (1.0 - wy) + bottom * wy));
            }
        }
    }
    ImageU8::new(oh, ow, data)
}

/// Baseline JPEG encoding: 4:2:0 chroma, Annex K tables scaled by the usual
/// quality mapping. `app1` is written verbatim as an APP1 payload.
pub fn encode_jpeg(img: &ImageU8, quality: u8, app1: Option<&[u8]>) -> Result<Vec<u8>> {
    AugmentOp::Jpeg(quality).validate()?;
    let (w, h) = (img.width(), img.height());
    let (w16, h16) = match (u16::try_from(w), u16::try_from(h)) {
        (Ok(w), Ok(h)) => (w, h),
        _ => {
            return Err(Error::InvalidParam(format!(
                "{h}x{w} exceeds JPEG dimension limits"
            )))
        }
    };
    let mut out = Vec::new();
    let mut enc = Encoder::new(&mut out, quality);
    enc.set_sampling_factor(SamplingFactor::R_4_2_0);
    enc.set_quantization_tables(QuantizationTableType::Default, QuantizationTableType::Default);
    if let Some(payload) = app1 {
        enc.add_app_segment(1, payload.to_vec())
            .map_err(|e| Error::Codec(e.to_string()))?;
    }
    enc.encode(img.data(), w16, h16, ColorType::Rgb)
        .map_err(|e| Error::Codec(e.to_string()))?;
    Ok(out)
}

/// JPEG round trip at `quality`.
pub fn apply_jpeg(img: &ImageU8, quality: u8) -> Result<ImageU8> {
    let bytes = encode_jpeg(img, quality, None)?;
    ImageU8::decode(&bytes)
}

/// Draws the augmentation chain for one training example.
///
/// A dihedral element is always drawn; scale, gamma and JPEG are each included
/// with `policy.probability`. The returned order is the application order.
pub fn sample_train_augs(policy: &AugmentPolicy, rng: &mut impl Rng) -> Vec<AugmentOp> {
    let mut ops = Vec::with_capacity(4);
    ops.push(AugmentOp::Dihedral(D4::ALL[rng.gen_range(0..8)]));
    if rng.gen_bool(policy.probability) {
        let [lo, hi] = policy.scale_range;
        ops.push(AugmentOp::Scale(rng.gen_range(lo..=hi)));
    }
    if rng.gen_bool(policy.probability) {
        let [lo, hi] = policy.gamma_range;
        ops.push(AugmentOp::Gamma(rng.gen_range(lo..=hi)));
    }
    if rng.gen_bool(policy.probability) {
        let [lo, hi] = policy.jpeg_range;
        ops.push(AugmentOp::Jpeg(rng.gen_range(lo..=hi)));
    }
    ops
}

/// Applies `ops` left to right.
pub fn apply_ops(img: &ImageU8, ops: &[AugmentOp]) -> Result<ImageU8> {
    let mut out = img.clone();
    for op in ops {
        out = op.apply(&out)?;
    }
    Ok(out)
}

/// Peak signal-to-noise ratio in dB between equally sized images.
pub fn psnr(a: &ImageU8, b: &ImageU8) -> Result<f64> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::ShapeMismatch(format!("{a:?} vs {b:?}")));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / a.data().len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0f64 * 255.0 / mse).log10()
    })
}
