//! 8-bit RGB rasters, the dihedral group D4, and the cropping primitives shared
//! by training and test-time augmentation.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interleaved row-major RGB raster.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageU8 {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl fmt::Debug for ImageU8 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImageU8")
            .field("height", &self.height)
            .field("width", &self.width)
            .finish_non_exhaustive()
    }
}

impl ImageU8 {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidParam(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width * Self::CHANNELS {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width} RGB image needs {} samples, got {}",
                height * width * Self::CHANNELS,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Image with every sample set to `value`.
    pub fn filled(height: usize, width: usize, value: u8) -> Result<Self> {
        Self::new(height, width, vec![value; height * width * Self::CHANNELS])
    }

    /// Builds an image from a per-pixel function of `(row, col)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * Self::CHANNELS);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * Self::CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Applies `f` to every sample.
    pub fn map_samples(&self, f: impl Fn(u8) -> u8) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&p| f(p)).collect(),
        }
    }

    /// Decodes PNG or JPEG bytes. Grayscale sources are expanded to three
    /// identical channels and alpha is dropped.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let decoded = image::load_from_memory(bytes).map_err(|e| Error::Codec(e.to_string()))?;
        let rgb = decoded.to_rgb8();
        let (w, h) = rgb.dimensions();
        Self::new(h as usize, w as usize, rgb.into_raw())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        use image::ImageEncoder;
        let mut out = Vec::new();
        image::codecs::png::PngEncoder::new(&mut out)
            .write_image(
                &self.data,
                self.width as u32,
                self.height as u32,
                image::ExtendedColorType::Rgb8,
            )
            .map_err(|e| Error::Codec(e.to_string()))?;
        Ok(out)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_atomic(path, &self.encode_png()?)
    }
}

/// The eight symmetries of the square.
///
/// Rotations are clockwise. `FH` mirrors left-right, `FV` top-bottom, `D1`
/// transposes across the main diagonal and `D2` across the anti-diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum D4 {
    E,
    R90,
    R180,
    R270,
    FH,
    FV,
    D1,
    D2,
}

impl D4 {
    /// Fixed enumeration order used by TTA.
    pub const ALL: [D4; 8] = [
        D4::E,
        D4::R90,
        D4::R180,
        D4::R270,
        D4::FH,
        D4::FV,
        D4::D1,
        D4::D2,
    ];

    /// Signed permutation matrix taking centered input `(row, col)` to centered
    /// output `(row, col)`.
    const fn matrix(self) -> [[i8; 2]; 2] {
        match self {
            D4::E => [[1, 0], [0, 1]],
            D4::R90 => [[0, 1], [-1, 0]],
            D4::R180 => [[-1, 0], [0, -1]],
            D4::R270 => [[0, -1], [1, 0]],
            D4::FH => [[1, 0], [0, -1]],
            D4::FV => [[-1, 0], [0, 1]],
            D4::D1 => [[0, 1], [1, 0]],
            D4::D2 => [[0, -1], [-1, 0]],
        }
    }

    fn from_matrix(m: [[i8; 2]; 2]) -> D4 {
        *D4::ALL
            .iter()
            .find(|g| g.matrix() == m)
            .expect("D4 is closed under composition")
    }

    /// `a.compose(b)` applies `b` first, then `self`.
    pub fn compose(self, b: D4) -> D4 {
        let (x, y) = (self.matrix(), b.matrix());
        let mut m = [[0i8; 2]; 2];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = x[i][0] * y[0][j] + x[i][1] * y[1][j];
            }
        }
        D4::from_matrix(m)
    }

    pub fn inverse(self) -> D4 {
        let m = self.matrix();
        D4::from_matrix([[m[0][0], m[1][0]], [m[0][1], m[1][1]]])
    }

    /// Whether the transform exchanges height and width.
    pub fn swaps_axes(self) -> bool {
        self.matrix()[0][0] == 0
    }

    /// Maps an input pixel `(row, col)` of an `h x w` image to its output position.
    pub fn map_point(self, row: usize, col: usize, h: usize, w: usize) -> (usize, usize) {
        let m = self.matrix();
        let (oh, ow) = if self.swaps_axes() { (w, h) } else { (h, w) };
        // doubled centered coordinates keep everything integral
        let y = 2 * row as i64 - (h as i64 - 1);
        let x = 2 * col as i64 - (w as i64 - 1);
        let oy = m[0][0] as i64 * y + m[0][1] as i64 * x;
        let ox = m[1][0] as i64 * y + m[1][1] as i64 * x;
        (
            ((oy + oh as i64 - 1) / 2) as usize,
            ((ox + ow as i64 - 1) / 2) as usize,
        )
    }
}

impl fmt::Display for D4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for D4 {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        D4::ALL
            .iter()
            .copied()
            .find(|g| g.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidParam(format!("unknown D4 element `{s}`")))
    }
}

/// Applies a dihedral transform. Lossless; R90/R270/D1/D2 swap the dimensions.
pub fn d4_apply(img: &ImageU8, g: D4) -> ImageU8 {
    if g == D4::E {
        return img.clone();
    }
    let (h, w) = (img.height, img.width);
    let (oh, ow) = if g.swaps_axes() { (w, h) } else { (h, w) };
    let mut data = vec![0u8; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            let (oy, ox) = g.map_point(y, x, h, w);
            let src = (y * w + x) * 3;
            let dst = (oy * ow + ox) * 3;
            data[dst..dst + 3].copy_from_slice(&img.data[src..src + 3]);
        }
    }
    ImageU8 {
        height: oh,
        width: ow,
        data,
    }
}

/// Applies `b` then `a`; see [`D4::compose`].
pub fn d4_compose(a: D4, b: D4) -> D4 {
    a.compose(b)
}

/// Square patch location.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchSpec {
    pub origin_row: usize,
    pub origin_col: usize,
    pub size: usize,
}

impl PatchSpec {
    pub fn new(origin_row: usize, origin_col: usize, size: usize) -> Self {
        Self {
            origin_row,
            origin_col,
            size,
        }
    }
}

pub fn crop(img: &ImageU8, spec: PatchSpec) -> Result<ImageU8> {
    let PatchSpec {
        origin_row,
        origin_col,
        size,
    } = spec;
    if size == 0 || origin_row + size > img.height || origin_col + size > img.width {
        return Err(Error::OutOfBounds {
            origin_row,
            origin_col,
            size,
            height: img.height,
            width: img.width,
        });
    }
    let row_len = size * 3;
    let mut data = Vec::with_capacity(size * row_len);
    for y in origin_row..origin_row + size {
        let start = (y * img.width + origin_col) * 3;
        data.extend_from_slice(&img.data[start..start + row_len]);
    }
    Ok(ImageU8 {
        height: size,
        width: size,
        data,
    })
}

fn ensure_fits(img: &ImageU8, size: usize) -> Result<()> {
    if size == 0 {
        return Err(Error::InvalidParam("crop size must be positive".into()));
    }
    if img.height < size || img.width < size {
        return Err(Error::TooSmall {
            height: img.height,
            width: img.width,
            size,
        });
    }
    Ok(())
}

/// Center patch with floor-divided origin.
pub fn center_spec(height: usize, width: usize, size: usize) -> PatchSpec {
    PatchSpec::new((height - size) / 2, (width - size) / 2, size)
}

pub fn center_crop(img: &ImageU8, size: usize) -> Result<ImageU8> {
    ensure_fits(img, size)?;
    crop(img, center_spec(img.height, img.width, size))
}

/// TTA crop origins in the fixed order top-left, top-right, bottom-left,
/// bottom-right, center.
pub fn tta_specs(height: usize, width: usize, size: usize) -> [PatchSpec; 5] {
    let (dr, dc) = (height - size, width - size);
    [
        PatchSpec::new(0, 0, size),
        PatchSpec::new(0, dc, size),
        PatchSpec::new(dr, 0, size),
        PatchSpec::new(dr, dc, size),
        center_spec(height, width, size),
    ]
}

/// The five TTA crops (TL, TR, BL, BR, C).
pub fn tta_crops(img: &ImageU8, size: usize) -> Result<Vec<ImageU8>> {
    ensure_fits(img, size)?;
    tta_specs(img.height, img.width, size)
        .iter()
        .map(|&s| crop(img, s))
        .collect()
}

/// Draws a uniformly placed square patch location.
pub fn random_spec(height: usize, width: usize, size: usize, rng: &mut impl Rng) -> PatchSpec {
    let r = rng.gen_range(0..=height - size);
    let c = rng.gen_range(0..=width - size);
    PatchSpec::new(r, c, size)
}

pub fn random_crop(img: &ImageU8, size: usize, rng: &mut impl Rng) -> Result<ImageU8> {
    ensure_fits(img, size)?;
    crop(img, random_spec(img.height, img.width, size, rng))
}
