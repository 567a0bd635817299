//! Corpus curation, manifests, train/validation splitting and construction of
//! the altered/unaltered evaluation set.

pub mod jpegmeta;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{apply_ops, AugmentOp};
use crate::error::{Error, Result};
use crate::image::{center_crop, ImageU8};
use crate::io::{create_dir_all, write_atomic};
use crate::par;
use crate::rng::{stream_for, Domain};

pub use jpegmeta::{estimate_jpeg_quality, read_exif_software};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Eval,
}

/// One curated image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub schema_version: u32,
    pub path: PathBuf,
    pub class_id: usize,
    pub class_name: String,
    pub split: Split,
    pub altered: bool,
    pub manipulation: Option<AugmentOp>,
    pub width: u32,
    pub height: u32,
    pub exif_software: Option<String>,
    pub jpeg_quality: Option<u8>,
}

impl ManifestRecord {
    pub fn new(path: impl Into<PathBuf>, class_id: usize, class_name: impl Into<String>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            path: path.into(),
            class_id,
            class_name: class_name.into(),
            split: Split::Train,
            altered: false,
            manipulation: None,
            width: 0,
            height: 0,
            exif_software: None,
            jpeg_quality: None,
        }
    }

    pub fn load_image(&self) -> Result<ImageU8> {
        ImageU8::load(&self.path)
    }
}

/// Parses one manifest line. Unknown fields are ignored.
pub fn parse_record(line: &str) -> Result<ManifestRecord> {
    let rec: ManifestRecord = serde_json::from_str(line)?;
    if rec.schema_version != SCHEMA_VERSION {
        return Err(Error::Format(format!(
            "unsupported manifest schema_version {}",
            rec.schema_version
        )));
    }
    if rec.altered && rec.split == Split::Eval && rec.manipulation.is_none() {
        return Err(Error::Format(format!(
            "{}: altered eval record without manipulation",
            rec.path.display()
        )));
    }
    Ok(rec)
}

pub fn manifest_to_string(records: &[ManifestRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn manifest_from_str(text: &str) -> Result<Vec<ManifestRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_record(l).map_err(|e| Error::Format(format!("manifest line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[ManifestRecord]) -> Result<()> {
    write_atomic(path, manifest_to_string(records)?.as_bytes())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    manifest_from_str(&text)
}

/// Number of classes implied by a manifest (max class id + 1).
pub fn class_count(records: &[ManifestRecord]) -> usize {
    records.iter().map(|r| r.class_id + 1).max().unwrap_or(0)
}

/// Filtering rules applied by [`curate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurationRules {
    /// Case-insensitive substrings of the EXIF `Software` tag that reject a file.
    pub software_blacklist: Vec<String>,
    pub min_jpeg_quality: u8,
    /// Allowed `(width, height)` per class name; either orientation matches.
    /// An empty map disables the dimension rule.
    pub dimension_whitelist: BTreeMap<String, Vec<(u32, u32)>>,
}

impl Default for CurationRules {
    fn default() -> Self {
        Self {
            software_blacklist: vec!["photoshop".into(), "lightroom".into()],
            min_jpeg_quality: 95,
            dimension_whitelist: BTreeMap::new(),
        }
    }
}

impl CurationRules {
    pub fn validate(&self, classes: &[String]) -> Result<()> {
        if !(1..=100).contains(&self.min_jpeg_quality) {
            return Err(Error::InvalidParam(format!(
                "min_jpeg_quality {} outside [1, 100]",
                self.min_jpeg_quality
            )));
        }
        if !self.dimension_whitelist.is_empty() {
            for class in classes {
                if self.dimension_whitelist.get(class).is_none_or(|v| v.is_empty()) {
                    return Err(Error::InvalidParam(format!(
                        "dimension whitelist has no entries for class `{class}`"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Unreadable,
    SoftwareBlacklist,
    NotJpeg,
    LowQuality,
    Dimensions,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::Unreadable => "unreadable",
            RejectReason::SoftwareBlacklist => "software_blacklist",
            RejectReason::NotJpeg => "not_jpeg",
            RejectReason::LowQuality => "low_quality",
            RejectReason::Dimensions => "dimensions",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    Kept,
    Rejected(RejectReason),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterReport {
    pub decisions: Vec<(PathBuf, Decision)>,
    pub kept: usize,
    pub rejected: BTreeMap<RejectReason, usize>,
}

impl FilterReport {
    pub fn scanned(&self) -> usize {
        self.decisions.len()
    }

    fn push(&mut self, path: PathBuf, decision: Decision) {
        match decision {
            Decision::Kept => self.kept += 1,
            Decision::Rejected(r) => *self.rejected.entry(r).or_default() += 1,
        }
        self.decisions.push((path, decision));
    }

    pub fn summary(&self) -> String {
        let mut s = format!("scanned={} kept={}", self.scanned(), self.kept);
        for (reason, n) in &self.rejected {
            s.push_str(&format!(" {reason}={n}"));
        }
        s
    }
}

fn inspect(
    path: &Path,
    class_id: usize,
    class_name: &str,
    rules: &CurationRules,
) -> std::result::Result<ManifestRecord, RejectReason> {
    let bytes = fs::read(path).map_err(|_| RejectReason::Unreadable)?;
    if !bytes.starts_with(&[0xFF, 0xD8]) {
        return Err(RejectReason::NotJpeg);
    }
    let software = read_exif_software(&bytes).map_err(|_| RejectReason::Unreadable)?;
    if let Some(sw) = &software {
        let lower = sw.to_lowercase();
        if rules
            .software_blacklist
            .iter()
            .any(|b| lower.contains(&b.to_lowercase()))
        {
            return Err(RejectReason::SoftwareBlacklist);
        }
    }
    let quality = estimate_jpeg_quality(&bytes).map_err(|_| RejectReason::Unreadable)?;
    if quality < rules.min_jpeg_quality {
        return Err(RejectReason::LowQuality);
    }
    let (w, h) = jpegmeta::frame_dimensions(&bytes).map_err(|_| RejectReason::Unreadable)?;
    if !rules.dimension_whitelist.is_empty() {
        let allowed = rules
            .dimension_whitelist
            .get(class_name)
            .map(Vec::as_slice)
            .unwrap_or_default();
        if !allowed.iter().any(|&d| d == (w, h) || d == (h, w)) {
            return Err(RejectReason::Dimensions);
        }
    }
    let mut rec = ManifestRecord::new(path, class_id, class_name);
    rec.width = w;
    rec.height = h;
    rec.exif_software = software;
    rec.jpeg_quality = Some(quality);
    Ok(rec)
}

fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Scans `root/<class>/` for every class in `classes` and applies `rules`.
///
/// Rules run in the order software, quality, dimensions; a rejected file
/// carries the first failing rule. Unreadable files are rejected, never fatal.
pub fn curate(
    root: impl AsRef<Path>,
    rules: &CurationRules,
    classes: &[String],
    workers: usize,
) -> Result<(Vec<ManifestRecord>, FilterReport)> {
    rules.validate(classes)?;
    let root = root.as_ref();
    let mut jobs = Vec::new();
    for (class_id, name) in classes.iter().enumerate() {
        let dir = root.join(name);
        if !dir.is_dir() {
            return Err(Error::io(
                &dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "missing class directory"),
            ));
        }
        for path in list_files(&dir)? {
            jobs.push((path, class_id));
        }
    }
    let outcomes = par::map_indexed(&jobs, workers, |_, (path, class_id)| {
        inspect(path, *class_id, &classes[*class_id], rules)
    });
    let mut records = Vec::new();
    let mut report = FilterReport::default();
    for ((path, _), outcome) in jobs.into_iter().zip(outcomes) {
        match outcome {
            Ok(rec) => {
                records.push(rec);
                report.push(path, Decision::Kept);
            }
            Err(reason) => report.push(path, Decision::Rejected(reason)),
        }
    }
    Ok((records, report))
}

/// Class names from the sorted subdirectory names of `root`.
pub fn discover_classes(root: impl AsRef<Path>) -> Result<Vec<String>> {
    let root = root.as_ref();
    let mut names = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        if entry.path().is_dir() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

/// Assigns exactly `val_per_class` records of each class to validation by a
/// seeded shuffle; the rest become training records.
pub fn split(
    records: &[ManifestRecord],
    val_per_class: usize,
    seed: u64,
) -> Result<Vec<ManifestRecord>> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_class.entry(r.class_id).or_default().push(i);
    }
    let mut out = records.to_vec();
    for r in &mut out {
        r.split = Split::Train;
    }
    for (class_id, mut idx) in by_class {
        if idx.len() < val_per_class {
            return Err(Error::InsufficientData {
                class: records[idx[0]].class_name.clone(),
                available: idx.len(),
                required: val_per_class,
            });
        }
        idx.shuffle(&mut stream_for(seed, Domain::Split, class_id as u64));
        for &i in &idx[..val_per_class] {
            out[i].split = Split::Val;
        }
    }
    Ok(out)
}

/// Manipulation grids for altered evaluation images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalGrids {
    pub gamma: Vec<f64>,
    pub jpeg: Vec<u8>,
    pub scale: Vec<f64>,
    pub contrast: Vec<f64>,
}

impl Default for EvalGrids {
    fn default() -> Self {
        Self {
            gamma: vec![0.8, 1.2],
            jpeg: vec![70, 90],
            scale: vec![0.5, 0.8, 1.5, 2.0],
            contrast: vec![0.8, 1.2],
        }
    }
}

impl EvalGrids {
    /// One manipulation: family uniform over the four, parameter uniform over its grid.
    pub fn sample(&self, rng: &mut impl Rng) -> AugmentOp {
        fn pick<T: Copy>(grid: &[T], rng: &mut impl Rng) -> T {
            grid[rng.gen_range(0..grid.len())]
        }
        match rng.gen_range(0..4) {
            0 => AugmentOp::Gamma(pick(&self.gamma, rng)),
            1 => AugmentOp::Jpeg(pick(&self.jpeg, rng)),
            2 => AugmentOp::Scale(pick(&self.scale, rng)),
            _ => AugmentOp::Contrast(pick(&self.contrast, rng)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma.is_empty()
            || self.jpeg.is_empty()
            || self.scale.is_empty()
            || self.contrast.is_empty()
        {
            return Err(Error::InvalidParam("eval grids must be non-empty".into()));
        }
        let ops = self
            .gamma
            .iter()
            .map(|&v| AugmentOp::Gamma(v))
            .chain(self.jpeg.iter().map(|&v| AugmentOp::Jpeg(v)))
            .chain(self.scale.iter().map(|&v| AugmentOp::Scale(v)))
            .chain(self.contrast.iter().map(|&v| AugmentOp::Contrast(v)));
        for op in ops {
            op.validate()?;
        }
        Ok(())
    }
}

/// Outcome of [`build_eval_set`].
#[derive(Debug, Default)]
pub struct EvalSetReport {
    pub records: Vec<ManifestRecord>,
    pub skipped: Vec<(PathBuf, String)>,
}

impl EvalSetReport {
    pub fn altered(&self) -> usize {
        self.records.iter().filter(|r| r.altered).count()
    }
}

/// Center-crops every source image to `crop`, alters a seeded half with one
/// manipulation from `grids`, and writes PNGs into `out_dir`.
pub fn build_eval_set(
    records: &[ManifestRecord],
    seed: u64,
    out_dir: impl AsRef<Path>,
    crop: usize,
    grids: &EvalGrids,
    workers: usize,
) -> Result<EvalSetReport> {
    grids.validate()?;
    let out_dir = out_dir.as_ref();
    create_dir_all(out_dir)?;
    let results = par::map_indexed(records, workers, |i, rec| -> Result<ManifestRecord> {
        let img = center_crop(&rec.load_image()?, crop)?;
        let mut rng = stream_for(seed, Domain::EvalSet, i as u64);
        let altered = rng.gen_bool(0.5);
        let manipulation = altered.then(|| grids.sample(&mut rng));
        let img = match manipulation {
            Some(op) => apply_ops(&img, &[op])?,
            None => img,
        };
        let stem = rec
            .path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let path = out_dir.join(format!("{i:06}_{stem}.png"));
        img.save_png(&path)?;
        let mut out = rec.clone();
        out.path = path;
        out.split = Split::Eval;
        out.altered = altered;
        out.manipulation = manipulation;
        out.width = img.width() as u32;
        out.height = img.height() as u32;
        Ok(out)
    });
    let mut report = EvalSetReport::default();
    for (rec, res) in records.iter().zip(results) {
        match res {
            Ok(r) => report.records.push(r),
            Err(e) => report.skipped.push((rec.path.clone(), e.to_string())),
        }
    }
    Ok(report)
}
