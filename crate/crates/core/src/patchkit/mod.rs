//! Tile/mask preprocessing: relevance thresholding, dominant-class labels,
//! per-class stratification and dataset splits, plus a procedural corpus
//! generator.

mod image;
mod manifest;
mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

pub use image::{read_mask, read_rgb, write_mask, write_rgb, RgbImage};
pub use manifest::{read_manifest, write_manifest};
pub use synth::{synth_corpus, write_corpus, SynthTile, TEXTURES};

use crate::error::{Error, Result};

pub const BACKGROUND: u8 = 0;
pub const STROMA: u8 = 1;
pub const SQUAMOUS: u8 = 2;
pub const NDBE: u8 = 3;
pub const LGD: u8 = 4;
pub const HGD: u8 = 5;
/// Class ids that count as annotated tissue.
pub const RELEVANT_CLASSES: [u8; 4] = [SQUAMOUS, NDBE, LGD, HGD];
pub const DEFAULT_THRESHOLD: f64 = 0.5;

pub fn class_name(id: u8) -> &'static str {
    match id {
        BACKGROUND => "background",
        STROMA => "stroma",
        SQUAMOUS => "squamous",
        NDBE => "ndbe",
        LGD => "lgd",
        HGD => "hgd",
        _ => "invalid",
    }
}

/// Integer class mask with values in `0..=5`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskTile {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl MaskTile {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch { expected: width * height, got: pixels.len() });
        }
        if let Some(v) = pixels.iter().find(|&&v| v > HGD) {
            return Err(Error::Domain(format!("mask value {v} outside 0..=5")));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub(crate) fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    fn counts(&self) -> [usize; 6] {
        let mut c = [0; 6];
        for &v in &self.pixels {
            c[v as usize] += 1;
        }
        c
    }
}

/// Fraction of pixels annotated with a relevant class (value ≥ 2).
pub fn relevant_fraction(mask: &MaskTile) -> f64 {
    if mask.pixels.is_empty() {
        return 0.0;
    }
    let n = mask.pixels.iter().filter(|&&v| v >= SQUAMOUS).count();
    n as f64 / mask.pixels.len() as f64
}

/// Most frequent relevant class and its share of all pixels; ties go to the
/// lower class id.
pub fn dominant_label(mask: &MaskTile) -> Result<(u8, f64)> {
    let counts = mask.counts();
    let mut best: Option<(u8, usize)> = None;
    for c in RELEVANT_CLASSES {
        let n = counts[c as usize];
        if n > 0 && best.is_none_or(|(_, b)| n > b) {
            best = Some((c, n));
        }
    }
    let (c, n) = best.ok_or(Error::NoRelevantPixels)?;
    Ok((c, n as f64 / mask.pixels.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}` (expected train, val or test)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchRecord {
    /// Tile path relative to the corpus root.
    pub image: String,
    pub mask: String,
    pub label: u8,
    pub dominance: f64,
    pub relevant_fraction: f64,
    pub source_id: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub records: Vec<PatchRecord>,
    pub class_counts: BTreeMap<u8, usize>,
    pub threshold: f64,
    pub stratify_cap: usize,
    pub seed: u64,
}

impl CorpusManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &PatchRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.split(split).count()
    }
}

/// Labels one tile; `None` when it falls below the relevance threshold.
pub fn label_record(
    image: String,
    mask_path: String,
    mask: &MaskTile,
    source_id: String,
    threshold: f64,
) -> Result<Option<PatchRecord>> {
    let rf = relevant_fraction(mask);
    if rf < threshold || rf == 0.0 {
        return Ok(None);
    }
    let (label, dominance) = dominant_label(mask)?;
    Ok(Some(PatchRecord {
        image,
        mask: mask_path,
        label,
        dominance,
        relevant_fraction: rf,
        source_id,
        split: Split::Train,
    }))
}

fn count_classes(records: &[PatchRecord]) -> BTreeMap<u8, usize> {
    let mut counts = BTreeMap::new();
    for r in records {
        *counts.entry(r.label).or_insert(0) += 1;
    }
    counts
}

/// Keeps the `cap` most dominant records of each class. Order within a class
/// is dominance descending, then source id, then image path.
pub fn stratify(records: Vec<PatchRecord>, cap: usize, threshold: f64, seed: u64) -> CorpusManifest {
    let mut by_class: BTreeMap<u8, Vec<PatchRecord>> = BTreeMap::new();
    for r in records {
        by_class.entry(r.label).or_default().push(r);
    }
    let mut kept = Vec::new();
    for (_, mut rs) in by_class {
        rs.sort_by(|a, b| {
            b.dominance
                .total_cmp(&a.dominance)
                .then_with(|| a.source_id.cmp(&b.source_id))
                .then_with(|| a.image.cmp(&b.image))
        });
        rs.truncate(cap);
        kept.extend(rs);
    }
    CorpusManifest { class_counts: count_classes(&kept), records: kept, threshold, stratify_cap: cap, seed }
}

/// Sends `test_sources` to the test split, then a seeded shuffle of the rest
/// puts `round(val_fraction · n)` records into validation.
pub fn assign_splits<R: Rng + ?Sized>(
    mut manifest: CorpusManifest,
    val_fraction: f64,
    test_sources: &BTreeSet<String>,
    rng: &mut R,
) -> Result<CorpusManifest> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Domain(format!("val_fraction {val_fraction} outside [0, 1)")));
    }
    let mut rest = Vec::new();
    for (i, r) in manifest.records.iter_mut().enumerate() {
        if test_sources.contains(&r.source_id) {
            r.split = Split::Test;
        } else {
            rest.push(i);
        }
    }
    rest.shuffle(rng);
    let n_val = (val_fraction * rest.len() as f64).round() as usize;
    if rest.len() - n_val == 0 {
        return Err(Error::EmptySplit("no records left for the training split".into()));
    }
    for (k, &i) in rest.iter().enumerate() {
        manifest.records[i].split = if k < n_val { Split::Val } else { Split::Train };
    }
    Ok(manifest)
}

/// Splits a corpus file name `<source>__<tile>.png` into its source id; names
/// without the separator are their own source.
pub fn source_of(file_name: &str) -> String {
    let stem = file_name.strip_suffix(".png").unwrap_or(file_name);
    stem.split_once("__").map_or(stem, |(s, _)| s).to_string()
}

/// Summary of a preprocessing run.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessReport {
    pub scanned: usize,
    pub retained: usize,
}

/// Options for [`preprocess_corpus`].
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessOptions {
    pub threshold: f64,
    pub cap: usize,
    pub val_fraction: f64,
    pub test_sources: BTreeSet<String>,
    pub seed: u64,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self { threshold: DEFAULT_THRESHOLD, cap: 8000, val_fraction: 0.1, test_sources: BTreeSet::new(), seed: 0 }
    }
}

/// Runs the full pipeline over `<root>/tiles/*.png` with masks of the same
/// name under `<root>/masks`. An empty retained set yields an empty manifest
/// instead of a split error.
pub fn preprocess_corpus(root: &Path, opts: &PreprocessOptions) -> Result<(CorpusManifest, PreprocessReport)> {
    let tiles = root.join("tiles");
    let mut names: Vec<String> = std::fs::read_dir(&tiles)
        .map_err(|e| Error::io(&tiles, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".png"))
        .collect();
    names.sort();
    let mut records = Vec::new();
    for name in &names {
        let mask_path = root.join("masks").join(name);
        if !mask_path.exists() {
            return Err(Error::format(&mask_path, "missing mask for tile"));
        }
        let img = read_rgb(&tiles.join(name))?;
        let mask = read_mask(&mask_path)?;
        if img.width != mask.width() || img.height != mask.height() {
            return Err(Error::format(&mask_path, "mask size differs from tile size"));
        }
        if let Some(r) =
            label_record(format!("tiles/{name}"), format!("masks/{name}"), &mask, source_of(name), opts.threshold)?
        {
            records.push(r);
        }
    }
    let report = PreprocessReport { scanned: names.len(), retained: records.len() };
    let manifest = stratify(records, opts.cap, opts.threshold, opts.seed);
    if manifest.records.is_empty() {
        return Ok((manifest, report));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed);
    let manifest = assign_splits(manifest, opts.val_fraction, &opts.test_sources, &mut rng)?;
    Ok((manifest, report))
}
