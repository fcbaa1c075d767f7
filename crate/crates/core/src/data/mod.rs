//! Pooled 3-class MNIST tasks (MNIST3), the digit-0 OOD split (MNIST0) and
//! the two class-coded shortcut variants (CMNIST3 colour, PMNIST3 patch).

pub mod cache;
pub mod idx;
mod mnist3;
mod shortcut;
pub mod synthetic;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use mnist3::{build_mnist3, pooled_class, Mnist3Splits, RawMnist};
pub use shortcut::{apportion, inject_color_shortcut, inject_patch_shortcut, inject_shortcut};

use crate::error::{Error, Result};
use crate::model::{IMAGE_LEN, IMAGE_SIDE};

pub const NUM_CLASSES: usize = 3;

/// RGB channel carrying each pooled class's cue: 0 red (digits 1-3),
/// 1 green (4-6), 2 blue (7-9).
pub const CLASS_CHANNEL: [usize; NUM_CLASSES] = [0, 1, 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShortcutKind {
    None,
    Color,
    Patch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist3,
    Cmnist3,
    Pmnist3,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Mnist3 => "mnist3",
            DatasetKind::Cmnist3 => "cmnist3",
            DatasetKind::Pmnist3 => "pmnist3",
        }
    }

    pub fn shortcut(self) -> ShortcutKind {
        match self {
            DatasetKind::Mnist3 => ShortcutKind::None,
            DatasetKind::Cmnist3 => ShortcutKind::Color,
            DatasetKind::Pmnist3 => ShortcutKind::Patch,
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mnist3" => Ok(DatasetKind::Mnist3),
            "cmnist3" => Ok(DatasetKind::Cmnist3),
            "pmnist3" => Ok(DatasetKind::Pmnist3),
            other => Err(Error::Config(format!("unknown dataset {other:?} (expected mnist3, cmnist3 or pmnist3)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    TestInd,
    TestOod,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::TestInd => "ind",
            Split::TestOod => "ood",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub shortcut: ShortcutKind,
    /// Percentage of images carrying the shortcut, 0..=100.
    pub strength: u32,
    pub split: Split,
    pub seed: u64,
}

/// Images `[N,3,28,28]` in `[0,1]` with pooled labels and shortcut flags.
///
/// `labels` is empty for the OOD split: digit-0 images have no pooled class.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImageSet {
    pub images: Vec<f64>,
    pub labels: Vec<usize>,
    pub original_digits: Vec<u8>,
    pub shortcut_applied: Vec<bool>,
    pub meta: DatasetMeta,
}

impl LabeledImageSet {
    pub fn len(&self) -> usize {
        self.original_digits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.original_digits.is_empty()
    }

    pub fn has_labels(&self) -> bool {
        self.labels.len() == self.len()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        &self.images[i * IMAGE_LEN..(i + 1) * IMAGE_LEN]
    }

    pub fn image_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.images[i * IMAGE_LEN..(i + 1) * IMAGE_LEN]
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn shortcut_count(&self) -> usize {
        self.shortcut_applied.iter().filter(|&&b| b).count()
    }

    /// Keeps the first `n` images (all of them if `n` is larger).
    pub fn truncate(&mut self, n: usize) {
        let n = n.min(self.len());
        self.images.truncate(n * IMAGE_LEN);
        self.labels.truncate(n);
        self.original_digits.truncate(n);
        self.shortcut_applied.truncate(n);
    }

    /// Checks pixel range, label range, array lengths and the shortcut count.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.images.len() != n * IMAGE_LEN || self.shortcut_applied.len() != n {
            return Err(Error::Dataset(format!("{}: inconsistent array lengths", self.meta.name)));
        }
        if !(self.labels.is_empty() || self.labels.len() == n) {
            return Err(Error::Dataset(format!("{}: {} labels for {n} images", self.meta.name, self.labels.len())));
        }
        if let Some(l) = self.labels.iter().find(|&&l| l >= NUM_CLASSES) {
            return Err(Error::Dataset(format!("{}: label {l} out of range", self.meta.name)));
        }
        if self.images.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Dataset(format!("{}: pixel outside [0,1]", self.meta.name)));
        }
        let expected = match self.meta.shortcut {
            ShortcutKind::None => 0,
            _ => shortcut::target_count(n, self.meta.strength),
        };
        if self.shortcut_count() != expected {
            return Err(Error::Dataset(format!(
                "{}: {} shortcut images, expected {expected}",
                self.meta.name,
                self.shortcut_count()
            )));
        }
        Ok(())
    }
}

/// Grey byte image -> 3-channel `[3,28,28]` with the intensity replicated.
pub(crate) fn grayscale_to_rgb(pixels: &[u8], out: &mut Vec<f64>) {
    debug_assert_eq!(pixels.len(), IMAGE_SIDE * IMAGE_SIDE);
    for _ in 0..3 {
        out.extend(pixels.iter().map(|&b| b as f64 / 255.0));
    }
}

/// Loads `train-*` and `t10k-*` IDX files from `dir`.
pub fn load_raw(dir: &Path) -> Result<RawMnist> {
    let (ti, tl) = idx::find_split(dir, "train")?;
    let (vi, vl) = idx::find_split(dir, "t10k")?;
    let train = idx::parse_idx(&ti, &tl)?;
    let test = idx::parse_idx(&vi, &vl)?;
    for split in [&train, &test] {
        if split.images.rows != IMAGE_SIDE || split.images.cols != IMAGE_SIDE {
            return Err(Error::Dataset(format!(
                "expected {IMAGE_SIDE}x{IMAGE_SIDE} images, found {}x{}",
                split.images.rows, split.images.cols
            )));
        }
        if let Some(l) = split.labels.iter().find(|&&l| l > 9) {
            return Err(Error::Dataset(format!("digit label {l} out of range")));
        }
    }
    Ok(RawMnist { train, test })
}
