//! Binary cache for a built [`LabeledImageSet`].
//!
//! Every pixel the builders produce is exactly `b as f64 / 255.0` for some
//! byte `b`, so pixels are stored as bytes and decode to the same `f64`.
//! Layout: magic, u32 LE length + TOML metadata, u32 LE image count,
//! u8 has-labels flag, labels, original digits, shortcut flags, pixels.

use std::path::Path;

use super::{DatasetMeta, LabeledImageSet};
use crate::error::{Error, Result};
use crate::model::IMAGE_LEN;

const MAGIC: &[u8; 8] = b"SUQDS\x00\x00\x01";

pub fn encode(ds: &LabeledImageSet) -> Result<Vec<u8>> {
    let meta = toml::to_string(&ds.meta).map_err(|e| Error::Dataset(format!("cache metadata: {e}")))?;
    let n = ds.len();
    let mut out = Vec::with_capacity(32 + meta.len() + n * (IMAGE_LEN + 3));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.push(u8::from(ds.has_labels()));
    out.extend(ds.labels.iter().map(|&l| l as u8));
    out.extend_from_slice(&ds.original_digits);
    out.extend(ds.shortcut_applied.iter().map(|&b| u8::from(b)));
    for &v in &ds.images {
        let b = (v * 255.0).round();
        if !(0.0..=255.0).contains(&b) || b / 255.0 != v {
            return Err(Error::Dataset(format!("pixel {v} is not a byte intensity; cannot cache")));
        }
        out.push(b as u8);
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<LabeledImageSet> {
    let bad = |what: &str| Error::Dataset(format!("corrupt dataset cache: {what}"));
    let mut rest = bytes.strip_prefix(MAGIC.as_slice()).ok_or_else(|| bad("magic"))?;
    let mut take = |len: usize| -> Result<&[u8]> {
        if rest.len() < len {
            return Err(bad("truncated"));
        }
        let (head, tail) = rest.split_at(len);
        rest = tail;
        Ok(head)
    };
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize;
    let meta_len = u32_at(take(4)?);
    let meta_text = std::str::from_utf8(take(meta_len)?).map_err(|_| bad("metadata encoding"))?;
    let meta: DatasetMeta = toml::from_str(meta_text).map_err(|e| bad(&e.to_string()))?;
    let n = u32_at(take(4)?);
    let has_labels = take(1)?[0] == 1;
    let labels = if has_labels { take(n)?.iter().map(|&l| l as usize).collect() } else { Vec::new() };
    let original_digits = take(n)?.to_vec();
    let shortcut_applied = take(n)?.iter().map(|&b| b == 1).collect();
    let images = take(n * IMAGE_LEN)?.iter().map(|&b| b as f64 / 255.0).collect();
    if !rest.is_empty() {
        return Err(bad("trailing bytes"));
    }
    let ds = LabeledImageSet { images, labels, original_digits, shortcut_applied, meta };
    ds.validate()?;
    Ok(ds)
}

pub fn write(ds: &LabeledImageSet, path: &Path) -> Result<()> {
    std::fs::write(path, encode(ds)?).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read(path: &Path) -> Result<LabeledImageSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_mnist3, inject_patch_shortcut};

    #[test]
    fn round_trips_byte_identically() {
        let raw = crate::data::mnist3::tests::synthetic(12, 2);
        let splits = build_mnist3(&raw, 30, 4).unwrap();
        let ds = inject_patch_shortcut(&splits.train, 50, 4).unwrap();
        for set in [&ds, &splits.test_ood] {
            let bytes = encode(set).unwrap();
            let back = decode(&bytes).unwrap();
            assert_eq!(&back, set);
            assert_eq!(encode(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn rejects_truncation() {
        let raw = crate::data::mnist3::tests::synthetic(3, 1);
        let ds = build_mnist3(&raw, 9, 0).unwrap().train;
        let mut bytes = encode(&ds).unwrap();
        bytes.pop();
        assert!(decode(&bytes).is_err());
    }
}
