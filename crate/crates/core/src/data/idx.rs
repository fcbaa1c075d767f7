//! IDX reader/writer (the MNIST distribution format), with transparent gzip.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use thiserror::Error;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("{path}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { path: PathBuf, expected: u32, found: u32 },

    #[error("{path}: truncated payload, expected {expected} bytes, found {found}")]
    Truncated { path: PathBuf, expected: usize, found: usize },

    #[error("{path}: {extra} unexpected trailing bytes")]
    TrailingBytes { path: PathBuf, extra: usize },

    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Unsigned-byte images, row-major `[count, rows, cols]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

/// Images and labels from one split (train or test) of the source data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSplit {
    pub images: RawImages,
    pub labels: Vec<u8>,
}

impl RawSplit {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.images.rows * self.images.cols;
        &self.images.pixels[i * n..(i + 1) * n]
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>, IdxError> {
    let io = |source| IdxError::Io { path: path.to_path_buf(), source };
    let raw = std::fs::read(path).map_err(io)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(io)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn header(bytes: &[u8], path: &Path, magic: u32, ndims: usize) -> Result<Vec<usize>, IdxError> {
    let need = 4 * (1 + ndims);
    if bytes.len() < need {
        return Err(IdxError::Truncated { path: path.to_path_buf(), expected: need, found: bytes.len() });
    }
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4-byte slice"));
    if word(0) != magic {
        return Err(IdxError::BadMagic { path: path.to_path_buf(), expected: magic, found: word(0) });
    }
    Ok((1..=ndims).map(|i| word(i) as usize).collect())
}

fn payload<'a>(bytes: &'a [u8], path: &Path, offset: usize, len: usize) -> Result<&'a [u8], IdxError> {
    let found = bytes.len() - offset;
    if found < len {
        return Err(IdxError::Truncated { path: path.to_path_buf(), expected: len, found });
    }
    if found > len {
        return Err(IdxError::TrailingBytes { path: path.to_path_buf(), extra: found - len });
    }
    Ok(&bytes[offset..])
}

pub fn parse_images(bytes: &[u8], path: &Path) -> Result<RawImages, IdxError> {
    let dims = header(bytes, path, IMAGES_MAGIC, 3)?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    let pixels = payload(bytes, path, 16, count * rows * cols)?.to_vec();
    Ok(RawImages { count, rows, cols, pixels })
}

pub fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>, IdxError> {
    let dims = header(bytes, path, LABELS_MAGIC, 1)?;
    Ok(payload(bytes, path, 8, dims[0])?.to_vec())
}

pub fn read_images(path: &Path) -> Result<RawImages, IdxError> {
    parse_images(&read_maybe_gz(path)?, path)
}

pub fn read_labels(path: &Path) -> Result<Vec<u8>, IdxError> {
    parse_labels(&read_maybe_gz(path)?, path)
}

/// Reads an image file and its label file, checking that the counts agree.
pub fn parse_idx(images_path: &Path, labels_path: &Path) -> Result<RawSplit, IdxError> {
    let images = read_images(images_path)?;
    let labels = read_labels(labels_path)?;
    if images.count != labels.len() {
        return Err(IdxError::CountMismatch { images: images.count, labels: labels.len() });
    }
    Ok(RawSplit { images, labels })
}

pub fn encode_images(images: &RawImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for w in [IMAGES_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&w.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Writes a split as the four-file layout expected by [`find_split`], gzip-compressed.
pub fn write_split_gz(dir: &Path, prefix: &str, split: &RawSplit) -> std::io::Result<()> {
    use flate2::{write::GzEncoder, Compression};
    let write = |name: String, bytes: Vec<u8>| -> std::io::Result<()> {
        let mut enc = GzEncoder::new(std::fs::File::create(dir.join(name))?, Compression::default());
        enc.write_all(&bytes)?;
        enc.finish().map(drop)
    };
    write(format!("{prefix}-images-idx3-ubyte.gz"), encode_images(&split.images))?;
    write(format!("{prefix}-labels-idx1-ubyte.gz"), encode_labels(&split.labels))
}

/// Locates `<prefix>-{images-idx3,labels-idx1}-ubyte[.gz]` in `dir`.
pub fn find_split(dir: &Path, prefix: &str) -> Result<(PathBuf, PathBuf), crate::Error> {
    let find = |stem: String| {
        let plain = dir.join(&stem);
        let gz = dir.join(format!("{stem}.gz"));
        if gz.is_file() {
            Ok(gz)
        } else if plain.is_file() {
            Ok(plain)
        } else {
            Err(crate::Error::MissingData { path: plain, expected: format!("{stem} or {stem}.gz") })
        }
    };
    Ok((find(format!("{prefix}-images-idx3-ubyte"))?, find(format!("{prefix}-labels-idx1-ubyte"))?))
}
