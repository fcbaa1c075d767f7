//! Small deterministic stand-in for the MNIST files, for smoke runs and tests.
//! Each digit is a bar at a digit-specific position plus seeded noise, so a
//! network can learn it in a couple of epochs.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::idx::{write_split_gz, RawImages, RawSplit};
use super::RawMnist;
use crate::error::{Error, Result};

const SIDE: usize = 28;

fn digit_image<R: Rng>(rng: &mut R, digit: u8, out: &mut Vec<u8>) {
    let start = out.len();
    out.extend((0..SIDE * SIDE).map(|_| if rng.gen_bool(0.05) { rng.gen_range(0..120) } else { 0 }));
    let img = &mut out[start..];
    let d = digit as usize;
    let jitter = rng.gen_range(0..2);
    // even digits draw a horizontal bar, odd ones a vertical bar
    let line = 3 + 2 * d + jitter;
    for t in 4..24 {
        let (y, x) = if d.is_multiple_of(2) { (line, t) } else { (t, line) };
        img[y * SIDE + x] = rng.gen_range(200..=255);
    }
}

fn split<R: Rng>(rng: &mut R, per_digit: usize) -> RawSplit {
    let labels: Vec<u8> = (0..10 * per_digit).map(|i| (i % 10) as u8).collect();
    let mut pixels = Vec::with_capacity(labels.len() * SIDE * SIDE);
    for &d in &labels {
        digit_image(rng, d, &mut pixels);
    }
    RawSplit { images: RawImages { count: labels.len(), rows: SIDE, cols: SIDE, pixels }, labels }
}

/// `train_per_digit` and `test_per_digit` images of each digit 0-9.
pub fn synthetic_mnist(train_per_digit: usize, test_per_digit: usize, seed: u64) -> RawMnist {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = split(&mut rng, train_per_digit);
    let test = split(&mut rng, test_per_digit);
    RawMnist { train, test }
}

/// Writes [`synthetic_mnist`] to `dir` under the standard gzip IDX file names.
pub fn write_synthetic_mnist(dir: &Path, train_per_digit: usize, test_per_digit: usize, seed: u64) -> Result<()> {
    let raw = synthetic_mnist(train_per_digit, test_per_digit, seed);
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    write_split_gz(dir, "train", &raw.train).map_err(|e| Error::io("writing synthetic train split", e))?;
    write_split_gz(dir, "t10k", &raw.test).map_err(|e| Error::io("writing synthetic test split", e))
}
