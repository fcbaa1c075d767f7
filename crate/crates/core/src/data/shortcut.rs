use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DatasetKind, LabeledImageSet, ShortcutKind, Split, CLASS_CHANNEL, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::model::IMAGE_SIDE;

const PLANE: usize = IMAGE_SIDE * IMAGE_SIDE;

/// `round(strength / 100 * n)`, halves rounded up.
pub(crate) fn target_count(n: usize, strength: u32) -> usize {
    (strength as usize * n + 50) / 100
}

/// Splits `round(strength/100 * N)` across classes by largest remainder, so
/// each class gets `floor` or `ceil` of its own share and the total is exact.
/// Remainder ties go to the lower class index.
pub fn apportion(class_counts: &[usize], strength: u32) -> Vec<usize> {
    let total: usize = class_counts.iter().sum();
    let target = target_count(total, strength);
    let s = strength as usize;
    let mut quota: Vec<usize> = class_counts.iter().map(|&n| s * n / 100).collect();
    let mut order: Vec<usize> = (0..class_counts.len()).collect();
    order.sort_by_key(|&k| std::cmp::Reverse(s * class_counts[k] % 100));
    let missing = target - quota.iter().sum::<usize>();
    for &k in order.iter().take(missing) {
        quota[k] += 1;
    }
    quota
}

/// Seeded, class-stratified choice of which training images get the cue.
fn select(ds: &LabeledImageSet, strength: u32, seed: u64) -> Result<Vec<usize>> {
    if strength > 100 {
        return Err(Error::Dataset(format!("shortcut strength {strength} outside [0, 100]")));
    }
    if ds.meta.split != Split::Train {
        return Err(Error::Dataset(format!("shortcuts are only injected into training data, got {:?}", ds.meta.split)));
    }
    if ds.meta.shortcut != ShortcutKind::None {
        return Err(Error::Dataset(format!("{} already carries a shortcut", ds.meta.name)));
    }
    if !ds.has_labels() {
        return Err(Error::Dataset("shortcut injection needs class labels".into()));
    }
    let mut by_class: [Vec<usize>; NUM_CLASSES] = Default::default();
    for (i, &l) in ds.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let quota = apportion(&counts, strength);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::new();
    for (pool, q) in by_class.iter_mut().zip(quota) {
        pool.shuffle(&mut rng);
        chosen.extend_from_slice(&pool[..q]);
    }
    chosen.sort_unstable();
    Ok(chosen)
}

fn inject(
    ds: &LabeledImageSet,
    kind: DatasetKind,
    strength: u32,
    seed: u64,
    paint: impl Fn(&mut [f64], usize),
) -> Result<LabeledImageSet> {
    let chosen = select(ds, strength, seed)?;
    let mut out = ds.clone();
    for i in chosen {
        let class = out.labels[i];
        paint(out.image_mut(i), CLASS_CHANNEL[class]);
        out.shortcut_applied[i] = true;
    }
    out.meta.name = kind.name().into();
    out.meta.shortcut = kind.shortcut();
    out.meta.strength = strength;
    Ok(out)
}

/// CMNIST3: moves the stroke intensity of `strength`% of images into the
/// class channel and zeroes the other two; the rest stay grey.
pub fn inject_color_shortcut(ds: &LabeledImageSet, strength: u32, seed: u64) -> Result<LabeledImageSet> {
    inject(ds, DatasetKind::Cmnist3, strength, seed, |img, channel| {
        let (grey, _) = img.split_at(PLANE);
        let grey = grey.to_vec();
        for c in 0..3 {
            let plane = &mut img[c * PLANE..(c + 1) * PLANE];
            if c == channel {
                plane.copy_from_slice(&grey);
            } else {
                plane.fill(0.0);
            }
        }
    })
}

/// PMNIST3: sets the top-left pixel of `strength`% of images to full
/// intensity in the class channel and zero elsewhere.
pub fn inject_patch_shortcut(ds: &LabeledImageSet, strength: u32, seed: u64) -> Result<LabeledImageSet> {
    inject(ds, DatasetKind::Pmnist3, strength, seed, |img, channel| {
        for c in 0..3 {
            img[c * PLANE] = if c == channel { 1.0 } else { 0.0 };
        }
    })
}

/// Applies the shortcut family of `kind` (identity for MNIST3).
pub fn inject_shortcut(ds: &LabeledImageSet, kind: DatasetKind, strength: u32, seed: u64) -> Result<LabeledImageSet> {
    match kind {
        DatasetKind::Mnist3 => Ok(ds.clone()),
        DatasetKind::Cmnist3 => inject_color_shortcut(ds, strength, seed),
        DatasetKind::Pmnist3 => inject_patch_shortcut(ds, strength, seed),
    }
}
