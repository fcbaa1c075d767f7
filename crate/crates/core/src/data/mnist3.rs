use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::idx::RawSplit;
use super::{grayscale_to_rgb, DatasetMeta, LabeledImageSet, ShortcutKind, Split, NUM_CLASSES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawMnist {
    pub train: RawSplit,
    pub test: RawSplit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mnist3Splits {
    pub train: LabeledImageSet,
    pub test_ind: LabeledImageSet,
    pub test_ood: LabeledImageSet,
}

/// Digits 1-3 -> 0, 4-6 -> 1, 7-9 -> 2; digit 0 has no pooled class.
pub fn pooled_class(digit: u8) -> Option<usize> {
    match digit {
        1..=9 => Some((digit as usize - 1) / 3),
        _ => None,
    }
}

fn meta(split: Split, seed: u64) -> DatasetMeta {
    DatasetMeta { name: "mnist3".into(), shortcut: ShortcutKind::None, strength: 0, split, seed }
}

fn collect(raw: &RawSplit, indices: &[usize], with_labels: bool, meta: DatasetMeta) -> LabeledImageSet {
    let mut images = Vec::with_capacity(indices.len() * crate::model::IMAGE_LEN);
    let mut labels = Vec::new();
    let mut original_digits = Vec::with_capacity(indices.len());
    for &i in indices {
        grayscale_to_rgb(raw.image(i), &mut images);
        original_digits.push(raw.labels[i]);
        if with_labels {
            labels.push(pooled_class(raw.labels[i]).expect("in-distribution digits are 1-9"));
        }
    }
    let shortcut_applied = vec![false; indices.len()];
    LabeledImageSet { images, labels, original_digits, shortcut_applied, meta }
}

/// Builds the balanced `n_train` training sample, the pooled in-distribution
/// test split and the digit-0 OOD test split. Digit 0 never enters training.
pub fn build_mnist3(raw: &RawMnist, n_train: usize, seed: u64) -> Result<Mnist3Splits> {
    let mut by_class: [Vec<usize>; NUM_CLASSES] = Default::default();
    for (i, &d) in raw.train.labels.iter().enumerate() {
        if let Some(k) = pooled_class(d) {
            by_class[k].push(i);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(n_train);
    for (k, pool) in by_class.iter_mut().enumerate() {
        let want = n_train / NUM_CLASSES + usize::from(k < n_train % NUM_CLASSES);
        if pool.len() < want {
            return Err(Error::Dataset(format!(
                "cannot draw a balanced {n_train}-image training set: pooled class {k} has only {} images, needs {want}",
                pool.len()
            )));
        }
        pool.shuffle(&mut rng);
        chosen.extend_from_slice(&pool[..want]);
    }
    chosen.sort_unstable();

    let (ind, ood): (Vec<usize>, Vec<usize>) = (0..raw.test.len()).partition(|&i| raw.test.labels[i] != 0);
    Ok(Mnist3Splits {
        train: collect(&raw.train, &chosen, true, meta(Split::Train, seed)),
        test_ind: collect(&raw.test, &ind, true, meta(Split::TestInd, seed)),
        test_ood: collect(&raw.test, &ood, false, DatasetMeta { name: "mnist0".into(), ..meta(Split::TestOod, seed) }),
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::data::idx::RawImages;

    pub(crate) fn synthetic(per_digit: usize, test_per_digit: usize) -> RawMnist {
        let split = |n: usize, offset: u8| {
            let labels: Vec<u8> = (0..10 * n).map(|i| (i % 10) as u8).collect();
            let pixels = labels
                .iter()
                .enumerate()
                .flat_map(|(i, &d)| (0..784).map(move |p| ((p + i) % 7) as u8 * 30 + d + offset))
                .collect();
            RawSplit { images: RawImages { count: labels.len(), rows: 28, cols: 28, pixels }, labels }
        };
        RawMnist { train: split(per_digit, 0), test: split(test_per_digit, 1) }
    }

    #[test]
    fn pooling_partition() {
        assert_eq!(pooled_class(0), None);
        assert_eq!(pooled_class(5), Some(1));
        let classes: Vec<_> = (1..=9).map(|d| pooled_class(d).unwrap()).collect();
        assert_eq!(classes, [0, 0, 0, 1, 1, 1, 2, 2, 2]);
    }

    #[test]
    fn balanced_train_and_splits() {
        let raw = synthetic(40, 5);
        let s = build_mnist3(&raw, 100, 3).unwrap();
        assert_eq!(s.train.class_counts(), [34, 33, 33]);
        assert!(s.train.original_digits.iter().all(|&d| d != 0));
        assert!(s.test_ind.original_digits.iter().all(|&d| d != 0));
        assert_eq!(s.test_ind.len(), 45);
        assert_eq!(s.test_ood.len(), 5);
        assert!(s.test_ood.original_digits.iter().all(|&d| d == 0));
        assert!(s.test_ood.labels.is_empty());
        for set in [&s.train, &s.test_ind, &s.test_ood] {
            set.validate().unwrap();
        }
        // grayscale replication
        let img = s.train.image(0);
        assert_eq!(img[..784], img[784..1568]);
        assert_eq!(img[..784], img[1568..]);
    }

    #[test]
    fn seeded_and_deterministic() {
        let raw = synthetic(40, 2);
        assert_eq!(build_mnist3(&raw, 90, 1).unwrap(), build_mnist3(&raw, 90, 1).unwrap());
        assert_ne!(build_mnist3(&raw, 90, 1).unwrap().train, build_mnist3(&raw, 90, 2).unwrap().train);
    }

    #[test]
    fn unreachable_balance_is_an_error() {
        let raw = synthetic(10, 1);
        // 30 images per pooled class available
        assert!(build_mnist3(&raw, 90, 0).is_ok());
        assert!(matches!(build_mnist3(&raw, 93, 0), Err(Error::Dataset(_))));
    }
}
