use std::io::Write;

use shortcut_uq::data::idx::{self, IdxError, RawImages, RawSplit};
use shortcut_uq::data::synthetic::{synthetic_mnist, write_synthetic_mnist};
use shortcut_uq::data::{
    apportion, build_mnist3, cache, inject_color_shortcut, inject_patch_shortcut, load_raw, DatasetKind, ShortcutKind,
    CLASS_CHANNEL,
};
use shortcut_uq::harness::{prepare_run, ExperimentConfig, Variant};
use shortcut_uq::Error;

const PLANE: usize = 784;

#[test]
fn idx_round_trip_plain_and_gzip() {
    let dir = tempfile::tempdir().unwrap();
    let split = RawSplit {
        images: RawImages { count: 2, rows: 28, cols: 28, pixels: (0..2 * PLANE).map(|i| (i % 256) as u8).collect() },
        labels: vec![3, 0],
    };
    idx::write_split_gz(dir.path(), "train", &split).unwrap();
    let (img, lab) = idx::find_split(dir.path(), "train").unwrap();
    assert_eq!(idx::parse_idx(&img, &lab).unwrap(), split);

    let plain = dir.path().join("plain-images");
    std::fs::write(&plain, idx::encode_images(&split.images)).unwrap();
    assert_eq!(idx::read_images(&plain).unwrap(), split.images);
}

#[test]
fn malformed_idx_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x");
    let mut bytes = idx::encode_labels(&[1, 2, 3]);
    bytes[3] = 0x03;
    std::fs::write(&p, &bytes).unwrap();
    assert!(matches!(idx::read_labels(&p), Err(IdxError::BadMagic { .. })));

    let mut bytes = idx::encode_labels(&[1, 2, 3]);
    bytes.pop();
    std::fs::write(&p, &bytes).unwrap();
    assert!(matches!(idx::read_labels(&p), Err(IdxError::Truncated { expected: 3, found: 2, .. })));

    let mut f = std::fs::File::create(&p).unwrap();
    f.write_all(&idx::encode_labels(&[1])).unwrap();
    f.write_all(&[9]).unwrap();
    drop(f);
    assert!(matches!(idx::read_labels(&p), Err(IdxError::TrailingBytes { extra: 1, .. })));
}

#[test]
fn missing_labels_file_is_named() {
    let dir = tempfile::tempdir().unwrap();
    write_synthetic_mnist(dir.path(), 2, 1, 0).unwrap();
    std::fs::remove_file(dir.path().join("t10k-labels-idx1-ubyte.gz")).unwrap();
    let err = load_raw(dir.path()).unwrap_err();
    assert!(matches!(err, Error::MissingData { .. }));
    assert!(err.to_string().contains("t10k-labels-idx1-ubyte"), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn colour_shortcut_counts_and_channels() {
    let raw = synthetic_mnist(40, 2, 3);
    let clean = build_mnist3(&raw, 300, 1).unwrap().train;
    let ds = inject_color_shortcut(&clean, 95, 7).unwrap();
    ds.validate().unwrap();
    assert_eq!(ds.meta.shortcut, ShortcutKind::Color);
    assert_eq!(ds.shortcut_count(), 285);
    let mut per_class = [0; 3];
    for i in 0..ds.len() {
        let img = ds.image(i);
        let class = ds.labels[i];
        if ds.shortcut_applied[i] {
            per_class[class] += 1;
            for c in 0..3 {
                let plane = &img[c * PLANE..(c + 1) * PLANE];
                if c == CLASS_CHANNEL[class] {
                    assert_eq!(plane, &clean.image(i)[..PLANE]);
                } else {
                    assert!(plane.iter().all(|&v| v == 0.0));
                }
            }
        } else {
            assert_eq!(img, clean.image(i));
        }
    }
    assert_eq!(per_class.to_vec(), apportion(&clean.class_counts(), 95));
    // seeded placement
    assert_eq!(ds, inject_color_shortcut(&clean, 95, 7).unwrap());
    assert_ne!(ds.shortcut_applied, inject_color_shortcut(&clean, 95, 8).unwrap().shortcut_applied);
}

#[test]
fn patch_shortcut_marks_only_the_corner() {
    let raw = synthetic_mnist(20, 2, 3);
    let clean = build_mnist3(&raw, 120, 1).unwrap().train;
    let ds = inject_patch_shortcut(&clean, 100, 2).unwrap();
    assert_eq!(ds.shortcut_count(), 120);
    for i in 0..ds.len() {
        let (img, orig) = (ds.image(i), clean.image(i));
        for c in 0..3 {
            let expect = if c == CLASS_CHANNEL[ds.labels[i]] { 1.0 } else { 0.0 };
            assert_eq!(img[c * PLANE], expect);
            assert_eq!(img[c * PLANE + 1..(c + 1) * PLANE], orig[c * PLANE + 1..(c + 1) * PLANE]);
        }
    }
}

#[test]
fn strength_edges_and_errors() {
    let raw = synthetic_mnist(20, 2, 3);
    let s = build_mnist3(&raw, 150, 1).unwrap();
    assert_eq!(inject_color_shortcut(&s.train, 0, 1).unwrap().shortcut_count(), 0);
    assert!(inject_color_shortcut(&s.train, 101, 1).is_err());
    assert!(inject_color_shortcut(&s.test_ind, 50, 1).is_err());
    let once = inject_patch_shortcut(&s.train, 50, 1).unwrap();
    assert!(inject_patch_shortcut(&once, 50, 1).is_err());
}

#[test]
fn ood_split_is_shared_and_shortcut_free() {
    let raw = synthetic_mnist(30, 4, 5);
    let cfg = ExperimentConfig { n_train: 90, ..Default::default() };
    let sets: Vec<_> = ["mnist3", "cmnist3:100", "pmnist3:95"]
        .iter()
        .map(|v| prepare_run(&cfg, &raw, v.parse::<Variant>().unwrap(), 0).unwrap())
        .collect();
    for s in &sets[1..] {
        assert_eq!(s.test_ood, sets[0].test_ood);
        assert_eq!(s.test_ind, sets[0].test_ind);
    }
    assert_eq!(sets[0].test_ood.len(), 4);
    assert_eq!(sets[0].test_ood.shortcut_count(), 0);
    assert_eq!(sets[2].train.meta.shortcut, DatasetKind::Pmnist3.shortcut());
}

#[test]
fn cache_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let raw = synthetic_mnist(10, 2, 5);
    let ds = inject_color_shortcut(&build_mnist3(&raw, 60, 2).unwrap().train, 50, 3).unwrap();
    let path = dir.path().join("train.bin");
    cache::write(&ds, &path).unwrap();
    assert_eq!(cache::read(&path).unwrap(), ds);
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
    assert!(cache::read(&path).is_err());
}
