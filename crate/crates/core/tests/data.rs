use std::collections::HashSet;

use husformer::data::{
    generate_synthetic, load_dataset, load_fold, make_folds, save_dataset, save_folds, shuffled_indices, ModalityArray,
    MultimodalDataset, SyntheticSpec,
};
use proptest::prelude::*;

fn spec(samples: usize, sep: f64, seed: u64) -> SyntheticSpec {
    SyntheticSpec { modalities: 2, samples, classes: 3, channels: 2, timesteps: 16, separability: sep, seed }
}

fn flat(ds: &MultimodalDataset, j: usize) -> Vec<f64> {
    ds.modalities().iter().flat_map(|m| m.sample(j).iter().map(|&v| v as f64)).collect()
}

/// Leave-out 1-NN: each sample in `test` is labelled by its closest sample in
/// `train` under squared Euclidean distance on flattened features.
fn one_nn_accuracy(ds: &MultimodalDataset, train: &[usize], test: &[usize]) -> f64 {
    let feats: Vec<Vec<f64>> = (0..ds.len()).map(|j| flat(ds, j)).collect();
    let mut correct = 0;
    for &q in test {
        let mut best = (f64::INFINITY, 0);
        for &r in train {
            let d: f64 = feats[q].iter().zip(&feats[r]).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.0 {
                best = (d, r);
            }
        }
        if ds.labels()[best.1] == ds.labels()[q] {
            correct += 1;
        }
    }
    correct as f64 / test.len() as f64
}

#[test]
fn separable_synthetic_passes_nearest_neighbour_oracle() {
    let ds = generate_synthetic(&spec(500, 5.0, 21)).unwrap();
    let f = &make_folds(500, 21).unwrap()[0];
    let held_out: Vec<usize> = f.val.iter().chain(&f.test).copied().collect();
    let acc = one_nn_accuracy(&ds, &f.train, &held_out);
    assert!(acc > 0.9, "1-NN accuracy {acc}");
}

#[test]
fn unseparable_synthetic_gives_nearest_neighbour_chance() {
    let ds = generate_synthetic(&spec(600, 0.0, 22)).unwrap();
    let f = &make_folds(600, 22).unwrap()[0];
    let acc = one_nn_accuracy(&ds, &f.train, &f.val);
    assert!((acc - 1.0 / 3.0).abs() < 0.2, "1-NN accuracy {acc}");
}

#[test]
fn fold_rotation_positions() {
    let order = shuffled_indices(100, 7);
    let folds = make_folds(100, 7).unwrap();
    assert_eq!(folds[9].val, order[90..100].to_vec());
    assert_eq!(folds[9].test, order[0..10].to_vec());
    assert_eq!(folds[9].train, order[10..90].to_vec());
    assert_eq!(folds[0].val, order[0..10].to_vec());
    assert_eq!(folds[0].test, order[10..20].to_vec());
    assert_eq!(folds[0].train, order[20..100].to_vec());
}

#[test]
fn too_few_samples() {
    assert_eq!(make_folds(19, 0).unwrap_err().class(), "too-few-samples");
    assert!(make_folds(20, 0).is_ok());
}

#[test]
fn saved_folds_load_by_index() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_synthetic(&spec(123, 1.0, 4)).unwrap();
    let folds = make_folds(ds.len(), 4).unwrap();
    save_folds(&ds, &folds, dir.path(), 4).unwrap();
    let (train, val, test) = load_fold(dir.path(), 3).unwrap();
    assert_eq!((val.len(), test.len(), train.len()), (12, 12, 99));
    assert_eq!(test.sample_ids(), &folds[3].test.iter().map(|&j| j as i64).collect::<Vec<_>>()[..]);
}

#[test]
fn shape_mismatch_between_header_and_blob_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_synthetic(&spec(40, 1.0, 4)).unwrap();
    save_dataset(dir.path(), &ds, &[], 4).unwrap();
    let meta = dir.path().join("meta.json");
    let text = std::fs::read_to_string(&meta).unwrap().replacen("\"timesteps\": 16", "\"timesteps\": 15", 1);
    std::fs::write(&meta, text).unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert_eq!(err.class(), "format-error");
    assert!(err.to_string().contains("modality_0.bin"), "{err}");
}

fn arb_dataset() -> impl Strategy<Value = MultimodalDataset> {
    (1usize..4, 1usize..6, 2usize..5)
        .prop_flat_map(|(m, n, classes)| {
            let shapes = proptest::collection::vec((1usize..4, 1usize..5), m);
            (shapes, Just(n), Just(classes))
        })
        .prop_flat_map(|(shapes, n, classes)| {
            let arrays: Vec<_> = shapes
                .iter()
                .map(|&(c, t)| {
                    proptest::collection::vec(any::<f32>(), n * c * t)
                        .prop_map(move |data| ModalityArray { channels: c, timesteps: t, data })
                })
                .collect();
            let labels = proptest::collection::vec(0..classes as u32, n);
            let ids = proptest::collection::hash_set(any::<i64>(), n);
            (arrays, labels, ids, Just(classes))
        })
        .prop_map(|(arrays, labels, ids, classes)| {
            MultimodalDataset::new(arrays, labels, ids.into_iter().collect(), classes).unwrap()
        })
}

proptest! {
    #[test]
    fn round_trip_is_bit_exact(ds in arb_dataset(), seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &ds, &[], seed).unwrap();
        let (back, meta) = load_dataset(dir.path()).unwrap();
        prop_assert_eq!(meta.seed, seed);
        prop_assert_eq!(back.labels(), ds.labels());
        prop_assert_eq!(back.sample_ids(), ds.sample_ids());
        for (a, b) in back.modalities().iter().zip(ds.modalities()) {
            let bits = |m: &ModalityArray| m.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn shuffle_is_a_permutation(n in 0usize..300, seed in any::<u64>()) {
        let mut s = shuffled_indices(n, seed);
        s.sort_unstable();
        prop_assert_eq!(s, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn folds_partition_and_rotate(n in 20usize..400, seed in any::<u64>()) {
        let folds = make_folds(n, seed).unwrap();
        prop_assert_eq!(folds.len(), 10);
        let k = n / 10;
        let mut val_seen = vec![0; n];
        let mut test_seen = vec![0; n];
        for (i, f) in folds.iter().enumerate() {
            prop_assert_eq!(f.fold_index, i);
            prop_assert_eq!(f.val.len(), k);
            prop_assert_eq!(f.test.len(), k);
            let all: HashSet<usize> = f.train.iter().chain(&f.val).chain(&f.test).copied().collect();
            prop_assert_eq!(all.len(), n);
            prop_assert_eq!(f.train.len() + 2 * k, n);
            prop_assert_eq!(&f.test, &folds[(i + 1) % 10].val);
            f.val.iter().for_each(|&j| val_seen[j] += 1);
            f.test.iter().for_each(|&j| test_seen[j] += 1);
        }
        // leftovers never leave training; everyone else rotates through once
        prop_assert_eq!(val_seen.iter().filter(|&&c| c == 1).count(), 10 * k);
        prop_assert!(val_seen.iter().all(|&c| c <= 1));
        prop_assert_eq!(val_seen, test_seen);
    }
}
