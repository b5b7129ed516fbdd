use husformer::data::{generate_synthetic, make_folds, MultimodalDataset, SyntheticSpec};
use husformer::model::{Model, ModalityShape, ModelConfig};
use husformer::training::{clip_global_norm, evaluate, run_cv, run_cv_parallel, train_fold, FoldData, TrainSpec};
use husformer::Error;
use proptest::prelude::*;

fn synth(samples: usize, sep: f64, seed: u64) -> MultimodalDataset {
    generate_synthetic(&SyntheticSpec {
        modalities: 2,
        samples,
        classes: 3,
        channels: 2,
        timesteps: 16,
        separability: sep,
        seed,
    })
    .unwrap()
}

fn small_config(d: usize) -> ModelConfig {
    ModelConfig::uniform(vec![ModalityShape { channels: 2, timesteps: 16 }; 2], 1, 1, d, 30, 3)
}

fn fold0(ds: &MultimodalDataset, seed: u64) -> FoldData {
    FoldData::from_spec(ds, &make_folds(ds.len(), seed).unwrap()[0]).unwrap()
}

fn quick(epochs: usize, seed: u64) -> TrainSpec {
    TrainSpec { epochs, ..TrainSpec::default() }.with_seed(seed)
}

#[test]
fn separable_data_is_learned() {
    let ds = synth(500, 5.0, 11);
    let out = train_fold(&small_config(12), &TrainSpec::default().with_seed(11), &fold0(&ds, 11)).unwrap();
    let h = &out.history;
    assert!(h.train_loss.last().unwrap() < &h.train_loss[0]);
    assert!(out.report.accuracy >= 0.85, "{:?}", out.report);
}

#[test]
fn no_signal_stays_near_chance() {
    // one-vs-rest accuracy of an uninformed predictor on balanced classes
    let chance = 5.0 / 9.0;
    let ds = synth(500, 0.0, 5);
    let out = train_fold(&small_config(12), &TrainSpec::default().with_seed(5), &fold0(&ds, 5)).unwrap();
    let acc = out.report.accuracy;
    assert!((0.5 * chance..=1.5 * chance).contains(&acc), "accuracy {acc}");
}

#[test]
fn same_seed_same_history() {
    let ds = synth(120, 2.0, 1);
    let fold = fold0(&ds, 1);
    let a = train_fold(&small_config(6), &quick(4, 9), &fold).unwrap();
    let b = train_fold(&small_config(6), &quick(4, 9), &fold).unwrap();
    assert_eq!(a.history.without_timing(), b.history.without_timing());
    assert_eq!(a.model.params(), b.model.params());
    assert_eq!(a.report.accuracy, b.report.accuracy);
    assert_eq!(a.report.loss, b.report.loss);
    assert_eq!(a.report.peak_memory_mb, b.report.peak_memory_mb);
    let c = train_fold(&small_config(6), &quick(4, 10), &fold).unwrap();
    assert_ne!(a.history.train_loss, c.history.train_loss);
}

#[test]
fn restored_model_is_the_best_validation_epoch() {
    let ds = synth(120, 1.0, 2);
    let fold = fold0(&ds, 2);
    let out = train_fold(&small_config(6), &TrainSpec { learning_rate: 0.02, ..quick(12, 3) }, &fold).unwrap();
    let h = &out.history;
    let min = h.val_loss.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(h.val_loss[h.best_epoch], min);
    assert_eq!(h.seconds.len(), h.epochs());
    assert_eq!(h.val_loss.len(), h.epochs());
    let v = evaluate(&out.model, &fold.val).unwrap();
    assert!((v.loss - min).abs() < 1e-12, "{} vs {min}", v.loss);
}

#[test]
fn early_stopping_respects_patience() {
    let ds = synth(120, 0.0, 4);
    let fold = fold0(&ds, 4);
    // a large step size on noise makes validation loss stall quickly
    let spec = TrainSpec { learning_rate: 0.05, patience: 2, ..quick(40, 4) };
    let out = train_fold(&small_config(6), &spec, &fold).unwrap();
    let h = &out.history;
    assert!(h.epochs() < 40, "ran {} epochs", h.epochs());
    assert_eq!(h.epochs(), h.best_epoch + spec.patience + 1);
}

#[test]
fn non_finite_input_reports_divergence() {
    let ds = synth(60, 1.0, 3);
    let mut mods = ds.modalities().to_vec();
    mods[0].data.iter_mut().for_each(|v| *v = f32::INFINITY);
    let bad = MultimodalDataset::new(mods, ds.labels().to_vec(), ds.sample_ids().to_vec(), 3).unwrap();
    let err = train_fold(&small_config(6), &quick(3, 0), &fold0(&bad, 3)).unwrap_err();
    assert!(matches!(err, Error::Diverged { epoch: 0, .. }), "{err}");
    assert_eq!(err.class(), "diverged-run");
}

#[test]
fn mismatched_fold_shapes_are_rejected() {
    let ds = synth(60, 1.0, 3);
    let cfg = ModelConfig::uniform(vec![ModalityShape { channels: 3, timesteps: 16 }; 2], 1, 1, 6, 30, 3);
    assert_eq!(train_fold(&cfg, &quick(1, 0), &fold0(&ds, 3)).unwrap_err().class(), "dimension-error");
}

#[test]
fn report_fields_are_well_formed() {
    let ds = synth(80, 2.0, 6);
    let cfg = small_config(6);
    let out = train_fold(&cfg, &quick(2, 6), &fold0(&ds, 6)).unwrap();
    let r = out.report;
    assert!((0.0..=1.0).contains(&r.accuracy) && (0.0..=1.0).contains(&r.f1));
    assert!(r.loss >= 0.0 && r.mae >= 0.0 && r.mae <= 2.0);
    assert!(r.train_time_h > 0.0);
    assert_eq!(r.params, Model::build(&cfg, 0).unwrap().count_params());
    assert!(r.peak_memory_mb * 1e6 >= (r.params * 8) as f64);
}

#[test]
fn cv_over_identical_folds_equals_one_fold() {
    let ds = synth(100, 2.0, 8);
    let folds = make_folds(ds.len(), 8).unwrap();
    let same = vec![folds[2].clone(); 10];
    let cv = run_cv(&small_config(6), &quick(2, 1), &ds, &same).unwrap();
    assert_eq!(cv.per_fold.len(), 10);
    let one = cv.per_fold[0];
    assert!((cv.mean.accuracy - one.accuracy).abs() < 1e-12);
    assert!((cv.mean.loss - one.loss).abs() < 1e-12);
    assert!((cv.mean.f1 - one.f1).abs() < 1e-12);
    assert!((cv.mean.mae - one.mae).abs() < 1e-12);
}

#[test]
fn cv_over_all_folds() {
    let ds = synth(100, 2.0, 12);
    let folds = make_folds(ds.len(), 12).unwrap();
    let cfg = small_config(6);
    let spec = quick(2, 2);
    let cv = run_cv(&cfg, &spec, &ds, &folds).unwrap();
    assert_eq!(cv.per_fold.len(), 10);
    assert_eq!(cv.histories.len(), 10);
    let accs: Vec<f64> = cv.per_fold.iter().map(|r| r.accuracy).collect();
    let (lo, hi) = accs.iter().fold((1.0f64, 0.0f64), |(l, h), &a| (l.min(a), h.max(a)));
    assert!(lo <= cv.mean.accuracy && cv.mean.accuracy <= hi);
    let total: f64 = cv.per_fold.iter().map(|r| r.train_time_h).sum();
    assert!((cv.mean.train_time_h - total).abs() < 1e-15);
    let peak = cv.per_fold.iter().map(|r| r.peak_memory_mb).fold(0.0, f64::max);
    assert_eq!(cv.mean.peak_memory_mb, peak);

    let par = run_cv_parallel(&cfg, &spec, &ds, &folds, 4).unwrap();
    for (a, b) in cv.per_fold.iter().zip(&par.per_fold) {
        assert_eq!((a.loss, a.accuracy, a.f1, a.mae, a.peak_memory_mb), (b.loss, b.accuracy, b.f1, b.mae, b.peak_memory_mb));
    }
}

#[test]
fn cv_errors_carry_the_fold_index() {
    let ds = synth(100, 2.0, 12);
    let mut folds = make_folds(ds.len(), 12).unwrap();
    folds[3].val.clear();
    let err = run_cv(&small_config(6), &quick(1, 0), &ds, &folds[..5]).unwrap_err();
    assert!(matches!(err, Error::Fold { fold: 3, .. }), "{err}");
    assert_eq!(err.class(), "dimension-error");
    assert!(run_cv(&small_config(6), &quick(1, 0), &ds, &[]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn clipped_norm_never_exceeds_threshold(seed in 0u64..1000, scale in 0.01f64..50.0, clip in 0.05f64..2.0) {
        let ds = synth(24, 3.0, seed);
        let mut mods = ds.modalities().to_vec();
        for m in &mut mods {
            m.data.iter_mut().for_each(|v| *v *= scale as f32);
        }
        let ds = MultimodalDataset::new(mods, ds.labels().to_vec(), ds.sample_ids().to_vec(), 3).unwrap();
        let model = Model::build(&small_config(6), seed).unwrap();
        let idx: Vec<usize> = (0..ds.len()).collect();
        let (_, mut grads) = model
            .loss_and_grads(&ds.batch(&idx).unwrap(), &ds.batch_labels(&idx), true, seed, 0)
            .unwrap();
        let before = clip_global_norm(&mut grads, clip);
        let after = grads.global_norm();
        prop_assert!(after <= clip + 1e-9);
        if before <= clip {
            prop_assert_eq!(after, before);
        }
    }
}

