use husformer::metrics::{cross_entropy, macro_f1, mae, multiclass_accuracy};
use proptest::prelude::*;

fn labels(n: usize, len: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (proptest::collection::vec(0..n, len), proptest::collection::vec(0..n, len))
}

/// Rows of positive weights normalised to probabilities.
fn prob_rows(n: usize, len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(proptest::collection::vec(0.01f64..10.0, n), len).prop_map(|rows| {
        rows.into_iter()
            .flat_map(|r| {
                let s: f64 = r.iter().sum();
                r.into_iter().map(move |v| v / s)
            })
            .collect()
    })
}

#[test]
fn derived_cases() {
    assert!((multiclass_accuracy(&[0, 1, 1], &[0, 1, 2], 3).unwrap() - 7.0 / 9.0).abs() < 1e-12);
    assert!((macro_f1(&[0, 1, 0, 1], &[0, 0, 1, 1], 2).unwrap() - 0.5).abs() < 1e-12);
    let u = vec![1.0 / 3.0; 9];
    assert!((cross_entropy(&u, &[0, 1, 2], 3).unwrap() - 3f64.ln()).abs() < 1e-12);
    assert!((mae(&u, &[0, 1, 2], 3).unwrap() - 4.0 / 9.0).abs() < 1e-12);
}

#[test]
fn uniform_mae_follows_closed_form() {
    for n in 2..9 {
        let u = vec![1.0 / n as f64; 2 * n];
        let expected = 2.0 * (n as f64 - 1.0) / (n * n) as f64;
        assert!((mae(&u, &[0, n - 1], n).unwrap() - expected).abs() < 1e-12);
    }
}

#[test]
fn moving_mass_to_truth_lowers_ce() {
    let mut p = [0.2, 0.5, 0.3];
    let mut last = cross_entropy(&p, &[0], 3).unwrap();
    for _ in 0..5 {
        p[0] += 0.05;
        p[1] -= 0.05;
        let now = cross_entropy(&p, &[0], 3).unwrap();
        assert!(now < last);
        last = now;
    }
}

proptest! {
    #[test]
    fn binary_ovr_equals_plain_accuracy((pred, truth) in labels(2, 40)) {
        let plain = pred.iter().zip(&truth).filter(|(a, b)| a == b).count() as f64 / 40.0;
        prop_assert!((multiclass_accuracy(&pred, &truth, 2).unwrap() - plain).abs() < 1e-12);
    }

    #[test]
    fn f1_is_relabeling_invariant((pred, truth) in labels(4, 30), perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle()) {
        let relabel = |v: &[usize]| v.iter().map(|&y| perm[y]).collect::<Vec<_>>();
        let a = macro_f1(&pred, &truth, 4).unwrap();
        let b = macro_f1(&relabel(&pred), &relabel(&truth), 4).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn metrics_ignore_sample_order((pred, truth) in labels(3, 25), probs in prob_rows(3, 25), rot in 0usize..25) {
        let rp: Vec<usize> = (0..25).map(|j| pred[(j + rot) % 25]).collect();
        let rt: Vec<usize> = (0..25).map(|j| truth[(j + rot) % 25]).collect();
        let rprobs: Vec<f64> = (0..25).flat_map(|j| probs[3 * ((j + rot) % 25)..3 * ((j + rot) % 25) + 3].to_vec()).collect();
        prop_assert!((multiclass_accuracy(&pred, &truth, 3).unwrap() - multiclass_accuracy(&rp, &rt, 3).unwrap()).abs() < 1e-12);
        prop_assert!((macro_f1(&pred, &truth, 3).unwrap() - macro_f1(&rp, &rt, 3).unwrap()).abs() < 1e-12);
        prop_assert!((cross_entropy(&probs, &truth, 3).unwrap() - cross_entropy(&rprobs, &rt, 3).unwrap()).abs() < 1e-12);
        prop_assert!((mae(&probs, &truth, 3).unwrap() - mae(&rprobs, &rt, 3).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn metric_ranges((pred, truth) in labels(5, 20), probs in prob_rows(5, 20)) {
        let a = multiclass_accuracy(&pred, &truth, 5).unwrap();
        let f = macro_f1(&pred, &truth, 5).unwrap();
        prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&f));
        let m = mae(&probs, &truth, 5).unwrap();
        prop_assert!((0.0..=2.0).contains(&m));
        prop_assert!(cross_entropy(&probs, &truth, 5).unwrap() >= 0.0);
    }

    #[test]
    fn ce_matches_direct_formula(truth in proptest::collection::vec(0usize..4, 1..30), seed_rows in prob_rows(4, 30)) {
        let n = truth.len();
        let probs = &seed_rows[..4 * n];
        let direct = -truth.iter().enumerate().map(|(j, &y)| probs[4 * j + y].ln()).sum::<f64>() / n as f64;
        prop_assert!((cross_entropy(probs, &truth, 4).unwrap() - direct).abs() < 1e-12);
    }
}
