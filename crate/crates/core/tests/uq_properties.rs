// Reference values are quoted at full computed precision.
#![allow(clippy::excessive_precision)]

use proptest::prelude::*;

use shortcut_uq::uq::{
    aleatoric_uncertainty, bin_histogram, bin_index, consensus, decompose, epistemic_uncertainty, eu_via_kl,
    least_confident_indices, selection_size, total_uncertainty, EnsemblePrediction, FirstOrderDist, UqError,
};

/// One member over 3 classes; some weights are exactly zero.
fn member() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![3 => 0.0f64..1.0, 1 => Just(0.0)], 3).prop_filter_map("all-zero row", |w| {
        let s: f64 = w.iter().sum();
        (s > 1e-6).then(|| w.iter().map(|v| v / s).collect())
    })
}

fn ensemble(max_members: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(member(), 1..=max_members)
}

fn pred(rows: &[Vec<f64>]) -> EnsemblePrediction {
    EnsemblePrediction::from_rows(rows.iter().map(Vec::as_slice)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn tu_equals_au_plus_eu(rows in ensemble(5)) {
        let e = pred(&rows);
        let r = decompose(&e).unwrap();
        prop_assert!((r.tu - r.au - r.eu).abs() < 1e-9);
        prop_assert!((epistemic_uncertainty(&e).unwrap() - eu_via_kl(&e)).abs() < 1e-9);
    }

    #[test]
    fn values_stay_in_bounds(rows in ensemble(5)) {
        let r = decompose(&pred(&rows)).unwrap();
        let ln3 = 3f64.ln();
        prop_assert!(r.eu >= 0.0);
        prop_assert!(r.tu <= ln3 + 1e-12 && r.au <= ln3 + 1e-12);
        for v in [r.tu_norm, r.au_norm, r.eu_norm] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(r.confidence >= 1.0 / 3.0 - 1e-12 && r.confidence <= 1.0);
    }

    #[test]
    fn member_order_and_class_relabelling_do_not_matter(rows in ensemble(5), shift in 1usize..3) {
        let base = decompose(&pred(&rows)).unwrap();
        let mut reversed = rows.clone();
        reversed.reverse();
        let relabelled: Vec<Vec<f64>> = rows.iter().map(|r| (0..3).map(|k| r[(k + shift) % 3]).collect()).collect();
        for other in [decompose(&pred(&reversed)).unwrap(), decompose(&pred(&relabelled)).unwrap()] {
            prop_assert!((other.tu - base.tu).abs() < 1e-12);
            prop_assert!((other.au - base.au).abs() < 1e-12);
            prop_assert!((other.eu - base.eu).abs() < 1e-12);
        }
    }

    #[test]
    fn single_member_has_no_epistemic_part(row in member()) {
        let e = pred(&[row]);
        let r = decompose(&e).unwrap();
        prop_assert_eq!(r.eu, 0.0);
        prop_assert_eq!(total_uncertainty(&e), aleatoric_uncertainty(&e));
    }

    #[test]
    fn selection_matches_sort_oracle(conf in prop::collection::vec(0.3f64..1.0, 0..200), fraction in 0.01f64..=1.0) {
        let picked = least_confident_indices(&conf, fraction).unwrap();
        let mut order: Vec<usize> = (0..conf.len()).collect();
        order.sort_by(|&a, &b| conf[a].partial_cmp(&conf[b]).unwrap().then(a.cmp(&b)));
        let k = selection_size(conf.len(), fraction).unwrap();
        prop_assert_eq!(&picked[..], &order[..k]);
        prop_assert!(k as f64 >= fraction * conf.len() as f64 - 1e-9);
        prop_assert!((k as f64) < fraction * conf.len() as f64 + 1.0);
    }

    #[test]
    fn histogram_proportions_sum_to_one(values in prop::collection::vec(0.0f64..=1.0, 1..300)) {
        let h = bin_histogram(&values, 20).unwrap();
        prop_assert_eq!(h.len(), 20);
        prop_assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for &v in &values {
            let k = bin_index(v, 20).unwrap();
            let (lo, hi) = (k as f64 / 20.0, (k + 1) as f64 / 20.0);
            prop_assert!(v <= hi && (k == 0 || v > lo));
        }
    }
}

#[test]
fn footnote_ensemble_is_capped_below_one() {
    let members = [0, 1, 1, 2, 2].map(|c| FirstOrderDist::one_hot(3, c));
    let r = decompose(&EnsemblePrediction::new(members.to_vec()).unwrap()).unwrap();
    // H(0.2, 0.4, 0.4) / ln 3 at 40 digits: 0.96022971786076121752
    assert!((r.tu_norm - 0.96022971786076121752).abs() < 1e-15);
    assert!((r.eu_norm - 0.96022971786076121752).abs() < 1e-15);
    assert_eq!(r.au_norm, 0.0);
}

#[test]
fn two_member_values_match_high_precision() {
    let e = pred(&[vec![0.7, 0.2, 0.1], vec![0.1, 0.6, 0.3]]);
    let r = decompose(&e).unwrap();
    assert!((r.tu - 1.0549201679861441271).abs() < 1e-15);
    assert!((r.au - 0.84988213870005854234).abs() < 1e-15);
    assert!((r.eu - 0.20503802928608558473).abs() < 1e-15);
    assert!((consensus(&e).probs()[0] - 0.4).abs() < 1e-16);
    assert_eq!(r.confidence, 0.4);
}

#[test]
fn disagreement_and_agreement_extremes() {
    let split = [0, 1, 2].map(|c| FirstOrderDist::one_hot(3, c));
    let r = decompose(&EnsemblePrediction::new(split.to_vec()).unwrap()).unwrap();
    assert!((r.tu_norm - 1.0).abs() < 1e-12 && r.au_norm == 0.0 && (r.eu_norm - 1.0).abs() < 1e-12);
    let same = vec![vec![0.2, 0.5, 0.3]; 4];
    assert!(decompose(&pred(&same)).unwrap().eu.abs() < 1e-12);
}

#[test]
fn boundary_bins() {
    assert_eq!(bin_index(0.0, 20).unwrap(), 0);
    assert_eq!(bin_index(0.05, 20).unwrap(), 0);
    assert_eq!(bin_index(0.95, 20).unwrap(), 18);
    assert_eq!(bin_index(1.0, 20).unwrap(), 19);
    assert!(matches!(bin_index(1.0 + 1e-9, 20), Err(UqError::ValueOutOfRange(_))));
}

#[test]
fn invalid_inputs_are_rejected() {
    assert!(FirstOrderDist::new(vec![0.5, 0.6, -0.1]).is_err());
    assert!(FirstOrderDist::new(vec![0.5, 0.4]).is_err());
    assert!(matches!(EnsemblePrediction::new(vec![]), Err(UqError::EmptyEnsemble)));
    let mixed = vec![FirstOrderDist::uniform(3), FirstOrderDist::uniform(2)];
    assert!(matches!(EnsemblePrediction::new(mixed), Err(UqError::ClassMismatch { .. })));
    assert!(selection_size(10, 0.0).is_err());
    assert_eq!(selection_size(15, 0.2).unwrap(), 3);
    assert_eq!(selection_size(1001, 0.2).unwrap(), 201);
}
