use fundus_core::metrics::{
    aggregate_cv, auc, delong_test, format_mean_std, format_p_value, jaccard_index, select_thresholds, MetricMap,
    ScoredSet, ThresholdMode,
};
use fundus_core::Error;
use proptest::prelude::*;

fn scored() -> impl Strategy<Value = ScoredSet> {
    (2usize..80)
        .prop_flat_map(|n| (prop::collection::vec(0u8..20, n), prop::collection::vec(any::<bool>(), n)))
        .prop_filter("both classes", |(_, l)| l.iter().any(|&x| x) && l.iter().any(|&x| !x))
        .prop_map(|(s, l)| ScoredSet::new(s.into_iter().map(|v| v as f64 / 19.0).collect(), l).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn auc_in_unit_interval_and_flips(s in scored()) {
        let a = auc(&s).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        let neg = ScoredSet::new(s.scores.iter().map(|v| -v).collect(), s.labels.clone()).unwrap();
        prop_assert!((auc(&neg).unwrap() - (1.0 - a)).abs() < 1e-12);
    }

    #[test]
    fn auc_invariant_to_monotone_maps(s in scored()) {
        let a = auc(&s).unwrap();
        let t = ScoredSet::new(s.scores.iter().map(|v| (3.0 * v).exp() + 7.0).collect(), s.labels.clone()).unwrap();
        prop_assert!((auc(&t).unwrap() - a).abs() < 1e-12);
    }

    #[test]
    fn delong_is_antisymmetric(s in scored(), shift in prop::collection::vec(0u8..10, 80)) {
        let b = ScoredSet::new(
            s.scores.iter().zip(&shift).map(|(v, d)| v + *d as f64 / 30.0).collect(),
            s.labels.clone(),
        ).unwrap();
        match (delong_test(&s, &b), delong_test(&b, &s)) {
            (Ok(x), Ok(y)) => {
                prop_assert!((x.z_statistic + y.z_statistic).abs() < 1e-9);
                prop_assert!((x.p_value - y.p_value).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&x.p_value));
            }
            (Err(Error::Degenerate(_)), Err(Error::Degenerate(_))) => {}
            other => prop_assert!(false, "asymmetric outcome {other:?}"),
        }
    }

    #[test]
    fn shared_thresholds_are_identical(s in scored()) {
        let cols = vec![s.clone(), s];
        let t = select_thresholds(&cols, &fundus_core::metrics::default_grid(), ThresholdMode::Shared).unwrap();
        prop_assert_eq!(t[0], t[1]);
    }

    #[test]
    fn jaccard_bounded(a in prop::collection::vec(any::<bool>(), 0..64)) {
        let b: Vec<bool> = a.iter().rev().copied().collect();
        let j = jaccard_index(&a, &b).unwrap().value;
        prop_assert!((0.0..=1.0).contains(&j));
    }
}

#[test]
fn identical_classifiers_give_p_one() {
    let s = ScoredSet::new(vec![0.1, 0.4, 0.35, 0.8], vec![false, false, true, true]).unwrap();
    let r = delong_test(&s, &s).unwrap();
    assert_eq!(r.p_value, 1.0);
}

#[test]
fn aggregate_uses_population_std() {
    let folds: Vec<MetricMap> = [0.9, 0.94, 0.95, 0.96]
        .iter()
        .map(|v| [("auc".to_string(), *v)].into_iter().collect())
        .collect();
    let r = aggregate_cv(folds).unwrap();
    let mean: f64 = (0.9 + 0.94 + 0.95 + 0.96) / 4.0;
    let var = [0.9f64, 0.94, 0.95, 0.96].iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
    assert!((r.mean["auc"] - mean).abs() < 1e-15);
    assert!((r.std["auc"] - var.sqrt()).abs() < 1e-15);
    assert!(matches!(aggregate_cv(vec![MetricMap::new()]), Err(Error::Aggregation(_))));
}

#[test]
fn table_cell_formats() {
    assert_eq!(format_mean_std(0.9451, 0.0021), "0.945 ± 0.002");
    assert_eq!(format_p_value(0.0004), "< 0.001");
    assert_eq!(format_p_value(0.0412), "0.041");
}
