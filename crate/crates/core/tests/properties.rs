use proptest::prelude::*;
use selectivity::dissection::{self, ActivationMapStack, ConceptMaskSet};
use selectivity::metrics::{self, build_sweep, MetricsConfig};
use selectivity::report::{self, Measure};
use selectivity::store::{self, ActivationDataset, ActivationFormat, ActivationReader};
use selectivity::{analyze_unit, ClassIndex, UnitActivations, UnitMetrics};

/// (values, class ids) with at least two classes and tie-heavy values.
fn unit_strategy() -> impl Strategy<Value = (Vec<f32>, Vec<u32>)> {
    (2usize..6, 2usize..40)
        .prop_flat_map(|(n_classes, n)| {
            let n = n.max(n_classes);
            (
                prop::collection::vec((0i32..12).prop_map(|v| v as f32 * 0.5), n),
                prop::collection::vec(0u32..n_classes as u32, n - n_classes),
                Just(n_classes),
            )
        })
        .prop_map(|(values, mut classes, n_classes)| {
            // every class present at least once
            classes.extend(0..n_classes as u32);
            (values, classes)
        })
}

fn metrics_for(values: &[f32], classes: &[u32]) -> UnitMetrics {
    let labels = ClassIndex::from_class_ids(classes).unwrap();
    let config = MetricsConfig {
        k: (values.len() / 3).max(1),
        ..MetricsConfig::default()
    };
    analyze_unit(&UnitActivations::new(0, values.to_vec()), &labels, &config).unwrap()
}

proptest! {
    #[test]
    fn image_permutation_leaves_class_level_measures(
        (values, classes) in unit_strategy(),
        key in any::<u64>(),
    ) {
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by_key(|&i| (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ key);
        let pv: Vec<f32> = order.iter().map(|&i| values[i]).collect();
        let pc: Vec<u32> = order.iter().map(|&i| classes[i]).collect();
        let a = metrics_for(&values, &classes);
        let b = metrics_for(&pv, &pc);
        prop_assert_eq!(a.localist_class, b.localist_class);
        prop_assert_eq!(a.recall_at_precision, b.recall_at_precision);
        prop_assert_eq!(a.max_informedness, b.max_informedness);
        prop_assert!((a.precision.value - b.precision.value).abs() < 1e-12);
        let (ca, cb) = (a.ccmas.map(|c| c.value), b.ccmas.map(|c| c.value));
        prop_assert_eq!(ca.is_some(), cb.is_some());
        if let (Some(x), Some(y)) = (ca, cb) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn power_of_two_scaling_is_invariant((values, classes) in unit_strategy(), e in -4i32..5) {
        let s = 2f32.powi(e);
        let scaled: Vec<f32> = values.iter().map(|v| v * s).collect();
        let a = metrics_for(&values, &classes);
        let b = metrics_for(&scaled, &classes);
        prop_assert_eq!(a.localist_class, b.localist_class);
        prop_assert_eq!(a.precision, b.precision);
        prop_assert_eq!(a.recall_at_precision, b.recall_at_precision);
        prop_assert_eq!(a.recall_perfect_precision, b.recall_perfect_precision);
        prop_assert_eq!(a.ccmas, b.ccmas);
        prop_assert_eq!(a.max_informedness.informedness, b.max_informedness.informedness);
        prop_assert_eq!(a.max_informedness.class, b.max_informedness.class);
        prop_assert_eq!(a.max_informedness.threshold * s, b.max_informedness.threshold);
    }

    #[test]
    fn recall_at_precision_falls_as_target_rises((values, classes) in unit_strategy()) {
        let labels = ClassIndex::from_class_ids(&classes).unwrap();
        let sweep = build_sweep(&UnitActivations::new(0, values), &labels).unwrap();
        let mut last = f64::INFINITY;
        for p in [0.05, 0.25, 0.5, 0.75, 0.9, 0.95, 1.0] {
            let r = metrics::recall_at_precision(&sweep, p).unwrap().value;
            prop_assert!(r <= last);
            last = r;
        }
        let rpp = metrics::recall_perfect_precision(&sweep).value;
        prop_assert_eq!(metrics::recall_at_precision(&sweep, 1.0).unwrap().value, rpp);
    }

    #[test]
    fn localist_iff_full_recall_at_perfect_precision((values, classes) in unit_strategy()) {
        let m = metrics_for(&values, &classes);
        prop_assert_eq!(m.localist_class.is_some(), m.recall_perfect_precision.value == 1.0);
        if let Some(c) = m.localist_class {
            prop_assert_eq!(c, m.recall_perfect_precision.class);
            prop_assert!((m.max_informedness.informedness - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bounded_scores_and_rank_order((values, classes) in unit_strategy()) {
        let m = metrics_for(&values, &classes);
        prop_assert!(m.precision.value > 0.0 && m.precision.value <= 1.0);
        prop_assert!(m.max_informedness.informedness >= 0.0 && m.max_informedness.informedness <= 1.0);
        let inf = &m.max_informedness;
        prop_assert!((inf.informedness - (inf.recall + inf.specificity - 1.0)).abs() < 1e-15);
        prop_assert!((inf.fallout - (1.0 - inf.specificity)).abs() < 1e-12);
        if let (Some(a), Some(b)) = (m.ccmas, m.ccmas2) {
            prop_assert!(b.value <= a.value);
            prop_assert!(a.class != b.class);
        }
        if let Some(c) = m.ccmas {
            prop_assert!(c.value >= -1.0 - 1e-12 && c.value <= 1.0 + 1e-12);
        }
        prop_assert!(m.n_classes_topk >= 1 && m.n_classes_topk <= m.n_classes_k);
    }

    #[test]
    fn binary_round_trip_is_exact(
        units in prop::collection::vec(prop::collection::vec(-1e6f32..1e6, 7), 1..5),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.sela");
        let ds = ActivationDataset::from_units(&units).unwrap();
        store::write_activations(&ds, &path).unwrap();
        prop_assert_eq!(std::fs::metadata(&path).unwrap().len(), 16 + 4 * 7 * units.len() as u64);
        let back = store::load_activations(&path, ActivationFormat::Binary).unwrap();
        prop_assert_eq!(back.as_slice(), ds.as_slice());
    }

    #[test]
    fn iou_is_symmetric(a in prop::collection::vec(any::<bool>(), 1..64), seed in any::<u64>()) {
        let b: Vec<bool> = a.iter().enumerate().map(|(i, &x)| x ^ ((seed >> (i % 64)) & 1 == 1)).collect();
        prop_assert_eq!(dissection::iou(&a, &b).unwrap(), dissection::iou(&b, &a).unwrap());
        let s = dissection::iou(&a, &a).unwrap();
        prop_assert!(s == 1.0 || (s == 0.0 && a.iter().all(|x| !x)));
    }

    #[test]
    fn summary_ignores_unit_order(mut values in prop::collection::vec(-100.0f64..100.0, 1..60)) {
        let wrap = |v: &[f64]| v.iter().map(|&x| Some(x)).collect::<Vec<_>>();
        let a = report::summarize_values(Measure::Ccmas, &wrap(&values)).unwrap();
        values.reverse();
        let half = values.len() / 2;
        values.rotate_left(half);
        let b = report::summarize_values(Measure::Ccmas, &wrap(&values)).unwrap();
        prop_assert_eq!((a.q1, a.median, a.q3, a.outliers.clone()), (b.q1, b.median, b.q3, b.outliers.clone()));
        prop_assert!((a.mean - b.mean).abs() < 1e-9);
        prop_assert!(a.whisker_low >= a.min && a.whisker_high <= a.max);
    }

    #[test]
    fn self_correlation_is_one(values in prop::collection::vec(-100.0f64..100.0, 3..40)) {
        let pairs: Vec<(f64, f64)> = values.iter().map(|&v| (v, v)).collect();
        let neg: Vec<(f64, f64)> = values.iter().map(|&v| (v, -v)).collect();
        let m = Measure::Precision;
        if let Ok(r) = report::pearson(&pairs, m, m) {
            prop_assert!((r - 1.0).abs() < 1e-12);
            prop_assert!((report::pearson(&neg, m, m).unwrap() + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dissection_ignores_image_order(
        maps in prop::collection::vec(0u8..8, 3 * 4),
        masks in prop::collection::vec(any::<bool>(), 3 * 16),
        shift in 0usize..3,
    ) {
        let stack = ActivationMapStack::new(0, 2, 2, maps.iter().map(|&v| v as f32).collect()).unwrap();
        let concept = ConceptMaskSet::new(0, "c", 4, 4, masks.clone()).unwrap();
        let a = dissection::dissect_unit(&stack, &[concept], 0.25).unwrap();
        let rot = |v: &[u8], per: usize| { let mut v = v.to_vec(); v.rotate_left(shift * per); v };
        let rmaps = rot(&maps, 4);
        let rmasks: Vec<bool> = { let mut m = masks.clone(); m.rotate_left(shift * 16); m };
        let stack = ActivationMapStack::new(0, 2, 2, rmaps.iter().map(|&v| v as f32).collect()).unwrap();
        let concept = ConceptMaskSet::new(0, "c", 4, 4, rmasks).unwrap();
        let b = dissection::dissect_unit(&stack, &[concept], 0.25).unwrap();
        prop_assert!((a.iou - b.iou).abs() < 1e-12);
        prop_assert_eq!(a.binarization_threshold, b.binarization_threshold);
    }
}

#[test]
fn streaming_matches_in_memory_analysis() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.sela");
    let classes: Vec<u32> = (0..60).map(|i| (i * 7 % 5) as u32).collect();
    let units: Vec<Vec<f32>> = (0..9)
        .map(|u| (0..60).map(|i| ((i * (u + 3)) % 11) as f32 - 2.0).collect())
        .collect();
    let ds = ActivationDataset::from_units(&units).unwrap();
    store::write_activations(&ds, &path).unwrap();
    let labels = ClassIndex::from_class_ids(&classes).unwrap();
    let config = MetricsConfig { k: 12, ..MetricsConfig::default() };
    let selected = [0usize, 2, 3, 8];
    let expected = metrics::analyze_dataset(&ds, &labels, &config, &selected, 1).unwrap();
    for threads in [1, 3] {
        let mut reader = ActivationReader::open(&path).unwrap();
        let mut got = Vec::new();
        metrics::analyze_stream(&mut reader, &labels, &config, |u| selected.contains(&u), threads, |m| {
            got.push(m);
            Ok(())
        })
        .unwrap();
        assert_eq!(got, expected, "threads {threads}");
    }
    let parallel = metrics::analyze_dataset(&ds, &labels, &config, &selected, 2).unwrap();
    assert_eq!(parallel, expected);
}

#[test]
fn csv_export_round_trips_to_six_digits() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    let classes: Vec<u32> = (0..30).map(|i| i % 3).collect();
    let metrics: Vec<UnitMetrics> = (0..4)
        .map(|u| {
            let values: Vec<f32> = (0..30).map(|i| ((i * (u + 2)) % 7) as f32 / 3.0).collect();
            let mut m = metrics_for(&values, &classes);
            m.unit_id = u as usize;
            m.iou = (u % 2 == 0).then_some(0.0123456789);
            m
        })
        .collect();
    report::export_csv(&metrics, &path).unwrap();
    let back = report::parse_metrics_csv(&path).unwrap();
    assert_eq!(back.len(), metrics.len());
    for (a, b) in metrics.iter().zip(&back) {
        for m in Measure::ALL {
            match (m.value(a), m.value(b)) {
                (Some(x), Some(y)) => assert!(
                    x == y || ((x - y) / x).abs() <= 5e-6,
                    "{m}: {x} vs {y}"
                ),
                (None, None) => {}
                other => panic!("{m}: {other:?}"),
            }
        }
        assert_eq!(a.max_informedness.class, b.max_informedness.class);
        assert_eq!(a.unit_id, b.unit_id);
    }
    // second export of the parsed table is byte-identical
    let again = dir.path().join("m2.csv");
    report::export_csv(&back, &again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}
