mod common;

use common::oracle::{self, Instance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use selectivity::metrics::{self, build_sweep, MetricsConfig, TieMode};
use selectivity::{analyze_unit, ClassIndex, UnitActivations};

const TOL: f64 = 1e-9;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL
}

fn check(seed: u64, inst: &Instance) {
    let labels = ClassIndex::from_class_ids(&inst.classes).unwrap();
    let acts = UnitActivations::new(0, inst.values.clone());
    let n = inst.values.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let k = rng.gen_range(1..=n);
    let target = [0.5, 0.75, 0.9, 0.95, 1.0][rng.gen_range(0..5)];
    let ctx = format!("seed {seed}, k {k}, target {target}: {inst:?}");

    let sweep = build_sweep(&acts, &labels).unwrap();
    assert_eq!(metrics::localist_class(&sweep), oracle::localist(inst), "localist {ctx}");

    let p = metrics::precision_topk(&sweep, k, TieMode::Deterministic).unwrap();
    let (c, v) = oracle::precision_deterministic(inst, k);
    assert_eq!(p.class, c, "deterministic precision class {ctx}");
    assert!(close(p.value, v), "deterministic precision {} vs {v} {ctx}", p.value);

    let p = metrics::precision_topk(&sweep, k, TieMode::Expected).unwrap();
    let (c, v) = oracle::precision_expected(inst, k);
    assert_eq!(p.class, c, "expected precision class {ctx}");
    assert!(close(p.value, v), "expected precision {} vs {v} {ctx}", p.value);

    assert_eq!(metrics::n_classes_topk(&sweep, k).unwrap(), oracle::n_classes_topk(inst, k), "n_classes {ctx}");

    let ranking = oracle::ccmas_ranking(inst);
    for rank in 1..=2 {
        let got = metrics::ccmas(&acts, &labels, rank).unwrap();
        match (got, ranking.get(rank - 1)) {
            (None, None) => {}
            (Some(g), Some(&(c, v))) => {
                assert_eq!(g.class, c, "ccmas{rank} class {ctx}");
                assert!(close(g.value, v), "ccmas{rank} {} vs {v} {ctx}", g.value);
            }
            (g, o) => panic!("ccmas{rank} definedness {g:?} vs {o:?} {ctx}"),
        }
    }

    let rpp = metrics::recall_perfect_precision(&sweep);
    let (c, v) = oracle::recall_perfect_precision(inst);
    assert_eq!(rpp.class, c, "rpp class {ctx}");
    assert!(close(rpp.value, v), "rpp {} vs {v} {ctx}", rpp.value);

    let rap = metrics::recall_at_precision(&sweep, target).unwrap();
    let (c, v) = oracle::recall_at_precision(inst, target);
    assert_eq!(rap.class, c, "rap class {ctx}");
    assert!(close(rap.value, v), "rap {} vs {v} {ctx}", rap.value);

    let inf = metrics::max_informedness(&sweep).unwrap();
    let o = oracle::max_informedness(inst);
    assert_eq!(inf.class, o.class, "informedness class {ctx}");
    assert_eq!(inf.threshold, o.threshold, "informedness threshold {ctx}");
    for (a, b, name) in [
        (inf.informedness, o.informedness, "informedness"),
        (inf.recall, o.recall, "recall"),
        (inf.specificity, o.specificity, "specificity"),
        (inf.fallout, o.fallout, "fallout"),
        (inf.false_discovery_rate, o.fdr, "fdr"),
    ] {
        assert!(close(a, b), "{name} {a} vs {b} {ctx}");
    }

    // full scorecard agrees with the individual measures
    let config = MetricsConfig {
        k,
        precision_target: target,
        ..MetricsConfig::default()
    };
    let m = analyze_unit(&acts, &labels, &config).unwrap();
    assert_eq!(m.max_informedness, inf);
    assert_eq!(m.recall_at_precision, rap);
    let stats_class = ranking.first().map_or(o.class, |r| r.0);
    assert_eq!(m.class_stats.class, stats_class);
    let (a, b, pa, pb) = oracle::class_stats(inst, stats_class);
    for (x, y) in [
        (m.class_stats.mean_in, a),
        (m.class_stats.mean_out, b),
        (m.class_stats.prop_nonzero_in, pa),
        (m.class_stats.prop_nonzero_out, pb),
    ] {
        assert!(close(x, y), "class stats {x} vs {y} {ctx}");
    }
}

#[test]
fn measures_match_brute_force_on_random_instances() {
    for seed in 0..500u64 {
        check(seed, &oracle::random_instance(seed, 10, 50));
    }
}

#[test]
fn measures_match_brute_force_on_tiny_instances() {
    // tiny instances hit edge cases: singleton classes, all-tied units
    for seed in 1000..3000u64 {
        check(seed, &oracle::random_instance(seed, 3, 3));
    }
}

#[test]
fn prefix_counts_match_naive_recount() {
    for seed in 0..200u64 {
        let inst = oracle::random_instance(seed, 6, 20);
        let labels = ClassIndex::from_class_ids(&inst.classes).unwrap();
        let acts = UnitActivations::new(0, inst.values.clone());
        let sweep = build_sweep(&acts, &labels).unwrap();
        let prefix = sweep.prefix_counts();
        assert_eq!(prefix.len(), sweep.n_thresholds());
        for (t, changed) in prefix {
            for (class, count) in changed {
                let naive = inst
                    .values
                    .iter()
                    .zip(&inst.classes)
                    .filter(|(&v, &c)| c == class && v >= t)
                    .count();
                assert_eq!(count, naive, "seed {seed} class {class} threshold {t}");
            }
        }
        // sorted order: descending values, ascending image index on ties
        for i in 1..sweep.len() {
            let (a, b) = (sweep.value(i - 1), sweep.value(i));
            assert!(a > b || (a == b && sweep.image(i - 1) < sweep.image(i)));
        }
    }
}

#[test]
fn single_active_precision_matches_hand_value() {
    // one class-0 image at 1, the rest at 0; k = 100 over 1000 images:
    // 99 slots drawn from 999 tied images, 99 of which are class 0
    let mut values = vec![0.0f32; 1000];
    values[17] = 1.0;
    let classes: Vec<u32> = (0..1000).map(|i| i / 100).collect();
    let labels = ClassIndex::from_class_ids(&classes).unwrap();
    let sweep = build_sweep(&UnitActivations::new(0, values), &labels).unwrap();
    let p = metrics::precision_topk(&sweep, 100, TieMode::Expected).unwrap();
    let hand = (1.0 + 99.0 * 99.0 / 999.0) / 100.0;
    assert_eq!(p.class, 0);
    assert!((p.value - hand).abs() < 1e-12);
    let d = metrics::precision_topk(&sweep, 100, TieMode::Deterministic).unwrap();
    assert_eq!((d.class, d.value), (0, 1.0));
}
