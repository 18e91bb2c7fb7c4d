use std::collections::BTreeMap;

use akipred::dataset::{Dataset, FeatureKind};
use akipred::evaluation::{auc, brier_score, roc_curve, threshold_metrics};
use akipred::explain::{shapley_sampling, PermutationScheme};
use akipred::isotonic::IsotonicCalibrator;
use akipred::missing::{mice_impute, pool_imputations, MiceConfig};
use akipred::models::boosting::Growth;
use akipred::models::knn::KnnConfig;
use akipred::models::{fit, BoostingOverrides, BoostingPreset, ModelConfig, ModelSpec};
use akipred::resample::{smote, stratified_split, SmoteSpec, SplitSpec};
use akipred::rng::rng_from_seed;
use proptest::prelude::*;
use rand::Rng;

fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    prop::collection::vec((0.0f64..1.0, 0u8..2), 2..60)
        .prop_filter("both classes", |v| {
            v.iter().any(|x| x.1 == 0) && v.iter().any(|x| x.1 == 1)
        })
        .prop_map(|v| v.into_iter().unzip())
}

fn dataset(rows: &[Vec<f64>], labels: Vec<u8>) -> Dataset {
    let p = rows[0].len();
    Dataset::from_rows(
        rows,
        labels,
        (0..p).map(|j| format!("x{j}")).collect(),
        vec![FeatureKind::Continuous; p],
    )
    .unwrap()
}

fn labelled_rows() -> impl Strategy<Value = Dataset> {
    (prop::collection::vec((prop::collection::vec(-10.0f64..10.0, 3), 0u8..2), 12..80))
        .prop_filter_map("needs at least four of each class", |v| {
            let pos = v.iter().filter(|r| r.1 == 1).count();
            if pos < 4 || v.len() - pos < 4 {
                return None;
            }
            let (rows, labels): (Vec<_>, Vec<_>) = v.into_iter().unzip();
            Some(dataset(&rows, labels))
        })
}

proptest! {
    #[test]
    fn auc_is_rank_based((s, y) in scored(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let base = auc(&s, &y).unwrap();
        let affine: Vec<f64> = s.iter().map(|v| a * v + b).collect();
        let exp: Vec<f64> = s.iter().map(|v| (3.0 * v).exp()).collect();
        prop_assert!((auc(&affine, &y).unwrap() - base).abs() < 1e-12);
        prop_assert!((auc(&exp, &y).unwrap() - base).abs() < 1e-12);
        let mut distinct = s.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        if distinct.len() == s.len() {
            let neg: Vec<f64> = s.iter().map(|v| -v).collect();
            prop_assert!((auc(&neg, &y).unwrap() + base - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn recall_is_the_roc_tpr_at_the_same_threshold((s, y) in scored()) {
        for p in roc_curve(&s, &y).unwrap().iter().filter(|p| p.threshold.is_finite()) {
            let m = threshold_metrics(&s, &y, p.threshold).unwrap();
            prop_assert!((m.recall - p.tpr).abs() < 1e-12);
        }
    }

    #[test]
    fn isotonic_never_raises_in_sample_brier((s, y) in scored()) {
        let iso = IsotonicCalibrator::fit(&s, &y).unwrap();
        let cal = iso.apply_all(&s);
        prop_assert!(brier_score(&cal, &y).unwrap() <= brier_score(&s, &y).unwrap() + 1e-12);
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&i, &j| s[i].total_cmp(&s[j]));
        prop_assert!(order.windows(2).all(|w| cal[w[0]] <= cal[w[1]] + 1e-15));
    }

    #[test]
    fn smote_keeps_originals_and_interpolates(d in labelled_rows(), seed in 0u64..1000) {
        let r = smote(&d, &SmoteSpec { k: 3, target_ratio: 1.0, seed }).unwrap();
        let n = d.n_rows();
        prop_assert_eq!(&r.dataset.select_rows(&(0..n).collect::<Vec<_>>()), &d);
        let (neg, pos) = r.dataset.class_counts();
        prop_assert_eq!(neg, pos);
        let minority = if d.class_counts().1 < d.class_counts().0 { 1 } else { 0 };
        for (k, o) in r.origins.iter().enumerate() {
            let row = r.dataset.row(n + k);
            prop_assert!((0.0..=1.0).contains(&o.u));
            prop_assert_eq!(r.dataset.labels()[n + k], minority);
            prop_assert!(r.dataset.synthetic()[n + k]);
            let (a, b) = (d.row(o.seed_row), d.row(o.neighbor_row));
            for j in 0..row.len() {
                prop_assert!((row[j] - (a[j] + o.u * (b[j] - a[j]))).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn split_partitions_the_rows(d in labelled_rows(), seed in 0u64..1000, stratify in any::<bool>()) {
        let spec = SplitSpec { stratify, seed, ..SplitSpec::default() };
        let s = stratified_split(&d, &spec).unwrap();
        let count = |ds: &[&Dataset]| {
            let mut m = BTreeMap::new();
            for d in ds {
                for (i, r) in d.rows().enumerate() {
                    let key: Vec<u64> = r.iter().map(|v| v.to_bits()).chain([u64::from(d.labels()[i])]).collect();
                    *m.entry(key).or_insert(0) += 1;
                }
            }
            m
        };
        prop_assert_eq!(count(&[&s.train, &s.test, &s.validation]), count(&[&d]));
        let (a, b, c) = spec.sizes(d.n_rows());
        prop_assert_eq!((s.train.n_rows(), s.test.n_rows(), s.validation.n_rows()), (a, b, c));
    }
}

fn with_holes(seed: u64) -> Dataset {
    let mut rng = rng_from_seed(seed);
    let n = 80;
    let mut values = Vec::new();
    let mut missing = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n {
        let a: f64 = rng.random_range(0.0..5.0);
        let row = [
            a,
            2.0 * a + rng.random_range(-0.1..0.1),
            f64::from(u8::from(a > 2.5)),
        ];
        for v in row {
            let hole = rng.random::<f64>() < 0.15;
            values.push(if hole { f64::NAN } else { v });
            missing.push(hole);
        }
        labels.push(u8::from(a + rng.random_range(-1.0..1.0) > 2.5));
    }
    let kinds = vec![
        FeatureKind::Continuous,
        FeatureKind::Continuous,
        FeatureKind::Binary,
    ];
    Dataset::from_parts(
        values,
        missing,
        labels,
        vec!["a".into(), "b".into(), "flag".into()],
        kinds,
    )
    .unwrap()
}

#[test]
fn mice_preserves_observed_cells_and_is_deterministic() {
    for seed in 0..5 {
        let d = with_holes(seed);
        let cfg = MiceConfig::default();
        let r = mice_impute(&d, &cfg, seed).unwrap();
        let again = mice_impute(&d, &cfg, seed).unwrap();
        let pooled = pool_imputations(&r).unwrap();
        assert_eq!(pooled, pool_imputations(&again).unwrap());
        for c in r.completed.iter().chain([&pooled]) {
            assert!(!c.has_missing());
            for i in 0..d.n_rows() {
                for j in 0..d.n_features() {
                    if !d.is_missing(i, j) {
                        assert_eq!(c.value(i, j).to_bits(), d.value(i, j).to_bits());
                    }
                }
                assert!(matches!(c.value(i, 2), 0.0 | 1.0));
            }
        }
    }
}

#[test]
fn shapley_symmetry_dummy_and_efficiency() {
    let mut rng = rng_from_seed(13);
    let rows: Vec<Vec<f64>> = (0..40)
        .map(|_| {
            let a = rng.random_range(-1.0..1.0);
            vec![a, a, rng.random_range(-1.0..1.0)]
        })
        .collect();
    let labels: Vec<u8> = rows
        .iter()
        .map(|r| u8::from(r[0] + 0.3 * r[2] > 0.0))
        .collect();
    let d = dataset(&rows, labels);
    let bg = d.select_rows(&(0..10).collect::<Vec<_>>());

    // KNN treats the duplicated columns identically.
    let knn = fit(
        &ModelConfig::new("knn", ModelSpec::Knn(KnnConfig { k: 5 })),
        &d,
        0,
    )
    .unwrap();
    for i in 10..20 {
        let a = shapley_sampling(&knn, i, d.row(i), &bg, PermutationScheme::Exhaustive, 0).unwrap();
        assert!((a.values[0] - a.values[1]).abs() < 1e-12);
        assert!((a.reconstruction - knn.margin(d.row(i)).unwrap()).abs() < 1e-9);
    }

    // A single stump uses one feature; the others are dummies.
    let stump = ModelSpec::BoostedTrees {
        preset: BoostingPreset::XgbLike,
        overrides: BoostingOverrides {
            growth: Some(Growth::DepthWise),
            max_depth: Some(1),
            rounds: Some(1),
            lambda_l1: Some(0.0),
            lambda_l2: Some(1.0),
            learning_rate: Some(1.0),
            ..Default::default()
        },
    };
    let m = fit(&ModelConfig::new("stump", stump), &d, 0).unwrap();
    let used = match &m.params {
        akipred::models::ModelParams::BoostedTrees(b) => match b.trees[0].nodes[0] {
            akipred::models::tree::Node::Split { feature, .. } => feature,
            _ => panic!("stump did not split"),
        },
        _ => unreachable!(),
    };
    for i in 10..20 {
        let a = shapley_sampling(&m, i, d.row(i), &bg, PermutationScheme::Exhaustive, 0).unwrap();
        for j in (0..3).filter(|&j| j != used) {
            assert_eq!(a.values[j], 0.0);
        }
        let s = shapley_sampling(
            &m,
            i,
            d.row(i),
            &bg,
            PermutationScheme::Sampled { permutations: 20 },
            i as u64,
        )
        .unwrap();
        assert!((s.reconstruction - m.margin(d.row(i)).unwrap()).abs() < 1e-9);
        let se = s.std_errors.unwrap();
        for j in 0..3 {
            assert!((s.values[j] - a.values[j]).abs() <= 3.0 * se[j] + 1e-12);
        }
    }
}

#[test]
fn boosting_is_invariant_under_feature_reordering() {
    let mut rng = rng_from_seed(17);
    let rows: Vec<Vec<f64>> = (0..150)
        .map(|_| (0..3).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect();
    let labels: Vec<u8> = rows
        .iter()
        .map(|r| u8::from(r[0] * r[1] + r[2] + rng.random_range(-1.0..1.0) > 0.0))
        .collect();
    let perm = [2, 0, 1];
    let permuted: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| perm.iter().map(|&j| r[j]).collect())
        .collect();
    let spec = ModelSpec::BoostedTrees {
        preset: BoostingPreset::LgbmLike,
        overrides: BoostingOverrides {
            rounds: Some(40),
            ..Default::default()
        },
    };
    let a = fit(
        &ModelConfig::new("b", spec.clone()),
        &dataset(&rows, labels.clone()),
        1,
    )
    .unwrap();
    let b = fit(&ModelConfig::new("b", spec), &dataset(&permuted, labels), 1).unwrap();
    for (r, q) in rows.iter().zip(&permuted) {
        // Node sums run in a different order, so agreement is up to rounding.
        assert!((a.predict_proba(r).unwrap() - b.predict_proba(q).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn logistic_probability_follows_weight_signs() {
    let mut rng = rng_from_seed(19);
    let rows: Vec<Vec<f64>> = (0..200)
        .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let labels: Vec<u8> = rows
        .iter()
        .map(|r| u8::from(r[0] - r[1] + rng.random_range(-1.0..1.0) > 0.0))
        .collect();
    let m = fit(
        &ModelConfig::new("lr", ModelSpec::default_for("logistic").unwrap()),
        &dataset(&rows, labels),
        0,
    )
    .unwrap();
    let akipred::models::ModelParams::Logistic { weights, .. } = &m.params else {
        unreachable!()
    };
    for j in 0..3 {
        let mut x = vec![0.1, -0.2, 0.3];
        let lo = m.predict_proba(&x).unwrap();
        x[j] += 0.5;
        let hi = m.predict_proba(&x).unwrap();
        assert_eq!(hi > lo, weights[j] > 0.0);
    }
}
