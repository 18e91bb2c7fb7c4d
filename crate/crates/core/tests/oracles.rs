mod common;

use akipred::dataset::{Dataset, FeatureKind};
use akipred::evaluation::{auc, roc_area, roc_curve};
use akipred::explain::{shapley_linear, shapley_sampling, PermutationScheme};
use akipred::isotonic::pava;
use akipred::models::boosting::{fit_boosted, BoostingConfig, Growth};
use akipred::models::forest::ForestConfig;
use akipred::models::knn::{fit_knn, KnnConfig};
use akipred::models::logistic::{penalized_gradient, penalized_loss, sigmoid, LogisticConfig};
use akipred::models::svm::{rbf, solve_smo, Gram, SvmConfig};
use akipred::models::tree::Node;
use akipred::models::{fit, BoostingOverrides, BoostingPreset, ModelConfig, ModelSpec};
use akipred::rng::rng_from_seed;
use rand::Rng;

fn toy(n: usize, p: usize, seed: u64) -> Dataset {
    let mut rng = rng_from_seed(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let labels: Vec<u8> = rows
        .iter()
        .map(|r| {
            let s: f64 = r
                .iter()
                .enumerate()
                .map(|(j, v)| v * (1.0 - 0.4 * j as f64))
                .sum();
            u8::from(s + rng.random_range(-1.0..1.0) > 0.0)
        })
        .collect();
    let names = (0..p).map(|j| format!("f{j}")).collect();
    Dataset::from_rows(&rows, labels, names, vec![FeatureKind::Continuous; p]).unwrap()
}

#[test]
fn auc_matches_pair_count_and_trapezoid() {
    let mut rng = rng_from_seed(1);
    for _ in 0..200 {
        let n = rng.random_range(2..=50);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        // Coarse grid forces ties.
        let scores: Vec<f64> = (0..n)
            .map(|_| f64::from(rng.random_range(0..8)) / 8.0)
            .collect();
        let a = auc(&scores, &labels).unwrap();
        assert!((a - common::auc_pairs(&scores, &labels)).abs() < 1e-12);
        assert!((a - roc_area(&roc_curve(&scores, &labels).unwrap())).abs() < 1e-12);
    }
}

#[test]
fn pava_matches_exhaustive_isotonic_fit() {
    for len in 1..=6u32 {
        for code in 0..4u32.pow(len) {
            let y: Vec<f64> = (0..len)
                .map(|k| f64::from((code / 4u32.pow(k)) % 4))
                .collect();
            let fit = pava(&y, &vec![1.0; y.len()]);
            let oracle = common::isotonic_brute_force(&y);
            for (a, b) in fit.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-9, "{y:?}: {fit:?} vs {oracle:?}");
            }
        }
    }
    assert_eq!(pava(&[3.0, 1.0, 2.0], &[1.0; 3]), vec![2.0, 2.0, 2.0]);
}

#[test]
fn logistic_gradient_matches_central_differences() {
    let d = toy(60, 4, 2);
    let x: Vec<Vec<f64>> = d.rows().map(<[f64]>::to_vec).collect();
    let y = d.labels_f64();
    let mut rng = rng_from_seed(3);
    for _ in 0..50 {
        let c = [0.1, 1.0, 100.0][rng.random_range(0..3)];
        let params: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (gw, gb) = penalized_gradient(&params[..4], params[4], &x, &y, c);
        let mut analytic = gw;
        analytic.push(gb);
        let loss = |p: &[f64]| penalized_loss(&p[..4], p[4], &x, &y, c);
        assert!(common::finite_difference_gap(loss, &params, &analytic, 1e-5) < 1e-5);
    }
}

fn shapley_models() -> Vec<ModelSpec> {
    vec![
        ModelSpec::Logistic(LogisticConfig::default()),
        ModelSpec::Knn(KnnConfig { k: 5 }),
        ModelSpec::RandomForest(ForestConfig {
            n_trees: 10,
            max_depth: 4,
            min_samples_split: 4,
            min_samples_leaf: 1,
            max_features: None,
            bootstrap: true,
        }),
        ModelSpec::BoostedTrees {
            preset: BoostingPreset::LgbmLike,
            overrides: BoostingOverrides {
                rounds: Some(30),
                learning_rate: Some(0.3),
                ..Default::default()
            },
        },
        ModelSpec::SvmRbf(SvmConfig::default()),
    ]
}

#[test]
fn exhaustive_permutation_shapley_equals_coalition_enumeration() {
    let d = toy(40, 4, 5);
    let bg = d.select_rows(&(0..12).collect::<Vec<_>>());
    for spec in shapley_models() {
        let m = fit(&ModelConfig::new("m", spec), &d, 7).unwrap();
        for i in [20, 31] {
            let x = d.row(i);
            let a = shapley_sampling(&m, i, x, &bg, PermutationScheme::Exhaustive, 0).unwrap();
            let oracle = common::shapley_coalitions(&m, x, &bg);
            for (v, o) in a.values.iter().zip(&oracle) {
                assert!(
                    (v - o).abs() < 1e-9,
                    "{}: {:?} vs {oracle:?}",
                    m.name,
                    a.values
                );
            }
            assert!((a.reconstruction - m.margin(x).unwrap()).abs() < 1e-9);
        }
    }
}

#[test]
fn linear_closed_form_equals_enumeration() {
    let d = toy(50, 3, 8);
    let m = fit(
        &ModelConfig::new("lr", ModelSpec::Logistic(LogisticConfig::default())),
        &d,
        0,
    )
    .unwrap();
    for i in 0..5 {
        let a = shapley_linear(&m, i, d.row(i), &d).unwrap();
        let oracle = common::shapley_coalitions(&m, d.row(i), &d);
        for (v, o) in a.values.iter().zip(&oracle) {
            assert!((v - o).abs() < 1e-12);
        }
    }
}

fn six_rows() -> (Vec<Vec<f64>>, Vec<u8>) {
    let x = vec![
        vec![1.0, 7.0],
        vec![2.0, 3.0],
        vec![3.0, 8.0],
        vec![4.0, 1.0],
        vec![5.0, 5.0],
        vec![6.0, 2.0],
    ];
    (x, vec![0, 0, 1, 0, 1, 1])
}

fn stump_config(max_depth: usize, l2: f64) -> BoostingConfig {
    BoostingConfig {
        growth: Growth::DepthWise,
        max_depth,
        max_leaves: usize::MAX,
        lambda_l2: l2,
        lambda_l1: 0.0,
        learning_rate: 1.0,
        rounds: 1,
        min_child_hessian: 0.0,
        min_leaf_samples: 1,
    }
}

#[test]
fn boosting_root_leaf_and_split_match_formulas() {
    let (x, y) = six_rows();
    let p0 = 0.5; // three positives of six
    let g: Vec<f64> = y.iter().map(|&v| p0 - f64::from(v)).collect();
    let h = vec![p0 * (1.0 - p0); 6];
    for l2 in [0.0, 1.0, 3.5] {
        let m = fit_boosted(&x, &y, &stump_config(0, l2)).unwrap();
        // Base score is the prior log-odds, so the first-round root sum G is zero.
        assert_eq!(m.base_score, 0.0);
        let (gs, hs): (f64, f64) = (g.iter().sum(), h.iter().sum());
        let expected = if hs + l2 > 0.0 { -gs / (hs + l2) } else { 0.0 };
        assert!((m.trees[0].predict(&x[0]) - expected).abs() < 1e-9);

        let m = fit_boosted(&x, &y, &stump_config(1, l2)).unwrap();
        let (f, t, gain) = common::best_root_split(&x, &g, &h, l2).unwrap();
        let Node::Split {
            feature,
            threshold,
            gain: got,
            left,
            right,
        } = m.trees[0].nodes[0]
        else {
            panic!("root did not split");
        };
        assert_eq!((feature, threshold), (f, t));
        assert!((got - gain).abs() < 1e-9);
        let side = |go_left: bool| {
            let (mut gg, mut hh) = (0.0, 0.0);
            for i in 0..6 {
                if (x[i][f] <= t) == go_left {
                    gg += g[i];
                    hh += h[i];
                }
            }
            -gg / (hh + l2)
        };
        let leaf = |k: usize| match m.trees[0].nodes[k] {
            Node::Leaf { value } => value,
            _ => panic!("depth-one tree has leaf children"),
        };
        assert!((leaf(left) - side(true)).abs() < 1e-9);
        assert!((leaf(right) - side(false)).abs() < 1e-9);
        let prob = sigmoid(m.margin(&x[2]));
        assert!((0.0..=1.0).contains(&prob));
    }
}

#[test]
fn smo_matches_active_set_qp_oracle() {
    let pts = vec![
        vec![0.0, 0.0],
        vec![1.0, 0.5],
        vec![0.2, 1.1],
        vec![2.0, 2.0],
        vec![1.4, 2.3],
        vec![2.6, 1.2],
    ];
    let y = [-1.0, -1.0, 1.0, 1.0, -1.0, 1.0];
    for (c, gamma) in [(0.1, 0.02), (1.0, 0.5), (10.0, 2.0)] {
        let gram = Gram::new(&pts, gamma);
        let sol = solve_smo(&gram, &[0, 1, 2, 3, 4, 5], &y, c, 1e-6, None).unwrap();
        let k: Vec<Vec<f64>> = pts
            .iter()
            .map(|a| pts.iter().map(|b| rbf(a, b, gamma)).collect())
            .collect();
        let (best, _) = common::svm_dual_brute_force(&k, &y, c);
        assert!(
            (sol.objective - best).abs() < 1e-3,
            "C={c}: {} vs {best}",
            sol.objective
        );
        assert!(sol.alpha.iter().all(|&a| (0.0..=c).contains(&a)));
        let eq: f64 = sol.alpha.iter().zip(&y).map(|(a, y)| a * y).sum();
        assert!(eq.abs() < 1e-9);
    }
}

#[test]
fn knn_matches_full_distance_sort() {
    let d = toy(20, 2, 11);
    let rows: Vec<Vec<f64>> = d.rows().map(<[f64]>::to_vec).collect();
    let mut rng = rng_from_seed(12);
    for k in [1, 3, 7, 20] {
        let m = fit_knn(rows.clone(), d.labels().to_vec(), &KnnConfig { k }).unwrap();
        for _ in 0..5 {
            let q = vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            assert_eq!(
                m.predict(&q),
                common::knn_brute_force(&rows, d.labels(), k, &q)
            );
        }
        // Queries on a training row put it first (distance zero, lowest index on ties).
        if k == 1 {
            for (i, r) in rows.iter().enumerate() {
                assert_eq!(m.predict(r), f64::from(d.labels()[i]));
            }
        }
    }
}
