use akipred::dataset::{Dataset, FeatureKind};
use akipred::rng::rng_from_seed;
use akipred::selection::{
    chi_square_test, cohort_characteristics, pearson_correlation, select_features, welch_t_test,
};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

#[test]
fn welch_p_values_are_uniform_under_the_null() {
    let mut rng = rng_from_seed(21);
    let (a_dist, b_dist) = (
        Normal::new(3.0, 1.0).unwrap(),
        Normal::new(3.0, 2.5).unwrap(),
    );
    let mut p: Vec<f64> = (0..2000)
        .map(|_| {
            let a: Vec<f64> = (0..15).map(|_| a_dist.sample(&mut rng)).collect();
            let b: Vec<f64> = (0..27).map(|_| b_dist.sample(&mut rng)).collect();
            welch_t_test(&a, &b).unwrap().p_value
        })
        .collect();
    p.sort_by(f64::total_cmp);
    let n = p.len() as f64;
    let ks = p
        .iter()
        .enumerate()
        .map(|(i, &v)| (v - i as f64 / n).abs().max(((i + 1) as f64 / n - v).abs()))
        .fold(0.0, f64::max);
    // Asymptotic 1% critical value of the one-sample KS statistic.
    assert!(ks < 1.628 / n.sqrt(), "KS = {ks}");
}

#[test]
fn welch_agrees_with_direct_formula() {
    let a = [4.1, 5.3, 2.2, 6.8, 5.0, 3.9];
    let b = [7.7, 6.1, 9.4, 8.0, 5.6, 8.8, 7.2, 9.9];
    let stats = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        (
            m,
            x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0),
            n,
        )
    };
    let ((ma, va, na), (mb, vb, nb)) = (stats(&a), stats(&b));
    let se2 = va / na + vb / nb;
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let p = 2.0 * StudentsT::new(0.0, 1.0, df).unwrap().sf(t.abs());
    let r = welch_t_test(&a, &b).unwrap();
    assert!((r.statistic - t).abs() < 1e-12);
    assert!((r.p_value - p).abs() < 1e-10);
    let s = welch_t_test(&b, &a).unwrap();
    assert_eq!((s.statistic, s.p_value), (-r.statistic, r.p_value));

    let tiny = welch_t_test(&[0.0; 4], &[10.0, 10.0, 10.0, 10.0001]).unwrap();
    assert!(tiny.p_value < 1e-4);
    let same = welch_t_test(&a, &a).unwrap();
    assert_eq!((same.statistic, same.p_value), (0.0, 1.0));
}

#[test]
fn chi_square_worked_values() {
    // Every expected count is 25, so χ² = 4 · 5²/25 = 4.
    let r = chi_square_test([[20.0, 30.0], [30.0, 20.0]]).unwrap();
    assert!((r.statistic - 4.0).abs() < 1e-12);
    assert!((r.p_value - ChiSquared::new(1.0).unwrap().sf(4.0)).abs() < 1e-12);
    assert!((r.p_value - 0.0455).abs() < 1e-4);

    let vaso = chi_square_test([[1840.0, 570.0], [521.0, 370.0]]).unwrap();
    assert!(vaso.p_value < 1e-4);
    assert_eq!(
        chi_square_test([[10.0, 10.0], [10.0, 10.0]])
            .unwrap()
            .statistic,
        0.0
    );
    let homogeneous = chi_square_test([[30.0, 10.0], [60.0, 20.0]]).unwrap();
    assert!(homogeneous.statistic.abs() < 1e-12 && (homogeneous.p_value - 1.0).abs() < 1e-12);
}

#[test]
fn pure_noise_is_not_selected_at_large_n() {
    let mut rng = rng_from_seed(4);
    let n = 100_000;
    let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let y: Vec<f64> = (0..n)
        .map(|_| f64::from(rng.random_range(0..2u8)))
        .collect();
    assert!(pearson_correlation(&x, &y).unwrap().abs() < 0.1);
    assert!(
        (pearson_correlation(&[1.0, 2.0, 3.0, 4.0], &[0.0, 0.0, 1.0, 1.0]).unwrap()
            - 2.0 / 5f64.sqrt())
        .abs()
            < 1e-15
    );
}

#[test]
fn identically_distributed_feature_is_rarely_significant() {
    let mut rng = rng_from_seed(5);
    let reps = 1000;
    let mut significant = 0;
    for _ in 0..reps {
        let rows: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.random::<f64>()]).collect();
        let labels: Vec<u8> = (0..200).map(|i| u8::from(i % 3 == 0)).collect();
        let d = Dataset::from_rows(
            &rows,
            labels,
            vec!["x".into()],
            vec![FeatureKind::Continuous],
        )
        .unwrap();
        significant +=
            usize::from(cohort_characteristics(&d, 0.05).unwrap().features[0].significant);
    }
    let rate = significant as f64 / reps as f64;
    // 0.05 ± 4 binomial SEs.
    assert!(
        (rate - 0.05).abs() < 4.0 * (0.05f64 * 0.95 / reps as f64).sqrt(),
        "rate {rate}"
    );
}

proptest! {
    #[test]
    fn selection_ignores_positive_affine_rescaling(
        cols in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 30), 3),
        labels in prop::collection::vec(0u8..2, 30),
        scale in 0.01f64..100.0,
        shift in -50.0f64..50.0,
    ) {
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let rows: Vec<Vec<f64>> = (0..30).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
        let scaled: Vec<Vec<f64>> = rows.iter().map(|r| { let mut r = r.clone(); r[1] = r[1] * scale + shift; r }).collect();
        let names: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let kinds = vec![FeatureKind::Continuous; 3];
        let d1 = Dataset::from_rows(&rows, labels.clone(), names.clone(), kinds.clone()).unwrap();
        let d2 = Dataset::from_rows(&scaled, labels, names, kinds).unwrap();
        let (r1, r2) = (select_features(&d1, 0.0, 1.0).unwrap().1, select_features(&d2, 0.0, 1.0).unwrap().1);
        for (a, b) in r1.features.iter().zip(&r2.features) {
            match (a.r, b.r) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-9),
                (x, y) => prop_assert_eq!(x, y),
            }
        }
    }
}
