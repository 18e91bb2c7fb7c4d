//! Input fixtures shared by the benchmarks.

use akipred::Dataset;

/// Deterministic two-class dataset with `p` continuous features.
pub fn fixture(n: usize, p: usize) -> Dataset {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..p)
                .map(|j| ((i * (j + 3)) as f64 * 0.618).sin() + (i % 3) as f64 * 0.1 * j as f64)
                .collect()
        })
        .collect();
    let labels = rows
        .iter()
        .map(|r| u8::from(r.iter().sum::<f64>() > 0.0))
        .collect();
    let names = (0..p).map(|j| format!("x{j}")).collect();
    Dataset::from_rows(
        &rows,
        labels,
        names,
        vec![akipred::FeatureKind::Continuous; p],
    )
    .expect("valid fixture")
}
