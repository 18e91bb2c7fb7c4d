//! Correlation screening against the outcome and the two-group comparison
//! tests (Welch t, Pearson chi-square) used for the cohort characteristics table.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FeatureKind};
use crate::error::{Error, Result};
use crate::stats;

pub fn pearson_correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InvalidInput(
            "correlation needs at least two points".into(),
        ));
    }
    let mx = stats::mean(x);
    let my = stats::mean(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCorrelation {
    pub feature: String,
    /// `None` when the feature has zero variance.
    pub r: Option<f64>,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub features: Vec<FeatureCorrelation>,
    pub lo: f64,
    pub hi: f64,
}

impl CorrelationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature,r,abs_r,selected\n");
        for f in &self.features {
            let (r, a) = match f.r {
                Some(r) => (r.to_string(), r.abs().to_string()),
                None => (String::new(), String::new()),
            };
            out.push_str(&format!("{},{},{},{}\n", f.feature, r, a, f.selected));
        }
        out
    }
}

/// Keeps features with `lo ≤ |r| ≤ hi` against the label.
pub fn select_features(d: &Dataset, lo: f64, hi: f64) -> Result<(Dataset, CorrelationReport)> {
    if d.has_missing() {
        return Err(Error::InvalidInput(
            "feature selection requires a complete dataset".into(),
        ));
    }
    if !(lo <= hi) {
        return Err(Error::Config(format!(
            "selection bounds [{lo}, {hi}] are inverted"
        )));
    }
    let y = d.labels_f64();
    let mut features = Vec::with_capacity(d.n_features());
    let mut keep = Vec::new();
    for j in 0..d.n_features() {
        let r = match pearson_correlation(&d.column(j), &y) {
            Ok(r) => Some(r),
            Err(Error::ZeroVariance) => None,
            Err(e) => return Err(e),
        };
        let selected = r.is_some_and(|r| lo <= r.abs() && r.abs() <= hi);
        if selected {
            keep.push(j);
        }
        features.push(FeatureCorrelation {
            feature: d.feature_names()[j].clone(),
            r,
            selected,
        });
    }
    if keep.is_empty() {
        return Err(Error::EmptySelection { lo, hi });
    }
    Ok((
        d.select_features(&keep),
        CorrelationReport { features, lo, hi },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample t-test without the equal-variance assumption, with
/// Welch–Satterthwaite degrees of freedom.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidInput(
            "Welch t-test needs two samples of size >= 2".into(),
        ));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "Welch t-test received non-finite values".into(),
        ));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (stats::mean(a), stats::mean(b));
    let (va, vb) = (
        stats::sample_variance(a) / na,
        stats::sample_variance(b) / nb,
    );
    let se2 = va + vb;
    if se2 <= 0.0 {
        return Ok(if ma == mb {
            TestResult {
                statistic: 0.0,
                p_value: 1.0,
            }
        } else {
            TestResult {
                statistic: if ma > mb {
                    f64::INFINITY
                } else {
                    f64::NEG_INFINITY
                },
                p_value: 0.0,
            }
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    Ok(TestResult {
        statistic: t,
        p_value: stats::student_t_two_sided(t, df),
    })
}

/// Pearson chi-square on a 2×2 table (no continuity correction, 1 df).
/// `counts[g]` holds `[with, without]` for group `g`.
pub fn chi_square_test(counts: [[f64; 2]; 2]) -> Result<TestResult> {
    let total: f64 = counts.iter().flatten().sum();
    let rows = [counts[0][0] + counts[0][1], counts[1][0] + counts[1][1]];
    let cols = [counts[0][0] + counts[1][0], counts[0][1] + counts[1][1]];
    if counts.iter().flatten().any(|c| *c < 0.0) {
        return Err(Error::InvalidInput(
            "negative count in contingency table".into(),
        ));
    }
    if rows.iter().chain(&cols).any(|m| *m <= 0.0) {
        return Err(Error::DegenerateTable);
    }
    let mut chi2 = 0.0;
    for g in 0..2 {
        for k in 0..2 {
            let expected = rows[g] * cols[k] / total;
            chi2 += (counts[g][k] - expected).powi(2) / expected;
        }
    }
    Ok(TestResult {
        statistic: chi2,
        p_value: stats::chi_square_sf(chi2, 1.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureComparison {
    pub feature: String,
    pub kind: FeatureKind,
    /// Group mean (continuous) or count of 1s (binary) among positives.
    pub positive_value: f64,
    pub negative_value: f64,
    pub test: String,
    pub statistic: f64,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortComparison {
    pub positives: usize,
    pub negatives: usize,
    pub alpha: f64,
    pub features: Vec<FeatureComparison>,
}

impl CohortComparison {
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "feature,kind,positive (N = {}),negative (N = {}),test,statistic,p_value,significant\n",
            self.positives, self.negatives
        );
        for f in &self.features {
            let kind = match f.kind {
                FeatureKind::Continuous => "mean",
                FeatureKind::Binary => "count",
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                f.feature,
                kind,
                f.positive_value,
                f.negative_value,
                f.test,
                f.statistic,
                format_p(f.p_value),
                f.significant
            ));
        }
        out
    }
}

fn format_p(p: f64) -> String {
    if p < 1e-4 {
        "<0.0001".to_string()
    } else {
        format!("{p:.4}")
    }
}

/// Compares every feature between the outcome groups.
pub fn cohort_characteristics(d: &Dataset, alpha: f64) -> Result<CohortComparison> {
    let (neg, pos) = d.class_counts();
    if neg == 0 || pos == 0 {
        return Err(Error::SingleClass("cohort comparison"));
    }
    let labels = d.labels();
    let mut features = Vec::with_capacity(d.n_features());
    for j in 0..d.n_features() {
        let mut a = Vec::with_capacity(pos);
        let mut b = Vec::with_capacity(neg);
        for i in 0..d.n_rows() {
            if d.is_missing(i, j) {
                continue;
            }
            if labels[i] == 1 {
                a.push(d.value(i, j));
            } else {
                b.push(d.value(i, j));
            }
        }
        let kind = d.feature_kinds()[j];
        let (pv, nv, test, res) = match kind {
            FeatureKind::Continuous => {
                let res = welch_t_test(&a, &b)?;
                (stats::mean(&a), stats::mean(&b), "welch_t", res)
            }
            FeatureKind::Binary => {
                let a1 = a.iter().filter(|&&v| v == 1.0).count() as f64;
                let b1 = b.iter().filter(|&&v| v == 1.0).count() as f64;
                let table = [[a1, a.len() as f64 - a1], [b1, b.len() as f64 - b1]];
                let res = match chi_square_test(table) {
                    Ok(r) => r,
                    // A feature constant across both groups shows no association.
                    Err(Error::DegenerateTable) => TestResult {
                        statistic: 0.0,
                        p_value: 1.0,
                    },
                    Err(e) => return Err(e),
                };
                (a1, b1, "chi_square", res)
            }
        };
        features.push(FeatureComparison {
            feature: d.feature_names()[j].clone(),
            kind,
            positive_value: pv,
            negative_value: nv,
            test: test.to_string(),
            statistic: res.statistic,
            p_value: res.p_value,
            significant: res.p_value < alpha,
        });
    }
    Ok(CohortComparison {
        positives: pos,
        negatives: neg,
        alpha,
        features,
    })
}
