//! Synthetic sepsis cohorts with per-class feature means taken from a
//! reference cohort profile.
//!
//! Features are drawn independently given the label: continuous features
//! from a per-class Gaussian clamped to physical bounds, binary features from
//! a per-class Bernoulli.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FeatureKind};
use crate::error::{Error, Result};
use crate::ingest::{Cell, ColumnType, RawPatientTable, Roles};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureProfile {
    pub name: String,
    pub category: String,
    pub unit: String,
    pub kind: FeatureKind,
    /// Class-conditional mean (continuous) or rate (binary) for positives.
    pub positive: f64,
    pub negative: f64,
    /// Class-conditional standard deviation; ignored for binary features.
    #[serde(default)]
    pub sd_positive: f64,
    #[serde(default)]
    pub sd_negative: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortProfile {
    pub label: String,
    pub positives: usize,
    pub negatives: usize,
    pub features: Vec<FeatureProfile>,
}

/// How default standard deviations are derived from the two class means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum SdRule {
    /// `SD = |Δ| / effect`: every feature has the same standardized mean difference.
    EffectSize { effect: f64 },
    /// `SD = max(|Δ|, fraction · |pooled mean|)`.
    DifferenceOrFraction { fraction: f64 },
}

impl Default for SdRule {
    fn default() -> Self {
        SdRule::DifferenceOrFraction { fraction: 0.1 }
    }
}

impl SdRule {
    fn sd(self, pos: f64, neg: f64, pooled: f64) -> f64 {
        let delta = (pos - neg).abs();
        match self {
            SdRule::EffectSize { effect } => delta / effect,
            SdRule::DifferenceOrFraction { fraction } => delta.max(fraction * pooled.abs()),
        }
    }
}

// name, category, unit, AKI mean, non-AKI mean, lower, upper
type ContinuousRow = (
    &'static str,
    &'static str,
    &'static str,
    f64,
    f64,
    Option<f64>,
    Option<f64>,
);

#[rustfmt::skip]
const CONTINUOUS: [ContinuousRow; 21] = [
    ("age", "demographic", "years", 65.849, 61.700, Some(18.0), Some(89.0)),
    ("weight", "demographic", "lbs", 86.547, 75.287, Some(0.0), None),
    ("min_heart_rate", "vital_signs", "per minute", 61.464, 65.157, Some(0.0), None),
    ("min_temperature", "vital_signs", "Celsius", 35.390, 35.720, None, None),
    ("min_spo2", "vital_signs", "%", 78.595, 83.512, Some(0.0), Some(100.0)),
    ("min_sysbp", "vital_signs", "mmHg", 68.973, 77.726, Some(0.0), None),
    ("min_diasbp", "vital_signs", "mmHg", 31.680, 35.630, Some(0.0), None),
    ("urine_output", "vital_signs", "ml", 1189.225, 2690.867, Some(0.0), None),
    ("min_bilirubin", "laboratory", "mg/dL", 2.856, 1.749, Some(0.0), None),
    ("max_bilirubin", "laboratory", "mg/dL", 3.356, 2.023, Some(0.0), None),
    ("min_anion_gap", "laboratory", "mmol/L", 14.025, 12.583, Some(0.0), None),
    ("max_anion_gap", "laboratory", "mmol/L", 18.167, 16.499, Some(0.0), None),
    ("min_potassium", "laboratory", "mEq/L", 3.782, 3.612, Some(0.0), None),
    ("max_potassium", "laboratory", "mEq/L", 4.758, 4.440, Some(0.0), None),
    ("min_lactate", "laboratory", "mmol/L", 1.942, 1.581, Some(0.0), None),
    ("max_lactate", "laboratory", "mmol/L", 3.551, 2.821, Some(0.0), None),
    ("min_creatinine", "laboratory", "mg/dL", 1.914, 1.252, Some(0.0), None),
    ("max_creatinine", "laboratory", "mg/dL", 2.366, 1.639, Some(0.0), None),
    ("min_bun", "laboratory", "mg/dL", 35.783, 27.436, Some(0.0), None),
    ("max_bun", "laboratory", "mg/dL", 42.460, 34.530, Some(0.0), None),
    ("min_egfr", "laboratory", "mL/min/1.73m2", 62.955, 82.275, Some(0.0), None),
];

const POSITIVES: usize = 2410;
const NEGATIVES: usize = 891;

// name, positive count, negative count
const BINARY: [(&str, usize, usize); 2] = [
    ("vasopressor", 1840, 521),
    ("mechanical_ventilation", 1500, 347),
];

pub fn default_profile() -> CohortProfile {
    profile_with(SdRule::default())
}

pub fn profile_with(rule: SdRule) -> CohortProfile {
    let (np, nn) = (POSITIVES as f64, NEGATIVES as f64);
    let mut features: Vec<FeatureProfile> = CONTINUOUS
        .iter()
        .map(|&(name, category, unit, pos, neg, lower, upper)| {
            let pooled = (np * pos + nn * neg) / (np + nn);
            let sd = rule.sd(pos, neg, pooled);
            FeatureProfile {
                name: name.into(),
                category: category.into(),
                unit: unit.into(),
                kind: FeatureKind::Continuous,
                positive: pos,
                negative: neg,
                sd_positive: sd,
                sd_negative: sd,
                lower,
                upper,
            }
        })
        .collect();
    features.extend(BINARY.iter().map(|&(name, pos, neg)| FeatureProfile {
        name: name.into(),
        category: "interventions".into(),
        unit: "indicator".into(),
        kind: FeatureKind::Binary,
        positive: pos as f64 / np,
        negative: neg as f64 / nn,
        sd_positive: 0.0,
        sd_negative: 0.0,
        lower: None,
        upper: None,
    }));
    CohortProfile {
        label: "aki".into(),
        positives: POSITIVES,
        negatives: NEGATIVES,
        features,
    }
}

impl CohortProfile {
    pub fn validate(&self) -> Result<()> {
        if self.positives == 0 || self.negatives == 0 {
            return Err(Error::Config(
                "profile class counts must be at least 1".into(),
            ));
        }
        for f in &self.features {
            match f.kind {
                FeatureKind::Continuous => {
                    if !(f.sd_positive > 0.0 && f.sd_negative > 0.0) {
                        return Err(Error::Config(format!(
                            "feature `{}` needs positive SDs",
                            f.name
                        )));
                    }
                }
                FeatureKind::Binary => {
                    if !(0.0..=1.0).contains(&f.positive) || !(0.0..=1.0).contains(&f.negative) {
                        return Err(Error::Config(format!(
                            "feature `{}` rates must lie in [0, 1]",
                            f.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Class sizes for `n` rows: the minority count is rounded and the
    /// majority class takes the remainder.
    pub fn class_sizes(&self, n: usize) -> (usize, usize) {
        let total = (self.positives + self.negatives) as f64;
        let minority_share = self.positives.min(self.negatives) as f64 / total;
        let minority = ((n as f64 * minority_share).round() as usize).clamp(1, n - 1);
        if self.positives >= self.negatives {
            (n - minority, minority)
        } else {
            (minority, n - minority)
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// `n` labeled rows, deterministic in `seed`.
pub fn generate(profile: &CohortProfile, n: usize, seed: u64) -> Result<Dataset> {
    profile.validate()?;
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 rows, got {n}"
        )));
    }
    let (pos, _) = profile.class_sizes(n);
    let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i < pos)).collect();
    labels.shuffle(&mut rng_from_seed(derive_seed(seed, "synth_labels", 0)));

    let normals: Vec<[Option<Normal<f64>>; 2]> = profile
        .features
        .iter()
        .map(|f| match f.kind {
            FeatureKind::Continuous => [
                Some(Normal::new(f.negative, f.sd_negative).expect("validated SD")),
                Some(Normal::new(f.positive, f.sd_positive).expect("validated SD")),
            ],
            FeatureKind::Binary => [None, None],
        })
        .collect();
    let rows: Vec<Vec<f64>> = labels
        .par_iter()
        .enumerate()
        .map(|(i, &y)| {
            let mut rng = rng_from_seed(derive_seed(seed, "synth_row", i as u64));
            profile
                .features
                .iter()
                .zip(&normals)
                .map(|(f, dists)| match &dists[usize::from(y)] {
                    Some(d) => {
                        let v = d.sample(&mut rng);
                        let v = f.lower.map_or(v, |lo| v.max(lo));
                        f.upper.map_or(v, |hi| v.min(hi))
                    }
                    None => {
                        let rate = if y == 1 { f.positive } else { f.negative };
                        f64::from(u8::from(rng.random::<f64>() < rate))
                    }
                })
                .collect()
        })
        .collect();
    Ok(Dataset::from_rows(
        &rows,
        labels,
        profile.features.iter().map(|f| f.name.clone()).collect(),
        profile.features.iter().map(|f| f.kind).collect(),
    )?
    .with_label_name(profile.label.clone()))
}

/// Marks each cell missing independently with probability `rate`; columns named
/// in `exempt` are left intact.
pub fn mask_missing(d: &Dataset, rate: f64, exempt: &[&str], seed: u64) -> Result<Dataset> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("missing rate {rate} outside [0, 1)")));
    }
    if rate == 0.0 {
        return Ok(d.clone());
    }
    let p = d.n_features();
    let mut values = d.values().to_vec();
    let mut missing = d.missing_mask().to_vec();
    let keep: Vec<bool> = d
        .feature_names()
        .iter()
        .map(|n| exempt.contains(&n.as_str()))
        .collect();
    for i in 0..d.n_rows() {
        let mut rng = rng_from_seed(derive_seed(seed, "synth_mask", i as u64));
        for j in 0..p {
            if rng.random::<f64>() < rate && !keep[j] {
                values[i * p + j] = f64::NAN;
                missing[i * p + j] = true;
            }
        }
    }
    Ok(Dataset::from_parts(
        values,
        missing,
        d.labels().to_vec(),
        d.feature_names().to_vec(),
        d.feature_kinds().to_vec(),
    )?
    .with_label_name(d.label_name()))
}

/// Wraps a synthetic dataset in admission metadata that passes the default
/// cohort filters, so it can be written and re-read like an extracted table.
pub fn to_raw_table(d: &Dataset, seed: u64) -> RawPatientTable {
    let roles = Roles {
        label: d.label_name().to_string(),
        ..Roles::default()
    };
    let codes = ["99591", "99592", "78552"];
    let mut columns = vec![roles.subject_id.clone(), roles.admission_id.clone()];
    let mut types = vec![ColumnType::Numeric, ColumnType::Numeric];
    for (name, kind) in d.feature_names().iter().zip(d.feature_kinds()) {
        columns.push(name.clone());
        types.push(match kind {
            FeatureKind::Continuous => ColumnType::Numeric,
            FeatureKind::Binary => ColumnType::Binary,
        });
    }
    columns.extend([
        roles.stay_hours.clone(),
        roles.admission_count.clone(),
        roles.diagnosis_codes.clone(),
        roles.label.clone(),
    ]);
    types.extend([
        ColumnType::Numeric,
        ColumnType::Numeric,
        ColumnType::CodeSet,
        ColumnType::Binary,
    ]);

    let rows = (0..d.n_rows())
        .map(|i| {
            let mut rng = rng_from_seed(derive_seed(seed, "synth_meta", i as u64));
            let mut row = vec![
                Cell::Numeric((10_000 + i) as f64),
                Cell::Numeric((100_000 + i) as f64),
            ];
            for j in 0..d.n_features() {
                row.push(if d.is_missing(i, j) {
                    Cell::Missing
                } else {
                    match d.feature_kinds()[j] {
                        FeatureKind::Continuous => Cell::Numeric(d.value(i, j)),
                        FeatureKind::Binary => Cell::Binary(d.value(i, j) == 1.0),
                    }
                });
            }
            let stay = 48.0 + (rng.random::<f64>() * 240.0 * 10.0).round() / 10.0;
            let code = codes[rng.random_range(0..codes.len())];
            row.extend([
                Cell::Numeric(stay),
                Cell::Numeric(1.0),
                Cell::Codes(BTreeSet::from([code.to_string()])),
                Cell::Binary(d.labels()[i] == 1),
            ]);
            row
        })
        .collect();
    RawPatientTable {
        columns,
        types,
        rows,
        roles,
        coerced_cells: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_profile_shape() {
        let p = default_profile();
        assert_eq!(p.features.len(), 23);
        assert!(p.validate().is_ok());
        let vaso = p.features.iter().find(|f| f.name == "vasopressor").unwrap();
        assert!((vaso.positive - 1840.0 / 2410.0).abs() < 1e-15);
        let urine = p
            .features
            .iter()
            .find(|f| f.name == "urine_output")
            .unwrap();
        assert_eq!((urine.positive, urine.negative), (1189.225, 2690.867));
    }

    #[test]
    fn class_counts_match_the_prior() {
        let p = default_profile();
        assert_eq!(p.class_sizes(3301), (2410, 891));
        let d = generate(&p, 3301, 1).unwrap();
        assert_eq!(d.class_counts(), (891, 2410));
        assert_eq!(p.class_sizes(2), (1, 1));
    }

    #[test]
    fn generation_is_deterministic_and_bounded() {
        let p = default_profile();
        let a = generate(&p, 500, 9).unwrap();
        assert_eq!(a, generate(&p, 500, 9).unwrap());
        assert_ne!(a, generate(&p, 500, 10).unwrap());
        let age = a.column(a.feature_index("age").unwrap());
        assert!(age.iter().all(|v| (18.0..=89.0).contains(v)));
        assert!(a
            .column(a.feature_index("urine_output").unwrap())
            .iter()
            .all(|&v| v >= 0.0));
    }

    #[test]
    fn fraction_rule_reproduces_its_formula() {
        let p = profile_with(SdRule::DifferenceOrFraction { fraction: 0.1 });
        let t = p
            .features
            .iter()
            .find(|f| f.name == "min_temperature")
            .unwrap();
        let pooled = (2410.0 * 35.390 + 891.0 * 35.720) / 3301.0;
        assert!((t.sd_positive - 0.1 * pooled).abs() < 1e-12);
        let u = p
            .features
            .iter()
            .find(|f| f.name == "urine_output")
            .unwrap();
        assert!((u.sd_positive - (2690.867 - 1189.225)).abs() < 1e-9);
    }

    #[test]
    fn masking() {
        let d = generate(&default_profile(), 200, 2).unwrap();
        assert_eq!(mask_missing(&d, 0.0, &[], 5).unwrap(), d);
        let m = mask_missing(&d, 0.3, &[], 5).unwrap();
        assert_eq!(m, mask_missing(&d, 0.3, &[], 5).unwrap());
        assert_eq!(m.labels(), d.labels());
        assert!(m.has_missing());
        assert!(mask_missing(&d, 1.0, &[], 5).is_err());
        let a = mask_missing(&d, 0.5, &["age"], 5).unwrap();
        assert!((0..a.n_rows()).all(|i| !a.is_missing(i, 0)));
    }

    #[test]
    fn raw_table_round_trips_features() {
        let d = mask_missing(
            &generate(&default_profile(), 50, 3).unwrap(),
            0.1,
            &["age"],
            4,
        )
        .unwrap();
        let t = to_raw_table(&d, 0);
        let back = t.to_dataset().unwrap();
        assert_eq!(back.feature_names(), d.feature_names());
        assert_eq!(back.missing_mask(), d.missing_mask());
        assert_eq!(back.labels(), d.labels());
    }
}
