//! Shapley attributions under the interventional (feature-independence) value
//! function, `v(S) = E_r[f(x_S, r_{S̄})]` over a background set.
//!
//! Values are in margin units: log-odds for logistic and boosted trees,
//! probability for the other families.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{format_number, Dataset};
use crate::error::{Error, Result};
use crate::models::{FittedModel, ModelParams};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub instance: usize,
    pub values: Vec<f64>,
    /// Mean margin over the background.
    pub base: f64,
    /// `base + Σ values`.
    pub reconstruction: f64,
    /// Standard errors of sampled estimates; absent for exact methods.
    pub std_errors: Option<Vec<f64>>,
}

impl Attribution {
    fn new(instance: usize, values: Vec<f64>, base: f64, std_errors: Option<Vec<f64>>) -> Self {
        let reconstruction = base + values.iter().sum::<f64>();
        Self {
            instance,
            values,
            base,
            reconstruction,
            std_errors,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum PermutationScheme {
    /// Random orderings, each walked against every background row.
    Sampled { permutations: usize },
    /// Every ordering of the features; exact, so only for small p.
    Exhaustive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ShapleyMethod {
    /// Closed form for logistic models.
    Linear,
    Permutation(PermutationScheme),
}

impl Default for ShapleyMethod {
    fn default() -> Self {
        ShapleyMethod::Permutation(PermutationScheme::Sampled { permutations: 200 })
    }
}

fn check_background(m: &FittedModel, background: &Dataset) -> Result<()> {
    if background.n_rows() == 0 {
        return Err(Error::InvalidInput(
            "Shapley background set is empty".into(),
        ));
    }
    if background.n_features() != m.n_features() {
        return Err(Error::DimensionMismatch {
            expected: m.n_features(),
            actual: background.n_features(),
        });
    }
    Ok(())
}

fn check_instance(m: &FittedModel, x: &[f64]) -> Result<()> {
    if x.len() != m.n_features() {
        return Err(Error::DimensionMismatch {
            expected: m.n_features(),
            actual: x.len(),
        });
    }
    Ok(())
}

/// Exact values for a logistic model: `φ_j = w_j (x̃_j − mean x̃_j)` in
/// standardized coordinates.
pub fn shapley_linear(
    m: &FittedModel,
    instance: usize,
    x: &[f64],
    background: &Dataset,
) -> Result<Attribution> {
    let ModelParams::Logistic {
        weights, intercept, ..
    } = &m.params
    else {
        return Err(Error::InvalidInput(format!(
            "model `{}` is not linear",
            m.name
        )));
    };
    check_instance(m, x)?;
    check_background(m, background)?;
    let p = weights.len();
    let mut mean = vec![0.0; p];
    for r in background.rows() {
        for (acc, v) in mean.iter_mut().zip(m.standardizer.transform(r)) {
            *acc += v;
        }
    }
    let nb = background.n_rows() as f64;
    mean.iter_mut().for_each(|v| *v /= nb);
    let z = m.standardizer.transform(x);
    let values = (0..p).map(|j| weights[j] * (z[j] - mean[j])).collect();
    let base = weights.iter().zip(&mean).map(|(w, v)| w * v).sum::<f64>() + intercept;
    Ok(Attribution::new(instance, values, base, None))
}

fn permutations(p: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                prefix.push(j);
                go(prefix, used, out);
                prefix.pop();
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut vec![false; p], &mut out);
    out
}

/// Largest feature count accepted for exhaustive enumeration.
pub const MAX_EXHAUSTIVE_FEATURES: usize = 8;

/// Permutation estimator: for each ordering and background row, features are
/// switched from the background value to the instance value one at a time and
/// the change in margin is credited to the switched feature.
pub fn shapley_sampling(
    m: &FittedModel,
    instance: usize,
    x: &[f64],
    background: &Dataset,
    scheme: PermutationScheme,
    seed: u64,
) -> Result<Attribution> {
    check_instance(m, x)?;
    check_background(m, background)?;
    let p = x.len();
    let orders = match scheme {
        PermutationScheme::Sampled { permutations } => {
            if permutations == 0 {
                return Err(Error::Config("at least one permutation is required".into()));
            }
            let mut rng = rng_from_seed(seed);
            (0..permutations)
                .map(|_| {
                    let mut o: Vec<usize> = (0..p).collect();
                    o.shuffle(&mut rng);
                    o
                })
                .collect::<Vec<_>>()
        }
        PermutationScheme::Exhaustive => {
            if p > MAX_EXHAUSTIVE_FEATURES {
                return Err(Error::Config(format!(
                    "exhaustive enumeration over {p} features is too large (max {MAX_EXHAUSTIVE_FEATURES})"
                )));
            }
            permutations(p)
        }
    };
    let z = m.standardizer.transform(x);
    let bg: Vec<Vec<f64>> = m.standardizer.transform_dataset(background);
    let nb = bg.len() as f64;
    let base = bg.iter().map(|r| m.margin_standardized(r)).sum::<f64>() / nb;

    // Mean contribution per ordering, averaged over the background.
    let mut per_order: Vec<Vec<f64>> = Vec::with_capacity(orders.len());
    let mut cur = vec![0.0; p];
    for order in &orders {
        let mut c = vec![0.0; p];
        for r in &bg {
            cur.copy_from_slice(r);
            let mut prev = m.margin_standardized(&cur);
            for &j in order {
                cur[j] = z[j];
                let next = m.margin_standardized(&cur);
                c[j] += next - prev;
                prev = next;
            }
        }
        c.iter_mut().for_each(|v| *v /= nb);
        per_order.push(c);
    }
    let k = per_order.len() as f64;
    let values: Vec<f64> = (0..p)
        .map(|j| per_order.iter().map(|c| c[j]).sum::<f64>() / k)
        .collect();
    let std_errors = match scheme {
        PermutationScheme::Exhaustive => None,
        PermutationScheme::Sampled { .. } => Some(
            (0..p)
                .map(|j| {
                    if per_order.len() < 2 {
                        return f64::INFINITY;
                    }
                    let ss: f64 = per_order.iter().map(|c| (c[j] - values[j]).powi(2)).sum();
                    (ss / (k - 1.0)).sqrt() / k.sqrt()
                })
                .collect(),
        ),
    };
    Ok(Attribution::new(instance, values, base, std_errors))
}

/// Seeded subsample of at most `cap` rows, kept in original order.
pub fn background_sample(d: &Dataset, cap: usize, seed: u64) -> Dataset {
    if d.n_rows() <= cap {
        return d.clone();
    }
    let mut idx = sample(&mut rng_from_seed(seed), d.n_rows(), cap).into_vec();
    idx.sort_unstable();
    d.select_rows(&idx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub index: usize,
    pub mean_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionSummary {
    pub model: String,
    /// Highest mean |φ| first; ties keep feature order.
    pub ranking: Vec<FeatureImportance>,
}

impl AttributionSummary {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("rank,feature,mean_abs_shapley\n");
        for (r, f) in self.ranking.iter().enumerate() {
            let _ = writeln!(s, "{},{},{}", r + 1, f.feature, format_number(f.mean_abs));
        }
        s
    }
}

pub fn explain_dataset(
    m: &FittedModel,
    data: &Dataset,
    background: &Dataset,
    method: ShapleyMethod,
    seed: u64,
) -> Result<Vec<Attribution>> {
    if data.n_rows() == 0 {
        return Err(Error::InvalidInput("no instances to explain".into()));
    }
    (0..data.n_rows())
        .into_par_iter()
        .map(|i| match method {
            ShapleyMethod::Linear => shapley_linear(m, i, data.row(i), background),
            ShapleyMethod::Permutation(scheme) => shapley_sampling(
                m,
                i,
                data.row(i),
                background,
                scheme,
                derive_seed(seed, "shapley", i as u64),
            ),
        })
        .collect()
}

pub fn summarize(
    model: &str,
    feature_names: &[String],
    attributions: &[Attribution],
) -> AttributionSummary {
    let n = attributions.len().max(1) as f64;
    let mut ranking: Vec<FeatureImportance> = feature_names
        .iter()
        .enumerate()
        .map(|(j, name)| FeatureImportance {
            feature: name.clone(),
            index: j,
            mean_abs: attributions.iter().map(|a| a.values[j].abs()).sum::<f64>() / n,
        })
        .collect();
    ranking.sort_by(|a, b| {
        b.mean_abs
            .total_cmp(&a.mean_abs)
            .then(a.index.cmp(&b.index))
    });
    AttributionSummary {
        model: model.to_string(),
        ranking,
    }
}

pub fn shapley_summary(
    m: &FittedModel,
    data: &Dataset,
    background: &Dataset,
    method: ShapleyMethod,
    seed: u64,
) -> Result<AttributionSummary> {
    let attributions = explain_dataset(m, data, background, method, seed)?;
    Ok(summarize(&m.name, data.feature_names(), &attributions))
}

pub fn attributions_csv(feature_names: &[String], attributions: &[Attribution]) -> String {
    let mut s = String::from("instance,base,reconstruction");
    for f in feature_names {
        s.push(',');
        s.push_str(f);
    }
    s.push('\n');
    for a in attributions {
        let _ = write!(
            s,
            "{},{},{}",
            a.instance,
            format_number(a.base),
            format_number(a.reconstruction)
        );
        for v in &a.values {
            s.push(',');
            s.push_str(&format_number(*v));
        }
        s.push('\n');
    }
    s
}
