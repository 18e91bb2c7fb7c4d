//! Feature-level missingness screening and multiple imputation by chained equations.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FeatureKind};
use crate::error::{Error, Result};
use crate::models::logistic::{fit_newton, sigmoid, LogisticConfig};
use crate::rng::{sub_rng, Rng};

/// Missing count in each column divided by the number of rows.
pub fn feature_missingness(d: &Dataset) -> Vec<f64> {
    let n = d.n_rows().max(1) as f64;
    (0..d.n_features())
        .map(|j| (0..d.n_rows()).filter(|&i| d.is_missing(i, j)).count() as f64 / n)
        .collect()
}

/// Keeps features whose missing fraction is at most `threshold`.
pub fn drop_high_missing_features(d: &Dataset, threshold: f64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Config(format!(
            "missingness threshold {threshold} outside [0, 1]"
        )));
    }
    let keep: Vec<usize> = feature_missingness(d)
        .iter()
        .enumerate()
        .filter(|(_, &f)| f <= threshold)
        .map(|(j, _)| j)
        .collect();
    if keep.is_empty() {
        return Err(Error::AllFeaturesDropped { threshold });
    }
    Ok(d.select_features(&keep))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiceConfig {
    pub chains: usize,
    pub iterations: usize,
    /// Ridge penalty per observed row, applied to standardized predictors.
    pub ridge: f64,
}

impl Default for MiceConfig {
    fn default() -> Self {
        Self {
            chains: 5,
            iterations: 10,
            ridge: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ImputationResult {
    pub completed: Vec<Dataset>,
    pub chains: usize,
    pub iterations_per_chain: usize,
    pub seed: u64,
    /// The incomplete input, kept so pooling knows which cells were imputed.
    pub source: Dataset,
}

pub fn mice_impute(d: &Dataset, cfg: &MiceConfig, seed: u64) -> Result<ImputationResult> {
    if cfg.chains == 0 {
        return Err(Error::Config("MICE needs at least one chain".into()));
    }
    if d.n_features() < 2 {
        return Err(Error::InvalidInput(
            "MICE needs at least two features".into(),
        ));
    }
    for (j, frac) in feature_missingness(d).into_iter().enumerate() {
        if frac >= 1.0 {
            return Err(Error::FeatureEntirelyMissing(d.feature_names()[j].clone()));
        }
    }
    let completed: Vec<Dataset> = (0..cfg.chains)
        .into_par_iter()
        .map(|chain| {
            let mut rng = sub_rng(seed, "mice", chain as u64);
            run_chain(d, cfg, &mut rng)
        })
        .collect();
    Ok(ImputationResult {
        completed,
        chains: cfg.chains,
        iterations_per_chain: cfg.iterations,
        seed,
        source: d.clone(),
    })
}

fn observed(d: &Dataset, j: usize) -> impl Iterator<Item = f64> + '_ {
    (0..d.n_rows())
        .filter(move |&i| !d.is_missing(i, j))
        .map(move |i| d.value(i, j))
}

/// Mean for continuous columns, majority value for binary ones (ties go to 0).
fn initial_fill(d: &Dataset, j: usize) -> f64 {
    match d.feature_kinds()[j] {
        FeatureKind::Continuous => {
            let (s, c) = observed(d, j).fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
            s / c as f64
        }
        FeatureKind::Binary => mode_binary(observed(d, j)),
    }
}

fn mode_binary(values: impl Iterator<Item = f64>) -> f64 {
    let (ones, zeros) = values.fold((0usize, 0usize), |(o, z), v| {
        if v == 1.0 {
            (o + 1, z)
        } else {
            (o, z + 1)
        }
    });
    if ones > zeros {
        1.0
    } else {
        0.0
    }
}

fn run_chain(source: &Dataset, cfg: &MiceConfig, rng: &mut Rng) -> Dataset {
    let mut d = source.clone();
    let n = d.n_rows();
    let p = d.n_features();
    let targets: Vec<usize> = (0..p)
        .filter(|&j| (0..n).any(|i| source.is_missing(i, j)))
        .collect();
    for &j in &targets {
        let fill = initial_fill(source, j);
        for i in 0..n {
            if source.is_missing(i, j) {
                d.set_value(i, j, fill);
            }
        }
    }
    for _ in 0..cfg.iterations {
        for &j in &targets {
            redraw_feature(&mut d, source, j, cfg, rng);
        }
    }
    d
}

/// Refits feature `j` on every other feature over its observed rows and redraws
/// the cells that were missing in `source`.
fn redraw_feature(d: &mut Dataset, source: &Dataset, j: usize, cfg: &MiceConfig, rng: &mut Rng) {
    let n = d.n_rows();
    let p = d.n_features();
    let obs_rows: Vec<usize> = (0..n).filter(|&i| !source.is_missing(i, j)).collect();
    let miss_rows: Vec<usize> = (0..n).filter(|&i| source.is_missing(i, j)).collect();

    // Standardize predictors on the observed rows; constant predictors carry no signal.
    let mut predictors = Vec::new();
    let mut centers = Vec::new();
    let mut scales = Vec::new();
    for k in (0..p).filter(|&k| k != j) {
        let col: Vec<f64> = obs_rows.iter().map(|&i| d.value(i, k)).collect();
        let m = col.iter().sum::<f64>() / col.len() as f64;
        let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
        if sd > 1e-12 {
            predictors.push(k);
            centers.push(m);
            scales.push(sd);
        }
    }
    let design = |i: usize| -> Vec<f64> {
        predictors
            .iter()
            .zip(centers.iter().zip(&scales))
            .map(|(&k, (m, s))| (d.value(i, k) - m) / s)
            .collect()
    };
    let fallback = initial_fill(source, j);
    let target: Vec<f64> = obs_rows.iter().map(|&i| d.value(i, j)).collect();

    let draws: Vec<f64> = match source.feature_kinds()[j] {
        _ if predictors.is_empty() => vec![fallback; miss_rows.len()],
        FeatureKind::Continuous => {
            let x: Vec<Vec<f64>> = obs_rows.iter().map(|&i| design(i)).collect();
            match ridge_fit(&x, &target, cfg.ridge * obs_rows.len() as f64) {
                Some((beta, intercept, resid_sd)) => {
                    let noise = Normal::new(0.0, resid_sd.max(0.0)).expect("finite sd");
                    miss_rows
                        .iter()
                        .map(|&i| {
                            let xi = design(i);
                            let mean: f64 =
                                intercept + beta.iter().zip(&xi).map(|(b, v)| b * v).sum::<f64>();
                            mean + noise.sample(rng)
                        })
                        .collect()
                }
                None => vec![fallback; miss_rows.len()],
            }
        }
        FeatureKind::Binary => {
            let x: Vec<Vec<f64>> = obs_rows.iter().map(|&i| design(i)).collect();
            let lcfg = LogisticConfig {
                c: 1.0,
                max_iter: 50,
                ..LogisticConfig::default()
            };
            match fit_newton(&x, &target, &lcfg) {
                Ok(fit) => miss_rows
                    .iter()
                    .map(|&i| {
                        let xi = design(i);
                        let z = fit.intercept
                            + fit.weights.iter().zip(&xi).map(|(w, v)| w * v).sum::<f64>();
                        if rng.random::<f64>() < sigmoid(z) {
                            1.0
                        } else {
                            0.0
                        }
                    })
                    .collect(),
                // Single observed class: nothing to model.
                Err(_) => vec![fallback; miss_rows.len()],
            }
        }
    };
    for (&i, v) in miss_rows.iter().zip(draws) {
        d.set_value(i, j, v);
    }
}

/// Ridge regression with an unpenalized intercept. Returns (coefficients,
/// intercept, residual SD).
fn ridge_fit(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Option<(Vec<f64>, f64, f64)> {
    let n = x.len();
    let q = x.first()?.len();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    // Predictors are centered on these rows already, so the intercept decouples.
    let mut xtx = DMatrix::<f64>::zeros(q, q);
    let mut xty = DVector::<f64>::zeros(q);
    for (row, &yi) in x.iter().zip(y) {
        for a in 0..q {
            xty[a] += row[a] * (yi - y_mean);
            for b in a..q {
                xtx[(a, b)] += row[a] * row[b];
            }
        }
    }
    for a in 0..q {
        for b in 0..a {
            xtx[(a, b)] = xtx[(b, a)];
        }
        xtx[(a, a)] += lambda.max(1e-12);
    }
    let beta = xtx.cholesky()?.solve(&xty);
    let beta: Vec<f64> = beta.iter().copied().collect();
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(row, &yi)| {
            let pred = y_mean + beta.iter().zip(row).map(|(b, v)| b * v).sum::<f64>();
            (yi - pred).powi(2)
        })
        .sum();
    let dof = if n > q + 1 { n - q - 1 } else { n };
    Some((beta, y_mean, (rss / dof as f64).sqrt()))
}

/// Collapses the chains into one dataset: mean for continuous cells, majority
/// vote for binary cells with ties going to the column's most frequent observed value.
pub fn pool_imputations(r: &ImputationResult) -> Result<Dataset> {
    let first = r
        .completed
        .first()
        .ok_or_else(|| Error::InvalidInput("no completed datasets to pool".into()))?;
    let src = &r.source;
    let mut out = first.clone();
    let m = r.completed.len() as f64;
    for j in 0..src.n_features() {
        let kind = src.feature_kinds()[j];
        let tie_value = match kind {
            FeatureKind::Binary => mode_binary(observed(src, j)),
            FeatureKind::Continuous => 0.0,
        };
        for i in 0..src.n_rows() {
            if !src.is_missing(i, j) {
                continue;
            }
            let v = match kind {
                FeatureKind::Continuous => {
                    r.completed.iter().map(|c| c.value(i, j)).sum::<f64>() / m
                }
                FeatureKind::Binary => {
                    let ones = r.completed.iter().filter(|c| c.value(i, j) == 1.0).count();
                    let zeros = r.completed.len() - ones;
                    match ones.cmp(&zeros) {
                        std::cmp::Ordering::Greater => 1.0,
                        std::cmp::Ordering::Less => 0.0,
                        std::cmp::Ordering::Equal => tie_value,
                    }
                }
            };
            out.set_value(i, j, v);
        }
    }
    Ok(out)
}
