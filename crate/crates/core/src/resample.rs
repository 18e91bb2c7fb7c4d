//! Stratified train/test/validation partitioning and SMOTE oversampling.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FeatureKind, Standardizer};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    /// (train, test, validation)
    pub fractions: (f64, f64, f64),
    pub stratify: bool,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            fractions: (0.60, 0.20, 0.20),
            stratify: true,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.fractions;
        for f in [a, b, c] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config(format!("split fraction {f} outside (0, 1)")));
            }
        }
        if (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions sum to {}",
                a + b + c
            )));
        }
        Ok(())
    }

    /// Part sizes `(train, test, validation)` for `n` rows.
    ///
    /// The held-out block is `ceil(n · (test + validation))` and the test part
    /// takes `ceil` of its share of that block; training keeps the rest. This is
    /// the two-stage convention that maps 3301 rows at 60/20/20 to 1980/661/660.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let (_, ft, fv) = self.fractions;
        let holdout = ceil_snapped(n as f64 * (ft + fv)).min(n);
        let test = ceil_snapped(holdout as f64 * ft / (ft + fv)).min(holdout);
        (n - holdout, test, holdout - test)
    }
}

/// `ceil` that ignores floating-point noise just above an integer.
fn ceil_snapped(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
    pub validation: Dataset,
    /// Row indices of the input that went into each part, ascending.
    pub indices: [Vec<usize>; 3],
}

pub fn stratified_split(d: &Dataset, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let n = d.n_rows();
    if n < 3 {
        return Err(Error::InvalidInput(format!(
            "cannot split {n} rows into three parts"
        )));
    }
    let sizes = spec.sizes(n);
    let sizes = [sizes.0, sizes.1, sizes.2];
    let mut rng = rng_from_seed(spec.seed);

    let mut parts: [Vec<usize>; 3] = Default::default();
    if spec.stratify {
        let mut pos: Vec<usize> = (0..n).filter(|&i| d.labels()[i] == 1).collect();
        let mut neg: Vec<usize> = (0..n).filter(|&i| d.labels()[i] == 0).collect();
        if pos.len() < 3 || neg.len() < 3 {
            return Err(Error::InvalidInput(
                "stratified split needs at least three rows of each class".into(),
            ));
        }
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        let pos_counts = apportion(&sizes, pos.len(), n);
        let (mut p_at, mut n_at) = (0, 0);
        for k in 0..3 {
            let np = pos_counts[k];
            let nn = sizes[k] - np;
            parts[k].extend_from_slice(&pos[p_at..p_at + np]);
            parts[k].extend_from_slice(&neg[n_at..n_at + nn]);
            p_at += np;
            n_at += nn;
        }
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        let mut at = 0;
        for k in 0..3 {
            parts[k].extend_from_slice(&all[at..at + sizes[k]]);
            at += sizes[k];
        }
    }
    for part in parts.iter_mut() {
        part.sort_unstable();
    }
    Ok(Split {
        train: d.select_rows(&parts[0]),
        test: d.select_rows(&parts[1]),
        validation: d.select_rows(&parts[2]),
        indices: parts,
    })
}

/// Splits `class_total` across parts proportionally to `sizes` by largest
/// remainder, so every part is within one row of its ideal class count.
fn apportion(sizes: &[usize; 3], class_total: usize, n: usize) -> [usize; 3] {
    let ideal: Vec<f64> = sizes
        .iter()
        .map(|&s| s as f64 * class_total as f64 / n as f64)
        .collect();
    let mut counts: [usize; 3] = [0; 3];
    for k in 0..3 {
        counts[k] = (ideal[k].floor() as usize).min(sizes[k]);
    }
    let mut left = class_total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = ideal[a] - ideal[a].floor();
        let rb = ideal[b] - ideal[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    while left > 0 {
        let mut progressed = false;
        for &k in &order {
            if left > 0 && counts[k] < sizes[k] {
                counts[k] += 1;
                left -= 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoteSpec {
    pub k: usize,
    /// Minority/majority ratio to reach.
    pub target_ratio: f64,
    pub seed: u64,
}

impl Default for SmoteSpec {
    fn default() -> Self {
        Self {
            k: 5,
            target_ratio: 1.0,
            seed: 0,
        }
    }
}

/// Where a synthetic row came from: `x + u · (neighbor − x)` in original units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOrigin {
    pub seed_row: usize,
    pub neighbor_row: usize,
    pub u: f64,
}

#[derive(Debug, Clone)]
pub struct SmoteResult {
    /// Original rows first, then synthetic rows in generation order (flagged).
    pub dataset: Dataset,
    pub origins: Vec<SyntheticOrigin>,
}

/// Synthetic minority oversampling. Neighbours are the `k` nearest minority rows
/// by Euclidean distance on standardized features, ties broken by row index.
pub fn smote(d: &Dataset, spec: &SmoteSpec) -> Result<SmoteResult> {
    if spec.k == 0 {
        return Err(Error::Config("SMOTE k must be at least 1".into()));
    }
    if !(spec.target_ratio > 0.0 && spec.target_ratio <= 1.0) {
        return Err(Error::Config(format!(
            "SMOTE target ratio {} outside (0, 1]",
            spec.target_ratio
        )));
    }
    if d.has_missing() {
        return Err(Error::InvalidInput(
            "SMOTE requires a complete dataset".into(),
        ));
    }
    let (neg, pos) = d.class_counts();
    let (minority_label, minority_n, majority_n) = if pos < neg {
        (1u8, pos, neg)
    } else {
        (0u8, neg, pos)
    };
    let target = (spec.target_ratio * majority_n as f64 - 1e-9).ceil() as usize;
    if minority_n >= target {
        return Ok(SmoteResult {
            dataset: d.clone(),
            origins: Vec::new(),
        });
    }
    if minority_n <= spec.k {
        return Err(Error::InvalidInput(format!(
            "SMOTE needs more than k = {} minority rows, found {minority_n}",
            spec.k
        )));
    }
    let n_new = target - minority_n;

    let minority: Vec<usize> = (0..d.n_rows())
        .filter(|&i| d.labels()[i] == minority_label)
        .collect();
    let scaler = Standardizer::fit(d);
    let z: Vec<Vec<f64>> = minority
        .iter()
        .map(|&i| scaler.transform(d.row(i)))
        .collect();
    let neighbors: Vec<Vec<usize>> = (0..minority.len())
        .map(|a| nearest_minority(&z, a, spec.k))
        .collect();

    let mut rng = rng_from_seed(spec.seed);
    let kinds = d.feature_kinds();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n_new);
    let mut origins = Vec::with_capacity(n_new);
    for _ in 0..n_new {
        let a = rng.random_range(0..minority.len());
        let b = neighbors[a][rng.random_range(0..spec.k)];
        let u: f64 = rng.random::<f64>();
        let (xa, xb) = (d.row(minority[a]), d.row(minority[b]));
        let row: Vec<f64> = (0..xa.len())
            .map(|j| match kinds[j] {
                FeatureKind::Continuous => xa[j] + u * (xb[j] - xa[j]),
                FeatureKind::Binary => {
                    if u > 0.5 {
                        xb[j]
                    } else {
                        xa[j]
                    }
                }
            })
            .collect();
        rows.push(row);
        origins.push(SyntheticOrigin {
            seed_row: minority[a],
            neighbor_row: minority[b],
            u,
        });
    }
    let synth = Dataset::from_rows(
        &rows,
        vec![minority_label; n_new],
        d.feature_names().to_vec(),
        kinds.to_vec(),
    )?
    .with_label_name(d.label_name())
    .with_synthetic(vec![true; n_new])?;
    Ok(SmoteResult {
        dataset: d.concat(&synth)?,
        origins,
    })
}

fn nearest_minority(z: &[Vec<f64>], a: usize, k: usize) -> Vec<usize> {
    let mut cand: Vec<(f64, usize)> = z
        .iter()
        .enumerate()
        .filter(|&(b, _)| b != a)
        .map(|(b, zb)| (sq_dist(&z[a], zb), b))
        .collect();
    let cmp = |x: &(f64, usize), y: &(f64, usize)| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1));
    if cand.len() > k {
        cand.select_nth_unstable_by(k - 1, cmp);
        cand.truncate(k);
    }
    cand.sort_by(cmp);
    cand.into_iter().map(|(_, b)| b).collect()
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
