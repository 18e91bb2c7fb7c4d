//! Bagged CART classification trees with Gini splits over random feature subsets.

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{midpoint, Node, Tree};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    /// Features considered per node; `None` means `floor(sqrt(p))`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 150,
            max_depth: 12,
            min_samples_split: 128,
            min_samples_leaf: 10,
            max_features: None,
            bootstrap: true,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("forest needs at least one tree".into()));
        }
        if self.min_samples_leaf == 0 || self.min_samples_split < 2 {
            return Err(Error::Config(
                "forest min_samples_leaf >= 1 and min_samples_split >= 2".into(),
            ));
        }
        if self.max_features == Some(0) {
            return Err(Error::Config("forest max_features must be positive".into()));
        }
        Ok(())
    }
}

pub fn fit_forest(x: &[Vec<f64>], y: &[u8], cfg: &ForestConfig, seed: u64) -> Result<Vec<Tree>> {
    cfg.validate()?;
    if x.is_empty() {
        return Err(Error::InvalidInput("forest training set is empty".into()));
    }
    let p = x[0].len();
    let m = cfg
        .max_features
        .unwrap_or_else(|| ((p as f64).sqrt().floor() as usize).max(1))
        .min(p);
    Ok((0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_from_seed(derive_seed(seed, "forest_tree", t as u64));
            let n = x.len();
            let rows: Vec<usize> = if cfg.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut b = CartBuilder {
                x,
                y,
                cfg,
                m,
                rng,
                nodes: Vec::new(),
            };
            b.grow(rows, 0);
            Tree { nodes: b.nodes }
        })
        .collect())
}

struct CartBuilder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [u8],
    cfg: &'a ForestConfig,
    m: usize,
    rng: Rng,
    nodes: Vec<Node>,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    /// Weighted child impurity (n_l·gini_l + n_r·gini_r).
    child_impurity: f64,
}

fn gini_weighted(pos: f64, n: f64) -> f64 {
    if n == 0.0 {
        0.0
    } else {
        let q = pos / n;
        n * 2.0 * q * (1.0 - q)
    }
}

impl CartBuilder<'_> {
    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        let n = rows.len();
        let pos = rows.iter().filter(|&&i| self.y[i] == 1).count();
        let value = if n == 0 { 0.0 } else { pos as f64 / n as f64 };
        self.nodes.push(Node::Leaf { value });

        if depth >= self.cfg.max_depth || n < self.cfg.min_samples_split || pos == 0 || pos == n {
            return id;
        }
        let Some(best) = self.best_split(&rows, pos) else {
            return id;
        };
        let parent = gini_weighted(pos as f64, n as f64);
        let (left, right): (Vec<usize>, Vec<usize>) = rows
            .into_iter()
            .partition(|&i| self.x[i][best.feature] <= best.threshold);
        let l = self.grow(left, depth + 1);
        let r = self.grow(right, depth + 1);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            gain: parent - best.child_impurity,
            left: l,
            right: r,
        };
        id
    }

    fn best_split(&mut self, rows: &[usize], pos: usize) -> Option<Candidate> {
        let p = self.x[0].len();
        let mut features = sample(&mut self.rng, p, self.m).into_vec();
        features.sort_unstable();
        let n = rows.len();
        let min_leaf = self.cfg.min_samples_leaf;
        let mut best: Option<Candidate> = None;
        let mut sorted: Vec<(f64, u8)> = Vec::with_capacity(n);
        for f in features {
            sorted.clear();
            sorted.extend(rows.iter().map(|&i| (self.x[i][f], self.y[i])));
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_pos = 0usize;
            for k in 0..n - 1 {
                left_pos += sorted[k].1 as usize;
                let nl = k + 1;
                if sorted[k].0 == sorted[k + 1].0 || nl < min_leaf || n - nl < min_leaf {
                    continue;
                }
                let imp = gini_weighted(left_pos as f64, nl as f64)
                    + gini_weighted((pos - left_pos) as f64, (n - nl) as f64);
                if best.as_ref().is_none_or(|b| imp < b.child_impurity) {
                    best = Some(Candidate {
                        feature: f,
                        threshold: midpoint(sorted[k].0, sorted[k + 1].0),
                        child_impurity: imp,
                    });
                }
            }
        }
        best
    }
}

pub fn predict_forest(trees: &[Tree], x: &[f64]) -> f64 {
    trees.iter().map(|t| t.predict(x)).sum::<f64>() / trees.len() as f64
}
