use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resample::sq_dist;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnnConfig {
    pub k: usize,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self { k: 40 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    /// Standardized training rows.
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

pub fn fit_knn(rows: Vec<Vec<f64>>, labels: Vec<u8>, cfg: &KnnConfig) -> Result<KnnModel> {
    if cfg.k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if cfg.k > rows.len() {
        return Err(Error::Config(format!(
            "k = {} exceeds the {} training rows",
            cfg.k,
            rows.len()
        )));
    }
    Ok(KnnModel {
        k: cfg.k,
        rows,
        labels,
    })
}

impl KnnModel {
    /// Positive fraction among the k nearest rows; equal distances resolve to the lower row index.
    pub fn predict(&self, z: &[f64]) -> f64 {
        let mut d: Vec<(f64, usize)> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| (sq_dist(r, z), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < d.len() {
            d.select_nth_unstable_by(self.k - 1, cmp);
        }
        let pos = d[..self.k]
            .iter()
            .filter(|&&(_, i)| self.labels[i] == 1)
            .count();
        pos as f64 / self.k as f64
    }
}
