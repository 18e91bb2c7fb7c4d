//! Isotonic regression by pool-adjacent-violators, and a score calibrator built on it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weighted least-squares non-decreasing fit to `values`.
pub fn pava(values: &[f64], weights: &[f64]) -> Vec<f64> {
    assert_eq!(values.len(), weights.len());
    // Each block: (weighted mean, total weight, element count).
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let (m2, w2, c2) = blocks[blocks.len() - 1];
            let (m1, w1, c1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let w = w1 + w2;
            let m = if w > 0.0 {
                (m1 * w1 + m2 * w2) / w
            } else {
                (m1 + m2) / 2.0
            };
            *blocks.last_mut().unwrap() = (m, w, c1 + c2);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, _, c)| std::iter::repeat_n(m, c))
        .collect()
}

/// Monotone map from scores to probabilities. Between breakpoints the map is
/// linear; outside their range it is clamped to the end values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicCalibrator {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

impl IsotonicCalibrator {
    pub fn fit(scores: &[f64], labels: &[u8]) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: scores.len(),
                actual: labels.len(),
            });
        }
        if scores.len() < 2 {
            return Err(Error::InvalidInput(
                "isotonic fit needs at least two points".into(),
            ));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidInput(
                "isotonic fit needs finite scores".into(),
            ));
        }
        let pos = labels.iter().filter(|&&y| y == 1).count();
        if pos == 0 || pos == labels.len() {
            log::warn!("isotonic calibration fit on a single class; using a constant map");
            let rate = pos as f64 / labels.len() as f64;
            return Ok(Self {
                breakpoints: vec![0.0],
                values: vec![rate],
            });
        }

        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
        // Tied scores are pooled into one weighted point.
        let mut xs: Vec<f64> = Vec::new();
        let mut ys: Vec<f64> = Vec::new();
        let mut ws: Vec<f64> = Vec::new();
        for &i in &order {
            let y = f64::from(labels[i]);
            if xs.last() == Some(&scores[i]) {
                let k = ys.len() - 1;
                ys[k] = (ys[k] * ws[k] + y) / (ws[k] + 1.0);
                ws[k] += 1.0;
            } else {
                xs.push(scores[i]);
                ys.push(y);
                ws.push(1.0);
            }
        }
        let fitted = pava(&ys, &ws);

        // Keep only the two ends of each constant run.
        let mut breakpoints = Vec::new();
        let mut values = Vec::new();
        let mut start = 0;
        while start < xs.len() {
            let mut end = start;
            while end + 1 < xs.len() && fitted[end + 1] == fitted[start] {
                end += 1;
            }
            breakpoints.push(xs[start]);
            values.push(fitted[start]);
            if end > start {
                breakpoints.push(xs[end]);
                values.push(fitted[start]);
            }
            start = end + 1;
        }
        Ok(Self {
            breakpoints,
            values,
        })
    }

    pub fn apply(&self, score: f64) -> f64 {
        let x = &self.breakpoints;
        let y = &self.values;
        let last = x.len() - 1;
        if score <= x[0] {
            return y[0];
        }
        if score >= x[last] {
            return y[last];
        }
        // First breakpoint strictly greater than the score.
        let hi = x.partition_point(|&b| b <= score);
        let lo = hi - 1;
        let t = (score - x[lo]) / (x[hi] - x[lo]);
        (y[lo] + t * (y[hi] - y[lo])).clamp(0.0, 1.0)
    }

    pub fn apply_all(&self, scores: &[f64]) -> Vec<f64> {
        scores.iter().map(|&s| self.apply(s)).collect()
    }
}
