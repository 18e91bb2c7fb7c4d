//! Discrimination and calibration metrics and the multi-model comparison report.

use std::fmt::Write as _;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{format_number, Dataset};
use crate::error::{Error, Result};
use crate::models::FittedModel;
use crate::rng::sub_rng;
use crate::stats::quantile_sorted;

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            actual: scores.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::InvalidInput(format!("score {i} is not finite")));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    Ok((labels.len() - pos, pos))
}

fn check_two_class(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    let (neg, pos) = check_inputs(scores, labels)?;
    if neg == 0 || pos == 0 {
        return Err(Error::SingleClass("AUC labels"));
    }
    Ok((neg, pos))
}

/// Mann–Whitney AUC from midranks: the probability that a random positive
/// outscores a random negative, ties counting one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (neg, pos) = check_two_class(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        let group_pos = order[i..=j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum += mid * group_pos as f64;
        i = j + 1;
    }
    let (np, nn) = (pos as f64, neg as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Direct average over all positive/negative pairs. Quadratic; for checking.
pub fn auc_pairwise(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (neg, pos) = check_two_class(scores, labels)?;
    let mut wins = 0.0;
    for (&si, _) in scores.iter().zip(labels).filter(|(_, &y)| y == 1) {
        for (&sj, _) in scores.iter().zip(labels).filter(|(_, &y)| y != 1) {
            wins += if si > sj {
                1.0
            } else if si == sj {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(wins / (pos as f64 * neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are called positive. The first point uses `+∞`.
    pub threshold: f64,
}

/// ROC curve with one point per distinct score, from (0, 0) to (1, 1).
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<RocPoint>> {
    let (neg, pos) = check_two_class(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut pts = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        pts.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: s,
        });
    }
    Ok(pts)
}

/// Trapezoidal area under a ROC curve.
pub fn roc_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
}

/// Percentile interval over `b` bootstrap resamples drawn separately within
/// each class.
pub fn bootstrap_auc_ci(
    scores: &[f64],
    labels: &[u8],
    b: usize,
    level: f64,
    seed: u64,
) -> Result<ConfidenceInterval> {
    check_two_class(scores, labels)?;
    if b < 100 {
        return Err(Error::Config(format!(
            "bootstrap needs at least 100 resamples, got {b}"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!(
            "confidence level {level} outside (0, 1)"
        )));
    }
    let pos: Vec<f64> = (0..scores.len())
        .filter(|&i| labels[i] == 1)
        .map(|i| scores[i])
        .collect();
    let neg: Vec<f64> = (0..scores.len())
        .filter(|&i| labels[i] != 1)
        .map(|i| scores[i])
        .collect();
    let mut labels_b = vec![1u8; pos.len()];
    labels_b.resize(pos.len() + neg.len(), 0);
    let mut aucs: Vec<f64> = (0..b)
        .into_par_iter()
        .map(|r| {
            let mut rng = sub_rng(seed, "bootstrap_auc", r as u64);
            let mut s = Vec::with_capacity(labels_b.len());
            s.extend((0..pos.len()).map(|_| pos[rng.random_range(0..pos.len())]));
            s.extend((0..neg.len()).map(|_| neg[rng.random_range(0..neg.len())]));
            auc(&s, &labels_b).expect("both classes present")
        })
        .collect();
    aucs.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(ConfidenceInterval {
        lo: quantile_sorted(&aucs, tail),
        hi: quantile_sorted(&aucs, 1.0 - tail),
        level,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub accuracy: f64,
    pub f1: f64,
    pub recall: f64,
    pub precision: f64,
}

/// Confusion-matrix metrics with `score >= threshold` called positive.
/// Undefined ratios are reported as 0.
pub fn threshold_metrics(
    scores: &[f64],
    labels: &[u8],
    threshold: f64,
) -> Result<ThresholdMetrics> {
    check_inputs(scores, labels)?;
    if scores.is_empty() {
        return Err(Error::InvalidInput("no scores to evaluate".into()));
    }
    let (mut tp, mut fp, mut fneg, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |num: usize, den: usize, what: &str| {
        if den == 0 {
            log::warn!("{what} is undefined for these predictions; reporting 0");
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    Ok(ThresholdMetrics {
        accuracy: (tp + tn) as f64 / scores.len() as f64,
        f1: ratio(2 * tp, 2 * tp + fp + fneg, "F1"),
        recall: ratio(tp, tp + fneg, "recall"),
        precision: ratio(tp, tp + fp, "precision"),
    })
}

pub fn brier_score(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    if let Some(i) = scores.iter().position(|s| !(0.0..=1.0).contains(s)) {
        return Err(Error::InvalidInput(format!(
            "score {} at {i} is not a probability",
            scores[i]
        )));
    }
    if scores.is_empty() {
        return Err(Error::InvalidInput("no scores to evaluate".into()));
    }
    Ok(scores
        .iter()
        .zip(labels)
        .map(|(s, &y)| (s - f64::from(y)).powi(2))
        .sum::<f64>()
        / scores.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub mean_predicted: f64,
    pub observed_rate: f64,
    pub count: usize,
}

/// Reliability curve over equal-width bins on [0, 1]; empty bins are omitted.
pub fn calibration_curve(
    scores: &[f64],
    labels: &[u8],
    bins: usize,
) -> Result<Vec<CalibrationPoint>> {
    check_inputs(scores, labels)?;
    if bins == 0 {
        return Err(Error::Config("calibration needs at least one bin".into()));
    }
    if let Some(i) = scores.iter().position(|s| !(0.0..=1.0).contains(s)) {
        return Err(Error::InvalidInput(format!(
            "score {} at {i} is not a probability",
            scores[i]
        )));
    }
    let mut sum = vec![0.0; bins];
    let mut pos = vec![0usize; bins];
    let mut count = vec![0usize; bins];
    for (&s, &y) in scores.iter().zip(labels) {
        let b = ((s * bins as f64) as usize).min(bins - 1);
        sum[b] += s;
        pos[b] += usize::from(y == 1);
        count[b] += 1;
    }
    Ok((0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| CalibrationPoint {
            mean_predicted: sum[b] / count[b] as f64,
            observed_rate: pos[b] as f64 / count[b] as f64,
            count: count[b],
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationSettings {
    pub threshold: f64,
    pub bootstrap: usize,
    pub level: f64,
    pub calibration_bins: usize,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            bootstrap: 1000,
            level: 0.95,
            calibration_bins: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub model: String,
    pub auc: f64,
    pub auc_ci: ConfidenceInterval,
    pub accuracy: f64,
    pub f1: f64,
    pub recall: f64,
    pub brier: f64,
    /// Brier score after isotonic calibration, when a calibrator was supplied.
    pub brier_calibrated: Option<f64>,
    pub roc: Vec<RocPoint>,
    pub calibration: Vec<CalibrationPoint>,
    pub calibration_after: Option<Vec<CalibrationPoint>>,
}

/// Scores of one model on an evaluation set, optionally with calibrated versions.
pub struct ScoredModel {
    pub name: String,
    pub scores: Vec<f64>,
    pub calibrated: Option<Vec<f64>>,
}

pub fn evaluate_scores(
    m: &ScoredModel,
    labels: &[u8],
    settings: &EvaluationSettings,
    seed: u64,
) -> Result<ModelMetrics> {
    let t = threshold_metrics(&m.scores, labels, settings.threshold)?;
    let (brier_calibrated, calibration_after) = match &m.calibrated {
        Some(c) => (
            Some(brier_score(c, labels)?),
            Some(calibration_curve(c, labels, settings.calibration_bins)?),
        ),
        None => (None, None),
    };
    Ok(ModelMetrics {
        model: m.name.clone(),
        auc: auc(&m.scores, labels)?,
        auc_ci: bootstrap_auc_ci(&m.scores, labels, settings.bootstrap, settings.level, seed)?,
        accuracy: t.accuracy,
        f1: t.f1,
        recall: t.recall,
        brier: brier_score(&m.scores, labels)?,
        brier_calibrated,
        roc: roc_curve(&m.scores, labels)?,
        calibration: calibration_curve(&m.scores, labels, settings.calibration_bins)?,
        calibration_after,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub partition: String,
    pub n: usize,
    pub positives: usize,
    /// Sorted by AUC, highest first.
    pub models: Vec<ModelMetrics>,
}

/// Evaluates every model against the same labels and bootstrap seed.
pub fn compare_scores(
    partition: &str,
    models: &[ScoredModel],
    labels: &[u8],
    settings: &EvaluationSettings,
    seed: u64,
) -> Result<EvaluationReport> {
    if models.is_empty() {
        return Err(Error::InvalidInput("no models to compare".into()));
    }
    let mut rows = models
        .iter()
        .map(|m| evaluate_scores(m, labels, settings, seed))
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| b.auc.total_cmp(&a.auc));
    Ok(EvaluationReport {
        partition: partition.to_string(),
        n: labels.len(),
        positives: labels.iter().filter(|&&y| y == 1).count(),
        models: rows,
    })
}

pub fn model_comparison_report(
    models: &[FittedModel],
    eval: &Dataset,
    settings: &EvaluationSettings,
    seed: u64,
) -> Result<EvaluationReport> {
    let scored = models
        .iter()
        .map(|m| {
            Ok(ScoredModel {
                name: m.name.clone(),
                scores: m.predict_dataset(eval)?,
                calibrated: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    compare_scores("evaluation", &scored, eval.labels(), settings, seed)
}

fn opt(v: Option<f64>) -> String {
    v.map(format_number).unwrap_or_default()
}

impl EvaluationReport {
    /// One row per model: AUC with its interval, accuracy, F1, recall and Brier.
    pub fn to_csv(&self) -> String {
        let mut s =
            String::from("model,auc,auc_lo,auc_hi,accuracy,f1,recall,brier,brier_calibrated\n");
        for m in &self.models {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                m.model,
                format_number(m.auc),
                format_number(m.auc_ci.lo),
                format_number(m.auc_ci.hi),
                format_number(m.accuracy),
                format_number(m.f1),
                format_number(m.recall),
                format_number(m.brier),
                opt(m.brier_calibrated)
            );
        }
        s
    }

    pub fn roc_csv(&self) -> String {
        let mut s = String::from("model,fpr,tpr,threshold\n");
        for m in &self.models {
            for p in &m.roc {
                let _ = writeln!(
                    s,
                    "{},{},{},{}",
                    m.model,
                    format_number(p.fpr),
                    format_number(p.tpr),
                    format_number(p.threshold)
                );
            }
        }
        s
    }

    pub fn calibration_csv(&self) -> String {
        let mut s = String::from("model,stage,mean_predicted,observed_rate,count\n");
        for m in &self.models {
            let stages = std::iter::once(("raw", &m.calibration))
                .chain(m.calibration_after.as_ref().map(|c| ("isotonic", c)));
            for (stage, pts) in stages {
                for p in pts {
                    let _ = writeln!(
                        s,
                        "{},{stage},{},{},{}",
                        m.model,
                        format_number(p.mean_predicted),
                        format_number(p.observed_rate),
                        p.count
                    );
                }
            }
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        // Infinite ROC thresholds have no JSON form; they are written as null.
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// AUC with interval for every model on every partition, in input order.
pub fn partition_table(reports: &[EvaluationReport]) -> String {
    let mut s = String::from("model,partition,n,positives,auc,auc_lo,auc_hi\n");
    for r in reports {
        for m in &r.models {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                m.model,
                r.partition,
                r.n,
                r.positives,
                format_number(m.auc),
                format_number(m.auc_ci.lo),
                format_number(m.auc_ci.hi)
            );
        }
    }
    s
}
