//! Second-order gradient boosting on the logistic loss.
//!
//! Each round fits a regression tree to per-row gradients `g = p − y` and
//! hessians `h = p(1 − p)` with exact greedy split search over pre-sorted
//! feature orders. Leaves take the value `−T(G) / (H + λ₂)` where `T` is the
//! L1 soft threshold, and a split scores
//! `½ [T(G_L)²/(H_L+λ₂) + T(G_R)²/(H_R+λ₂) − T(G)²/(H+λ₂)]`.

use serde::{Deserialize, Serialize};

use super::logistic::sigmoid;
use super::tree::{midpoint, Node, Tree};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Growth {
    /// Expand every node level by level (XGBoost style).
    DepthWise,
    /// Expand the leaf with the largest gain first (LightGBM style).
    LeafWise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostingConfig {
    pub growth: Growth,
    pub max_depth: usize,
    pub max_leaves: usize,
    pub lambda_l2: f64,
    pub lambda_l1: f64,
    pub learning_rate: f64,
    pub rounds: usize,
    pub min_child_hessian: f64,
    pub min_leaf_samples: usize,
}

impl BoostingConfig {
    /// `binary:logistic`, reg_lambda 100, reg_alpha 120, max_depth 2. Rounds
    /// and learning rate use the library defaults of 100 and 0.1.
    pub fn xgb_like() -> Self {
        Self {
            growth: Growth::DepthWise,
            max_depth: 2,
            max_leaves: usize::MAX,
            lambda_l2: 100.0,
            lambda_l1: 120.0,
            learning_rate: 0.1,
            rounds: 100,
            min_child_hessian: 1.0,
            min_leaf_samples: 1,
        }
    }

    /// num_leaves 20, max_depth 4, lambda_l1 = lambda_l2 = 1, learning rate
    /// 0.01, 1050 estimators.
    pub fn lgbm_like() -> Self {
        Self {
            growth: Growth::LeafWise,
            max_depth: 4,
            max_leaves: 20,
            lambda_l2: 1.0,
            lambda_l1: 1.0,
            learning_rate: 0.01,
            rounds: 1050,
            min_child_hessian: 1e-3,
            min_leaf_samples: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate {} must be finite and >= 0",
                self.learning_rate
            )));
        }
        if self.rounds == 0 {
            return Err(Error::Config("boosting needs at least one round".into()));
        }
        if self.max_leaves == 0 {
            return Err(Error::Config("max_leaves must be positive".into()));
        }
        if !(self.lambda_l2 >= 0.0) || !(self.lambda_l1 >= 0.0) {
            return Err(Error::Config("regularization must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    /// Log-odds of the training prevalence.
    pub base_score: f64,
    /// Leaf values already include the learning rate.
    pub trees: Vec<Tree>,
    /// Mean training log-loss after each round.
    pub train_logloss: Vec<f64>,
}

impl BoostedModel {
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

pub fn soft_threshold(g: f64, l1: f64) -> f64 {
    if g > l1 {
        g - l1
    } else if g < -l1 {
        g + l1
    } else {
        0.0
    }
}

pub fn leaf_weight(g: f64, h: f64, l1: f64, l2: f64) -> f64 {
    let denom = h + l2;
    if denom <= 0.0 {
        0.0
    } else {
        -soft_threshold(g, l1) / denom
    }
}

fn score(g: f64, h: f64, l1: f64, l2: f64) -> f64 {
    let denom = h + l2;
    if denom <= 0.0 {
        0.0
    } else {
        soft_threshold(g, l1).powi(2) / denom
    }
}

pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, l1: f64, l2: f64) -> f64 {
    0.5 * (score(gl, hl, l1, l2) + score(gr, hr, l1, l2) - score(gl + gr, hl + hr, l1, l2))
}

fn mean_logloss(margins: &[f64], y: &[u8]) -> f64 {
    margins
        .iter()
        .zip(y)
        .map(|(&f, &yi)| {
            // log(1 + e^f) − y f
            let sp = if f > 0.0 {
                f + (-f).exp().ln_1p()
            } else {
                f.exp().ln_1p()
            };
            sp - f64::from(yi) * f
        })
        .sum::<f64>()
        / margins.len() as f64
}

pub fn fit_boosted(x: &[Vec<f64>], y: &[u8], cfg: &BoostingConfig) -> Result<BoostedModel> {
    cfg.validate()?;
    let n = x.len();
    if n == 0 || y.len() != n {
        return Err(Error::InvalidInput(
            "boosting needs matching non-empty x and y".into(),
        ));
    }
    let pos = y.iter().filter(|&&v| v == 1).count();
    if pos == 0 || pos == n {
        return Err(Error::SingleClass("boosting training data"));
    }
    let prior = pos as f64 / n as f64;
    let base_score = (prior / (1.0 - prior)).ln();
    let p = x[0].len();

    let order: Vec<Vec<u32>> = (0..p)
        .map(|f| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| {
                x[a as usize][f]
                    .total_cmp(&x[b as usize][f])
                    .then(a.cmp(&b))
            });
            idx
        })
        .collect();

    let mut margins = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut trees = Vec::with_capacity(cfg.rounds);
    let mut trace = Vec::with_capacity(cfg.rounds);
    let mut scratch = vec![false; n];
    for _ in 0..cfg.rounds {
        for i in 0..n {
            let pr = sigmoid(margins[i]);
            grad[i] = pr - f64::from(y[i]);
            hess[i] = pr * (1.0 - pr);
        }
        let tree = TreeGrower {
            x,
            grad: &grad,
            hess: &hess,
            cfg,
        }
        .grow(order.clone(), &mut scratch);
        for (i, m) in margins.iter_mut().enumerate() {
            *m += tree.predict(&x[i]);
        }
        trace.push(mean_logloss(&margins, y));
        trees.push(tree);
    }
    Ok(BoostedModel {
        base_score,
        trees,
        train_logloss: trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

struct Pending {
    node: usize,
    depth: usize,
    /// Per-feature sample indices, each in ascending feature order.
    lists: Vec<Vec<u32>>,
    g: f64,
    h: f64,
    best: Option<SplitChoice>,
}

struct TreeGrower<'a> {
    x: &'a [Vec<f64>],
    grad: &'a [f64],
    hess: &'a [f64],
    cfg: &'a BoostingConfig,
}

impl TreeGrower<'_> {
    fn leaf_value(&self, g: f64, h: f64) -> f64 {
        self.cfg.learning_rate * leaf_weight(g, h, self.cfg.lambda_l1, self.cfg.lambda_l2)
    }

    fn pending(&self, node: usize, depth: usize, lists: Vec<Vec<u32>>) -> Pending {
        let (g, h) = lists[0].iter().fold((0.0, 0.0), |(g, h), &i| {
            (g + self.grad[i as usize], h + self.hess[i as usize])
        });
        let best = if depth < self.cfg.max_depth {
            best_split(self.x, self.grad, self.hess, &lists, g, h, self.cfg)
        } else {
            None
        };
        Pending {
            node,
            depth,
            lists,
            g,
            h,
            best,
        }
    }

    fn grow(&self, root_lists: Vec<Vec<u32>>, scratch: &mut [bool]) -> Tree {
        let mut nodes = Vec::new();
        let root = self.pending(0, 0, root_lists);
        nodes.push(Node::Leaf {
            value: self.leaf_value(root.g, root.h),
        });
        let mut open = vec![root];
        let mut leaves = 1usize;
        while leaves < self.cfg.max_leaves {
            let pick = match self.cfg.growth {
                Growth::DepthWise => open.iter().position(|p| p.best.is_some()),
                Growth::LeafWise => {
                    let mut best: Option<(usize, f64)> = None;
                    for (k, p) in open.iter().enumerate() {
                        if let Some(s) = p.best {
                            if best.is_none_or(|(_, g)| s.gain > g) {
                                best = Some((k, s.gain));
                            }
                        }
                    }
                    best.map(|(k, _)| k)
                }
            };
            let Some(k) = pick else { break };
            let leaf = open.remove(k);
            let split = leaf.best.expect("picked leaf has a split");

            for &i in &leaf.lists[0] {
                scratch[i as usize] = self.x[i as usize][split.feature] <= split.threshold;
            }
            let mut left_lists = Vec::with_capacity(leaf.lists.len());
            let mut right_lists = Vec::with_capacity(leaf.lists.len());
            for list in leaf.lists {
                let (l, r): (Vec<u32>, Vec<u32>) =
                    list.into_iter().partition(|&i| scratch[i as usize]);
                left_lists.push(l);
                right_lists.push(r);
            }
            let left_id = nodes.len();
            let right_id = left_id + 1;
            let left = self.pending(left_id, leaf.depth + 1, left_lists);
            let right = self.pending(right_id, leaf.depth + 1, right_lists);
            nodes.push(Node::Leaf {
                value: self.leaf_value(left.g, left.h),
            });
            nodes.push(Node::Leaf {
                value: self.leaf_value(right.g, right.h),
            });
            nodes[leaf.node] = Node::Split {
                feature: split.feature,
                threshold: split.threshold,
                gain: split.gain,
                left: left_id,
                right: right_id,
            };
            leaves += 1;
            // Depth-wise keeps FIFO order so a level finishes before the next starts.
            open.push(left);
            open.push(right);
        }
        Tree { nodes }
    }
}

/// Exact greedy search; the first strictly best candidate wins ties
/// (lowest feature, then lowest threshold).
pub(crate) fn best_split(
    x: &[Vec<f64>],
    grad: &[f64],
    hess: &[f64],
    lists: &[Vec<u32>],
    g: f64,
    h: f64,
    cfg: &BoostingConfig,
) -> Option<SplitChoice> {
    let n = lists[0].len();
    if n < 2 * cfg.min_leaf_samples.max(1) {
        return None;
    }
    let mut best: Option<SplitChoice> = None;
    for (f, list) in lists.iter().enumerate() {
        let (mut gl, mut hl) = (0.0, 0.0);
        for k in 0..n - 1 {
            let i = list[k] as usize;
            gl += grad[i];
            hl += hess[i];
            let nl = k + 1;
            let (v, next) = (x[i][f], x[list[k + 1] as usize][f]);
            if v == next || nl < cfg.min_leaf_samples || n - nl < cfg.min_leaf_samples {
                continue;
            }
            let (gr, hr) = (g - gl, h - hl);
            if hl < cfg.min_child_hessian || hr < cfg.min_child_hessian {
                continue;
            }
            let gain = split_gain(gl, hl, gr, hr, cfg.lambda_l1, cfg.lambda_l2);
            if gain > 0.0 && best.is_none_or(|b| gain > b.gain) {
                best = Some(SplitChoice {
                    feature: f,
                    threshold: midpoint(v, next),
                    gain,
                });
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data() -> (Vec<Vec<f64>>, Vec<u8>) {
        let x: Vec<Vec<f64>> = (0..200)
            .map(|i| vec![((i * 37) % 101) as f64 / 10.0, ((i * 13) % 29) as f64])
            .collect();
        let y = x
            .iter()
            .map(|r| u8::from(r[0] > 5.0 || r[1] > 25.0))
            .collect();
        (x, y)
    }

    #[test]
    fn zero_learning_rate_predicts_base_rate() {
        let (x, y) = data();
        let cfg = BoostingConfig {
            learning_rate: 0.0,
            rounds: 5,
            ..BoostingConfig::xgb_like()
        };
        let m = fit_boosted(&x, &y, &cfg).unwrap();
        let prev = y.iter().filter(|&&v| v == 1).count() as f64 / y.len() as f64;
        for r in &x {
            assert!((sigmoid(m.margin(r)) - prev).abs() < 1e-12);
        }
    }

    #[test]
    fn negative_rate_or_zero_rounds_rejected() {
        let (x, y) = data();
        let bad = BoostingConfig {
            learning_rate: -0.1,
            ..BoostingConfig::xgb_like()
        };
        assert!(matches!(fit_boosted(&x, &y, &bad), Err(Error::Config(_))));
        let bad = BoostingConfig {
            rounds: 0,
            ..BoostingConfig::xgb_like()
        };
        assert!(matches!(fit_boosted(&x, &y, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn presets_respect_shape_limits_and_reduce_loss() {
        let (x, y) = data();
        for cfg in [
            BoostingConfig {
                rounds: 30,
                ..BoostingConfig::xgb_like()
            },
            BoostingConfig {
                rounds: 60,
                ..BoostingConfig::lgbm_like()
            },
        ] {
            let m = fit_boosted(&x, &y, &cfg).unwrap();
            assert!(m
                .trees
                .iter()
                .all(|t| t.depth() <= cfg.max_depth && t.n_leaves() <= cfg.max_leaves));
            assert!(m.train_logloss.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        }
    }

    #[test]
    fn soft_threshold_shrinks_towards_zero() {
        assert_eq!(soft_threshold(5.0, 2.0), 3.0);
        assert_eq!(soft_threshold(-5.0, 2.0), -3.0);
        assert_eq!(soft_threshold(1.5, 2.0), 0.0);
        assert_eq!(leaf_weight(-4.0, 1.0, 0.0, 1.0), 2.0);
    }
}
