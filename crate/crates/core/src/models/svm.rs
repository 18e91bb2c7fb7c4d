//! Soft-margin SVM with an RBF kernel, solved in the dual by sequential minimal
//! optimization (second-order working-set selection), plus Platt scaling.
//!
//! The dual is `min ½ αᵀQα − Σα` subject to `0 ≤ α ≤ C`, `yᵀα = 0`, with
//! `Q_ij = y_i y_j K(x_i, x_j)`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resample::sq_dist;
use crate::rng::rng_from_seed;

const TAU: f64 = 1e-12;
/// Above this many rows the Gram matrix is computed on demand instead of cached.
const MAX_CACHED_ROWS: usize = 12_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub c: f64,
    pub gamma: f64,
    /// KKT violation tolerance.
    pub tol: f64,
    /// Iteration cap; `None` means `max(10⁷, 100·n)`.
    pub max_iter: Option<usize>,
    pub platt_folds: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 0.1,
            gamma: 0.02,
            tol: 1e-3,
            max_iter: None,
            platt_folds: 3,
        }
    }
}

impl SvmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) || !(self.gamma > 0.0) || !(self.tol > 0.0) {
            return Err(Error::Config(
                "SVM C, gamma and tol must be positive".into(),
            ));
        }
        if self.platt_folds < 2 {
            return Err(Error::Config(
                "Platt scaling needs at least two folds".into(),
            ));
        }
        Ok(())
    }
}

pub fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    (-gamma * sq_dist(a, b)).exp()
}

/// Kernel values over a set of rows, optionally restricted to a subset.
pub struct Gram<'a> {
    rows: &'a [Vec<f64>],
    gamma: f64,
    cache: Option<Vec<f64>>,
}

impl<'a> Gram<'a> {
    pub fn new(rows: &'a [Vec<f64>], gamma: f64) -> Self {
        let n = rows.len();
        let cache = (n <= MAX_CACHED_ROWS).then(|| {
            let mut k = vec![0.0; n * n];
            for i in 0..n {
                k[i * n + i] = 1.0;
                for j in 0..i {
                    let v = rbf(&rows[i], &rows[j], gamma);
                    k[i * n + j] = v;
                    k[j * n + i] = v;
                }
            }
            k
        });
        Self { rows, gamma, cache }
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        match &self.cache {
            Some(k) => k[i * self.rows.len() + j],
            None => rbf(&self.rows[i], &self.rows[j], self.gamma),
        }
    }

    fn row_into(&self, i: usize, idx: &[usize], out: &mut Vec<f64>) {
        out.clear();
        out.extend(idx.iter().map(|&j| self.get(i, j)));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoSolution {
    pub alpha: Vec<f64>,
    /// Decision function is `Σ α_i y_i K(x_i, x) − rho`.
    pub rho: f64,
    pub iterations: usize,
    /// Maximal KKT violation at termination.
    pub gap: f64,
    /// `½ αᵀQα − Σα` at the solution.
    pub objective: f64,
}

/// Runs SMO on the rows `idx` of `gram` with labels `y ∈ {−1, +1}`.
pub fn solve_smo(
    gram: &Gram,
    idx: &[usize],
    y: &[f64],
    c: f64,
    tol: f64,
    max_iter: Option<usize>,
) -> Result<SmoSolution> {
    let n = idx.len();
    let max_iter = max_iter.unwrap_or_else(|| (100 * n).max(10_000_000));
    let mut alpha = vec![0.0; n];
    let mut g = vec![-1.0; n];
    let qd: Vec<f64> = idx.iter().map(|&i| gram.get(i, i)).collect();
    let mut ki = Vec::with_capacity(n);
    let mut kj = Vec::with_capacity(n);
    let upper = |a: f64| a >= c;
    let lower = |a: f64| a <= 0.0;

    let mut iterations = 0;
    let mut gap;
    loop {
        // Working set: i maximizes −y_t ∇_t over I_up; j minimizes the
        // second-order objective decrease over I_low.
        let mut gmax = f64::NEG_INFINITY;
        let mut gmax_idx = None;
        for t in 0..n {
            if y[t] > 0.0 {
                if !upper(alpha[t]) && -g[t] > gmax {
                    gmax = -g[t];
                    gmax_idx = Some(t);
                }
            } else if !lower(alpha[t]) && g[t] > gmax {
                gmax = g[t];
                gmax_idx = Some(t);
            }
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut gmin_idx = None;
        let mut obj_min = f64::INFINITY;
        if let Some(i) = gmax_idx {
            gram.row_into(idx[i], idx, &mut ki);
            for t in 0..n {
                if y[t] > 0.0 {
                    if !lower(alpha[t]) {
                        let grad_diff = gmax + g[t];
                        if g[t] > gmax2 {
                            gmax2 = g[t];
                        }
                        if grad_diff > 0.0 {
                            // y_i Q_it = y_t K_it
                            let mut quad = qd[i] + qd[t] - 2.0 * y[t] * ki[t];
                            if quad <= 0.0 {
                                quad = TAU;
                            }
                            let obj = -(grad_diff * grad_diff) / quad;
                            if obj < obj_min {
                                obj_min = obj;
                                gmin_idx = Some(t);
                            }
                        }
                    }
                } else if !upper(alpha[t]) {
                    let grad_diff = gmax - g[t];
                    if -g[t] > gmax2 {
                        gmax2 = -g[t];
                    }
                    if grad_diff > 0.0 {
                        let mut quad = qd[i] + qd[t] + 2.0 * y[t] * ki[t];
                        if quad <= 0.0 {
                            quad = TAU;
                        }
                        let obj = -(grad_diff * grad_diff) / quad;
                        if obj < obj_min {
                            obj_min = obj;
                            gmin_idx = Some(t);
                        }
                    }
                }
            }
        }
        gap = gmax + gmax2;
        let (Some(i), Some(j)) = (gmax_idx, gmin_idx) else {
            break;
        };
        if gap < tol {
            break;
        }
        if iterations >= max_iter {
            return Err(Error::SmoNotConverged { iterations, gap });
        }
        iterations += 1;

        gram.row_into(idx[j], idx, &mut kj);
        let (old_ai, old_aj) = (alpha[i], alpha[j]);
        let q_ij = y[i] * y[j] * ki[j];
        let (mut ai, mut aj) = (old_ai, old_aj);
        if y[i] != y[j] {
            let mut quad = qd[i] + qd[j] + 2.0 * q_ij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-g[i] - g[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let mut quad = qd[i] + qd[j] - 2.0 * q_ij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (g[i] - g[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        alpha[i] = ai;
        alpha[j] = aj;
        let (dai, daj) = (ai - old_ai, aj - old_aj);
        for t in 0..n {
            g[t] += y[t] * (y[i] * ki[t] * dai + y[j] * kj[t] * daj);
        }
    }

    let objective = alpha
        .iter()
        .zip(&g)
        .map(|(a, gi)| a * (gi - 1.0))
        .sum::<f64>()
        / 2.0;
    Ok(SmoSolution {
        rho: compute_rho(&alpha, &g, y, c),
        alpha,
        iterations,
        gap,
        objective,
    })
}

fn compute_rho(alpha: &[f64], g: &[f64], y: &[f64], c: f64) -> f64 {
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut n_free, mut sum_free) = (0usize, 0.0);
    for t in 0..alpha.len() {
        let yg = y[t] * g[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub gamma: f64,
    pub support_vectors: Vec<Vec<f64>>,
    /// `α_i y_i` for each support vector.
    pub coef: Vec<f64>,
    pub rho: f64,
    /// Platt parameters: `P(y = 1 | f) = 1 / (1 + exp(A f + B))`.
    pub platt_a: f64,
    pub platt_b: f64,
}

impl SvmModel {
    pub fn decision(&self, z: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.coef)
            .map(|(sv, c)| c * rbf(sv, z, self.gamma))
            .sum::<f64>()
            - self.rho
    }

    pub fn probability(&self, z: &[f64]) -> f64 {
        platt_probability(self.decision(z), self.platt_a, self.platt_b)
    }
}

fn decision_at(gram: &Gram, idx: &[usize], sol: &SmoSolution, y: &[f64], row: usize) -> f64 {
    idx.iter()
        .zip(&sol.alpha)
        .zip(y)
        .filter(|((_, a), _)| **a > 0.0)
        .map(|((&i, a), yi)| a * yi * gram.get(i, row))
        .sum::<f64>()
        - sol.rho
}

pub fn fit_svm(z: &[Vec<f64>], labels: &[u8], cfg: &SvmConfig, seed: u64) -> Result<SvmModel> {
    cfg.validate()?;
    let n = z.len();
    let pos = labels.iter().filter(|&&v| v == 1).count();
    if pos == 0 || pos == n {
        return Err(Error::SingleClass("SVM training data"));
    }
    let y: Vec<f64> = labels
        .iter()
        .map(|&v| if v == 1 { 1.0 } else { -1.0 })
        .collect();
    let gram = Gram::new(z, cfg.gamma);
    let all: Vec<usize> = (0..n).collect();
    let sol = solve_smo(&gram, &all, &y, cfg.c, cfg.tol, cfg.max_iter)?;

    // Out-of-fold decision values for the sigmoid fit.
    let mut perm = all.clone();
    perm.shuffle(&mut rng_from_seed(seed));
    let folds = cfg.platt_folds.min(n);
    let mut dec = vec![0.0; n];
    for f in 0..folds {
        let (start, end) = (f * n / folds, (f + 1) * n / folds);
        let held: &[usize] = &perm[start..end];
        let mut train: Vec<usize> = perm[..start].iter().chain(&perm[end..]).copied().collect();
        train.sort_unstable();
        let ty: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let tp = ty.iter().filter(|&&v| v > 0.0).count();
        if tp == 0 || tp == ty.len() {
            let v = if tp > 0 { 1.0 } else { -1.0 };
            for &i in held {
                dec[i] = v;
            }
            continue;
        }
        let fold_sol = solve_smo(&gram, &train, &ty, cfg.c, cfg.tol, cfg.max_iter)?;
        for &i in held {
            dec[i] = decision_at(&gram, &train, &fold_sol, &ty, i);
        }
    }
    let (platt_a, platt_b) = fit_platt(&dec, labels);

    let mut support_vectors = Vec::new();
    let mut coef = Vec::new();
    for i in 0..n {
        if sol.alpha[i] > 0.0 {
            support_vectors.push(z[i].clone());
            coef.push(sol.alpha[i] * y[i]);
        }
    }
    Ok(SvmModel {
        gamma: cfg.gamma,
        support_vectors,
        coef,
        rho: sol.rho,
        platt_a,
        platt_b,
    })
}

pub fn platt_probability(f: f64, a: f64, b: f64) -> f64 {
    let t = f * a + b;
    if t >= 0.0 {
        let e = (-t).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + t.exp())
    }
}

/// Newton fit of the Platt sigmoid with smoothed targets.
pub fn fit_platt(dec: &[f64], labels: &[u8]) -> (f64, f64) {
    let prior1 = labels.iter().filter(|&&v| v == 1).count() as f64;
    let prior0 = labels.len() as f64 - prior1;
    let hi = (prior1 + 1.0) / (prior1 + 2.0);
    let lo = 1.0 / (prior0 + 2.0);
    let t: Vec<f64> = labels
        .iter()
        .map(|&v| if v == 1 { hi } else { lo })
        .collect();
    let objective = |a: f64, b: f64| -> f64 {
        dec.iter()
            .zip(&t)
            .map(|(&f, &ti)| {
                let z = f * a + b;
                if z >= 0.0 {
                    ti * z + (-z).exp().ln_1p()
                } else {
                    (ti - 1.0) * z + z.exp().ln_1p()
                }
            })
            .sum()
    };
    let (mut a, mut b) = (0.0, ((prior0 + 1.0) / (prior1 + 1.0)).ln());
    let mut fval = objective(a, b);
    for _ in 0..100 {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (1e-12, 1e-12, 0.0, 0.0, 0.0);
        for (&f, &ti) in dec.iter().zip(&t) {
            let z = f * a + b;
            let (p, q) = if z >= 0.0 {
                let e = (-z).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = z.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = ti - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < 1e-5 && g2.abs() < 1e-5 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        while step >= 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if step < 1e-10 {
            break;
        }
    }
    (a, b)
}
