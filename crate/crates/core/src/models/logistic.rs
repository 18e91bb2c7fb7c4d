//! L2-penalized logistic regression solved by Newton's method with backtracking.
//!
//! The objective is the summed logistic loss plus `‖w‖² / (2C)`; the intercept
//! is not penalized. Inputs are expected to be standardized already.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    #[default]
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    /// Inverse regularization strength.
    pub c: f64,
    pub max_iter: usize,
    pub penalty: Penalty,
    /// Convergence threshold on the gradient max-norm.
    pub tol: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            c: 100.0,
            max_iter: 200,
            penalty: Penalty::L2,
            tol: 1e-8,
        }
    }
}

impl LogisticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(Error::Config(format!(
                "logistic C must be positive, got {}",
                self.c
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("logistic max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value before the first step and after every accepted step.
    pub loss_trace: Vec<f64>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn penalized_loss(w: &[f64], b: f64, x: &[Vec<f64>], y: &[f64], c: f64) -> f64 {
    let data: f64 = x
        .iter()
        .zip(y)
        .map(|(row, &yi)| {
            let z = dot(w, row) + b;
            softplus(z) - yi * z
        })
        .sum();
    data + dot(w, w) / (2.0 * c)
}

/// Gradient with respect to `(w, b)`.
pub fn penalized_gradient(w: &[f64], b: f64, x: &[Vec<f64>], y: &[f64], c: f64) -> (Vec<f64>, f64) {
    let mut gw: Vec<f64> = w.iter().map(|wj| wj / c).collect();
    let mut gb = 0.0;
    for (row, &yi) in x.iter().zip(y) {
        let r = sigmoid(dot(w, row) + b) - yi;
        for (g, v) in gw.iter_mut().zip(row) {
            *g += r * v;
        }
        gb += r;
    }
    (gw, gb)
}

pub fn fit_newton(x: &[Vec<f64>], y: &[f64], cfg: &LogisticConfig) -> Result<LogisticFit> {
    cfg.validate()?;
    let n = x.len();
    if n == 0 || y.len() != n {
        return Err(Error::InvalidInput(
            "logistic fit needs matching non-empty x and y".into(),
        ));
    }
    let pos = y.iter().filter(|&&v| v > 0.5).count();
    if pos == 0 || pos == n {
        return Err(Error::SingleClass("logistic training data"));
    }
    let p = x[0].len();
    let c = cfg.c;

    let prior = pos as f64 / n as f64;
    let mut w = vec![0.0; p];
    let mut b = (prior / (1.0 - prior)).ln();
    let mut loss = penalized_loss(&w, b, x, y, c);
    let mut trace = vec![loss];
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..cfg.max_iter {
        let (gw, gb) = penalized_gradient(&w, b, x, y, c);
        let gmax = gw.iter().fold(gb.abs(), |m, g| m.max(g.abs()));
        if gmax < cfg.tol {
            converged = true;
            break;
        }
        iterations += 1;

        // Hessian over (w, b); the intercept sits in the last slot.
        let dim = p + 1;
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        for row in x {
            let pr = sigmoid(dot(&w, row) + b);
            let s = pr * (1.0 - pr);
            for a in 0..p {
                let sa = s * row[a];
                for bcol in a..p {
                    h[(a, bcol)] += sa * row[bcol];
                }
                h[(a, p)] += sa;
            }
            h[(p, p)] += s;
        }
        for a in 0..dim {
            for bcol in 0..a {
                h[(a, bcol)] = h[(bcol, a)];
            }
        }
        for a in 0..p {
            h[(a, a)] += 1.0 / c;
        }
        let mut grad = DVector::<f64>::zeros(dim);
        for a in 0..p {
            grad[a] = gw[a];
        }
        grad[p] = gb;

        let step = match h.clone().cholesky() {
            Some(ch) => -ch.solve(&grad),
            None => {
                // Fall back to a damped system when the Hessian loses definiteness numerically.
                let damped = h + DMatrix::<f64>::identity(dim, dim) * 1e-8;
                match damped.lu().solve(&grad) {
                    Some(s) => -s,
                    None => -grad.clone(),
                }
            }
        };
        let slope = grad.dot(&step);

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let w_new: Vec<f64> = w
                .iter()
                .enumerate()
                .map(|(a, wa)| wa + t * step[a])
                .collect();
            let b_new = b + t * step[p];
            let l_new = penalized_loss(&w_new, b_new, x, y, c);
            if l_new <= loss + 1e-4 * t * slope {
                w = w_new;
                b = b_new;
                loss = l_new;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // No descent possible at machine precision.
            converged = true;
            break;
        }
        trace.push(loss);
    }
    if !converged {
        let (gw, gb) = penalized_gradient(&w, b, x, y, c);
        converged = gw.iter().fold(gb.abs(), |m, g| m.max(g.abs())) < cfg.tol;
    }
    Ok(LogisticFit {
        weights: w,
        intercept: b,
        iterations,
        converged,
        loss_trace: trace,
    })
}
