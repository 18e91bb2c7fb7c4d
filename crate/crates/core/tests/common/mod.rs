//! Independent reference implementations used as test oracles. Each one is
//! written for clarity over speed and shares no code with the library.

#![allow(dead_code)]

use akipred::dataset::Dataset;
use akipred::models::FittedModel;

/// Isotonic least-squares fit by exhaustive search: the optimum is piecewise
/// constant on contiguous blocks, each at its block mean, so trying every
/// partition into blocks and keeping the best monotone one is exact.
pub fn isotonic_brute_force(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    if n == 0 {
        return Vec::new();
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << (n - 1)) {
        let mut fit = Vec::with_capacity(n);
        let mut start = 0;
        for end in 1..=n {
            let cut = end == n || mask & (1 << (end - 1)) != 0;
            if cut {
                let m = y[start..end].iter().sum::<f64>() / (end - start) as f64;
                fit.extend(std::iter::repeat_n(m, end - start));
                start = end;
            }
        }
        if fit.windows(2).any(|w| w[1] < w[0]) {
            continue;
        }
        let sse: f64 = fit.iter().zip(y).map(|(f, v)| (f - v).powi(2)).sum();
        if best.as_ref().is_none_or(|(b, _)| sse < *b - 1e-12) {
            best = Some((sse, fit));
        }
    }
    best.expect("a single block is always monotone").1
}

/// Interventional Shapley values by coalition enumeration:
/// `φ_j = Σ_S |S|!(p−|S|−1)!/p! [v(S ∪ j) − v(S)]` with
/// `v(S) = mean_b f(x_S, b_{S̄})`, evaluated through the public margin.
pub fn shapley_coalitions(m: &FittedModel, x: &[f64], background: &Dataset) -> Vec<f64> {
    let p = x.len();
    let value = |s: u32| -> f64 {
        let mut total = 0.0;
        for b in background.rows() {
            let mixed: Vec<f64> = (0..p)
                .map(|j| if s & (1 << j) != 0 { x[j] } else { b[j] })
                .collect();
            total += m.margin(&mixed).unwrap();
        }
        total / background.n_rows() as f64
    };
    let fact = |k: usize| (1..=k).product::<usize>() as f64;
    let v: Vec<f64> = (0..1u32 << p).map(value).collect();
    (0..p)
        .map(|j| {
            let mut phi = 0.0;
            for s in 0..1u32 << p {
                if s & (1 << j) != 0 {
                    continue;
                }
                let k = s.count_ones() as usize;
                let w = fact(k) * fact(p - k - 1) / fact(p);
                phi += w * (v[(s | (1 << j)) as usize] - v[s as usize]);
            }
            phi
        })
        .collect()
}

/// Minimum of `½ αᵀQα − Σα` subject to `0 ≤ α ≤ C`, `Σ y α = 0`, with
/// `Q_ij = y_i y_j K_ij`, by enumerating every active set. Each variable is
/// fixed at 0, fixed at C, or free; the free block is solved from the KKT
/// system and kept when it is feasible. Returns `(objective, α)`.
pub fn svm_dual_brute_force(k: &[Vec<f64>], y: &[f64], c: f64) -> (f64, Vec<f64>) {
    let n = y.len();
    let q = |i: usize, j: usize| y[i] * y[j] * k[i][j];
    let objective = |a: &[f64]| {
        let mut o = 0.0;
        for i in 0..n {
            for j in 0..n {
                o += 0.5 * a[i] * a[j] * q(i, j);
            }
            o -= a[i];
        }
        o
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    let total = 3usize.pow(n as u32);
    for code in 0..total {
        let mut state = vec![0u8; n];
        let mut r = code;
        for s in state.iter_mut() {
            *s = (r % 3) as u8;
            r /= 3;
        }
        let mut alpha: Vec<f64> = state
            .iter()
            .map(|&s| if s == 1 { c } else { 0.0 })
            .collect();
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        if !free.is_empty() {
            // Unknowns: α_F and the multiplier b.
            // Q_FF α_F + y_F b = 1 − Q_F,fixed α_fixed;  y_Fᵀ α_F = −y_fixedᵀ α_fixed.
            let m = free.len() + 1;
            let mut a = vec![vec![0.0; m + 1]; m];
            for (r, &i) in free.iter().enumerate() {
                for (cc, &j) in free.iter().enumerate() {
                    a[r][cc] = q(i, j);
                }
                a[r][m - 1] = y[i];
                let fixed: f64 = (0..n).filter(|&j| state[j] == 1).map(|j| q(i, j) * c).sum();
                a[r][m] = 1.0 - fixed;
            }
            for (cc, &j) in free.iter().enumerate() {
                a[m - 1][cc] = y[j];
            }
            a[m - 1][m] = -(0..n)
                .filter(|&j| state[j] == 1)
                .map(|j| y[j] * c)
                .sum::<f64>();
            let Some(sol) = gauss_solve(a) else { continue };
            for (r, &i) in free.iter().enumerate() {
                alpha[i] = sol[r];
            }
        }
        let eq: f64 = alpha.iter().zip(y).map(|(a, y)| a * y).sum();
        if eq.abs() > 1e-9 || alpha.iter().any(|&a| a < -1e-12 || a > c + 1e-12) {
            continue;
        }
        let o = objective(&alpha);
        if best.as_ref().is_none_or(|(b, _)| o < *b) {
            best = Some((o, alpha));
        }
    }
    best.expect("α = 0 is always feasible")
}

/// Gaussian elimination with partial pivoting on an augmented matrix.
fn gauss_solve(mut a: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let m = a.len();
    for col in 0..m {
        let piv = (col..m).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        for r in 0..m {
            if r != col {
                let f = a[r][col] / a[col][col];
                for cc in col..=m {
                    a[r][cc] -= f * a[col][cc];
                }
            }
        }
    }
    Some((0..m).map(|i| a[i][m] / a[i][i]).collect())
}

/// Best root split by direct evaluation of
/// `½[G_L²/(H_L+λ₂) + G_R²/(H_R+λ₂) − G²/(H+λ₂)]` over every feature and every
/// threshold halfway between consecutive distinct values. Ties keep the first
/// candidate (lowest feature, then lowest threshold).
pub fn best_root_split(x: &[Vec<f64>], g: &[f64], h: &[f64], l2: f64) -> Option<(usize, f64, f64)> {
    let (gt, ht): (f64, f64) = (g.iter().sum(), h.iter().sum());
    let mut best: Option<(usize, f64, f64)> = None;
    for f in 0..x[0].len() {
        let mut vals: Vec<f64> = x.iter().map(|r| r[f]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let (mut gl, mut hl) = (0.0, 0.0);
            for i in 0..x.len() {
                if x[i][f] <= t {
                    gl += g[i];
                    hl += h[i];
                }
            }
            let (gr, hr) = (gt - gl, ht - hl);
            let gain = 0.5 * (gl * gl / (hl + l2) + gr * gr / (hr + l2) - gt * gt / (ht + l2));
            if gain > 0.0 && best.is_none_or(|b| gain > b.2) {
                best = Some((f, t, gain));
            }
        }
    }
    best
}

/// KNN probability by sorting every training row by distance (ties by index).
pub fn knn_brute_force(rows: &[Vec<f64>], labels: &[u8], k: usize, q: &[f64]) -> f64 {
    let mut d: Vec<(f64, usize)> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            (
                r.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>(),
                i,
            )
        })
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d[..k].iter().filter(|&&(_, i)| labels[i] == 1).count() as f64 / k as f64
}

/// Mann–Whitney AUC by counting every positive/negative pair, ties as ½.
pub fn auc_pairs(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                den += 1.0;
                num += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

/// Largest relative error between an analytic gradient and central differences.
pub fn finite_difference_gap(
    f: impl Fn(&[f64]) -> f64,
    at: &[f64],
    analytic: &[f64],
    h: f64,
) -> f64 {
    let mut x = at.to_vec();
    let mut num = 0.0f64;
    let mut scale = 0.0f64;
    for j in 0..at.len() {
        x[j] = at[j] + h;
        let up = f(&x);
        x[j] = at[j] - h;
        let down = f(&x);
        x[j] = at[j];
        let fd = (up - down) / (2.0 * h);
        num += (fd - analytic[j]).powi(2);
        scale += analytic[j].powi(2).max(fd * fd);
    }
    num.sqrt() / scale.sqrt().max(1e-12)
}
