//! Representation sparsity: one minus the normalized entropy of the
//! softmax over absolute logistic-decoding weights.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::store::RepresentationSnapshot;

#[derive(Debug, Clone, Serialize)]
pub struct LogisticFit {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

/// Full-batch gradient-descent logistic regression with ridge on the
/// weights (intercept unpenalized), run to gradient norm below `tol`.
pub fn logistic_fit(
    x: &Matrix,
    y: &[f64],
    ridge: f64,
    tol: f64,
    max_iters: usize,
) -> Result<LogisticFit> {
    let n = x.rows();
    if y.len() != n || n == 0 {
        return Err(Error::contract("labels must align with rows"));
    }
    if y.iter().all(|&v| v == y[0]) {
        return Err(Error::contract("labels are constant; decoder is degenerate"));
    }
    let units = x.cols();
    let mut w = vec![0.0; units];
    let mut b = 0.0;
    let inv_n = 1.0 / n as f64;

    let loss_of = |w: &[f64], b: f64| -> f64 {
        let mut total = 0.0;
        for i in 0..n {
            let z = crate::linalg::dot(x.row(i), w) + b;
            total += z.max(0.0) - z * y[i] + (-z.abs()).exp().ln_1p();
        }
        total * inv_n + 0.5 * ridge * w.iter().map(|v| v * v).sum::<f64>()
    };

    let mut lr = 1.0;
    let mut loss = loss_of(&w, b);
    let mut gw = vec![0.0; units];
    let mut last_grad_norm = f64::INFINITY;
    for iter in 0..max_iters {
        for g in gw.iter_mut() {
            *g = 0.0;
        }
        let mut gb = 0.0;
        for i in 0..n {
            let z = crate::linalg::dot(x.row(i), &w) + b;
            let err = (1.0 / (1.0 + (-z).exp()) - y[i]) * inv_n;
            for (g, &xv) in gw.iter_mut().zip(x.row(i)) {
                *g += err * xv;
            }
            gb += err;
        }
        for (g, &wv) in gw.iter_mut().zip(&w) {
            *g += ridge * wv;
        }
        let grad_sq: f64 = gw.iter().map(|g| g * g).sum::<f64>() + gb * gb;
        let grad_norm = grad_sq.sqrt();
        last_grad_norm = grad_norm;
        if grad_norm < tol {
            return Ok(LogisticFit {
                weights: w,
                intercept: b,
                iterations: iter,
                grad_norm,
            });
        }
        // Backtracking line search on the descent step.
        loop {
            let cand_w: Vec<f64> = w.iter().zip(&gw).map(|(&wv, &g)| wv - lr * g).collect();
            let cand_b = b - lr * gb;
            let cand_loss = loss_of(&cand_w, cand_b);
            if cand_loss <= loss - 0.5 * lr * grad_sq || lr < 1e-12 {
                w = cand_w;
                b = cand_b;
                loss = cand_loss;
                lr = (lr * 1.5).min(1e6);
                break;
            }
            lr *= 0.5;
        }
    }
    Ok(LogisticFit {
        weights: w,
        intercept: b,
        iterations: max_iters,
        grad_norm: last_grad_norm,
    })
}

/// `(H_max - H(softmax(|w|))) / H_max` with `H_max = ln(len)`: zero for
/// uniform magnitudes, approaching one as a single coefficient dominates.
pub fn entropy_sparsity_score(weights: &[f64]) -> Result<f64> {
    if weights.len() < 2 {
        return Err(Error::contract("sparsity needs at least two coefficients"));
    }
    let max_abs = weights.iter().map(|w| w.abs()).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = weights.iter().map(|w| (w.abs() - max_abs).exp()).collect();
    let total: f64 = exps.iter().sum();
    let entropy: f64 = exps
        .iter()
        .map(|&e| {
            let p = e / total;
            if p > 0.0 {
                -p * p.ln()
            } else {
                0.0
            }
        })
        .sum();
    let h_max = (weights.len() as f64).ln();
    Ok((h_max - entropy) / h_max)
}

/// Sparsity of a binary feature's representation: standardize each unit to
/// variance one (validation statistics), fit a logistic decoder on the
/// validation split, and score the entropy concentration of its weights.
pub fn sparsity_score(
    reps_val: &RepresentationSnapshot,
    f_val: &[f64],
) -> Result<f64> {
    if reps_val.rows != f_val.len() {
        return Err(Error::contract("labels must align with snapshot rows"));
    }
    let reps = reps_val.to_matrix();
    let mean = reps.column_means();
    let centered = reps.sub_row_vector(&mean);
    let n = centered.rows() as f64;
    let mut std = vec![0.0; centered.cols()];
    for i in 0..centered.rows() {
        for (s, &v) in std.iter_mut().zip(centered.row(i)) {
            *s += v * v;
        }
    }
    for s in std.iter_mut() {
        *s = (*s / n).sqrt();
    }
    let mut standardized = centered;
    for i in 0..standardized.rows() {
        for (v, &s) in standardized.row_mut(i).iter_mut().zip(&std) {
            if s > 0.0 {
                *v /= s;
            }
        }
    }
    let fit = logistic_fit(&standardized, f_val, 1e-4, 1e-6, 200_000)?;
    entropy_sparsity_score(&fit.weights)
}
