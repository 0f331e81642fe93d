//! Elastic net regression by cyclic coordinate descent on the Gram matrix,
//! with the penalty strength chosen by k-fold cross-validation.
//!
//! Objective (intercept unpenalized, features and target centered):
//!
//! `1/(2n) |y - Xb|^2 + lambda * l1_ratio * |b|_1 + lambda * (1 - l1_ratio) / 2 * |b|^2`

use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed;

const TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 5_000;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub intercept: f64,
    pub coef: Vec<f64>,
    pub lambda: f64,
}

impl LinearModel {
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let mut out = vec![self.intercept; x.nrows()];
        for (j, &b) in self.coef.iter().enumerate() {
            if b != 0.0 {
                for (o, v) in out.iter_mut().zip(x.column(j).iter()) {
                    *o += b * v;
                }
            }
        }
        out
    }
}

/// Sufficient statistics of a centered least-squares problem.
#[derive(Debug, Clone)]
pub struct Gram {
    /// `Xc' Xc / n`
    pub gram: DMatrix<f64>,
    /// `Xc' yc / n`
    pub xty: Vec<f64>,
    pub x_mean: Vec<f64>,
    pub y_mean: f64,
    /// `yc' yc / n`
    pub yy: f64,
}

impl Gram {
    pub fn new(x: &DMatrix<f64>, y: &[f64], rows: &[usize]) -> Gram {
        let p = x.ncols();
        let n = rows.len() as f64;
        let x_mean: Vec<f64> = (0..p).map(|j| rows.iter().map(|&r| x[(r, j)]).sum::<f64>() / n).collect();
        let y_mean = rows.iter().map(|&r| y[r]).sum::<f64>() / n;
        let yc: Vec<f64> = rows.iter().map(|&r| y[r] - y_mean).collect();
        let xc: Vec<Vec<f64>> = (0..p)
            .map(|j| rows.iter().map(|&r| x[(r, j)] - x_mean[j]).collect())
            .collect();
        let mut gram = DMatrix::zeros(p, p);
        for a in 0..p {
            for b in a..p {
                let v = xc[a].iter().zip(&xc[b]).map(|(u, w)| u * w).sum::<f64>() / n;
                gram[(a, b)] = v;
                gram[(b, a)] = v;
            }
        }
        let xty = xc.iter().map(|c| c.iter().zip(&yc).map(|(u, w)| u * w).sum::<f64>() / n).collect();
        let yy = yc.iter().map(|v| v * v).sum::<f64>() / n;
        Gram {
            gram,
            xty,
            x_mean,
            y_mean,
            yy,
        }
    }

    pub fn objective(&self, coef: &[f64], lambda: f64, l1_ratio: f64) -> f64 {
        let p = coef.len();
        let mut quad = 0.0;
        for a in 0..p {
            for b in 0..p {
                quad += coef[a] * self.gram[(a, b)] * coef[b];
            }
        }
        let lin: f64 = coef.iter().zip(&self.xty).map(|(b, c)| b * c).sum();
        let l1: f64 = coef.iter().map(|b| b.abs()).sum();
        let l2: f64 = coef.iter().map(|b| b * b).sum();
        0.5 * (self.yy - 2.0 * lin + quad) + lambda * l1_ratio * l1 + 0.5 * lambda * (1.0 - l1_ratio) * l2
    }

    /// Runs coordinate descent from `coef` in place; returns the number of sweeps.
    /// `on_sweep` sees the coefficients after each full sweep.
    pub fn descend(
        &self,
        coef: &mut [f64],
        lambda: f64,
        l1_ratio: f64,
        mut on_sweep: impl FnMut(&[f64]),
    ) -> usize {
        let p = coef.len();
        let l1 = lambda * l1_ratio;
        let l2 = lambda * (1.0 - l1_ratio);
        // gb = G b, kept in sync with coef
        let mut gb: Vec<f64> = (0..p)
            .map(|a| (0..p).map(|b| self.gram[(a, b)] * coef[b]).sum())
            .collect();
        let scale = self.gram.diagonal().iter().fold(0.0f64, |m, v| m.max(*v)).max(1e-300);
        for sweep in 1..=MAX_SWEEPS {
            let mut max_delta = 0.0f64;
            for j in 0..p {
                let gjj = self.gram[(j, j)];
                let denom = gjj + l2;
                let new = if denom <= 0.0 {
                    0.0
                } else {
                    let z = self.xty[j] - gb[j] + gjj * coef[j];
                    soft_threshold(z, l1) / denom
                };
                let delta = new - coef[j];
                if delta != 0.0 {
                    coef[j] = new;
                    for (a, g) in gb.iter_mut().enumerate() {
                        *g += delta * self.gram[(a, j)];
                    }
                    max_delta = max_delta.max(delta.abs() * gjj.sqrt());
                }
            }
            on_sweep(coef);
            if max_delta <= TOL * scale.sqrt() * (1.0 + self.yy.sqrt()) {
                return sweep;
            }
        }
        MAX_SWEEPS
    }

    fn model(&self, coef: Vec<f64>, lambda: f64) -> LinearModel {
        let intercept = self.y_mean - coef.iter().zip(&self.x_mean).map(|(b, m)| b * m).sum::<f64>();
        LinearModel { intercept, coef, lambda }
    }
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Fits at a single penalty on all rows.
pub fn fit_fixed(x: &DMatrix<f64>, y: &[f64], l1_ratio: f64, lambda: f64) -> LinearModel {
    let rows: Vec<usize> = (0..y.len()).collect();
    let g = Gram::new(x, y, &rows);
    let mut coef = vec![0.0; x.ncols()];
    g.descend(&mut coef, lambda, l1_ratio, |_| {});
    g.model(coef, lambda)
}

/// Selects `lambda` from `grid` by `folds`-fold cross-validated squared error
/// (ties go to the larger penalty), then refits on all rows.
pub fn fit_cv(
    x: &DMatrix<f64>,
    y: &[f64],
    l1_ratio: f64,
    grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<LinearModel> {
    let n = y.len();
    let mut path: Vec<f64> = grid.to_vec();
    path.sort_by(|a, b| b.total_cmp(a));
    path.dedup();
    if path.len() == 1 {
        return Ok(fit_fixed(x, y, l1_ratio, path[0]));
    }
    if n < folds.max(2) {
        return Err(Error::InsufficientData(format!(
            "{n} rows cannot be split into {folds} cross-validation folds"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let mut fold_of = vec![0usize; n];
    for (pos, &row) in order.iter().enumerate() {
        fold_of[row] = pos % folds;
    }

    let p = x.ncols();
    let mut cv_error = vec![0.0; path.len()];
    for f in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&r| fold_of[r] != f).collect();
        let held: Vec<usize> = (0..n).filter(|&r| fold_of[r] == f).collect();
        let g = Gram::new(x, y, &train);
        let mut coef = vec![0.0; p];
        for (k, &lambda) in path.iter().enumerate() {
            g.descend(&mut coef, lambda, l1_ratio, |_| {});
            let intercept = g.y_mean - coef.iter().zip(&g.x_mean).map(|(b, m)| b * m).sum::<f64>();
            cv_error[k] += held
                .iter()
                .map(|&r| {
                    let pred = intercept + (0..p).map(|j| coef[j] * x[(r, j)]).sum::<f64>();
                    (y[r] - pred).powi(2)
                })
                .sum::<f64>();
        }
    }
    let best = cv_error
        .iter()
        .enumerate()
        .fold(0, |b, (k, e)| if *e < cv_error[b] { k } else { b });

    let rows: Vec<usize> = (0..n).collect();
    let g = Gram::new(x, y, &rows);
    let mut coef = vec![0.0; p];
    for &lambda in &path[..=best] {
        g.descend(&mut coef, lambda, l1_ratio, |_| {});
    }
    Ok(g.model(coef, path[best]))
}
