//! Multinomial logistic regression with an L2 penalty on the slopes.
//!
//! Classes absent from the training data get probability zero; the first
//! present class is the reference (logit fixed at zero). Fitted by damped
//! Newton steps with backtracking, falling back to gradient steps when the
//! Newton direction is unusable.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const GRAD_TOL: f64 = 1e-8;
const MAX_ITER: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    n_classes: usize,
    /// Present classes; `present[0]` is the reference class.
    present: Vec<usize>,
    /// `(present.len() - 1) x (p + 1)`, intercept in the last column.
    weights: DMatrix<f64>,
    pub iterations: usize,
}

struct Problem<'a> {
    x: &'a DMatrix<f64>,
    /// class position in `present` for each row
    y: Vec<usize>,
    k: usize,
    p: usize,
    l2: f64,
}

impl Problem<'_> {
    fn dim(&self) -> usize {
        (self.k - 1) * (self.p + 1)
    }

    fn idx(&self, class: usize, feature: usize) -> usize {
        (class - 1) * (self.p + 1) + feature
    }

    fn probs(&self, theta: &DVector<f64>, row: usize, out: &mut [f64]) {
        out[0] = 0.0;
        for c in 1..self.k {
            let mut z = theta[self.idx(c, self.p)];
            for j in 0..self.p {
                z += theta[self.idx(c, j)] * self.x[(row, j)];
            }
            out[c] = z;
        }
        softmax(out);
    }

    fn objective(&self, theta: &DVector<f64>) -> f64 {
        let mut pr = vec![0.0; self.k];
        let mut f = 0.0;
        for i in 0..self.x.nrows() {
            self.probs_log(theta, i, &mut pr);
            f -= pr[self.y[i]];
        }
        f + 0.5 * self.l2 * self.penalty(theta)
    }

    fn probs_log(&self, theta: &DVector<f64>, row: usize, out: &mut [f64]) {
        out[0] = 0.0;
        for c in 1..self.k {
            let mut z = theta[self.idx(c, self.p)];
            for j in 0..self.p {
                z += theta[self.idx(c, j)] * self.x[(row, j)];
            }
            out[c] = z;
        }
        let m = out.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
        let lse = m + out.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        out.iter_mut().for_each(|z| *z -= lse);
    }

    fn penalty(&self, theta: &DVector<f64>) -> f64 {
        let mut s = 0.0;
        for c in 1..self.k {
            for j in 0..self.p {
                s += theta[self.idx(c, j)].powi(2);
            }
        }
        s
    }

    fn gradient_hessian(&self, theta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.dim();
        let mut g = DVector::zeros(d);
        let mut h = DMatrix::zeros(d, d);
        let mut pr = vec![0.0; self.k];
        let mut xt = vec![1.0; self.p + 1];
        for i in 0..self.x.nrows() {
            self.probs(theta, i, &mut pr);
            for j in 0..self.p {
                xt[j] = self.x[(i, j)];
            }
            for c in 1..self.k {
                let r = pr[c] - if self.y[i] == c { 1.0 } else { 0.0 };
                for (j, v) in xt.iter().enumerate() {
                    g[self.idx(c, j)] += r * v;
                }
                for c2 in c..self.k {
                    let w = if c == c2 { pr[c] * (1.0 - pr[c]) } else { -pr[c] * pr[c2] };
                    if w == 0.0 {
                        continue;
                    }
                    for (a, va) in xt.iter().enumerate() {
                        let ia = self.idx(c, a);
                        for (b, vb) in xt.iter().enumerate() {
                            h[(ia, self.idx(c2, b))] += w * va * vb;
                        }
                    }
                }
            }
        }
        for c in 1..self.k {
            for c2 in (c + 1)..self.k {
                for a in 0..=self.p {
                    for b in 0..=self.p {
                        let v = h[(self.idx(c, a), self.idx(c2, b))];
                        h[(self.idx(c2, b), self.idx(c, a))] = v;
                    }
                }
            }
            for j in 0..self.p {
                let ij = self.idx(c, j);
                g[ij] += self.l2 * theta[ij];
                h[(ij, ij)] += self.l2;
            }
        }
        (g, h)
    }
}

fn softmax(z: &mut [f64]) {
    let m = z.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    z.iter_mut().for_each(|v| *v /= s);
}

pub fn fit(x: &DMatrix<f64>, codes: &[usize], n_classes: usize, l2: f64) -> Result<LogisticModel> {
    let mut seen = vec![false; n_classes];
    for &c in codes {
        seen[c] = true;
    }
    let present: Vec<usize> = (0..n_classes).filter(|&c| seen[c]).collect();
    if present.len() < 2 {
        return Err(Error::DegenerateTarget {
            target: None,
            reason: "fewer than 2 classes present".into(),
        });
    }
    let mut pos = vec![0usize; n_classes];
    for (i, &c) in present.iter().enumerate() {
        pos[c] = i;
    }
    let prob = Problem {
        x,
        y: codes.iter().map(|&c| pos[c]).collect(),
        k: present.len(),
        p: x.ncols(),
        l2,
    };
    let n = x.nrows() as f64;
    let mut theta = DVector::zeros(prob.dim());
    let mut f = prob.objective(&theta);
    let mut iterations = 0;
    for it in 0..MAX_ITER {
        iterations = it + 1;
        let (g, h) = prob.gradient_hessian(&theta);
        if g.amax() / n <= GRAD_TOL {
            break;
        }
        let newton = {
            let mut hr = h.clone();
            let ridge = 1e-10 * (1.0 + h.diagonal().amax());
            for d in 0..hr.nrows() {
                hr[(d, d)] += ridge;
            }
            hr.cholesky().map(|c| c.solve(&g))
        };
        let mut improved = false;
        for dir in newton.into_iter().chain(std::iter::once(g.clone() / (h.diagonal().amax() + 1.0))) {
            let slope = g.dot(&dir);
            if !(slope > 0.0) {
                continue;
            }
            let mut t = 1.0;
            while t > 1e-12 {
                let cand = &theta - &dir * t;
                let fc = prob.objective(&cand);
                if fc <= f - 1e-4 * t * slope {
                    theta = cand;
                    f = fc;
                    improved = true;
                    break;
                }
                t *= 0.5;
            }
            if improved {
                break;
            }
        }
        if !improved {
            break;
        }
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("logistic regression diverged".into()));
    }
    let weights = DMatrix::from_row_slice(prob.k - 1, prob.p + 1, theta.as_slice());
    Ok(LogisticModel {
        n_classes,
        present,
        weights,
        iterations,
    })
}

impl LogisticModel {
    /// Writes row-major class probabilities into `out` (`n_classes` per row).
    pub fn predict_into(&self, x: &DMatrix<f64>, out: &mut [f64]) {
        let k = self.present.len();
        let p = self.weights.ncols() - 1;
        let mut z = vec![0.0; k];
        for (i, row) in out.chunks_mut(self.n_classes).enumerate() {
            z[0] = 0.0;
            for c in 1..k {
                let mut v = self.weights[(c - 1, p)];
                for j in 0..p {
                    v += self.weights[(c - 1, j)] * x[(i, j)];
                }
                z[c] = v;
            }
            softmax(&mut z);
            row.iter_mut().for_each(|v| *v = 0.0);
            for (c, &cls) in self.present.iter().enumerate() {
                row[cls] = z[c];
            }
        }
    }
}
