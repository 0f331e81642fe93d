//! Gaussian naive Bayes.

use nalgebra::DMatrix;

/// Variance floor, relative to the largest feature variance.
const VAR_SMOOTHING: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianNb {
    log_prior: Vec<f64>,
    means: Vec<Vec<f64>>,
    vars: Vec<Vec<f64>>,
}

impl GaussianNb {
    pub fn fit(x: &DMatrix<f64>, codes: &[usize], n_classes: usize) -> GaussianNb {
        let (n, p) = x.shape();
        let mut counts = vec![0usize; n_classes];
        let mut means = vec![vec![0.0; p]; n_classes];
        let mut vars = vec![vec![0.0; p]; n_classes];
        for (i, &c) in codes.iter().enumerate() {
            counts[c] += 1;
            for j in 0..p {
                means[c][j] += x[(i, j)];
            }
        }
        for c in 0..n_classes {
            if counts[c] > 0 {
                means[c].iter_mut().for_each(|m| *m /= counts[c] as f64);
            }
        }
        for (i, &c) in codes.iter().enumerate() {
            for j in 0..p {
                vars[c][j] += (x[(i, j)] - means[c][j]).powi(2);
            }
        }
        let max_var = (0..p)
            .map(|j| {
                let col = x.column(j);
                let m = col.mean();
                col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64
            })
            .fold(0.0f64, f64::max);
        let eps = VAR_SMOOTHING * max_var.max(1e-300);
        for c in 0..n_classes {
            for v in &mut vars[c] {
                *v = if counts[c] > 0 { *v / counts[c] as f64 } else { 1.0 } + eps;
            }
        }
        let log_prior = counts
            .iter()
            .map(|&k| if k > 0 { (k as f64 / n as f64).ln() } else { f64::NEG_INFINITY })
            .collect();
        GaussianNb { log_prior, means, vars }
    }

    pub fn predict_into(&self, x: &DMatrix<f64>, out: &mut [f64]) {
        let k = self.log_prior.len();
        let p = x.ncols();
        for (i, row) in out.chunks_mut(k).enumerate() {
            for c in 0..k {
                row[c] = if self.log_prior[c].is_finite() {
                    self.log_prior[c]
                        - (0..p)
                            .map(|j| {
                                let v = self.vars[c][j];
                                0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (x[(i, j)] - self.means[c][j]).powi(2) / v)
                            })
                            .sum::<f64>()
                } else {
                    f64::NEG_INFINITY
                };
            }
            let m = row.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn posterior_matches_hand_computation() {
        // one feature, classes at 0 and 2 with equal spread
        let x = DMatrix::from_column_slice(4, 1, &[-1.0, 1.0, 1.0, 3.0]);
        let nb = GaussianNb::fit(&x, &[0, 0, 1, 1], 2);
        let q = DMatrix::from_column_slice(1, 1, &[1.0]);
        let mut out = vec![0.0; 2];
        nb.predict_into(&q, &mut out);
        assert!((out[0] - 0.5).abs() < 1e-12);
        let q = DMatrix::from_column_slice(1, 1, &[0.0]);
        nb.predict_into(&q, &mut out);
        // log-odds = ((0-2)^2 - (0-0)^2) / (2 * 1) = 2
        assert!((out[0] - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-9);
    }
}
