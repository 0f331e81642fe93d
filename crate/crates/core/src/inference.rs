//! Paired loss-residual tests and Benjamini-Hochberg-Yekutieli FDR control.
//!
//! All tests are one-sided for the alternative that the candidate predictor
//! has lower expected loss than the baseline, i.e. `E[R] > 0` with
//! `R_i = L_i(baseline) - L_i(candidate)`.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};
use crate::losses::{LossFunction, Predictions};

/// Largest effective sample size for which the Wilcoxon null is enumerated exactly.
pub const WILCOXON_EXACT_MAX: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedResiduals {
    diffs: Vec<f64>,
    mean: f64,
    stddev: f64,
    loss: LossFunction,
}

impl PairedResiduals {
    pub fn from_diffs(loss: LossFunction, diffs: Vec<f64>) -> Result<Self> {
        if diffs.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "paired test needs at least 2 test rows, got {}",
                diffs.len()
            )));
        }
        if diffs.iter().any(|d| !d.is_finite()) {
            return Err(Error::Numeric("non-finite residual difference".into()));
        }
        let m = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / m;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (m - 1.0);
        Ok(PairedResiduals {
            diffs,
            mean,
            stddev: var.sqrt(),
            loss,
        })
    }

    pub fn diffs(&self) -> &[f64] {
        &self.diffs
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn stddev(&self) -> f64 {
        self.stddev
    }

    pub fn loss(&self) -> LossFunction {
        self.loss
    }

    pub fn len(&self) -> usize {
        self.diffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diffs.is_empty()
    }
}

/// `diffs[i] = L(baseline_i, y_i) - L(candidate_i, y_i)`.
pub fn paired_residuals(
    loss: LossFunction,
    baseline: &Predictions,
    candidate: &Predictions,
    observed: &[f64],
) -> Result<PairedResiduals> {
    if baseline.len() != observed.len() || candidate.len() != observed.len() {
        return Err(Error::Shape(format!(
            "baseline {} / candidate {} / observed {} lengths differ",
            baseline.len(),
            candidate.len(),
            observed.len()
        )));
    }
    if observed.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "paired test needs at least 2 test rows, got {}",
            observed.len()
        )));
    }
    let diffs = baseline
        .iter()
        .zip(candidate.iter())
        .zip(observed)
        .map(|((b, c), &y)| Ok(loss.eval(b, y)? - loss.eval(c, y)?))
        .collect::<Result<Vec<_>>>()?;
    PairedResiduals::from_diffs(loss, diffs)
}

/// One-sided paired t-test: `P(T_{M-1} >= mean * sqrt(M) / sd)`.
///
/// A zero standard deviation gives `0` when the mean is positive and `1`
/// otherwise.
pub fn t_test_one_sided(r: &PairedResiduals) -> f64 {
    let m = r.len() as f64;
    if r.stddev == 0.0 || !(r.stddev > 1e-300) {
        return if r.mean > 0.0 { 0.0 } else { 1.0 };
    }
    let t = r.mean * m.sqrt() / r.stddev;
    let dist = StudentsT::new(0.0, 1.0, m - 1.0).expect("valid t distribution");
    dist.sf(t).clamp(0.0, 1.0)
}

/// Wilcoxon signed-rank statistic after dropping zeros: returns
/// `(W+ doubled, doubled ranks)`. Doubling keeps mid-ranks integral.
fn signed_ranks(diffs: &[f64]) -> (u64, Vec<u64>) {
    let mut nz: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    nz.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    let n = nz.len();
    let mut ranks2 = vec![0u64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && nz[j + 1].abs() == nz[i].abs() {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean; doubled mean = i + j + 2
        for r in &mut ranks2[i..=j] {
            *r = (i + j + 2) as u64;
        }
        i = j + 1;
    }
    let w_plus2 = nz.iter().zip(&ranks2).filter(|(d, _)| **d > 0.0).map(|(_, r)| *r).sum();
    (w_plus2, ranks2)
}

/// One-sided Wilcoxon signed-rank test for a positive location shift.
///
/// Zeros are dropped and ties receive mid-ranks. The null distribution is
/// computed exactly (subset-sum counting over the observed ranks) for up
/// to [`WILCOXON_EXACT_MAX`] non-zero differences; above that a normal
/// approximation with tie-corrected variance and continuity correction is
/// used.
pub fn wilcoxon_one_sided(r: &PairedResiduals) -> f64 {
    let (w2, ranks2) = signed_ranks(&r.diffs);
    let n = ranks2.len();
    if n == 0 {
        return 1.0;
    }
    if n <= WILCOXON_EXACT_MAX {
        return exact_upper_tail(w2, &ranks2);
    }
    let nf = n as f64;
    let w = w2 as f64 / 2.0;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && ranks2[j + 1] == ranks2[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return if w > mean { 0.0 } else { 1.0 };
    }
    let z = (w - mean - 0.5) / var.sqrt();
    Normal::standard().sf(z).clamp(0.0, 1.0)
}

/// `P(W+ >= observed)` with every sign equally likely, by dynamic programming.
fn exact_upper_tail(w2: u64, ranks2: &[u64]) -> f64 {
    let total: u64 = ranks2.iter().sum();
    let mut counts = vec![0f64; total as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &r in ranks2 {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let hits: f64 = counts[w2 as usize..].iter().sum();
    (hits / 2f64.powi(ranks2.len() as i32)).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdrResult {
    pub raw: Vec<f64>,
    pub adjusted: Vec<f64>,
    pub rejected: Vec<bool>,
    pub alpha: f64,
    pub c_m: f64,
}

/// Harmonic number `sum_{i=1}^m 1/i`.
pub fn harmonic(m: usize) -> f64 {
    (1..=m).map(|i| 1.0 / i as f64).sum()
}

/// Benjamini-Hochberg-Yekutieli adjustment.
///
/// Adjusted values are `min(1, min_{j>=i} m c_m p_(j) / j)` in sorted order,
/// so `adjusted <= alpha` reproduces the step-up rejection set with
/// threshold `(i/m) alpha / c_m` for every `alpha`.
pub fn by_adjust(pvalues: &[f64], alpha: f64) -> Result<FdrResult> {
    if pvalues.is_empty() {
        return Err(Error::InsufficientData("no p-values to adjust".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha {alpha} not in (0,1)")));
    }
    if let Some(p) = pvalues.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Domain(format!("p-value {p} outside [0,1]")));
    }
    let adjusted = by_adjusted_values(pvalues);
    let rejected = adjusted.iter().map(|a| *a <= alpha).collect();
    Ok(FdrResult {
        raw: pvalues.to_vec(),
        adjusted,
        rejected,
        alpha,
        c_m: harmonic(pvalues.len()),
    })
}

fn by_adjusted_values(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let c_m = harmonic(m);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &idx) in order.iter().enumerate().rev() {
        let scaled = m as f64 * c_m / (rank + 1) as f64 * p[idx];
        running = running.min(scaled);
        adjusted[idx] = running.min(1.0);
    }
    adjusted
}
