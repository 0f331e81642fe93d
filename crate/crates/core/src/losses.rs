//! Loss functionals, the statistics they elicit, and per-row loss residuals.
//!
//! Regression losses compare a real prediction with a real observation.
//! Classification losses compare a probability vector with an observed class
//! index. The quantile loss is the non-negative pinball loss, which elicits
//! the alpha-quantile.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound applied to `p(y*)` before taking logarithms.
pub const PROB_CLAMP: f64 = 1e-15;

const PROB_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "loss", rename_all = "snake_case")]
pub enum LossFunction {
    Squared,
    Absolute,
    Quantile { alpha: f64 },
    Misclassification,
    LogLoss,
    Brier,
}

/// One prediction: a point value or a class-probability vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prediction<'a> {
    Point(f64),
    Distribution(&'a [f64]),
}

/// Per-row predictions for a whole sample.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictions {
    Point(Vec<f64>),
    /// Row-major probabilities, `n_classes` per row.
    Distribution { n_classes: usize, probs: Vec<f64> },
}

impl Predictions {
    pub fn len(&self) -> usize {
        match self {
            Predictions::Point(v) => v.len(),
            Predictions::Distribution { n_classes, probs } => probs.len() / (*n_classes).max(1),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, row: usize) -> Prediction<'_> {
        match self {
            Predictions::Point(v) => Prediction::Point(v[row]),
            Predictions::Distribution { n_classes, probs } => {
                Prediction::Distribution(&probs[row * n_classes..(row + 1) * n_classes])
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Prediction<'_>> {
        (0..self.len()).map(move |i| self.get(i))
    }
}

/// A sample of observed targets.
#[derive(Debug, Clone, Copy)]
pub enum Observations<'a> {
    Real(&'a [f64]),
    Classes { codes: &'a [usize], n_classes: usize },
}

impl Observations<'_> {
    pub fn len(&self) -> usize {
        match self {
            Observations::Real(v) => v.len(),
            Observations::Classes { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Statistic {
    Point(f64),
    Distribution(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ElicitedStatistic {
    pub value: Statistic,
    pub loss: LossFunction,
}

impl LossFunction {
    pub fn quantile(alpha: f64) -> Result<Self> {
        let l = LossFunction::Quantile { alpha };
        l.validate()?;
        Ok(l)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LossFunction::Quantile { alpha } if !(*alpha > 0.0 && *alpha < 1.0) => {
                Err(Error::Domain(format!("quantile level {alpha} not in (0,1)")))
            }
            _ => Ok(()),
        }
    }

    pub fn is_classification(&self) -> bool {
        matches!(
            self,
            LossFunction::Misclassification | LossFunction::LogLoss | LossFunction::Brier
        )
    }

    pub fn eval(&self, predicted: Prediction<'_>, observed: f64) -> Result<f64> {
        self.eval_clamped(predicted, observed, PROB_CLAMP)
    }

    /// As [`eval`](Self::eval) with an explicit log-loss probability floor.
    pub fn eval_clamped(&self, predicted: Prediction<'_>, observed: f64, clamp: f64) -> Result<f64> {
        match (self, predicted) {
            (LossFunction::Squared, Prediction::Point(y)) => Ok((y - observed).powi(2)),
            (LossFunction::Absolute, Prediction::Point(y)) => Ok((y - observed).abs()),
            (LossFunction::Quantile { alpha }, Prediction::Point(y)) => {
                Ok(alpha * (observed - y).max(0.0) + (1.0 - alpha) * (y - observed).max(0.0))
            }
            (_, Prediction::Distribution(p)) if self.is_classification() => {
                let c = class_index(observed, p.len())?;
                check_probabilities(p)?;
                Ok(match self {
                    LossFunction::Misclassification => 1.0 - p[c],
                    LossFunction::LogLoss => -p[c].max(clamp).ln(),
                    _ => p
                        .iter()
                        .enumerate()
                        .map(|(k, &q)| if k == c { (1.0 - q).powi(2) } else { q * q })
                        .sum(),
                })
            }
            (l, p) => Err(Error::Domain(format!(
                "loss '{l}' cannot evaluate a {} prediction",
                match p {
                    Prediction::Point(_) => "point",
                    Prediction::Distribution(_) => "probability-vector",
                }
            ))),
        }
    }

    /// The constant minimizing the empirical loss over `sample`.
    pub fn elicit(&self, sample: Observations<'_>) -> Result<ElicitedStatistic> {
        if sample.is_empty() {
            return Err(Error::InsufficientData("cannot elicit from an empty sample".into()));
        }
        let value = match (self, sample) {
            (LossFunction::Squared, Observations::Real(v)) => Statistic::Point(v.iter().sum::<f64>() / v.len() as f64),
            (LossFunction::Absolute, Observations::Real(v)) => Statistic::Point(lower_quantile(v, 0.5)),
            (LossFunction::Quantile { alpha }, Observations::Real(v)) => Statistic::Point(lower_quantile(v, *alpha)),
            (LossFunction::LogLoss | LossFunction::Brier, Observations::Classes { codes, n_classes }) => {
                Statistic::Distribution(class_frequencies(codes, n_classes)?)
            }
            (LossFunction::Misclassification, Observations::Classes { codes, n_classes }) => {
                let freq = class_frequencies(codes, n_classes)?;
                let mode = argmax(&freq);
                let mut onehot = vec![0.0; n_classes];
                onehot[mode] = 1.0;
                Statistic::Distribution(onehot)
            }
            (l, _) => {
                return Err(Error::Domain(format!(
                    "loss '{l}' does not match the target type"
                )))
            }
        };
        Ok(ElicitedStatistic { value, loss: *self })
    }
}

/// Lower empirical quantile: the smallest sample value `v` with `F(v) >= alpha`.
pub fn lower_quantile(values: &[f64], alpha: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = alpha * sorted.len() as f64;
    let nearest = pos.round();
    let k = if (pos - nearest).abs() <= 1e-9 * pos.max(1.0) {
        nearest as usize
    } else {
        pos.ceil() as usize
    };
    sorted[k.clamp(1, sorted.len()) - 1]
}

pub(crate) fn class_frequencies(codes: &[usize], n_classes: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0.0; n_classes];
    for &c in codes {
        *counts
            .get_mut(c)
            .ok_or_else(|| Error::Domain(format!("class {c} out of range for {n_classes} classes")))? += 1.0;
    }
    let n = codes.len() as f64;
    counts.iter_mut().for_each(|c| *c /= n);
    Ok(counts)
}

/// First index of the maximum.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn class_index(observed: f64, n_classes: usize) -> Result<usize> {
    if observed >= 0.0 && observed.fract() == 0.0 && (observed as usize) < n_classes {
        Ok(observed as usize)
    } else {
        Err(Error::Domain(format!(
            "observed value {observed} is not a class index below {n_classes}"
        )))
    }
}

fn check_probabilities(p: &[f64]) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.iter().any(|q| !(*q >= 0.0)) || (sum - 1.0).abs() > PROB_SUM_TOL {
        return Err(Error::Domain(format!("invalid probability vector (sum {sum})")));
    }
    Ok(())
}

impl fmt::Display for LossFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossFunction::Squared => f.write_str("squared"),
            LossFunction::Absolute => f.write_str("absolute"),
            LossFunction::Quantile { alpha } => write!(f, "quantile:{alpha}"),
            LossFunction::Misclassification => f.write_str("misclass"),
            LossFunction::LogLoss => f.write_str("log"),
            LossFunction::Brier => f.write_str("brier"),
        }
    }
}

impl FromStr for LossFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "squared" => Ok(LossFunction::Squared),
            "absolute" => Ok(LossFunction::Absolute),
            "misclass" => Ok(LossFunction::Misclassification),
            "log" => Ok(LossFunction::LogLoss),
            "brier" => Ok(LossFunction::Brier),
            _ => match s.strip_prefix("quantile:") {
                Some(a) => {
                    let alpha: f64 = a
                        .parse()
                        .map_err(|_| Error::Config(format!("bad quantile level '{a}'")))?;
                    LossFunction::quantile(alpha)
                }
                None => Err(Error::Config(format!("unknown loss '{s}'"))),
            },
        }
    }
}

/// Per-row losses of a prediction strategy on a test sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossVector {
    residuals: Vec<f64>,
    mean: f64,
    loss: LossFunction,
}

impl LossVector {
    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn loss(&self) -> LossFunction {
        self.loss
    }

    /// Sample variance (divisor `M - 1`; zero for a single row).
    pub fn variance(&self) -> f64 {
        let m = self.residuals.len();
        if m < 2 {
            return 0.0;
        }
        self.residuals.iter().map(|r| (r - self.mean).powi(2)).sum::<f64>() / (m - 1) as f64
    }
}

pub fn loss_vector(loss: LossFunction, predictions: &Predictions, observed: &[f64]) -> Result<LossVector> {
    if predictions.len() != observed.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} observations",
            predictions.len(),
            observed.len()
        )));
    }
    if observed.is_empty() {
        return Err(Error::InsufficientData("empty loss vector".into()));
    }
    let residuals = predictions
        .iter()
        .zip(observed)
        .map(|(p, &y)| loss.eval(p, y))
        .collect::<Result<Vec<_>>>()?;
    if residuals.iter().any(|r| !r.is_finite()) {
        return Err(Error::Numeric("non-finite loss residual".into()));
    }
    let mean = residuals.iter().sum::<f64>() / residuals.len() as f64;
    Ok(LossVector { residuals, mean, loss })
}
