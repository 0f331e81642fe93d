//! Stacking and multiplexing over candidate learners.
//!
//! Stacking fits stage 2 on cross-fitted stage-1 outputs, so no row's
//! stage-1 prediction comes from a model that saw that row. Regression
//! losses other than squared error are not meaningful for a least-squares
//! combiner; for those, stacking falls back to validation-loss selection.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use super::{fit_targets, logistic, LearnerSpec, Method, MetaEstimatorSpec, Model, Predictor, Targets, Task};
use crate::data::{split_indices, SplitConfig};
use crate::error::{Error, Result};
use crate::losses::{loss_vector, LossFunction, Predictions};
use crate::seed;

const STAGE2_L2: f64 = 1e-3;
const SPLIT_STREAM: u64 = 0x5eed_0001;
const FOLD_STREAM: u64 = 0x5eed_0002;

/// Outcome of validation-loss selection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    pub candidates: Vec<String>,
    /// Mean validation loss per candidate; `None` when the candidate failed.
    pub validation_losses: Vec<Option<f64>>,
    pub selected: usize,
}

#[derive(Debug, Clone)]
enum Combiner {
    Affine { intercept: f64, weights: Vec<f64> },
    Logistic(logistic::LogisticModel),
}

#[derive(Debug, Clone)]
pub(crate) struct Stacked {
    base: Vec<Predictor>,
    combiner: Combiner,
    n_classes: usize,
}

impl Stacked {
    pub(crate) fn predict(&self, x: &DMatrix<f64>) -> Result<Predictions> {
        let outs = self.base.iter().map(|b| b.predict(x)).collect::<Result<Vec<_>>>()?;
        let n = x.nrows();
        match &self.combiner {
            Combiner::Affine { intercept, weights } => {
                let mut y = vec![*intercept; n];
                for (w, o) in weights.iter().zip(&outs) {
                    for (yi, v) in y.iter_mut().zip(o.iter_points()) {
                        *yi += w * v;
                    }
                }
                Ok(Predictions::Point(y))
            }
            Combiner::Logistic(m) => {
                let z = stage2_design(&outs, n, self.n_classes);
                let mut probs = vec![0.0; n * self.n_classes];
                m.predict_into(&z, &mut probs);
                Ok(Predictions::Distribution {
                    n_classes: self.n_classes,
                    probs,
                })
            }
        }
    }
}

trait PointIter {
    fn iter_points(&self) -> std::slice::Iter<'_, f64>;
}

impl PointIter for Predictions {
    fn iter_points(&self) -> std::slice::Iter<'_, f64> {
        match self {
            Predictions::Point(v) => v.iter(),
            Predictions::Distribution { probs, .. } => probs.iter(),
        }
    }
}

/// Stage-1 design for classification: every candidate's class probabilities side by side.
fn stage2_design(outs: &[Predictions], n: usize, k: usize) -> DMatrix<f64> {
    let mut z = DMatrix::zeros(n, outs.len() * k);
    for (m, o) in outs.iter().enumerate() {
        if let Predictions::Distribution { probs, .. } = o {
            for i in 0..n {
                for c in 0..k {
                    z[(i, m * k + c)] = probs[i * k + c];
                }
            }
        }
    }
    z
}

/// Out-of-fold predictions of `spec`: row `i` is predicted by a model fitted
/// without the fold containing `i`. Fold membership depends only on `seed`.
pub fn cross_fit_predictions(
    spec: &LearnerSpec,
    features: &DMatrix<f64>,
    targets: &Targets,
    loss: LossFunction,
    folds: usize,
    seed: u64,
) -> Result<Predictions> {
    let n = targets.len();
    if folds < 2 || n < 2 * folds {
        return Err(Error::InsufficientData(format!(
            "{n} rows cannot be cross-fitted over {folds} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed::derive(seed, &[FOLD_STREAM])));
    let mut fold_of = vec![0usize; n];
    for (pos, &row) in order.iter().enumerate() {
        fold_of[row] = pos % folds;
    }
    let width = match targets.task() {
        Task::Regression => 1,
        Task::Classification { n_classes } => n_classes,
    };
    let mut out = vec![0.0; n * width];
    let parts = (0..folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..n).filter(|&r| fold_of[r] != f).collect();
            let held: Vec<usize> = (0..n).filter(|&r| fold_of[r] == f).collect();
            let model = fit_targets(
                spec,
                &features.select_rows(&train),
                &targets.take(&train),
                loss,
                seed::derive(seed, &[f as u64]),
            )?;
            Ok((held.clone(), model.predict(&features.select_rows(&held))?))
        })
        .collect::<Result<Vec<_>>>()?;
    for (held, pred) in parts {
        for (j, &r) in held.iter().enumerate() {
            match &pred {
                Predictions::Point(v) => out[r] = v[j],
                Predictions::Distribution { probs, .. } => {
                    out[r * width..(r + 1) * width].copy_from_slice(&probs[j * width..(j + 1) * width])
                }
            }
        }
    }
    Ok(match targets.task() {
        Task::Regression => Predictions::Point(out),
        Task::Classification { n_classes } => Predictions::Distribution { n_classes, probs: out },
    })
}

/// Fits the meta-estimator for the task's default loss.
pub fn meta_fit(spec: &MetaEstimatorSpec, features: &DMatrix<f64>, targets: &crate::data::Column, seed: u64) -> Result<Predictor> {
    let t = Targets::from_column(targets);
    let loss = t.task().default_loss();
    meta_fit_for_loss(spec, features, &t, loss, seed)
}

/// Fits the meta-estimator for `loss`. Candidates that cannot be fitted
/// under `loss` are skipped; if none remain, default bagged trees stand in.
pub fn meta_fit_for_loss(
    spec: &MetaEstimatorSpec,
    features: &DMatrix<f64>,
    targets: &Targets,
    loss: LossFunction,
    seed: u64,
) -> Result<Predictor> {
    spec.validate()?;
    loss.validate()?;
    let seed = seed::derive(seed, &[spec.seed]);
    let task = targets.task();
    let mut candidates: Vec<LearnerSpec> = spec
        .candidates(task)
        .iter()
        .filter(|c| c.supports(task, loss))
        .cloned()
        .collect();
    if candidates.is_empty() {
        candidates.push(LearnerSpec::default_bagged_trees());
    }
    let stackable = match task {
        Task::Regression => loss == LossFunction::Squared,
        Task::Classification { .. } => true,
    };
    match spec.method {
        Method::None => fit_targets(&candidates[0], features, targets, loss, seed),
        Method::Stacking if stackable => stack(spec, &candidates, features, targets, loss, seed),
        _ => multiplex(spec, &candidates, features, targets, loss, seed),
    }
}

fn failure(errors: Vec<(String, String)>) -> Error {
    Error::MetaFit { failures: errors }
}

fn multiplex(
    spec: &MetaEstimatorSpec,
    candidates: &[LearnerSpec],
    features: &DMatrix<f64>,
    targets: &Targets,
    loss: LossFunction,
    seed: u64,
) -> Result<Predictor> {
    let split = split_indices(
        targets.len(),
        &SplitConfig {
            test_fraction: spec.validation_fraction,
            seed: seed::derive(seed, &[SPLIT_STREAM]),
        },
    )
    .map_err(|e| match e {
        Error::InsufficientData(m) => Error::InsufficientData(format!("validation split: {m}")),
        other => other,
    })?;
    let x_train = features.select_rows(&split.train);
    let x_val = features.select_rows(&split.test);
    let y_train = targets.take(&split.train);
    let y_val = targets.take(&split.test);
    let scores: Vec<Result<f64>> = candidates
        .par_iter()
        .enumerate()
        .map(|(k, c)| {
            let m = fit_targets(c, &x_train, &y_train, loss, seed::derive(seed, &[k as u64]))?;
            Ok(loss_vector(loss, &m.predict(&x_val)?, &y_val.as_reals())?.mean())
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (k, s) in scores.iter().enumerate() {
        if let Ok(v) = s {
            if best.is_none_or(|(_, b)| *v < b) {
                best = Some((k, *v));
            }
        }
    }
    let Some((selected, _)) = best else {
        return Err(failure(
            candidates
                .iter()
                .zip(scores)
                .map(|(c, s)| (c.name().to_string(), s.err().map(|e| e.to_string()).unwrap_or_default()))
                .collect(),
        ));
    };
    let mut winner = fit_targets(
        &candidates[selected],
        features,
        targets,
        loss,
        seed::derive(seed, &[selected as u64]),
    )?;
    winner.selection = Some(Selection {
        candidates: candidates.iter().map(|c| c.name().to_string()).collect(),
        validation_losses: scores.into_iter().map(|s| s.ok()).collect(),
        selected,
    });
    Ok(winner)
}

fn stack(
    spec: &MetaEstimatorSpec,
    candidates: &[LearnerSpec],
    features: &DMatrix<f64>,
    targets: &Targets,
    loss: LossFunction,
    seed: u64,
) -> Result<Predictor> {
    let n = targets.len();
    let stage1: Vec<Result<(Predictions, Predictor)>> = candidates
        .par_iter()
        .enumerate()
        .map(|(k, c)| {
            let s = seed::derive(seed, &[k as u64]);
            let oof = cross_fit_predictions(c, features, targets, loss, spec.cv_folds, s)?;
            let full = fit_targets(c, features, targets, loss, s)?;
            Ok((oof, full))
        })
        .collect();
    if stage1.iter().all(|r| r.is_err()) {
        return Err(failure(
            candidates
                .iter()
                .zip(stage1)
                .map(|(c, r)| (c.name().to_string(), r.err().map(|e| e.to_string()).unwrap_or_default()))
                .collect(),
        ));
    }
    let (oof, base): (Vec<Predictions>, Vec<Predictor>) = stage1.into_iter().filter_map(|r| r.ok()).unzip();
    let (combiner, n_classes) = match targets {
        Targets::Real(y) => {
            let m = oof.len();
            let z = DMatrix::from_fn(n, m + 1, |i, j| match (j, &oof.get(j)) {
                (_, Some(Predictions::Point(v))) => v[i],
                _ => 1.0,
            });
            let beta = z
                .svd(true, true)
                .solve(&DVector::from_column_slice(y), 1e-12)
                .map_err(|e| Error::Numeric(format!("stacking stage 2: {e}")))?;
            (
                Combiner::Affine {
                    intercept: beta[m],
                    weights: beta.iter().take(m).copied().collect(),
                },
                0,
            )
        }
        Targets::Classes { codes, n_classes } => {
            let z = stage2_design(&oof, n, *n_classes);
            (
                Combiner::Logistic(logistic::fit(&z, codes, *n_classes, STAGE2_L2)?),
                *n_classes,
            )
        }
    };
    Ok(Predictor::new(
        targets.task(),
        features.ncols(),
        Model::Stacked(Box::new(Stacked {
            base,
            combiner,
            n_classes,
        })),
        "stacking",
    ))
}
