//! Prediction functionals: constant baselines, a small learner suite, and
//! the stacking/multiplexing meta-estimator.
//!
//! Every fit is a deterministic function of `(spec, features, targets, seed)`.
//! Work that may run concurrently (bagged trees, stage-1 candidates, folds)
//! draws its random stream from a seed derived from `(seed, unit index)`.

pub mod elastic_net;
pub mod logistic;
pub mod meta;
pub mod naive_bayes;
pub mod tree;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::Column;
use crate::error::{Error, Result};
use crate::losses::{LossFunction, Observations, Predictions, Statistic};

pub use meta::{cross_fit_predictions, meta_fit, meta_fit_for_loss, Selection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "task")]
pub enum Task {
    Regression,
    Classification { n_classes: usize },
}

impl Task {
    pub fn of(column: &Column) -> Task {
        match column.n_levels() {
            Some(k) => Task::Classification { n_classes: k },
            None => Task::Regression,
        }
    }

    /// Squared loss for regression, log-loss for classification.
    pub fn default_loss(&self) -> LossFunction {
        match self {
            Task::Regression => LossFunction::Squared,
            Task::Classification { .. } => LossFunction::LogLoss,
        }
    }
}

/// Training targets in the form the learners consume.
#[derive(Debug, Clone)]
pub enum Targets {
    Real(Vec<f64>),
    Classes { codes: Vec<usize>, n_classes: usize },
}

impl Targets {
    pub fn from_column(column: &Column) -> Targets {
        match column.n_levels() {
            Some(n_classes) => Targets::Classes {
                codes: column.codes(),
                n_classes,
            },
            None => Targets::Real(column.values().to_vec()),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Targets::Real(v) => v.len(),
            Targets::Classes { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task(&self) -> Task {
        match self {
            Targets::Real(_) => Task::Regression,
            Targets::Classes { n_classes, .. } => Task::Classification { n_classes: *n_classes },
        }
    }

    pub fn observations(&self) -> Observations<'_> {
        match self {
            Targets::Real(v) => Observations::Real(v),
            Targets::Classes { codes, n_classes } => Observations::Classes {
                codes,
                n_classes: *n_classes,
            },
        }
    }

    /// Observed values as reals (class indices for classification).
    pub fn as_reals(&self) -> Vec<f64> {
        match self {
            Targets::Real(v) => v.clone(),
            Targets::Classes { codes, .. } => codes.iter().map(|&c| c as f64).collect(),
        }
    }

    pub fn take(&self, rows: &[usize]) -> Targets {
        match self {
            Targets::Real(v) => Targets::Real(rows.iter().map(|&r| v[r]).collect()),
            Targets::Classes { codes, n_classes } => Targets::Classes {
                codes: rows.iter().map(|&r| codes[r]).collect(),
                n_classes: *n_classes,
            },
        }
    }

    fn check_classes(&self) -> Result<()> {
        if let Targets::Classes { codes, .. } = self {
            let first = codes.first().copied();
            if codes.iter().all(|&c| Some(c) == first) {
                return Err(Error::DegenerateTarget {
                    target: None,
                    reason: "fewer than 2 classes present in training data".into(),
                });
            }
        }
        Ok(())
    }
}

fn default_l1_ratio() -> f64 {
    0.5
}
fn default_lambda_grid() -> Vec<f64> {
    log_grid(1e-4, 1e1, 20)
}
fn default_folds() -> usize {
    5
}
fn default_l2() -> f64 {
    1.0
}
fn default_trees() -> usize {
    50
}
fn default_fraction() -> f64 {
    0.7
}
fn default_depth() -> usize {
    6
}
fn default_min_leaf() -> usize {
    5
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| match i {
            0 => lo,
            i if i == n - 1 => hi,
            i => (a + (b - a) * i as f64 / (n - 1) as f64).exp(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LearnerSpec {
    ElasticNet {
        #[serde(default = "default_l1_ratio")]
        l1_ratio: f64,
        #[serde(default = "default_lambda_grid")]
        lambda_grid: Vec<f64>,
        #[serde(default = "default_folds")]
        cv_folds: usize,
    },
    LogisticRegression {
        #[serde(default = "default_l2")]
        l2_penalty: f64,
    },
    #[serde(rename = "gaussian_nb")]
    GaussianNB,
    DecisionTree {
        #[serde(default = "default_depth")]
        max_depth: usize,
        #[serde(default = "default_min_leaf")]
        min_leaf: usize,
    },
    BaggedTrees {
        #[serde(default = "default_trees")]
        n_trees: usize,
        #[serde(default = "default_fraction")]
        feature_fraction: f64,
        #[serde(default = "default_depth")]
        max_depth: usize,
        #[serde(default = "default_min_leaf")]
        min_leaf: usize,
    },
    Baseline,
}

impl LearnerSpec {
    pub fn default_elastic_net() -> Self {
        LearnerSpec::ElasticNet {
            l1_ratio: default_l1_ratio(),
            lambda_grid: default_lambda_grid(),
            cv_folds: default_folds(),
        }
    }

    pub fn default_bagged_trees() -> Self {
        LearnerSpec::BaggedTrees {
            n_trees: default_trees(),
            feature_fraction: default_fraction(),
            max_depth: default_depth(),
            min_leaf: default_min_leaf(),
        }
    }

    pub fn default_logistic() -> Self {
        LearnerSpec::LogisticRegression { l2_penalty: default_l2() }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LearnerSpec::ElasticNet { .. } => "elastic_net",
            LearnerSpec::LogisticRegression { .. } => "logistic_regression",
            LearnerSpec::GaussianNB => "gaussian_nb",
            LearnerSpec::DecisionTree { .. } => "decision_tree",
            LearnerSpec::BaggedTrees { .. } => "bagged_trees",
            LearnerSpec::Baseline => "baseline",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match self {
            LearnerSpec::ElasticNet { l1_ratio, lambda_grid, cv_folds } => {
                if !(0.0..=1.0).contains(l1_ratio) {
                    return bad(format!("l1_ratio {l1_ratio} not in [0,1]"));
                }
                if lambda_grid.is_empty() || lambda_grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
                    return bad("lambda grid must be non-empty and non-negative".into());
                }
                if *cv_folds < 2 {
                    return bad(format!("cv_folds {cv_folds} < 2"));
                }
            }
            LearnerSpec::LogisticRegression { l2_penalty } if !(*l2_penalty >= 0.0) => {
                return bad(format!("l2_penalty {l2_penalty} < 0"));
            }
            LearnerSpec::DecisionTree { min_leaf, .. } if *min_leaf == 0 => {
                return bad("min_leaf must be >= 1".into());
            }
            LearnerSpec::BaggedTrees { n_trees, feature_fraction, min_leaf, .. } => {
                if *n_trees == 0 {
                    return bad("n_trees must be >= 1".into());
                }
                if !(*feature_fraction > 0.0 && *feature_fraction <= 1.0) {
                    return bad(format!("feature_fraction {feature_fraction} not in (0,1]"));
                }
                if *min_leaf == 0 {
                    return bad("min_leaf must be >= 1".into());
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Whether this family can be fitted for `loss` on a target of `task`.
    pub fn supports(&self, task: Task, loss: LossFunction) -> bool {
        let classification = matches!(task, Task::Classification { .. });
        if loss.is_classification() != classification {
            return false;
        }
        match self {
            LearnerSpec::ElasticNet { .. } => !classification && loss == LossFunction::Squared,
            LearnerSpec::LogisticRegression { .. } | LearnerSpec::GaussianNB => classification,
            LearnerSpec::DecisionTree { .. } | LearnerSpec::BaggedTrees { .. } | LearnerSpec::Baseline => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Stacking,
    Multiplexing,
    None,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stacking" => Ok(Method::Stacking),
            "multiplexing" => Ok(Method::Multiplexing),
            "none" => Ok(Method::None),
            _ => Err(Error::Config(format!("unknown ensembling method '{s}'"))),
        }
    }
}

fn default_method() -> Method {
    Method::Stacking
}
fn default_regressors() -> Vec<LearnerSpec> {
    vec![LearnerSpec::default_elastic_net(), LearnerSpec::default_bagged_trees()]
}
fn default_classifiers() -> Vec<LearnerSpec> {
    vec![
        LearnerSpec::default_logistic(),
        LearnerSpec::GaussianNB,
        LearnerSpec::default_bagged_trees(),
    ]
}
fn default_validation() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaEstimatorSpec {
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default = "default_regressors")]
    pub regressors: Vec<LearnerSpec>,
    #[serde(default = "default_classifiers")]
    pub classifiers: Vec<LearnerSpec>,
    #[serde(default = "default_validation")]
    pub validation_fraction: f64,
    #[serde(default = "default_folds")]
    pub cv_folds: usize,
    /// Mixed into the seed supplied at fit time.
    #[serde(default)]
    pub seed: u64,
}

impl Default for MetaEstimatorSpec {
    fn default() -> Self {
        MetaEstimatorSpec {
            method: default_method(),
            regressors: default_regressors(),
            classifiers: default_classifiers(),
            validation_fraction: default_validation(),
            cv_folds: default_folds(),
            seed: 0,
        }
    }
}

impl MetaEstimatorSpec {
    /// No ensembling: elastic net for regression, logistic regression for classification.
    pub fn single() -> Self {
        MetaEstimatorSpec {
            method: Method::None,
            regressors: vec![LearnerSpec::default_elastic_net()],
            classifiers: vec![LearnerSpec::default_logistic()],
            ..Default::default()
        }
    }

    pub fn with_method(method: Method) -> Self {
        match method {
            Method::None => Self::single(),
            m => MetaEstimatorSpec {
                method: m,
                ..Default::default()
            },
        }
    }

    pub fn candidates(&self, task: Task) -> &[LearnerSpec] {
        match task {
            Task::Regression => &self.regressors,
            Task::Classification { .. } => &self.classifiers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.regressors.is_empty() || self.classifiers.is_empty() {
            return Err(Error::Config("estimator lists must be non-empty".into()));
        }
        if self.method == Method::None && (self.regressors.len() != 1 || self.classifiers.len() != 1) {
            return Err(Error::Config(
                "method 'none' requires exactly one regressor and one classifier".into(),
            ));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation_fraction {} not in (0,1)",
                self.validation_fraction
            )));
        }
        if self.cv_folds < 2 {
            return Err(Error::Config(format!("cv_folds {} < 2", self.cv_folds)));
        }
        self.regressors.iter().chain(&self.classifiers).try_for_each(LearnerSpec::validate)
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Model {
    Constant(Statistic),
    Linear(elastic_net::LinearModel),
    Logistic(logistic::LogisticModel),
    NaiveBayes(naive_bayes::GaussianNb),
    Tree(tree::Tree),
    Forest(Vec<tree::Tree>),
    Stacked(Box<meta::Stacked>),
}

/// A fitted prediction functional.
#[derive(Debug, Clone)]
pub struct Predictor {
    task: Task,
    n_features: usize,
    model: Model,
    selection: Option<Selection>,
    label: String,
}

impl Predictor {
    pub(crate) fn new(task: Task, n_features: usize, model: Model, label: impl Into<String>) -> Self {
        Predictor {
            task,
            n_features,
            model,
            selection: None,
            label: label.into(),
        }
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Learner family (or ensemble) that produced this predictor.
    pub fn label(&self) -> &str {
        &self.label
    }

    /// Multiplexing bookkeeping, when this predictor was selected by validation.
    pub fn selection(&self) -> Option<&Selection> {
        self.selection.as_ref()
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.model, Model::Constant(_))
    }

    /// Coefficients of a fitted linear model.
    pub fn linear_coefficients(&self) -> Option<(f64, &[f64])> {
        match &self.model {
            Model::Linear(m) => Some((m.intercept, &m.coef)),
            _ => None,
        }
    }

    pub fn predict(&self, features: &DMatrix<f64>) -> Result<Predictions> {
        if features.ncols() != self.n_features {
            return Err(Error::Shape(format!(
                "predictor expects {} features, got {}",
                self.n_features,
                features.ncols()
            )));
        }
        let n = features.nrows();
        Ok(match self.task {
            Task::Regression => {
                let out = match &self.model {
                    Model::Constant(Statistic::Point(v)) => vec![*v; n],
                    Model::Linear(m) => m.predict(features),
                    Model::Tree(t) => (0..n).map(|i| t.predict_row(features, i)[0]).collect(),
                    Model::Forest(ts) => (0..n)
                        .map(|i| ts.iter().map(|t| t.predict_row(features, i)[0]).sum::<f64>() / ts.len() as f64)
                        .collect(),
                    Model::Stacked(s) => return s.predict(features),
                    _ => return Err(Error::UnsupportedTask("model cannot produce point predictions".into())),
                };
                Predictions::Point(out)
            }
            Task::Classification { n_classes } => {
                let mut probs = vec![0.0; n * n_classes];
                match &self.model {
                    Model::Constant(Statistic::Distribution(p)) => {
                        probs.chunks_mut(n_classes).for_each(|row| row.copy_from_slice(p));
                    }
                    Model::Logistic(m) => m.predict_into(features, &mut probs),
                    Model::NaiveBayes(m) => m.predict_into(features, &mut probs),
                    Model::Tree(t) => {
                        for (i, row) in probs.chunks_mut(n_classes).enumerate() {
                            row.copy_from_slice(t.predict_row(features, i));
                        }
                    }
                    Model::Forest(ts) => {
                        let w = 1.0 / ts.len() as f64;
                        for (i, row) in probs.chunks_mut(n_classes).enumerate() {
                            for t in ts {
                                for (o, p) in row.iter_mut().zip(t.predict_row(features, i)) {
                                    *o += w * p;
                                }
                            }
                        }
                    }
                    Model::Stacked(s) => return s.predict(features),
                    _ => return Err(Error::UnsupportedTask("model cannot produce probabilities".into())),
                }
                normalize_rows(&mut probs, n_classes);
                Predictions::Distribution { n_classes, probs }
            }
        })
    }
}

fn normalize_rows(probs: &mut [f64], k: usize) {
    for row in probs.chunks_mut(k) {
        let s: f64 = row.iter().sum();
        if s > 0.0 && s.is_finite() {
            row.iter_mut().for_each(|p| *p /= s);
        } else {
            row.iter_mut().for_each(|p| *p = 1.0 / k as f64);
        }
    }
}

fn check_inputs(features: &DMatrix<f64>, targets: &Targets) -> Result<()> {
    if features.nrows() != targets.len() {
        return Err(Error::Shape(format!(
            "{} feature rows for {} targets",
            features.nrows(),
            targets.len()
        )));
    }
    if targets.is_empty() {
        return Err(Error::InsufficientData("no training rows".into()));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite feature value".into()));
    }
    if let Targets::Real(v) = targets {
        if v.iter().any(|y| !y.is_finite()) {
            return Err(Error::Numeric("non-finite target value".into()));
        }
    }
    Ok(())
}

/// Fits one learner for the task's default loss.
pub fn fit(spec: &LearnerSpec, features: &DMatrix<f64>, targets: &Column, seed: u64) -> Result<Predictor> {
    let t = Targets::from_column(targets);
    let loss = t.task().default_loss();
    fit_targets(spec, features, &t, loss, seed)
}

/// Fits one learner whose output is scored by `loss`. Trees use
/// loss-specific leaf statistics and split costs for non-default regression
/// losses; elastic net supports only the squared loss.
pub fn fit_targets(
    spec: &LearnerSpec,
    features: &DMatrix<f64>,
    targets: &Targets,
    loss: LossFunction,
    seed: u64,
) -> Result<Predictor> {
    spec.validate()?;
    check_inputs(features, targets)?;
    let task = targets.task();
    if !spec.supports(task, loss) {
        return Err(Error::UnsupportedTask(format!(
            "{} cannot fit a {:?} target under loss '{loss}'",
            spec.name(),
            task
        )));
    }
    targets.check_classes()?;
    let p = features.ncols();
    let model = match (spec, targets) {
        (LearnerSpec::Baseline, _) => Model::Constant(loss.elicit(targets.observations())?.value),
        (LearnerSpec::ElasticNet { l1_ratio, lambda_grid, cv_folds }, Targets::Real(y)) => {
            Model::Linear(elastic_net::fit_cv(features, y, *l1_ratio, lambda_grid, *cv_folds, seed)?)
        }
        (LearnerSpec::LogisticRegression { l2_penalty }, Targets::Classes { codes, n_classes }) => {
            Model::Logistic(logistic::fit(features, codes, *n_classes, *l2_penalty)?)
        }
        (LearnerSpec::GaussianNB, Targets::Classes { codes, n_classes }) => {
            Model::NaiveBayes(naive_bayes::GaussianNb::fit(features, codes, *n_classes))
        }
        (LearnerSpec::DecisionTree { max_depth, min_leaf }, _) => {
            let params = tree::TreeParams {
                max_depth: *max_depth,
                min_leaf: *min_leaf,
                feature_fraction: 1.0,
            };
            Model::Tree(tree::Tree::fit(features, targets, loss, &params, seed)?)
        }
        (
            LearnerSpec::BaggedTrees {
                n_trees,
                feature_fraction,
                max_depth,
                min_leaf,
            },
            _,
        ) => {
            let params = tree::TreeParams {
                max_depth: *max_depth,
                min_leaf: *min_leaf,
                feature_fraction: *feature_fraction,
            };
            Model::Forest(tree::fit_bagged(features, targets, loss, &params, *n_trees, seed)?)
        }
        _ => unreachable!("support checked above"),
    };
    Ok(Predictor::new(task, p, model, spec.name()))
}

/// Constant predictor returning the statistic `loss` elicits from `targets`.
pub fn fit_baseline(targets: &Column, loss: LossFunction) -> Result<Predictor> {
    fit_baseline_targets(&Targets::from_column(targets), loss, 0)
}

pub(crate) fn fit_baseline_targets(targets: &Targets, loss: LossFunction, n_features: usize) -> Result<Predictor> {
    let value = loss.elicit(targets.observations())?.value;
    Ok(Predictor::new(targets.task(), n_features, Model::Constant(value), "baseline"))
}

/// Functional form of [`Predictor::predict`].
pub fn predict(predictor: &Predictor, features: &DMatrix<f64>) -> Result<Predictions> {
    predictor.predict(features)
}
