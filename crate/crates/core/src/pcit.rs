//! The predictive conditional independence test.
//!
//! For each target `y` in `Y` a "prediction null" compares a predictor `f`
//! built from `Z` alone (or the best constant when `Z` is empty) with a
//! predictor `g` built from `Z` and `X`, on held-out rows. If `g` has
//! significantly lower loss, `X` carries information about `y` beyond `Z`.
//! The symmetric variant also predicts each `x` from `Z` and `Y`. All
//! p-values are pooled under Benjamini-Yekutieli control; the smallest
//! adjusted p-value is the p-value of the independence null.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split_indices, Column, FeatureEncoder, SplitConfig, SplitIndices};
use crate::error::{Error, Result};
use crate::inference::{by_adjust, paired_residuals, t_test_one_sided, wilcoxon_one_sided};
use crate::learners::{fit_baseline_targets, meta_fit_for_loss, MetaEstimatorSpec, Predictor, Targets, Task};
use crate::losses::{loss_vector, LossFunction};
use crate::seed;

const SPLIT_STREAM: u64 = 0x7e57_0001;
const NULL_STREAM: u64 = 0x7e57_0002;

fn default_alpha() -> f64 {
    0.05
}
fn default_true() -> bool {
    true
}
fn default_regression_loss() -> LossFunction {
    LossFunction::Squared
}
fn default_classification_loss() -> LossFunction {
    LossFunction::LogLoss
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcitConfig {
    #[serde(default)]
    pub meta: MetaEstimatorSpec,
    /// The split seed is mixed with the seed passed to each call.
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Paired t-test instead of the Wilcoxon signed-rank test.
    #[serde(default)]
    pub parametric: bool,
    #[serde(default = "default_true")]
    pub symmetric: bool,
    #[serde(default = "default_regression_loss")]
    pub regression_loss: LossFunction,
    #[serde(default = "default_classification_loss")]
    pub classification_loss: LossFunction,
    /// Additional losses tested per target (those matching the target's
    /// task); their p-values join the same FDR pool.
    #[serde(default)]
    pub extra_losses: Vec<LossFunction>,
}

impl Default for PcitConfig {
    fn default() -> Self {
        PcitConfig {
            meta: MetaEstimatorSpec::default(),
            split: SplitConfig::default(),
            alpha: default_alpha(),
            parametric: false,
            symmetric: true,
            regression_loss: default_regression_loss(),
            classification_loss: default_classification_loss(),
            extra_losses: Vec::new(),
        }
    }
}

impl PcitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Domain(format!("alpha {} not in (0,1)", self.alpha)));
        }
        if !(self.split.test_fraction > 0.0 && self.split.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test_fraction {} not in (0,1)",
                self.split.test_fraction
            )));
        }
        if self.regression_loss.is_classification() {
            return Err(Error::Config(format!("'{}' is not a regression loss", self.regression_loss)));
        }
        if !self.classification_loss.is_classification() {
            return Err(Error::Config(format!(
                "'{}' is not a classification loss",
                self.classification_loss
            )));
        }
        for l in [self.regression_loss, self.classification_loss].iter().chain(&self.extra_losses) {
            l.validate()?;
        }
        self.meta.validate()
    }

    /// Losses tested for a target of `task`, primary loss first.
    pub fn losses_for(&self, task: Task) -> Vec<LossFunction> {
        let classification = matches!(task, Task::Classification { .. });
        let primary = if classification {
            self.classification_loss
        } else {
            self.regression_loss
        };
        let mut out = vec![primary];
        for l in &self.extra_losses {
            if l.is_classification() == classification && !out.contains(l) {
                out.push(*l);
            }
        }
        out
    }
}

/// Which block supplies the target of a prediction null.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Target from `Y`, extra features `X`.
    YOnX,
    /// Target from `X`, extra features `Y`.
    XOnY,
}

/// Held-out loss summary for one prediction null.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossStats {
    pub baseline_loss: f64,
    pub candidate_loss: f64,
    /// `baseline_loss - candidate_loss`
    pub mean_diff: f64,
    /// Per-row SD of the loss difference, assuming the two residual
    /// series are uncorrelated.
    pub diff_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionNull {
    pub target: String,
    pub direction: Direction,
    pub loss: LossFunction,
    pub raw_p: f64,
    pub adjusted_p: f64,
    pub stats: LossStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndependenceResult {
    pub nulls: Vec<PredictionNull>,
    pub alpha: f64,
    pub overall_p: f64,
    pub independent: bool,
}

impl IndependenceResult {
    pub fn raw_pvalues(&self) -> Vec<f64> {
        self.nulls.iter().map(|n| n.raw_p).collect()
    }

    pub fn adjusted_pvalues(&self) -> Vec<f64> {
        self.nulls.iter().map(|n| n.adjusted_p).collect()
    }

    /// Verdict at another level, without refitting.
    pub fn independent_at(&self, alpha: f64) -> bool {
        self.overall_p > alpha
    }

    /// Result document with the configuration and seed echoed back.
    pub fn to_json(&self, config: &PcitConfig, seed: u64) -> serde_json::Value {
        serde_json::json!({
            "targets": self.nulls.iter().map(|n| serde_json::json!({
                "target": n.target,
                "direction": n.direction,
                "loss": n.loss.to_string(),
            })).collect::<Vec<_>>(),
            "raw_p": self.raw_pvalues(),
            "adjusted_p": self.adjusted_pvalues(),
            "independent": self.independent,
            "overall_p": self.overall_p,
            "alpha": self.alpha,
            "loss_stats": self.nulls.iter().map(|n| n.stats).collect::<Vec<_>>(),
            "config_echo": config,
            "seed": seed,
        })
    }
}

fn check_rows(blocks: &[&[Column]]) -> Result<usize> {
    let mut n = None;
    for c in blocks.iter().flat_map(|b| b.iter()) {
        match n {
            None => n = Some(c.len()),
            Some(m) if m != c.len() => {
                return Err(Error::Shape(format!("column '{}' has {} rows, expected {m}", c.name(), c.len())))
            }
            _ => {}
        }
    }
    Ok(n.unwrap_or(0))
}

fn call_split(n: usize, config: &PcitConfig, seed: u64) -> Result<SplitIndices> {
    split_indices(
        n,
        &SplitConfig {
            test_fraction: config.split.test_fraction,
            seed: seed::derive(seed, &[SPLIT_STREAM, config.split.seed]),
        },
    )
}

/// Encodes `block` on training rows and applies the same mapping to test rows.
fn encode(block: &[&Column], split: &SplitIndices) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if block.is_empty() {
        return Ok((DMatrix::zeros(split.train.len(), 0), DMatrix::zeros(split.test.len(), 0)));
    }
    let train: Vec<Column> = block.iter().map(|c| c.take(&split.train)).collect();
    let test: Vec<Column> = block.iter().map(|c| c.take(&split.test)).collect();
    let train_refs: Vec<&Column> = train.iter().collect();
    let test_refs: Vec<&Column> = test.iter().collect();
    let enc = FeatureEncoder::fit(&train_refs)?;
    let (train, test) = (enc.transform(&train_refs)?, enc.transform(&test_refs)?);
    let keep = distinct_columns(&train);
    Ok((train.select_columns(&keep), test.select_columns(&keep)))
}

/// Indices of the columns that differ from every earlier column.
fn distinct_columns(m: &DMatrix<f64>) -> Vec<usize> {
    let mut keep: Vec<usize> = Vec::with_capacity(m.ncols());
    for j in 0..m.ncols() {
        if !keep.iter().any(|&k| m.column(k) == m.column(j)) {
            keep.push(j);
        }
    }
    keep
}

struct NullOutcome {
    loss: LossFunction,
    raw_p: f64,
    stats: LossStats,
}

fn run_null(
    target: &Column,
    conditioning: &[&Column],
    extra: &[&Column],
    direction: Direction,
    config: &PcitConfig,
    split: &SplitIndices,
    seed: u64,
) -> Result<Vec<NullOutcome>> {
    let name = target.name();
    let all = Targets::from_column(target);
    let train_t = all.take(&split.train);
    let test_t = all.take(&split.test);
    if let Targets::Classes { codes, .. } = &train_t {
        if codes.iter().all(|&c| c == codes[0]) {
            return Err(Error::DegenerateTarget {
                target: Some(name.to_owned()),
                reason: "fewer than 2 classes present in the training split".into(),
            });
        }
    }
    let (z_train, z_test) = encode(conditioning, split)?;
    let full: Vec<&Column> = conditioning.iter().chain(extra).copied().collect();
    let (g_train, g_test) = encode(&full, split)?;
    let observed = test_t.as_reals();

    let base = seed::derive(seed, &[NULL_STREAM, seed::hash_str(name), direction as u64]);
    let losses = config.losses_for(all.task());
    losses
        .iter()
        .enumerate()
        .map(|(li, &loss)| {
            let s = seed::derive(base, &[li as u64]);
            let f: Predictor = if conditioning.is_empty() {
                fit_baseline_targets(&train_t, loss, 0)?
            } else {
                meta_fit_for_loss(&config.meta, &z_train, &train_t, loss, s)?
            };
            let g = meta_fit_for_loss(&config.meta, &g_train, &train_t, loss, s)?;
            let fp = f.predict(&z_test)?;
            let gp = g.predict(&g_test)?;
            let r = paired_residuals(loss, &fp, &gp, &observed)?;
            let raw_p = if config.parametric {
                t_test_one_sided(&r)
            } else {
                wilcoxon_one_sided(&r)
            };
            let lf = loss_vector(loss, &fp, &observed)?;
            let lg = loss_vector(loss, &gp, &observed)?;
            Ok(NullOutcome {
                loss,
                raw_p,
                stats: LossStats {
                    baseline_loss: lf.mean(),
                    candidate_loss: lg.mean(),
                    mean_diff: r.mean(),
                    diff_sd: (lf.variance() + lg.variance()).sqrt(),
                },
            })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.with_target(name))
}

/// Raw p-value and loss statistics of one prediction null under the
/// configured primary loss for the target's task.
pub fn prediction_null_pvalue(
    target: &Column,
    conditioning: &[Column],
    extra: &[Column],
    config: &PcitConfig,
    seed: u64,
) -> Result<(f64, LossStats)> {
    let single = PcitConfig {
        extra_losses: Vec::new(),
        ..config.clone()
    };
    let out = prediction_null_pvalues(target, conditioning, extra, &single, seed)?;
    Ok((out[0].raw_p, out[0].stats))
}

/// One entry per configured loss applicable to the target (adjusted p-values
/// are left equal to the raw ones).
pub fn prediction_null_pvalues(
    target: &Column,
    conditioning: &[Column],
    extra: &[Column],
    config: &PcitConfig,
    seed: u64,
) -> Result<Vec<PredictionNull>> {
    config.validate()?;
    let n = check_rows(&[std::slice::from_ref(target), conditioning, extra])?;
    let split = call_split(n, config, seed)?;
    let z: Vec<&Column> = conditioning.iter().collect();
    let x: Vec<&Column> = extra.iter().collect();
    Ok(run_null(target, &z, &x, Direction::YOnX, config, &split, seed)?
        .into_iter()
        .map(|o| PredictionNull {
            target: target.name().to_owned(),
            direction: Direction::YOnX,
            loss: o.loss,
            raw_p: o.raw_p,
            adjusted_p: o.raw_p,
            stats: o.stats,
        })
        .collect())
}

/// Tests `X ⟂ Y | Z` (marginal independence when `z` is `None` or empty).
pub fn pcit_test(x: &[Column], y: &[Column], z: Option<&[Column]>, config: &PcitConfig, seed: u64) -> Result<IndependenceResult> {
    if x.is_empty() {
        return Err(Error::EmptyBlock("X"));
    }
    if y.is_empty() {
        return Err(Error::EmptyBlock("Y"));
    }
    config.validate()?;
    let z = z.unwrap_or(&[]);
    let n = check_rows(&[x, y, z])?;
    let split = call_split(n, config, seed)?;
    let zr: Vec<&Column> = z.iter().collect();
    let xr: Vec<&Column> = x.iter().collect();
    let yr: Vec<&Column> = y.iter().collect();

    let mut jobs: Vec<(&Column, &[&Column], Direction)> = y.iter().map(|t| (t, xr.as_slice(), Direction::YOnX)).collect();
    if config.symmetric {
        jobs.extend(x.iter().map(|t| (t, yr.as_slice(), Direction::XOnY)));
    }
    let outcomes = jobs
        .par_iter()
        .map(|&(t, extra, dir)| run_null(t, &zr, extra, dir, config, &split, seed))
        .collect::<Result<Vec<_>>>()?;

    let mut nulls = Vec::new();
    for ((t, _, dir), outs) in jobs.iter().zip(outcomes) {
        for o in outs {
            nulls.push(PredictionNull {
                target: t.name().to_owned(),
                direction: *dir,
                loss: o.loss,
                raw_p: o.raw_p,
                adjusted_p: o.raw_p,
                stats: o.stats,
            });
        }
    }
    let raw: Vec<f64> = nulls.iter().map(|n| n.raw_p).collect();
    let fdr = by_adjust(&raw, config.alpha)?;
    for (n, a) in nulls.iter_mut().zip(&fdr.adjusted) {
        n.adjusted_p = *a;
    }
    let overall_p = fdr.adjusted.iter().copied().fold(1.0, f64::min);
    Ok(IndependenceResult {
        nulls,
        alpha: config.alpha,
        overall_p,
        independent: overall_p > config.alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn noise(name: &str, n: usize, seed: u64) -> Column {
        let mut rng = seed::rng(seed);
        Column::continuous(name, (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
    }

    fn quick() -> PcitConfig {
        PcitConfig {
            meta: MetaEstimatorSpec::single(),
            ..Default::default()
        }
    }

    #[test]
    fn identical_columns_are_dependent() {
        let x = noise("x", 1000, 1);
        let y = x.clone().with_name("y");
        let r = pcit_test(&[x], &[y], None, &quick(), 0).unwrap();
        assert!(!r.independent);
        assert!(r.overall_p < 1e-6, "{}", r.overall_p);
        assert_eq!(r.nulls.len(), 2);
    }

    #[test]
    fn empty_blocks_are_rejected() {
        let x = noise("x", 20, 1);
        assert!(matches!(pcit_test(&[], &[x.clone()], None, &quick(), 0), Err(Error::EmptyBlock("X"))));
        assert!(matches!(pcit_test(&[x], &[], None, &quick(), 0), Err(Error::EmptyBlock("Y"))));
    }

    #[test]
    fn verdict_matches_overall_p() {
        let x = noise("x", 200, 2);
        let y = noise("y", 200, 3);
        let r = pcit_test(&[x], &[y], None, &quick(), 5).unwrap();
        let min = r.adjusted_pvalues().into_iter().fold(1.0, f64::min);
        assert_eq!(r.overall_p, min);
        for a in [0.001, 0.05, 0.5, 0.99] {
            assert_eq!(r.independent_at(a), r.adjusted_pvalues().iter().all(|p| *p > a));
        }
    }

    #[test]
    fn degenerate_target_names_the_column() {
        let x = noise("x", 40, 4);
        let codes = vec![0usize; 40];
        let y = Column::categorical("label", vec!["a".into(), "b".into()], &codes).unwrap();
        match pcit_test(&[x], &[y], None, &quick(), 0) {
            Err(Error::DegenerateTarget { target, .. }) => assert_eq!(target.as_deref(), Some("label")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_null_matches_asymmetric_test() {
        let x = noise("x", 300, 6);
        let mut rng = seed::rng(7);
        let y = Column::continuous(
            "y",
            x.values().iter().map(|v| 0.3 * v + rng.sample::<f64, _>(StandardNormal)).collect(),
        )
        .unwrap();
        let cfg = PcitConfig {
            symmetric: false,
            ..quick()
        };
        let (p, _) = prediction_null_pvalue(&y, &[], std::slice::from_ref(&x), &cfg, 9).unwrap();
        let r = pcit_test(&[x], &[y], None, &cfg, 9).unwrap();
        assert_eq!(r.nulls[0].raw_p, p);
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = PcitConfig {
            extra_losses: vec![LossFunction::Quantile { alpha: 0.25 }],
            ..Default::default()
        };
        let s = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<PcitConfig>(&s).unwrap(), cfg);
        let partial: PcitConfig = serde_json::from_str(r#"{"alpha":0.01}"#).unwrap();
        assert_eq!(partial.alpha, 0.01);
        assert!(partial.symmetric);
    }
}
