use nalgebra::{DMatrix, DVector};
use pcit_core::data::Column;
use pcit_core::learners::elastic_net::{fit_fixed, Gram};
use pcit_core::learners::{
    cross_fit_predictions, fit, fit_baseline, fit_targets, meta_fit, meta_fit_for_loss, LearnerSpec, MetaEstimatorSpec,
    Method, Targets,
};
use pcit_core::losses::{LossFunction, Predictions, Prediction};
use pcit_core::seed;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn gaussian(n: usize, p: usize, s: u64) -> DMatrix<f64> {
    let mut rng = seed::rng(s);
    DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))
}

fn linear_target(x: &DMatrix<f64>, beta: &[f64], noise: f64, s: u64) -> Vec<f64> {
    let mut rng = seed::rng(s);
    (0..x.nrows())
        .map(|i| 1.5 + (0..x.ncols()).map(|j| beta[j] * x[(i, j)]).sum::<f64>() + noise * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn points(p: Predictions) -> Vec<f64> {
    match p {
        Predictions::Point(v) => v,
        Predictions::Distribution { .. } => panic!("expected points"),
    }
}

#[test]
fn tiny_penalty_matches_least_squares() {
    let x = gaussian(200, 4, 1);
    let y = linear_target(&x, &[1.0, -2.0, 0.5, 0.0], 0.3, 2);
    let m = fit_fixed(&x, &y, 0.5, 1e-8);

    let design = DMatrix::from_fn(200, 5, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
    let xtx = design.transpose() * &design;
    let xty = design.transpose() * DVector::from_vec(y);
    let ols = xtx.lu().solve(&xty).unwrap();
    assert!((m.intercept - ols[0]).abs() < 1e-4);
    for j in 0..4 {
        assert!((m.coef[j] - ols[j + 1]).abs() < 1e-4, "coef {j}: {} vs {}", m.coef[j], ols[j + 1]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn coordinate_descent_objective_is_monotone_and_kkt_holds(
        s in any::<u64>(),
        n in 10usize..60,
        p in 1usize..8,
        lambda in 1e-3f64..1.0,
        l1_ratio in 0.0f64..=1.0,
    ) {
        let x = gaussian(n, p, s);
        let beta: Vec<f64> = (0..p).map(|j| if j % 2 == 0 { 1.0 } else { -0.5 }).collect();
        let y = linear_target(&x, &beta, 0.5, s ^ 1);
        let rows: Vec<usize> = (0..n).collect();
        let g = Gram::new(&x, &y, &rows);
        let mut coef = vec![0.0; p];
        let mut trace = vec![g.objective(&coef, lambda, l1_ratio)];
        g.descend(&mut coef, lambda, l1_ratio, |c| trace.push(g.objective(c, lambda, l1_ratio)));
        for w in trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
        }
        // subgradient of the objective at the returned coefficients
        for j in 0..p {
            let grad = (0..p).map(|k| g.gram[(j, k)] * coef[k]).sum::<f64>() - g.xty[j]
                + lambda * (1.0 - l1_ratio) * coef[j];
            let l1 = lambda * l1_ratio;
            if coef[j] != 0.0 {
                prop_assert!((grad + l1 * coef[j].signum()).abs() < 1e-6);
            } else {
                prop_assert!(grad.abs() <= l1 + 1e-6);
            }
        }
    }

    #[test]
    fn baseline_is_the_best_constant(
        ticks in prop::collection::vec(-20i32..20, 1..30),
        which in 0usize..4,
    ) {
        let loss = [
            LossFunction::Squared,
            LossFunction::Absolute,
            LossFunction::Quantile { alpha: 0.2 },
            LossFunction::Quantile { alpha: 0.85 },
        ][which];
        let y: Vec<f64> = ticks.iter().map(|&t| t as f64 * 0.5).collect();
        let col = Column::continuous("y", y.clone()).unwrap();
        let pred = points(fit_baseline(&col, loss).unwrap().predict(&DMatrix::zeros(y.len(), 0)).unwrap());
        let risk = |c: f64| y.iter().map(|&v| loss.eval(Prediction::Point(c), v).unwrap()).sum::<f64>();
        let at_baseline = risk(pred[0]);
        for i in 0..=2200 {
            let c = -11.0 + i as f64 * 0.01;
            prop_assert!(at_baseline <= risk(c) + 1e-9, "{loss}: constant {c} beats baseline {}", pred[0]);
        }
    }

    #[test]
    fn every_classifier_outputs_distributions(s in any::<u64>(), k in 2usize..5) {
        let x = gaussian(80, 3, s);
        let labels: Vec<String> = (0..80).map(|i| ((i + (x[(i, 0)] > 0.0) as usize) % k).to_string()).collect();
        let col = Column::from_labels("c", &labels);
        let k = col.n_levels().unwrap();
        for spec in [
            LearnerSpec::default_logistic(),
            LearnerSpec::GaussianNB,
            LearnerSpec::DecisionTree { max_depth: 4, min_leaf: 2 },
            LearnerSpec::default_bagged_trees(),
            LearnerSpec::Baseline,
        ] {
            let pred = fit(&spec, &x, &col, s).unwrap().predict(&gaussian(20, 3, s ^ 9)).unwrap();
            match pred {
                Predictions::Distribution { n_classes, probs } => {
                    prop_assert_eq!(n_classes, k);
                    for row in probs.chunks(k) {
                        prop_assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
                        prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9, "{}", spec.name());
                    }
                }
                Predictions::Point(_) => prop_assert!(false, "point output from {}", spec.name()),
            }
        }
    }
}

#[test]
fn naive_bayes_separates_distant_gaussians() {
    let mut rng = seed::rng(5);
    let n = 400;
    let labels: Vec<&str> = (0..n).map(|i| if i % 2 == 0 { "neg" } else { "pos" }).collect();
    let x = DMatrix::from_fn(n, 2, |i, _| {
        let mu = if i % 2 == 0 { -5.0 } else { 5.0 };
        mu + rng.sample::<f64, _>(StandardNormal)
    });
    let col = Column::from_labels("c", &labels);
    let pred = fit(&LearnerSpec::GaussianNB, &x, &col, 0).unwrap().predict(&x).unwrap();
    let codes = col.codes();
    let errors = (0..n)
        .filter(|&i| match pred.get(i) {
            Prediction::Distribution(p) => (p[1] > p[0]) as usize != codes[i],
            Prediction::Point(_) => true,
        })
        .count();
    assert!(errors as f64 / n as f64 <= 0.02, "{errors} errors");
}

#[test]
fn depth_zero_tree_equals_baseline() {
    let x = gaussian(50, 2, 3);
    let y = linear_target(&x, &[1.0, 1.0], 1.0, 4);
    let col = Column::continuous("y", y).unwrap();
    for loss in [LossFunction::Squared, LossFunction::Absolute, LossFunction::Quantile { alpha: 0.3 }] {
        let tree = fit_targets(
            &LearnerSpec::DecisionTree { max_depth: 0, min_leaf: 1 },
            &x,
            &Targets::from_column(&col),
            loss,
            0,
        )
        .unwrap();
        let base = fit_baseline(&col, loss).unwrap();
        let a = points(tree.predict(&x).unwrap());
        let b = points(base.predict(&DMatrix::zeros(50, 0)).unwrap());
        assert!((a[0] - b[0]).abs() < 1e-12, "{loss}");
        assert!(a.iter().all(|v| *v == a[0]));
    }
}

#[test]
fn quantile_baseline_on_integers() {
    let col = Column::continuous("y", (0..100).map(f64::from).collect()).unwrap();
    let b = fit_baseline(&col, LossFunction::Quantile { alpha: 0.9 }).unwrap();
    assert!(b.is_constant());
    assert_eq!(points(b.predict(&DMatrix::zeros(1, 0)).unwrap()), vec![89.0]);
}

#[test]
fn meta_fit_is_bit_reproducible() {
    let x = gaussian(150, 3, 7);
    let y = Column::continuous("y", linear_target(&x, &[1.0, 0.0, -1.0], 0.5, 8)).unwrap();
    let labels: Vec<&str> = (0..150).map(|i| if x[(i, 0)] + 0.3 * x[(i, 1)] > 0.0 { "a" } else { "b" }).collect();
    let c = Column::from_labels("c", &labels);
    let xt = gaussian(30, 3, 9);
    for method in [Method::Stacking, Method::Multiplexing, Method::None] {
        let spec = MetaEstimatorSpec::with_method(method);
        for target in [&y, &c] {
            let a = meta_fit(&spec, &x, target, 11).unwrap().predict(&xt).unwrap();
            let b = meta_fit(&spec, &x, target, 11).unwrap().predict(&xt).unwrap();
            assert_eq!(a, b, "{method:?}");
        }
    }
}

#[test]
fn multiplexing_reports_the_argmin() {
    let x = gaussian(200, 3, 12);
    let y = linear_target(&x, &[0.0, 2.0, 0.0], 0.2, 13);
    let spec = MetaEstimatorSpec {
        method: Method::Multiplexing,
        regressors: vec![
            LearnerSpec::Baseline,
            LearnerSpec::DecisionTree { max_depth: 2, min_leaf: 5 },
            LearnerSpec::default_elastic_net(),
        ],
        ..Default::default()
    };
    let for_loss = |loss| meta_fit_for_loss(&spec, &x, &Targets::Real(y.clone()), loss, 3).unwrap();
    for loss in [LossFunction::Squared, LossFunction::Absolute] {
        let pred = for_loss(loss);
        let sel = pred.selection().expect("multiplexing records its selection");
        let losses: Vec<f64> = sel.validation_losses.iter().map(|l| l.unwrap_or(f64::INFINITY)).collect();
        let min = losses.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(losses[sel.selected], min);
        assert_eq!(sel.candidates.len(), if loss == LossFunction::Squared { 3 } else { 2 });
    }
}

#[test]
fn stage_one_predictions_never_see_their_own_target() {
    let x = gaussian(100, 2, 21);
    let y = linear_target(&x, &[1.0, -1.0], 0.5, 22);
    for spec in [LearnerSpec::default_elastic_net(), LearnerSpec::default_bagged_trees()] {
        let base = points(cross_fit_predictions(&spec, &x, &Targets::Real(y.clone()), LossFunction::Squared, 5, 4).unwrap());
        for row in [0, 37, 99] {
            let mut y2 = y.clone();
            y2[row] += 50.0;
            let moved = points(cross_fit_predictions(&spec, &x, &Targets::Real(y2), LossFunction::Squared, 5, 4).unwrap());
            assert_eq!(base[row], moved[row], "{}", spec.name());
        }
    }
}
