//! CART-style decision trees and bootstrap-aggregated ensembles.
//!
//! Regression trees under the squared loss split on variance reduction and
//! predict leaf means. Classification trees split on Gini impurity and
//! predict leaf class frequencies. For other regression losses (absolute,
//! quantile) leaves hold the statistic the loss elicits and candidate
//! splits are scored by the summed empirical loss; to bound cost only a
//! fixed number of quantile-spaced thresholds is considered per feature.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;

use super::Targets;
use crate::error::Result;
use crate::losses::{lower_quantile, LossFunction, Prediction, Statistic};
use crate::seed;

/// Depth cap applied regardless of configuration.
const HARD_MAX_DEPTH: usize = 64;
const LOSS_SPLIT_CANDIDATES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub feature_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { offset: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
    width: usize,
    leaves: Vec<f64>,
}

enum Criterion<'a> {
    Variance(&'a [f64]),
    Gini { codes: &'a [usize], n_classes: usize },
    Loss { y: &'a [f64], loss: LossFunction },
}

impl Criterion<'_> {
    fn width(&self) -> usize {
        match self {
            Criterion::Gini { n_classes, .. } => *n_classes,
            _ => 1,
        }
    }

    fn leaf_value(&self, rows: &[usize], out: &mut Vec<f64>) {
        match self {
            Criterion::Variance(y) => out.push(rows.iter().map(|&r| y[r]).sum::<f64>() / rows.len() as f64),
            Criterion::Gini { codes, n_classes } => {
                let start = out.len();
                out.resize(start + n_classes, 0.0);
                for &r in rows {
                    out[start + codes[r]] += 1.0;
                }
                let n = rows.len() as f64;
                out[start..].iter_mut().for_each(|v| *v /= n);
            }
            Criterion::Loss { y, loss } => out.push(loss_leaf(y, rows, *loss)),
        }
    }

    fn is_pure(&self, rows: &[usize]) -> bool {
        match self {
            Criterion::Variance(y) | Criterion::Loss { y, .. } => rows.iter().all(|&r| y[r] == y[rows[0]]),
            Criterion::Gini { codes, .. } => rows.iter().all(|&r| codes[r] == codes[rows[0]]),
        }
    }
}

fn loss_leaf(y: &[f64], rows: &[usize], loss: LossFunction) -> f64 {
    let v: Vec<f64> = rows.iter().map(|&r| y[r]).collect();
    match loss {
        LossFunction::Absolute => lower_quantile(&v, 0.5),
        LossFunction::Quantile { alpha } => lower_quantile(&v, alpha),
        _ => v.iter().sum::<f64>() / v.len() as f64,
    }
}

fn loss_cost(y: &[f64], rows: &[usize], loss: LossFunction) -> f64 {
    let c = loss_leaf(y, rows, loss);
    rows.iter()
        .map(|&r| loss.eval(Prediction::Point(c), y[r]).unwrap_or(f64::INFINITY))
        .sum()
}

struct Builder<'a, R: Rng> {
    x: &'a DMatrix<f64>,
    crit: Criterion<'a>,
    params: TreeParams,
    rng: &'a mut R,
    tree: Tree,
}

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl<R: Rng> Builder<'_, R> {
    fn build(&mut self, rows: &mut [usize], depth: usize) -> usize {
        let id = self.tree.nodes.len();
        self.tree.nodes.push(Node::Leaf { offset: 0 });
        let max_depth = self.params.max_depth.min(HARD_MAX_DEPTH);
        let split = if depth >= max_depth || rows.len() < 2 * self.params.min_leaf || self.crit.is_pure(rows) {
            None
        } else {
            self.best_split(rows)
        };
        match split {
            None => {
                let offset = self.tree.leaves.len();
                self.crit.leaf_value(rows, &mut self.tree.leaves);
                self.tree.nodes[id] = Node::Leaf { offset };
            }
            Some(s) => {
                let x = self.x;
                let mut mid = 0;
                for i in 0..rows.len() {
                    if x[(rows[i], s.feature)] <= s.threshold {
                        rows.swap(i, mid);
                        mid += 1;
                    }
                }
                let (l, r) = rows.split_at_mut(mid);
                let left = self.build(l, depth + 1);
                let right = self.build(r, depth + 1);
                self.tree.nodes[id] = Node::Split {
                    feature: s.feature,
                    threshold: s.threshold,
                    left,
                    right,
                };
            }
        }
        id
    }

    fn best_split(&mut self, rows: &[usize]) -> Option<Split> {
        let p = self.x.ncols();
        if p == 0 {
            return None;
        }
        let k = ((self.params.feature_fraction * p as f64).round() as usize).clamp(1, p);
        let features: Vec<usize> = if k == p {
            (0..p).collect()
        } else {
            let mut f = sample(self.rng, p, k).into_vec();
            f.sort_unstable();
            f
        };
        let mut best: Option<Split> = None;
        let mut sorted: Vec<(f64, usize)> = Vec::with_capacity(rows.len());
        for f in features {
            sorted.clear();
            sorted.extend(rows.iter().map(|&r| (self.x[(r, f)], r)));
            sorted.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            if let Some(s) = self.scan(&sorted, f) {
                if best.as_ref().is_none_or(|b| s.gain > b.gain) {
                    best = Some(s);
                }
            }
        }
        best
    }

    fn scan(&self, sorted: &[(f64, usize)], feature: usize) -> Option<Split> {
        let n = sorted.len();
        let ml = self.params.min_leaf;
        let mut best: Option<(usize, f64)> = None;
        let consider = |i: usize, gain: f64, best: &mut Option<(usize, f64)>| {
            if best.is_none_or(|(_, g)| gain > g) {
                *best = Some((i, gain));
            }
        };
        let parent_score;
        match &self.crit {
            Criterion::Variance(y) => {
                let total: f64 = sorted.iter().map(|&(_, r)| y[r]).sum();
                parent_score = total * total / n as f64;
                let mut left = 0.0;
                for i in 1..n {
                    left += y[sorted[i - 1].1];
                    if i < ml || n - i < ml || sorted[i - 1].0 >= sorted[i].0 {
                        continue;
                    }
                    let right = total - left;
                    let score = left * left / i as f64 + right * right / (n - i) as f64;
                    consider(i, score - parent_score, &mut best);
                }
            }
            Criterion::Gini { codes, n_classes } => {
                let mut right = vec![0f64; *n_classes];
                for &(_, r) in sorted {
                    right[codes[r]] += 1.0;
                }
                let mut left = vec![0f64; *n_classes];
                let mut sq_r: f64 = right.iter().map(|c| c * c).sum();
                let mut sq_l = 0.0;
                parent_score = sq_r / n as f64;
                for i in 1..n {
                    let c = codes[sorted[i - 1].1];
                    sq_l += 2.0 * left[c] + 1.0;
                    sq_r -= 2.0 * right[c] - 1.0;
                    left[c] += 1.0;
                    right[c] -= 1.0;
                    if i < ml || n - i < ml || sorted[i - 1].0 >= sorted[i].0 {
                        continue;
                    }
                    let score = sq_l / i as f64 + sq_r / (n - i) as f64;
                    consider(i, score - parent_score, &mut best);
                }
            }
            Criterion::Loss { y, loss } => {
                let all: Vec<usize> = sorted.iter().map(|&(_, r)| r).collect();
                let parent_cost = loss_cost(y, &all, *loss);
                parent_score = -parent_cost;
                let mut candidates: Vec<usize> = (1..n)
                    .filter(|&i| i >= ml && n - i >= ml && sorted[i - 1].0 < sorted[i].0)
                    .collect();
                if candidates.len() > LOSS_SPLIT_CANDIDATES {
                    let m = candidates.len();
                    candidates = (0..LOSS_SPLIT_CANDIDATES)
                        .map(|q| candidates[(q * (m - 1)) / (LOSS_SPLIT_CANDIDATES - 1)])
                        .collect();
                    candidates.dedup();
                }
                for i in candidates {
                    let cost = loss_cost(y, &all[..i], *loss) + loss_cost(y, &all[i..], *loss);
                    consider(i, parent_cost - cost, &mut best);
                }
            }
        }
        let (i, gain) = best?;
        if gain <= 1e-12 * (1.0 + parent_score.abs()) {
            return None;
        }
        Some(Split {
            feature,
            threshold: 0.5 * (sorted[i - 1].0 + sorted[i].0),
            gain,
        })
    }
}

impl Tree {
    pub fn fit(x: &DMatrix<f64>, targets: &Targets, loss: LossFunction, params: &TreeParams, seed: u64) -> Result<Tree> {
        let rows: Vec<usize> = (0..x.nrows()).collect();
        Ok(Self::fit_rows(x, targets, loss, params, rows, &mut seed::rng(seed)))
    }

    fn fit_rows<R: Rng>(
        x: &DMatrix<f64>,
        targets: &Targets,
        loss: LossFunction,
        params: &TreeParams,
        mut rows: Vec<usize>,
        rng: &mut R,
    ) -> Tree {
        let crit = match targets {
            Targets::Real(y) if loss == LossFunction::Squared => Criterion::Variance(y),
            Targets::Real(y) => Criterion::Loss { y, loss },
            Targets::Classes { codes, n_classes } => Criterion::Gini {
                codes,
                n_classes: *n_classes,
            },
        };
        let width = crit.width();
        let mut b = Builder {
            x,
            crit,
            params: *params,
            rng,
            tree: Tree {
                nodes: Vec::new(),
                width,
                leaves: Vec::new(),
            },
        };
        b.build(&mut rows, 0);
        b.tree
    }

    /// Leaf value for row `row` of `x`: one real, or `n_classes` probabilities.
    pub fn predict_row(&self, x: &DMatrix<f64>, row: usize) -> &[f64] {
        let mut id = 0;
        loop {
            match self.nodes[id] {
                Node::Leaf { offset } => return &self.leaves[offset..offset + self.width],
                Node::Split { feature, threshold, left, right } => {
                    id = if x[(row, feature)] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    /// Root-leaf statistic, when the tree never split.
    pub fn constant(&self) -> Option<Statistic> {
        match (self.nodes.as_slice(), self.width) {
            ([Node::Leaf { .. }], 1) => Some(Statistic::Point(self.leaves[0])),
            ([Node::Leaf { .. }], _) => Some(Statistic::Distribution(self.leaves.clone())),
            _ => None,
        }
    }
}

/// Bootstrap-aggregated trees; tree `t` draws from a stream seeded by `(seed, t)`.
pub fn fit_bagged(
    x: &DMatrix<f64>,
    targets: &Targets,
    loss: LossFunction,
    params: &TreeParams,
    n_trees: usize,
    seed: u64,
) -> Result<Vec<Tree>> {
    let n = x.nrows();
    Ok((0..n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::rng(seed::derive(seed, &[t as u64]));
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            Tree::fit_rows(x, targets, loss, params, rows, &mut rng)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(depth: usize) -> TreeParams {
        TreeParams {
            max_depth: depth,
            min_leaf: 1,
            feature_fraction: 1.0,
        }
    }

    #[test]
    fn step_function_is_learned_exactly() {
        let x = DMatrix::from_column_slice(6, 1, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let y = Targets::Real(vec![1.0, 1.0, 1.0, 7.0, 7.0, 7.0]);
        let t = Tree::fit(&x, &y, LossFunction::Squared, &params(3), 0).unwrap();
        assert_eq!(t.n_leaves(), 2);
        assert_eq!(t.predict_row(&x, 0), &[1.0]);
        assert_eq!(t.predict_row(&x, 5), &[7.0]);
    }

    #[test]
    fn depth_zero_is_the_root_statistic() {
        let x = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        let y = Targets::Real(vec![1.0, 2.0, 3.0, 10.0]);
        let t = Tree::fit(&x, &y, LossFunction::Squared, &params(0), 0).unwrap();
        assert_eq!(t.constant(), Some(Statistic::Point(4.0)));
        let c = Targets::Classes { codes: vec![0, 1, 1, 1], n_classes: 3 };
        let t = Tree::fit(&x, &c, LossFunction::LogLoss, &params(0), 0).unwrap();
        assert_eq!(t.constant(), Some(Statistic::Distribution(vec![0.25, 0.75, 0.0])));
    }

    #[test]
    fn gini_split_separates_classes() {
        let x = DMatrix::from_column_slice(6, 2, &[5.0, 4.0, 6.0, 0.0, 1.0, 0.5, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        let c = Targets::Classes { codes: vec![1, 1, 1, 0, 0, 0], n_classes: 2 };
        let t = Tree::fit(&x, &c, LossFunction::LogLoss, &params(2), 0).unwrap();
        assert_eq!(t.predict_row(&x, 0), &[0.0, 1.0]);
        assert_eq!(t.predict_row(&x, 4), &[1.0, 0.0]);
    }

    #[test]
    fn quantile_tree_splits_when_means_agree() {
        // both groups have mean 0; lower quartiles are -1 and 0
        let xs: Vec<f64> = (0..40).map(|i| if i < 20 { -1.0 } else { 1.0 }).collect();
        let ys: Vec<f64> = (0..40).map(|i| if i < 20 { 0.0 } else if i % 2 == 0 { -1.0 } else { 1.0 }).collect();
        let x = DMatrix::from_column_slice(40, 1, &xs);
        let y = Targets::Real(ys);
        let sq = Tree::fit(&x, &y, LossFunction::Squared, &params(3), 0).unwrap();
        assert_eq!(sq.n_leaves(), 1);
        let q = Tree::fit(&x, &y, LossFunction::Quantile { alpha: 0.25 }, &params(3), 0).unwrap();
        assert_eq!(q.predict_row(&x, 0), &[0.0]);
        assert_eq!(q.predict_row(&x, 39), &[-1.0]);
    }

    #[test]
    fn bagging_is_seed_deterministic() {
        let x = DMatrix::from_fn(50, 3, |i, j| ((i * 7 + j * 3) % 11) as f64);
        let y = Targets::Real((0..50).map(|i| (i % 5) as f64).collect());
        let p = TreeParams {
            max_depth: 4,
            min_leaf: 2,
            feature_fraction: 0.5,
        };
        let a = fit_bagged(&x, &y, LossFunction::Squared, &p, 8, 3).unwrap();
        let b = fit_bagged(&x, &y, LossFunction::Squared, &p, 8, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, fit_bagged(&x, &y, LossFunction::Squared, &p, 8, 4).unwrap());
    }
}
