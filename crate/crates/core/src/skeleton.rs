//! Undirected skeleton estimation by all-pairs conditional independence tests.
//!
//! Each unordered pair `{i, j}` is tested with the symmetric PCIT of `X_i`
//! against `X_j` given every other column. An edge is kept when the pair's
//! p-value survives a Benjamini-Yekutieli pass across all pairs.

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Column, Dataset};
use crate::error::{Error, Result};
use crate::inference::by_adjust;
use crate::pcit::{pcit_test, PcitConfig};
use crate::seed;

/// How pair p-values are formed before the outer FDR pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Pair p-value is the PCIT's overall (inner-adjusted) p-value; one
    /// BY pass then runs across pairs.
    #[default]
    Nested,
    /// All raw prediction-null p-values of all pairs share one BY pass;
    /// a pair's p-value is the minimum adjusted value among its nulls.
    Flat,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkeletonResult {
    pub variables: Vec<String>,
    /// Symmetric; `None` on the diagonal.
    pub p_matrix: Vec<Vec<Option<f64>>>,
    pub adjusted_matrix: Vec<Vec<Option<f64>>>,
    pub adjacency: Vec<Vec<bool>>,
    pub alpha: f64,
    pub pooling: Pooling,
    /// Number of pairwise PCIT runs.
    pub n_tests: usize,
}

impl SkeletonResult {
    pub fn n_variables(&self) -> usize {
        self.variables.len()
    }

    /// Edges `(i, j)` with `i < j`, in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let p = self.n_variables();
        (0..p)
            .flat_map(|i| ((i + 1)..p).map(move |j| (i, j)))
            .filter(|&(i, j)| self.adjacency[i][j])
            .collect()
    }

    /// Adjacency re-thresholded at another level.
    pub fn adjacency_at(&self, alpha: f64) -> Vec<Vec<bool>> {
        self.adjusted_matrix
            .iter()
            .map(|row| row.iter().map(|a| a.is_some_and(|v| v <= alpha)).collect())
            .collect()
    }

    pub fn to_json(&self, seed: u64) -> serde_json::Value {
        serde_json::json!({
            "variables": self.variables,
            "p_matrix": self.p_matrix,
            "adjusted_matrix": self.adjusted_matrix,
            "adjacency": self.adjacency,
            "alpha": self.alpha,
            "pooling": self.pooling,
            "n_tests": self.n_tests,
            "seed": seed,
        })
    }
}

/// Skeleton with pair seeds `pair_seed(seed, i, j)` and nested pooling.
pub fn find_neighbours(dataset: &Dataset, config: &PcitConfig, seed: u64) -> Result<SkeletonResult> {
    find_neighbours_with(dataset, config, Pooling::Nested, |i, j| seed::pair_seed(seed, i, j))
}

/// Skeleton with caller-supplied pair seeds (called with `i < j`).
pub fn find_neighbours_with(
    dataset: &Dataset,
    config: &PcitConfig,
    pooling: Pooling,
    pair_seed: impl Fn(usize, usize) -> u64 + Sync,
) -> Result<SkeletonResult> {
    let p = dataset.n_cols();
    if p < 3 {
        return Err(Error::TooFewVariables(p));
    }
    config.validate()?;
    let cols = dataset.columns();
    let pairs: Vec<(usize, usize)> = (0..p).flat_map(|i| ((i + 1)..p).map(move |j| (i, j))).collect();
    let cfg = PcitConfig {
        symmetric: true,
        ..config.clone()
    };
    let results = pairs
        .par_iter()
        .map(|&(i, j)| {
            // name order makes each pair test independent of column order
            let (a, b) = if cols[i].name() <= cols[j].name() { (i, j) } else { (j, i) };
            let mut rest: Vec<Column> = (0..p).filter(|&k| k != i && k != j).map(|k| cols[k].clone()).collect();
            rest.sort_by(|u, v| u.name().cmp(v.name()));
            pcit_test(
                std::slice::from_ref(&cols[a]),
                std::slice::from_ref(&cols[b]),
                Some(&rest),
                &cfg,
                pair_seed(i, j),
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let (pair_p, pair_adj): (Vec<f64>, Vec<f64>) = match pooling {
        Pooling::Nested => {
            let raw: Vec<f64> = results.iter().map(|r| r.overall_p).collect();
            let adj = by_adjust(&raw, config.alpha)?.adjusted;
            (raw, adj)
        }
        Pooling::Flat => {
            let all: Vec<f64> = results.iter().flat_map(|r| r.raw_pvalues()).collect();
            let adj = by_adjust(&all, config.alpha)?.adjusted;
            let mut raw = Vec::with_capacity(results.len());
            let mut out = Vec::with_capacity(results.len());
            let mut at = 0;
            for r in &results {
                let k = r.nulls.len();
                raw.push(r.raw_pvalues().into_iter().fold(1.0, f64::min));
                out.push(adj[at..at + k].iter().copied().fold(1.0, f64::min));
                at += k;
            }
            (raw, out)
        }
    };

    let mut p_matrix = vec![vec![None; p]; p];
    let mut adjusted_matrix = vec![vec![None; p]; p];
    let mut adjacency = vec![vec![false; p]; p];
    for (k, &(i, j)) in pairs.iter().enumerate() {
        p_matrix[i][j] = Some(pair_p[k]);
        p_matrix[j][i] = Some(pair_p[k]);
        adjusted_matrix[i][j] = Some(pair_adj[k]);
        adjusted_matrix[j][i] = Some(pair_adj[k]);
        let edge = pair_adj[k] <= config.alpha;
        adjacency[i][j] = edge;
        adjacency[j][i] = edge;
    }
    Ok(SkeletonResult {
        variables: dataset.names().into_iter().map(str::to_owned).collect(),
        p_matrix,
        adjusted_matrix,
        adjacency,
        alpha: config.alpha,
        pooling,
        n_tests: pairs.len(),
    })
}

/// Fraction of `n_resamples` bootstrap resamples in which each edge appears.
/// Resample `b` draws rows and pair seeds from streams keyed by `(seed, b)`.
pub fn bootstrap_edge_frequencies(
    dataset: &Dataset,
    config: &PcitConfig,
    n_resamples: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if n_resamples == 0 {
        return Err(Error::Config("n_resamples must be >= 1".into()));
    }
    let p = dataset.n_cols();
    let n = dataset.n_rows();
    let runs = (0..n_resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = seed::rng(seed::derive(seed, &[b as u64, 0]));
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            find_neighbours(&dataset.take_rows(&rows), config, seed::derive(seed, &[b as u64, 1]))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut counts = vec![vec![0usize; p]; p];
    for r in &runs {
        for (i, row) in r.adjacency.iter().enumerate() {
            for (j, &e) in row.iter().enumerate() {
                counts[i][j] += usize::from(e);
            }
        }
    }
    Ok(counts
        .into_iter()
        .map(|row| row.into_iter().map(|c| c as f64 / n_resamples as f64).collect())
        .collect())
}

fn is_keyword(s: &str) -> bool {
    ["graph", "digraph", "subgraph", "node", "edge", "strict"]
        .iter()
        .any(|k| k.eq_ignore_ascii_case(s))
}

/// DOT identifier: bare when it is a plain ID, quoted otherwise.
fn dot_id(s: &str) -> String {
    let plain = s.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !is_keyword(s);
    if plain {
        s.to_owned()
    } else {
        let mut q = String::with_capacity(s.len() + 2);
        q.push('"');
        for c in s.chars() {
            match c {
                '"' => q.push_str("\\\""),
                '\\' => q.push_str("\\\\"),
                '\n' => q.push_str("\\n"),
                c => q.push(c),
            }
        }
        q.push('"');
        q
    }
}

/// `v` with 4 significant digits, trailing zeros trimmed.
pub fn format_sig4(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let trim = |s: String| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_owned()
        } else {
            s
        }
    };
    let mag = v.abs().log10().floor() as i32;
    if (-4..6).contains(&mag) {
        let decimals = (3 - mag).max(0) as usize;
        trim(format!("{v:.decimals$}"))
    } else {
        let s = format!("{v:.3e}");
        let (m, e) = s.split_once('e').unwrap_or((&s, "0"));
        format!("{}e{e}", trim(m.to_owned()))
    }
}

/// Undirected Graphviz document: every variable as a node, every edge
/// labelled with its adjusted p-value.
pub fn export_dot(result: &SkeletonResult) -> String {
    let mut out = String::from("graph skeleton {\n");
    for v in &result.variables {
        let _ = writeln!(out, "  {};", dot_id(v));
    }
    for (i, j) in result.edges() {
        let label = result.adjusted_matrix[i][j].map(format_sig4).unwrap_or_default();
        let _ = writeln!(
            out,
            "  {} -- {} [label=\"{label}\"];",
            dot_id(&result.variables[i]),
            dot_id(&result.variables[j])
        );
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(names: &[&str], edges: &[(usize, usize, f64)]) -> SkeletonResult {
        let p = names.len();
        let mut adj = vec![vec![None; p]; p];
        let mut a = vec![vec![false; p]; p];
        for i in 0..p {
            for j in 0..p {
                if i != j {
                    adj[i][j] = Some(1.0);
                }
            }
        }
        for &(i, j, v) in edges {
            adj[i][j] = Some(v);
            adj[j][i] = Some(v);
            a[i][j] = true;
            a[j][i] = true;
        }
        SkeletonResult {
            variables: names.iter().map(|s| s.to_string()).collect(),
            p_matrix: adj.clone(),
            adjusted_matrix: adj,
            adjacency: a,
            alpha: 0.05,
            pooling: Pooling::Nested,
            n_tests: p * (p - 1) / 2,
        }
    }

    #[test]
    fn dot_edge_format() {
        let dot = export_dot(&result(&["A", "B", "C"], &[(0, 1, 0.003)]));
        assert!(dot.contains("A -- B [label=\"0.003\"]"), "{dot}");
        assert_eq!(dot.matches("--").count(), 1);
        let empty = export_dot(&result(&["A", "B", "C"], &[]));
        assert!(!empty.contains("--") && empty.contains("  C;"));
    }

    #[test]
    fn awkward_names_are_quoted() {
        assert_eq!(dot_id("x_1"), "x_1");
        assert_eq!(dot_id("1x"), "\"1x\"");
        assert_eq!(dot_id("node"), "\"node\"");
        assert_eq!(dot_id("a \"b\""), "\"a \\\"b\\\"\"");
    }

    #[test]
    fn four_significant_digits() {
        assert_eq!(format_sig4(0.003), "0.003");
        assert_eq!(format_sig4(0.0123456), "0.01235");
        assert_eq!(format_sig4(1.0), "1");
        assert_eq!(format_sig4(0.5), "0.5");
        assert_eq!(format_sig4(1.234567e-7), "1.235e-7");
    }

    #[test]
    fn too_few_variables() {
        let ds = Dataset::new(vec![
            Column::continuous("a", vec![1.0, 2.0]).unwrap(),
            Column::continuous("b", vec![1.0, 3.0]).unwrap(),
        ])
        .unwrap();
        assert!(matches!(
            find_neighbours(&ds, &PcitConfig::default(), 0),
            Err(Error::TooFewVariables(2))
        ));
    }
}
