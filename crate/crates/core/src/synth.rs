//! Synthetic data and the benchmark harness.
//!
//! Gaussian graphical models come from sparse, diagonally dominant
//! precision matrices whose off-diagonal support is the true edge set. The
//! conditional-dependence construction makes `X` and `Y` marginally
//! independent but dependent given `Z = log(X) * exp(Y) + u * sqrt(noise)`.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Column, Dataset};
use crate::error::{Error, Result};
use crate::pcit::{pcit_test, PcitConfig};
use crate::seed;
use crate::skeleton::find_neighbours;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticGraphSpec {
    pub p: usize,
    /// Fraction of the `p(p-1)/2` pairs that carry an edge.
    pub density: f64,
    /// Smallest absolute off-diagonal precision entry.
    pub min_abs: f64,
    pub seed: u64,
}

impl Default for SyntheticGraphSpec {
    /// Ten variables with 12 or 13 of the 45 possible edges.
    fn default() -> Self {
        SyntheticGraphSpec {
            p: 10,
            density: 0.275,
            min_abs: 0.2,
            seed: 0,
        }
    }
}

impl SyntheticGraphSpec {
    pub fn n_edges(&self) -> usize {
        let pairs = self.p * self.p.saturating_sub(1) / 2;
        ((self.density * pairs as f64).round() as usize).min(pairs)
    }

    fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(Error::Config(format!("graph needs p >= 2, got {}", self.p)));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::Config(format!("density {} not in (0,1]", self.density)));
        }
        if !(0.0..=1.0).contains(&self.min_abs) {
            return Err(Error::Config(format!("min_abs {} not in [0,1]", self.min_abs)));
        }
        Ok(())
    }
}

/// Symmetric positive definite precision matrix with exactly
/// `spec.n_edges()` nonzero off-diagonal pairs. Entries are uniform on
/// `[-1, 1]` restricted to `|v| >= min_abs`; each diagonal entry is its
/// row's absolute off-diagonal sum plus 0.5.
pub fn sample_sparse_precision(spec: &SyntheticGraphSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let p = spec.p;
    let mut rng = seed::rng(spec.seed);
    let pairs: Vec<(usize, usize)> = (0..p).flat_map(|i| ((i + 1)..p).map(move |j| (i, j))).collect();
    let mut chosen = sample(&mut rng, pairs.len(), spec.n_edges()).into_vec();
    chosen.sort_unstable();
    let magnitude = Uniform::new_inclusive(spec.min_abs, 1.0).map_err(|e| Error::Config(e.to_string()))?;
    let mut m = DMatrix::zeros(p, p);
    for k in chosen {
        let (i, j) = pairs[k];
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let v = sign * magnitude.sample(&mut rng);
        m[(i, j)] = v;
        m[(j, i)] = v;
    }
    for i in 0..p {
        m[(i, i)] = m.row(i).iter().map(|v| v.abs()).sum::<f64>() + 0.5;
    }
    Ok(m)
}

/// Edges `(i, j)`, `i < j`, where the precision matrix is nonzero.
pub fn true_edges(precision: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let p = precision.nrows();
    (0..p)
        .flat_map(|i| ((i + 1)..p).map(move |j| (i, j)))
        .filter(|&(i, j)| precision[(i, j)] != 0.0)
        .collect()
}

fn check_spd(m: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if !m.is_square() {
        return Err(Error::Shape(format!("{}x{} matrix is not square", m.nrows(), m.ncols())));
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-12 * scale {
        return Err(Error::Numeric("matrix is not symmetric".into()));
    }
    m.clone()
        .cholesky()
        .ok_or_else(|| Error::Numeric("matrix is not positive definite".into()))
}

/// Inverse of an SPD matrix through its Cholesky factor.
pub fn precision_to_covariance(precision: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let inv = check_spd(precision)?.inverse();
    // symmetrize away rounding asymmetry
    Ok((&inv + inv.transpose()) * 0.5)
}

/// `n` rows drawn i.i.d. from `N(0, cov)`.
pub fn sample_mvn(cov: &DMatrix<f64>, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    let l = check_spd(cov)?.l();
    let p = cov.nrows();
    let mut rng = seed::rng(seed);
    let z = DMatrix::from_fn(p, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok((l * z).transpose())
}

/// Columns `X1..Xp` from a data matrix.
pub fn matrix_to_dataset(data: &DMatrix<f64>) -> Result<Dataset> {
    Dataset::new(
        (0..data.ncols())
            .map(|j| Column::continuous(format!("X{}", j + 1), data.column(j).iter().copied().collect()))
            .collect::<Result<Vec<_>>>()?,
    )
}

/// Pools to resample `X`, `Y` and the noise from, independently.
#[derive(Debug, Clone, PartialEq)]
pub struct CondDepSources {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub noise: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CondDepData {
    pub x: Column,
    pub y: Column,
    pub z: Column,
    pub noise: Column,
}

/// The log-times-exp construction. Without sources, `X` and the noise are
/// log-normal(0, 1) and `Y` is uniform on `[0.5, 1.5]`.
pub fn make_cond_dep_dataset(n: usize, seed: u64, sources: Option<&CondDepSources>) -> Result<CondDepData> {
    if n < 10 {
        return Err(Error::InsufficientData(format!("need n >= 10, got {n}")));
    }
    let mut rng = seed::rng(seed);
    let (x, y, noise): (Vec<f64>, Vec<f64>, Vec<f64>) = match sources {
        Some(s) => {
            for (name, pool) in [("x", &s.x), ("y", &s.y), ("noise", &s.noise)] {
                if pool.is_empty() {
                    return Err(Error::EmptyInput);
                }
                if let Some(v) = pool.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
                    return Err(Error::Domain(format!("{name} source value {v} is not strictly positive")));
                }
            }
            let mut draw = |pool: &[f64]| (0..n).map(|_| pool[rng.random_range(0..pool.len())]).collect::<Vec<_>>();
            (draw(&s.x), draw(&s.y), draw(&s.noise))
        }
        None => {
            let ln = LogNormal::new(0.0, 1.0).expect("valid log-normal");
            let un = Uniform::new_inclusive(0.5, 1.5).expect("valid range");
            let x = (0..n).map(|_| ln.sample(&mut rng)).collect();
            let y = (0..n).map(|_| un.sample(&mut rng)).collect();
            let noise = (0..n).map(|_| ln.sample(&mut rng)).collect();
            (x, y, noise)
        }
    };
    let z = (0..n)
        .map(|i| {
            let u = if rng.random::<bool>() { 1.0 } else { -1.0 };
            x[i].ln() * y[i].exp() + u * noise[i].sqrt()
        })
        .collect();
    Ok(CondDepData {
        x: Column::continuous("X", x)?,
        y: Column::continuous("Y", y)?,
        z: Column::continuous("Z", z)?,
        noise: Column::continuous("noise", noise)?,
    })
}

/// `X` uniform on `{-1, 1}`; `Y` is `±1` with equal probability when
/// `X = 1` and `0` when `X = -1`. Both conditional means are 0.
pub fn make_unfaithful_example(n: usize, seed: u64) -> Result<(Column, Column)> {
    if n < 10 {
        return Err(Error::InsufficientData(format!("need n >= 10, got {n}")));
    }
    let mut rng = seed::rng(seed);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        if rng.random::<bool>() {
            x.push(1.0);
            y.push(if rng.random::<bool>() { 1.0 } else { -1.0 });
        } else {
            x.push(-1.0);
            y.push(0.0);
        }
    }
    Ok((Column::continuous("X", x)?, Column::continuous("Y", y)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub seed: u64,
    pub n: usize,
    pub rep: usize,
    pub found_edges: usize,
    pub true_edges: usize,
    pub false_edges: usize,
    pub power: f64,
    pub fdr: f64,
    pub time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub n: usize,
    pub reps: usize,
    pub power: f64,
    pub power_se: f64,
    pub fdr: f64,
    pub fdr_se: f64,
    pub mean_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkReport {
    pub experiment: String,
    pub method: String,
    pub alpha: f64,
    pub runs: Vec<RunRecord>,
    pub aggregates: Vec<Aggregate>,
}

/// Standard error of `X / B` for `X ~ Bin(B, theta)`.
pub fn binomial_se(theta: f64, b: usize) -> f64 {
    if b == 0 {
        return f64::NAN;
    }
    (theta * (1.0 - theta) / b as f64).max(0.0).sqrt()
}

fn method_name(config: &PcitConfig) -> String {
    serde_json::to_value(config.meta.method)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

fn aggregate(n_grid: &[usize], reps: usize, runs: &[RunRecord]) -> Vec<Aggregate> {
    n_grid
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let rs = &runs[k * reps..(k + 1) * reps];
            let b = rs.len() as f64;
            let power = rs.iter().map(|r| r.power).sum::<f64>() / b;
            let fdr = rs.iter().map(|r| r.fdr).sum::<f64>() / b;
            Aggregate {
                n,
                reps,
                power,
                power_se: binomial_se(power, reps),
                fdr,
                fdr_se: binomial_se(fdr, reps),
                mean_time_ms: rs.iter().map(|r| r.time_ms).sum::<f64>() / b,
            }
        })
        .collect()
}

fn grid_jobs(n_grid: &[usize], reps: usize) -> Result<Vec<(usize, usize)>> {
    if reps == 0 {
        return Err(Error::Config("reps must be >= 1".into()));
    }
    if n_grid.is_empty() {
        return Err(Error::Config("sample-size grid is empty".into()));
    }
    Ok(n_grid.iter().flat_map(|&n| (0..reps).map(move |r| (n, r))).collect())
}

/// Skeleton recovery on fresh random graphs: one graph and data set per
/// `(n, rep)`, seeded from `graph.seed`.
pub fn run_fdr_experiment(
    graph: &SyntheticGraphSpec,
    n_grid: &[usize],
    reps: usize,
    config: &PcitConfig,
) -> Result<BenchmarkReport> {
    graph.validate()?;
    config.validate()?;
    let jobs = grid_jobs(n_grid, reps)?;
    let runs = jobs
        .par_iter()
        .map(|&(n, rep)| {
            let run_seed = seed::derive(graph.seed, &[n as u64, rep as u64]);
            let spec = SyntheticGraphSpec {
                seed: seed::derive(run_seed, &[0]),
                ..*graph
            };
            let precision = sample_sparse_precision(&spec)?;
            let truth = true_edges(&precision);
            let data = sample_mvn(&precision_to_covariance(&precision)?, n, seed::derive(run_seed, &[1]))?;
            let ds = matrix_to_dataset(&data)?;
            let start = Instant::now();
            let result = find_neighbours(&ds, config, seed::derive(run_seed, &[2]))?;
            let time_ms = start.elapsed().as_secs_f64() * 1e3;
            let found = result.edges();
            let hits = found.iter().filter(|e| truth.contains(e)).count();
            let false_edges = found.len() - hits;
            Ok(RunRecord {
                seed: run_seed,
                n,
                rep,
                found_edges: found.len(),
                true_edges: truth.len(),
                false_edges,
                power: if truth.is_empty() { 1.0 } else { hits as f64 / truth.len() as f64 },
                fdr: false_edges as f64 / found.len().max(1) as f64,
                time_ms,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchmarkReport {
        experiment: "fdr".into(),
        method: method_name(config),
        alpha: config.alpha,
        aggregates: aggregate(n_grid, reps, &runs),
        runs,
    })
}

/// Conditional PCIT of `X` vs `Y` given `Z` on the log-times-exp data. A
/// run's power is 1 when independence is rejected; there are no false
/// discoveries to count, so its FDR is 0.
pub fn run_power_experiment(n_grid: &[usize], reps: usize, config: &PcitConfig, seed: u64) -> Result<BenchmarkReport> {
    config.validate()?;
    let jobs = grid_jobs(n_grid, reps)?;
    let runs = jobs
        .par_iter()
        .map(|&(n, rep)| {
            let run_seed = seed::derive(seed, &[n as u64, rep as u64]);
            let d = make_cond_dep_dataset(n, seed::derive(run_seed, &[0]), None)?;
            let start = Instant::now();
            let r = pcit_test(
                std::slice::from_ref(&d.x),
                std::slice::from_ref(&d.y),
                Some(std::slice::from_ref(&d.z)),
                config,
                seed::derive(run_seed, &[1]),
            )?;
            let time_ms = start.elapsed().as_secs_f64() * 1e3;
            let found = usize::from(!r.independent);
            Ok(RunRecord {
                seed: run_seed,
                n,
                rep,
                found_edges: found,
                true_edges: 1,
                false_edges: 0,
                power: found as f64,
                fdr: 0.0,
                time_ms,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchmarkReport {
        experiment: "power".into(),
        method: method_name(config),
        alpha: config.alpha,
        aggregates: aggregate(n_grid, reps, &runs),
        runs,
    })
}

#[derive(Serialize)]
struct CsvRow<'a> {
    seed: u64,
    n: usize,
    method: &'a str,
    power: f64,
    fdr: f64,
    time_ms: f64,
}

impl BenchmarkReport {
    /// Zeroes every recorded time, for byte-comparable output.
    pub fn without_timing(mut self) -> Self {
        self.runs.iter_mut().for_each(|r| r.time_ms = 0.0);
        self.aggregates.iter_mut().for_each(|a| a.mean_time_ms = 0.0);
        self
    }

    /// One row per run: `seed,n,method,power,fdr,time_ms`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.runs {
            w.serialize(CsvRow {
                seed: r.seed,
                n: r.n,
                method: &self.method,
                power: r.power,
                fdr: r.fdr,
                time_ms: r.time_ms,
            })
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or(serde_json::Value::Null)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precision_is_spd_with_exact_support() {
        for s in 0..20 {
            let spec = SyntheticGraphSpec { seed: s, ..Default::default() };
            let m = sample_sparse_precision(&spec).unwrap();
            assert_eq!(m, m.transpose());
            assert!(m.clone().cholesky().is_some());
            let e = true_edges(&m);
            assert!((10..=15).contains(&e.len()), "{}", e.len());
            for &(i, j) in &e {
                assert!(m[(i, j)].abs() >= 0.2 && m[(i, j)].abs() <= 1.0);
            }
        }
    }

    #[test]
    fn two_by_two_inverse() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let c = precision_to_covariance(&m).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]) / 3.0;
        assert!((c - want).amax() < 1e-12);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(precision_to_covariance(&bad), Err(Error::Numeric(_))));
    }

    #[test]
    fn unfaithful_example_has_equal_conditional_means() {
        let (x, y) = make_unfaithful_example(1000, 3).unwrap();
        for (xv, yv) in x.values().iter().zip(y.values()) {
            if *xv < 0.0 {
                assert_eq!(*yv, 0.0);
            } else {
                assert!(yv.abs() == 1.0);
            }
        }
    }

    #[test]
    fn sources_must_be_positive() {
        let s = CondDepSources {
            x: vec![1.0, 2.0],
            y: vec![1.0],
            noise: vec![0.0, 1.0],
        };
        assert!(matches!(make_cond_dep_dataset(50, 0, Some(&s)), Err(Error::Domain(_))));
        let ok = CondDepSources {
            noise: vec![0.5, 1.0],
            ..s
        };
        let d = make_cond_dep_dataset(50, 0, Some(&ok)).unwrap();
        assert!(d.x.values().iter().all(|v| *v == 1.0 || *v == 2.0));
    }

    #[test]
    fn zero_reps_is_a_config_error() {
        let r = run_power_experiment(&[100], 0, &PcitConfig::default(), 0);
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
