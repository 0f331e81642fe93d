mod args;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::Parser;
use serde::Deserialize;
use serde_json::{json, Value};

use args::{BenchArgs, Cli, Command, Common, Experiment, Input, SeedArg, SkeletonArgs, TestArgs};
use pcit_core::data::{load_csv, load_schema, Dataset, DEFAULT_CUTOFF};
use pcit_core::learners::Method;
use pcit_core::pcit::{pcit_test, PcitConfig};
use pcit_core::skeleton::{export_dot, find_neighbours_with};
use pcit_core::synth::{run_fdr_experiment, run_power_experiment, SyntheticGraphSpec};
use pcit_core::{seed, Error};

/// Contents of a `--config` file: any `PcitConfig` field plus the seed.
#[derive(Debug, Default, Deserialize)]
struct FileConfig {
    #[serde(flatten)]
    pcit: PcitConfig,
    seed: Option<SeedArg>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for bad input or configuration, 1 for failures during computation.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(
            Error::Config(_)
            | Error::UnknownColumn(_)
            | Error::Parse { .. }
            | Error::Io(_)
            | Error::EmptyInput
            | Error::EmptyBlock(_)
            | Error::TooFewVariables(_),
        ) => 2,
        Some(_) => 1,
        None => 2,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let common = match &cli.command {
        Command::Test(a) => &a.common,
        Command::Skeleton(a) => &a.common,
        Command::Bench(a) => &a.common,
    };
    if let Some(n) = common.threads {
        if n == 0 {
            bail!(Error::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Test(a) => run_test(a),
        Command::Skeleton(a) => run_skeleton(a),
        Command::Bench(a) => run_bench(a),
    }
}

/// Effective configuration and master seed: flags over file over defaults.
fn resolve(common: &Common) -> anyhow::Result<(PcitConfig, u64)> {
    let file: FileConfig = match &common.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => FileConfig::default(),
    };
    let mut cfg = file.pcit;
    if let Some(a) = common.alpha {
        cfg.alpha = a;
    }
    if let Some(m) = common.method {
        cfg.meta.method = m.into();
    }
    if cfg.meta.method == Method::None {
        cfg.meta.regressors.truncate(1);
        cfg.meta.classifiers.truncate(1);
    }
    if common.parametric {
        cfg.parametric = true;
    }
    if common.no_symmetric {
        cfg.symmetric = false;
    }
    if let Some(losses) = &common.losses {
        let (cls, reg): (Vec<_>, Vec<_>) = losses.iter().copied().partition(|l| l.is_classification());
        if let Some(first) = reg.first() {
            cfg.regression_loss = *first;
        }
        if let Some(first) = cls.first() {
            cfg.classification_loss = *first;
        }
        cfg.extra_losses = reg.iter().skip(1).chain(cls.iter().skip(1)).copied().collect();
    }
    cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
    let seed = match common.seed.or(file.seed).unwrap_or(SeedArg::Fixed(0)) {
        SeedArg::Fixed(s) => s,
        SeedArg::Random => rand_seed(),
    };
    Ok((cfg, seed))
}

fn rand_seed() -> u64 {
    let t = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0);
    seed::derive(t, &[std::process::id() as u64])
}

fn load(input: &Input) -> anyhow::Result<Dataset> {
    let schema = input.schema.as_ref().map(load_schema).transpose()?;
    Ok(load_csv(&input.data, schema.as_ref(), input.cutoff.unwrap_or(DEFAULT_CUTOFF))?)
}

fn emit(out: Option<&Path>, doc: &Value) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(doc)? + "\n";
    match out {
        Some(p) => fs::write(p, text).map_err(Error::from)?,
        None => std::io::stdout().write_all(text.as_bytes()).map_err(Error::from)?,
    }
    Ok(())
}

fn run_test(a: &TestArgs) -> anyhow::Result<()> {
    let (cfg, seed) = resolve(&a.common)?;
    for z in &a.z {
        if a.x.contains(z) || a.y.contains(z) {
            bail!(Error::Config(format!("column '{z}' is in Z and in X or Y")));
        }
    }
    if let Some(c) = a.x.iter().find(|c| a.y.contains(c)) {
        bail!(Error::Config(format!("column '{c}' is in both X and Y")));
    }
    let ds = load(&a.input)?;
    let x = ds.select(&a.x)?;
    let y = ds.select(&a.y)?;
    let z = ds.select(&a.z)?;
    let result = pcit_test(&x, &y, Some(&z), &cfg, seed)?;
    let mut doc = result.to_json(&cfg, seed);
    doc["x"] = json!(a.x);
    doc["y"] = json!(a.y);
    doc["z"] = json!(a.z);
    emit(a.common.out.as_deref(), &doc)?;
    let given = if a.z.is_empty() {
        String::new()
    } else {
        format!(" | {}", a.z.join(","))
    };
    eprintln!(
        "{} vs {}{given}: {} at alpha {} (p = {:.4e})",
        a.x.join(","),
        a.y.join(","),
        if result.independent { "independent" } else { "dependent" },
        cfg.alpha,
        result.overall_p
    );
    Ok(())
}

fn run_skeleton(a: &SkeletonArgs) -> anyhow::Result<()> {
    let (cfg, seed) = resolve(&a.common)?;
    let mut ds = load(&a.input)?;
    if !a.columns.is_empty() {
        ds = Dataset::new(ds.select(&a.columns)?)?;
    }
    let result = find_neighbours_with(&ds, &cfg, a.pooling.into(), |i, j| seed::pair_seed(seed, i, j))?;
    let mut doc = result.to_json(seed);
    doc["config_echo"] = serde_json::to_value(&cfg)?;
    emit(a.common.out.as_deref(), &doc)?;
    if let Some(p) = &a.dot {
        fs::write(p, export_dot(&result)).map_err(Error::from)?;
    }
    eprintln!(
        "{} edges among {} variables at alpha {}",
        result.edges().len(),
        result.n_variables(),
        cfg.alpha
    );
    Ok(())
}

fn run_bench(a: &BenchArgs) -> anyhow::Result<()> {
    let (cfg, seed) = resolve(&a.common)?;
    let (report, params) = match a.experiment {
        Experiment::Power => (run_power_experiment(&a.n_grid, a.reps, &cfg, seed)?, json!({})),
        Experiment::Fdr => {
            let graph = SyntheticGraphSpec {
                p: a.p,
                density: a.density,
                min_abs: a.min_abs,
                seed,
            };
            (run_fdr_experiment(&graph, &a.n_grid, a.reps, &cfg)?, serde_json::to_value(graph)?)
        }
    };
    let report = if a.no_timing { report.without_timing() } else { report };
    let mut doc = report.to_json();
    doc["n_grid"] = json!(a.n_grid);
    doc["reps"] = json!(a.reps);
    doc["graph"] = params;
    doc["config_echo"] = serde_json::to_value(&cfg)?;
    doc["seed"] = json!(seed);
    emit(a.common.out.as_deref(), &doc)?;
    let csv = a.csv.clone().or_else(|| a.common.out.as_ref().map(|p| p.with_extension("csv")));
    if let Some(p) = csv {
        report.save_csv(&p)?;
    }
    for g in &report.aggregates {
        eprintln!(
            "n={:>6}  power {:.3} ({:.3})  fdr {:.3} ({:.3})  {:.0} ms/run",
            g.n, g.power, g.power_se, g.fdr, g.fdr_se, g.mean_time_ms
        );
    }
    Ok(())
}
