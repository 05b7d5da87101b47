//! Batch command-line front end.
//!
//! Exit codes: 0 ok, 1 IO, 2 schema, 3 validation/parse/config, 4 failed
//! pipeline stage, 5 missing runs.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::correlations::BaseModelKind;
use crate::dataset::{
    filter_do_counted, fit_scaler, load_csv, shuffle_split, synth_generate, write_csv, DatasetSplit, FilterCriteria,
    ScalerScope, BWR_PRESSURE_RANGE,
};
use crate::error::{Error, Result};
use crate::evalsuite::export::{read_json, read_parity_csv, write_json, write_parity_csv};
use crate::hybrid::{
    comparison_csv, dataset_hash, run_configs, run_experiment, suite_configs, write_run, ComparisonRow,
    ExperimentConfig, HbmCache, RunManifest, SuiteManifest,
};

pub const EXIT_IO: i32 = 1;
pub const EXIT_SCHEMA: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_STAGE: i32 = 4;
pub const EXIT_MISSING_RUNS: i32 = 5;

const DEFAULT_OUT: &str = "chf_out";

#[derive(Debug, Parser)]
#[command(name = "chf-hybrid", version, about = "Hybrid physics + ML critical heat flux prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter a raw dataset, shuffle-split it and fit the feature scaler.
    Prepare(PrepareArgs),
    /// Run one experiment described by a config file.
    Train(TrainArgs),
    /// Run every method × base × scenario combination.
    Suite(SuiteArgs),
    /// Build the comparison table from finished runs.
    Report(ReportArgs),
    /// Generate a synthetic dataset from a base correlation.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory [env: CHF_HYBRID_OUT, default chf_out]
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.8, 0.1, 0.1])]
    pub fractions: Vec<f64>,
    #[arg(long, default_value = "full")]
    pub scaler_scope: ScalerScope,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also render SVG plots.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct SuiteArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: logical cores).
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub runs: PathBuf,
    /// Also export parity rows restricted to 6.9-7.2 MPa.
    #[arg(long)]
    pub bwr_filter: bool,
    /// Where to write the report (default: the runs directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "biasi")]
    pub base: String,
    /// Relative std of the multiplicative noise.
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long)]
    pub out: PathBuf,
}

/// TOML run description. Relative paths resolve against the file's directory
/// and are stored absolute, so a copied config replays from anywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub dataset: DatasetSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub experiment: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// Filtered CSV written by `prepare`.
    pub records: PathBuf,
    /// Split manifest written by `prepare`.
    pub split: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    pub workers: Option<usize>,
    pub svg: bool,
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let root = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                let joined = root.join(&*p);
                *p = std::path::absolute(&joined).unwrap_or(joined);
            }
        };
        resolve(&mut cfg.dataset.records);
        resolve(&mut cfg.dataset.split);
        if let Some(d) = cfg.output.dir.as_mut() {
            resolve(d);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => EXIT_IO,
        Error::Schema(_) | Error::Csv(_) => EXIT_SCHEMA,
        Error::Parse { .. }
        | Error::Range { .. }
        | Error::Config(_)
        | Error::Precondition(_)
        | Error::Size(_)
        | Error::Shape(_)
        | Error::DegenerateFeature(_)
        | Error::Json(_) => EXIT_VALIDATION,
        _ => EXIT_STAGE,
    }
}

fn output_dir(flag: Option<PathBuf>, config: Option<&PathBuf>) -> PathBuf {
    flag.or_else(|| config.cloned())
        .or_else(|| std::env::var_os("CHF_HYBRID_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn cmd_prepare(args: &PrepareArgs) -> Result<()> {
    let raw = load_csv(&args.input)?;
    let criteria = FilterCriteria::default();
    criteria.validate()?;
    println!("Dryout filter criteria:");
    for line in criteria.describe() {
        println!("  {line}");
        log::info!("criterion {line}");
    }
    let (records, counts) = filter_do_counted(&raw, &criteria);
    println!("Records read: {}", raw.len());
    println!("  removed by D: {}", counts.diameter);
    println!("  removed by L: {}", counts.heated_length);
    println!("  removed by P: {}", counts.pressure);
    println!("  removed by G: {}", counts.mass_flux);
    println!("  removed by x_e: {}", counts.outlet_quality);
    println!("Records kept: {} (removed {})", records.len(), counts.total_removed);

    let f = &args.fractions;
    let split = shuffle_split(&records, (f[0], f[1], f[2]), args.seed)?;
    let scaler = fit_scaler(&records, args.scaler_scope, Some(&split))?;
    let (tr, va, te) = split.sizes();
    println!("Split (seed {}): train {tr}, val {va}, test {te}", args.seed);

    let out = output_dir(args.out.clone(), None);
    create_dir(&out)?;
    write_csv(&out.join("records.csv"), &records)?;
    split.save(&out.join("split.json"))?;
    scaler.save(&out.join("scaler.json"))?;
    write_json(&out.join("filter_counts.json"), &counts)?;
    println!("Wrote {}", out.display());
    Ok(())
}

fn load_dataset(cfg: &RunConfigFile) -> Result<(Vec<crate::correlations::ChfRecord>, DatasetSplit)> {
    let records = load_csv(&cfg.dataset.records)?;
    let split = DatasetSplit::load(&cfg.dataset.split)?;
    Ok((records, split))
}

/// Trains one run; returns the directory the artifacts went to.
pub fn cmd_train(args: &TrainArgs) -> Result<PathBuf> {
    let cfg = RunConfigFile::load(&args.config)?;
    let (records, split) = load_dataset(&cfg)?;
    let exp = &cfg.experiment;
    let out = output_dir(args.out.clone(), cfg.output.dir.as_ref()).join(exp.run_id());
    let cache = HbmCache::new();
    let output = run_experiment(exp, &records, &split, &cache)?;
    write_run(&output, &out, args.svg || cfg.output.svg)?;
    write_text(&out.join("config.toml"), &cfg.to_toml()?)?;
    let m = &output.manifest.metrics;
    println!(
        "{}: mu_error {:.3}%  rrmse {:.3}%  r2 {:.4}  n_train {}",
        output.manifest.run_id, m.mu_error, m.rrmse, m.r2, output.manifest.n_train
    );
    println!("Wrote {}", out.display());
    Ok(out)
}

/// Runs the 18-configuration suite; returns the number of failed runs.
pub fn cmd_suite(args: &SuiteArgs) -> Result<usize> {
    let cfg = RunConfigFile::load(&args.config)?;
    let (records, split) = load_dataset(&cfg)?;
    let out = output_dir(args.out.clone(), cfg.output.dir.as_ref());
    create_dir(&out)?;
    let workers = args
        .workers
        .or(cfg.output.workers)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let configs = suite_configs(&cfg.experiment);
    let cache = HbmCache::new();
    let suite = run_configs(&configs, &records, &split, &cache, workers)?;
    let mut failed = 0;
    let mut rows = Vec::new();
    for (c, (id, r)) in configs.iter().zip(&suite.runs) {
        match r {
            Ok(o) => {
                let dir = out.join(id);
                write_run(o, &dir, args.svg || cfg.output.svg)?;
                let run_cfg = RunConfigFile {
                    experiment: c.clone(),
                    ..cfg.clone()
                };
                write_text(&dir.join("config.toml"), &run_cfg.to_toml()?)?;
                rows.push(ComparisonRow {
                    method: c.method.to_string(),
                    base: c.base.to_string(),
                    scenario: c.scenario.to_string(),
                    metrics: o.manifest.metrics,
                });
            }
            Err(e) => {
                eprintln!("run {id} failed: {e}");
                failed += 1;
            }
        }
    }
    write_json(&out.join("suite_manifest.json"), &suite.manifest)?;
    write_text(&out.join("comparison.csv"), &comparison_csv(&rows))?;
    println!("{} runs, {} failed; wrote {}", configs.len(), failed, out.display());
    Ok(failed)
}

#[derive(Debug)]
pub struct ReportOutcome {
    pub rows: usize,
    pub missing: Vec<String>,
}

pub fn cmd_report(args: &ReportArgs) -> Result<ReportOutcome> {
    let runs = &args.runs;
    if !runs.is_dir() {
        return Err(Error::io(runs, std::io::Error::new(std::io::ErrorKind::NotFound, "runs directory not found")));
    }
    let out = args.out.clone().unwrap_or_else(|| runs.clone());
    create_dir(&out)?;

    // Run ids the suite expected; a lone run directory expects only itself.
    let suite_path = runs.join("suite_manifest.json");
    let expected: Option<Vec<String>> = if suite_path.exists() {
        let s: SuiteManifest = read_json(&suite_path)?;
        Some(s.runs.into_iter().map(|r| r.run_id).collect())
    } else {
        None
    };

    let mut dirs = Vec::new();
    if runs.join("manifest.json").exists() {
        dirs.push(runs.clone());
    } else {
        let entries = fs::read_dir(runs).map_err(|e| Error::io(runs, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(runs, e))?.path();
            if path.join("manifest.json").exists() {
                dirs.push(path);
            }
        }
    }
    let mut manifests: Vec<(PathBuf, RunManifest)> = Vec::new();
    for d in dirs {
        let m: RunManifest = read_json(&d.join("manifest.json"))?;
        manifests.push((d, m));
    }
    let order = |m: &RunManifest| (m.method, m.scenario, m.base);
    manifests.sort_by_key(|(_, m)| order(m));

    let mut missing = Vec::new();
    if let Some(ids) = &expected {
        for id in ids {
            if !manifests.iter().any(|(_, m)| &m.run_id == id) {
                missing.push(id.clone());
            }
        }
    }
    if manifests.is_empty() && missing.is_empty() {
        missing.push(format!("{} (no runs found)", runs.display()));
    }

    let rows: Vec<ComparisonRow> = manifests
        .iter()
        .map(|(_, m)| ComparisonRow {
            method: m.method.to_string(),
            base: m.base.to_string(),
            scenario: m.scenario.to_string(),
            metrics: m.metrics,
        })
        .collect();
    let table = comparison_csv(&rows);
    write_text(&out.join("comparison.csv"), &table)?;
    print!("{table}");

    if args.bwr_filter {
        let bwr = out.join("bwr");
        create_dir(&bwr)?;
        let (lo, hi) = BWR_PRESSURE_RANGE;
        for (d, m) in &manifests {
            let parity = read_parity_csv(&d.join("parity.csv"), m.config.error_band_pct)?;
            let kept = parity.filter_pressure(lo, hi);
            println!("{}: {} of {} parity points in {lo}-{hi} MPa", m.run_id, kept.rows.len(), parity.rows.len());
            write_parity_csv(&bwr.join(format!("{}_parity.csv", m.run_id)), &kept)?;
        }
    }
    for id in &missing {
        eprintln!("missing run: {id}");
    }
    Ok(ReportOutcome {
        rows: rows.len(),
        missing,
    })
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let base: BaseModelKind = args.base.parse()?;
    let records = synth_generate(args.n, args.seed, base, args.noise)?;
    if let Some(dir) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_csv(&args.out, &records)?;
    println!("Wrote {} records to {} (sha256 {})", records.len(), args.out.display(), dataset_hash(&records));
    Ok(())
}

fn report_error(e: &Error) -> i32 {
    eprintln!("error: {e}");
    exit_code(e)
}

pub fn run(cli: Cli) -> i32 {
    match cli.command {
        Command::Prepare(a) => cmd_prepare(&a).map_or_else(|e| report_error(&e), |_| 0),
        Command::Train(a) => cmd_train(&a).map_or_else(|e| report_error(&e), |_| 0),
        Command::Suite(a) => match cmd_suite(&a) {
            Ok(0) => 0,
            Ok(_) => EXIT_STAGE,
            Err(e) => report_error(&e),
        },
        Command::Report(a) => match cmd_report(&a) {
            Ok(r) if r.missing.is_empty() => 0,
            Ok(_) => EXIT_MISSING_RUNS,
            Err(e) => report_error(&e),
        },
        Command::Synth(a) => cmd_synth(&a).map_or_else(|e| report_error(&e), |_| 0),
    }
}

pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    run(Cli::parse())
}
