//! Command-line experiment runner.
//!
//! Every subcommand resolves a flat JSON config (defaults, then `--config`, then flags),
//! writes CSV/JSON outputs plus `resolved_config.json` and `manifest.json` into its output
//! directory, and exits 0 whatever the experiment finds. Errors are reserved for bad
//! configs and I/O.

// NaN-aware comparisons are written negated on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use inverse_lab::numerics::Precision;
use rayon::prelude::*;
use serde_json::{Map, Value};

use config::{read_config, resolve, Experiment, ExperimentConfig, FlagOverrides};
use output::{Csv, RunDir};

#[derive(Parser, Debug)]
#[command(name = "inverse-lab", version, about = "Stability experiments on invertible neural networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Spectra and reconstruction error of constructed additive and affine chains.
    ToyChain(CommonArgs),
    /// Density training on the checkerboard, then reconstruction and density grids.
    Checkerboard(CommonArgs),
    /// Degenerate 2D regression with an optional NF or FD regularizer.
    Regression2d(CommonArgs),
    /// Angle between standard and memory-saving gradients during training.
    GradAngle(CommonArgs),
    /// Bi-Lipschitz bound report with a sampling falsification check.
    Bounds(CommonArgs),
    /// Projected sign-gradient attack on the reconstruction error.
    Attack(CommonArgs),
}

impl Command {
    fn parts(&self) -> (Experiment, &CommonArgs) {
        match self {
            Command::ToyChain(a) => (Experiment::ToyChain, a),
            Command::Checkerboard(a) => (Experiment::Checkerboard, a),
            Command::Regression2d(a) => (Experiment::Regression2d, a),
            Command::GradAngle(a) => (Experiment::GradAngle, a),
            Command::Bounds(a) => (Experiment::Bounds, a),
            Command::Attack(a) => (Experiment::Attack, a),
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// Flat JSON config; its keys override the experiment defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Pipeline precision of reconstructions (f32 or f64).
    #[arg(long)]
    pub precision: Option<Precision>,
    /// additive, affine_sigmoid, affine_mod_scaling or residual_<coeff>.
    #[arg(long)]
    pub preset: Option<String>,
    /// JSON array of flat override objects, one run per entry in `<out>/<config hash>/`.
    #[arg(long)]
    pub sweep: Option<PathBuf>,
}

impl CommonArgs {
    fn flags(&self) -> FlagOverrides {
        FlagOverrides { seed: self.seed, out: self.out.clone(), precision: self.precision, preset: self.preset.clone() }
    }
}

/// Outcome of one run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub dir: PathBuf,
    pub summary: Value,
    pub files: Vec<String>,
}

/// Runs one fully resolved config into `cfg.out`.
pub fn run_config(cfg: &ExperimentConfig, raw: Option<&[u8]>) -> anyhow::Result<RunReport> {
    let start = Instant::now();
    let mut dir = RunDir::create(&cfg.out)?;
    dir.echo_config(raw, cfg)?;
    let summary = commands::run(cfg, &mut dir)?;
    let path = dir.path().to_path_buf();
    let files = dir.finish(cfg, start.elapsed().as_secs_f64())?;
    Ok(RunReport { config: cfg.clone(), dir: path, summary, files })
}

/// Runs every sweep entry in parallel, each in `<out>/<hash>/`, and writes `sweep.csv`
/// sorted by hash.
pub fn run_sweep(base: &ExperimentConfig, entries: &[Map<String, Value>], base_layers: &[Map<String, Value>], flags: &FlagOverrides) -> anyhow::Result<Vec<RunReport>> {
    let root = base.out.clone();
    let mut cfgs = Vec::with_capacity(entries.len());
    for e in entries {
        let mut layers = base_layers.to_vec();
        layers.push(e.clone());
        let mut c = resolve(base.experiment, &layers, &FlagOverrides { out: None, ..flags.clone() })?;
        c.out = root.join(c.hash());
        cfgs.push(c);
    }
    cfgs.sort_by_key(|c| c.hash());
    cfgs.dedup_by_key(|c| c.hash());
    let mut reports: Vec<RunReport> = cfgs.par_iter().map(|c| run_config(c, None)).collect::<anyhow::Result<_>>()?;
    reports.sort_by_key(|r| r.config.hash());
    let mut csv = Csv::new(&["config_hash", "experiment", "seed", "dir"]);
    for r in &reports {
        let rel = r.dir.strip_prefix(&root).unwrap_or(&r.dir);
        csv.row(&[r.config.hash(), r.config.experiment.to_string(), r.config.seed.to_string(), rel.display().to_string()]);
    }
    std::fs::create_dir_all(&root)?;
    std::fs::write(root.join("sweep.csv"), csv.finish()).with_context(|| format!("writing sweep index in {}", root.display()))?;
    Ok(reports)
}

pub fn run(cli: &Cli) -> anyhow::Result<Vec<RunReport>> {
    let (experiment, args) = cli.command.parts();
    let flags = args.flags();
    let (raw, layers) = match &args.config {
        Some(p) => {
            let (raw, map) = read_config(p)?;
            (Some(raw), vec![map])
        }
        None => (None, Vec::new()),
    };
    let cfg = resolve(experiment, &layers, &flags)?;
    match &args.sweep {
        Some(p) => {
            let text = std::fs::read(p).with_context(|| format!("reading sweep {}", p.display()))?;
            let v: Value = serde_json::from_slice(&text).with_context(|| format!("parsing sweep {}", p.display()))?;
            let entries = match v {
                Value::Array(items) => items
                    .into_iter()
                    .map(|i| match i {
                        Value::Object(m) => Ok(m),
                        _ => anyhow::bail!("sweep entries must be flat JSON objects"),
                    })
                    .collect::<anyhow::Result<Vec<_>>>()?,
                _ => anyhow::bail!("sweep file must hold a JSON array"),
            };
            run_sweep(&cfg, &entries, &layers, &flags)
        }
        None => Ok(vec![run_config(&cfg, raw.as_deref())?]),
    }
}
