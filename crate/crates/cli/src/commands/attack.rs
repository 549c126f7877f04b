use std::path::Path;

use anyhow::{bail, Context};
use inverse_lab::numerics::Rng;
use inverse_lab::training::{dataset_checkerboard, invertibility_attack, AttackResult};
use rayon::prelude::*;
use serde_json::{json, Value};

use super::{checkerboard, load_flow};
use crate::config::ExperimentConfig;
use crate::output::{num, Csv, RunDir};

const START_STREAM: u64 = 300;

fn read_points(path: &Path) -> anyhow::Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.chars().any(|c| c.is_ascii_alphabetic())) {
            continue;
        }
        let p: Vec<f64> = line.split(',').map(|s| s.trim().parse::<f64>()).collect::<Result<_, _>>().with_context(|| format!("line {} of {}", i + 1, path.display()))?;
        if p.len() != 2 {
            bail!("line {} of {}: expected two coordinates", i + 1, path.display());
        }
        out.push(p);
    }
    Ok(out)
}

pub fn start_points(cfg: &ExperimentConfig) -> anyhow::Result<Vec<Vec<f64>>> {
    match &cfg.start_points {
        Some(p) => read_points(p),
        None => Ok(dataset_checkerboard(&mut Rng::new(cfg.seed, START_STREAM), cfg.n_starts)),
    }
}

pub fn run(cfg: &ExperimentConfig, dir: &mut RunDir) -> anyhow::Result<Value> {
    let (flow, training) = match &cfg.model {
        Some(p) => (load_flow(p)?, Value::Null),
        None => checkerboard::train_model(cfg, dir)?,
    };
    let starts = start_points(cfg)?;
    let ac = cfg.attack_config();
    let results: Vec<AttackResult> = starts.par_iter().map(|x0| invertibility_attack(&flow, x0, &ac)).collect::<Result<_, _>>()?;

    let mut curves = Csv::new(&["point", "iter", "recon_err"]);
    let mut summary = Csv::new(&["point", "x0", "y0", "start", "max", "last", "exploded"]);
    for (i, (x0, r)) in starts.iter().zip(&results).enumerate() {
        for (k, v) in r.curve.iter().enumerate() {
            curves.row(&[i.to_string(), k.to_string(), num(*v)]);
        }
        summary.row(&[i.to_string(), num(x0[0]), num(x0[1]), num(r.start()), num(r.max()), num(r.last()), (r.exploded as u8).to_string()]);
    }
    dir.write("attack_curves.csv", curves.finish())?;
    dir.write("attack_summary.csv", summary.finish())?;
    let amplified = results.iter().filter(|r| r.max() > 0.0 && r.max() >= 10.0 * r.start()).count();
    let exploded = results.iter().filter(|r| r.exploded).count();
    Ok(json!({
        "points": results.len(),
        "amplified_10x": amplified,
        "exploded": exploded,
        "training": training,
    }))
}
