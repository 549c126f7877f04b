use inverse_lab::blocks::Flow;
use inverse_lab::numerics::{Precision, Rng};
use inverse_lab::stability::{recon_error_probe, square_grid, ProbeStatus};
use inverse_lab::training::{DensitySource, NfLoss, Task, CHECKERBOARD_HALF_WIDTH};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use super::{build_flow, final_row, train_and_save};
use crate::config::ExperimentConfig;
use crate::output::{num, Csv, RunDir};

const SAMPLE_STREAM: u64 = 400;
/// Reconstruction error above which a grid cell counts as broken.
pub const BAD_ERROR: f64 = 1e-1;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridSummary {
    pub cells: usize,
    pub nonfinite: usize,
    pub outside_cells: usize,
    /// Cells outside the data box that are non-finite or above [`BAD_ERROR`].
    pub bad_outside: usize,
    pub pct_bad_outside: f64,
    pub bad_total: usize,
    /// Infinite when any cell is non-finite.
    pub max_error: f64,
    pub max_error_inside: f64,
}

fn outside_data(p: &[f64]) -> bool {
    p.iter().any(|v| v.abs() > CHECKERBOARD_HALF_WIDTH)
}

/// Reconstruction error on the configured grid, written row-major with `y` outer.
pub fn recon_grid(flow: &Flow<f64>, cfg: &ExperimentConfig) -> (Csv, GridSummary) {
    let pts = square_grid(cfg.grid_min, cfg.grid_max, cfg.grid_size);
    let r = recon_error_probe(flow, &pts, cfg.precision);
    let mut csv = Csv::new(&["x", "y", "recon_err", "status"]);
    let mut s = GridSummary {
        cells: pts.len(),
        nonfinite: 0,
        outside_cells: 0,
        bad_outside: 0,
        pct_bad_outside: 0.0,
        bad_total: 0,
        max_error: 0.0,
        max_error_inside: 0.0,
    };
    for (p, (&e, &st)) in pts.iter().zip(r.errors.iter().zip(&r.status)) {
        let failed = st != ProbeStatus::Ok || !e.is_finite();
        let bad = failed || e > BAD_ERROR;
        if failed {
            s.nonfinite += 1;
            s.max_error = f64::INFINITY;
        } else {
            s.max_error = s.max_error.max(e);
        }
        s.bad_total += bad as usize;
        if outside_data(p) {
            s.outside_cells += 1;
            s.bad_outside += bad as usize;
        } else {
            s.max_error_inside = if failed { f64::INFINITY } else { s.max_error_inside.max(e) };
        }
        csv.row(&[num(p[0]), num(p[1]), num(e), format!("{st:?}")]);
    }
    s.pct_bad_outside = 100.0 * s.bad_outside as f64 / s.outside_cells.max(1) as f64;
    (csv, s)
}

/// Model log-density in nats; NaN where the forward pass fails.
pub fn log_density(flow: &Flow<f64>, x: &[f64]) -> f64 {
    match flow.eval(x, Precision::F64) {
        Ok((z, logdet)) => -NfLoss::value(&z, logdet),
        Err(_) => f64::NAN,
    }
}

fn density_grid(flow: &Flow<f64>, cfg: &ExperimentConfig) -> Csv {
    let pts = square_grid(cfg.grid_min, cfg.grid_max, cfg.grid_size);
    let dens: Vec<f64> = pts.par_iter().map(|p| log_density(flow, p)).collect();
    let mut csv = Csv::new(&["x", "y", "log_density"]);
    for (p, d) in pts.iter().zip(dens) {
        csv.row(&[num(p[0]), num(p[1]), num(d)]);
    }
    csv
}

fn samples(flow: &Flow<f64>, cfg: &ExperimentConfig) -> Csv {
    let mut rng = Rng::new(cfg.seed, SAMPLE_STREAM);
    let zs: Vec<Vec<f64>> = (0..cfg.samples).map(|_| rng.normal_vec(2)).collect();
    let mut csv = Csv::new(&["x", "y", "finite"]);
    for z in zs {
        match flow.inverse(&z, Precision::F64) {
            Ok(x) if x.iter().all(|v| v.is_finite()) => csv.row(&[num(x[0]), num(x[1]), "1".into()]),
            _ => csv.row(&["".into(), "".into(), "0".into()]),
        }
    }
    csv
}

/// Trains the preset on fresh checkerboard batches and writes `metrics.csv` and `model.json`.
pub fn train_model(cfg: &ExperimentConfig, dir: &mut RunDir) -> anyhow::Result<(Flow<f64>, Value)> {
    let mut flow = build_flow(cfg)?;
    let log = train_and_save(cfg, &mut flow, &Task::Density(DensitySource::Checkerboard), dir)?;
    let last = final_row(&log);
    Ok((flow, json!({ "final": last, "skipped_steps": log.skipped_steps })))
}

pub fn run(cfg: &ExperimentConfig, dir: &mut RunDir) -> anyhow::Result<Value> {
    let (flow, training) = train_model(cfg, dir)?;
    let (recon, grid) = recon_grid(&flow, cfg);
    dir.write("recon_grid.csv", recon.finish())?;
    dir.write("density_grid.csv", density_grid(&flow, cfg).finish())?;
    dir.write("samples.csv", samples(&flow, cfg).finish())?;
    Ok(json!({ "preset": cfg.preset, "training": training, "grid": grid }))
}
