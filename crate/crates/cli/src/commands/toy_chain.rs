use inverse_lab::blocks::{additive_chain, affine_chain, Flow};
use inverse_lab::stability::{jacobian_report, recon_error_probe, square_grid};
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::output::{num, Csv, RunDir};

pub const HEADER: [&str; 9] =
    ["depth", "kind", "recon_err_mean", "recon_err_max", "nonfinite", "sigma_min", "sigma_max", "cond", "logdet"];

/// Point at which the spectrum is reported; both chains are affine so it is the same everywhere.
const SPECTRUM_POINT: [f64; 2] = [0.5, 0.5];

pub struct ChainRow {
    pub depth: usize,
    pub kind: &'static str,
    pub recon_mean: f64,
    pub recon_max: f64,
    pub nonfinite: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub cond: f64,
    pub logdet: f64,
}

fn measure(kind: &'static str, depth: usize, flow: &Flow<f64>, probes: &[Vec<f64>], cfg: &ExperimentConfig) -> ChainRow {
    let rep = jacobian_report(flow, &SPECTRUM_POINT);
    let r = recon_error_probe(flow, probes, cfg.precision);
    let nonfinite = r.count_failed();
    ChainRow {
        depth,
        kind,
        recon_mean: r.mean_finite(),
        recon_max: if nonfinite > 0 { f64::INFINITY } else { r.max_finite() },
        nonfinite,
        sigma_min: rep.sigma_min(),
        sigma_max: rep.sigma_max(),
        cond: rep.cond_number,
        logdet: rep.log_abs_det,
    }
}

pub fn rows(cfg: &ExperimentConfig) -> Vec<ChainRow> {
    let probes = square_grid(-1.0, 1.0, 4);
    let mut out = Vec::with_capacity(2 * cfg.depth_max);
    for k in 1..=cfg.depth_max {
        out.push(measure("additive", k, &additive_chain(k, cfg.chain_t), &probes, cfg));
        out.push(measure("affine", k, &affine_chain(k, cfg.chain_t, cfg.chain_g), &probes, cfg));
    }
    out
}

pub fn run(cfg: &ExperimentConfig, dir: &mut RunDir) -> anyhow::Result<Value> {
    let rows = rows(cfg);
    let mut csv = Csv::new(&HEADER);
    for r in &rows {
        csv.row(&[
            r.depth.to_string(),
            r.kind.to_string(),
            num(r.recon_mean),
            num(r.recon_max),
            r.nonfinite.to_string(),
            num(r.sigma_min),
            num(r.sigma_max),
            num(r.cond),
            num(r.logdet),
        ]);
    }
    dir.write("toy_chain.csv", csv.finish())?;
    // first depth at which the affine chain is numerically broken
    let broken = rows.iter().find(|r| r.kind == "affine" && (r.nonfinite > 0 || r.recon_max > 1e-1)).map(|r| r.depth);
    let additive_max = rows.iter().filter(|r| r.kind == "additive").map(|r| r.recon_max).fold(0.0, f64::max);
    Ok(json!({
        "precision": cfg.precision,
        "depth_max": cfg.depth_max,
        "affine_broken_at_depth": broken,
        "additive_max_recon_err": additive_max,
    }))
}
