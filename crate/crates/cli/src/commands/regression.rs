use inverse_lab::numerics::Rng;
use inverse_lab::training::{dataset_regression2d, Task};
use serde_json::{json, Value};

use super::{build_flow, final_row, train_and_save};
use crate::config::ExperimentConfig;
use crate::output::RunDir;

const DATA_STREAM: u64 = 200;

pub fn task(cfg: &ExperimentConfig) -> Task {
    let data = dataset_regression2d(&mut Rng::new(cfg.seed, DATA_STREAM), cfg.n_points, cfg.eps_var);
    Task::Regression { data, nf_coeff: cfg.nf_coeff_effective() }
}

pub fn run(cfg: &ExperimentConfig, dir: &mut RunDir) -> anyhow::Result<Value> {
    let mut flow = build_flow(cfg)?;
    let log = train_and_save(cfg, &mut flow, &task(cfg), dir)?;
    Ok(json!({
        "regularizer": cfg.regularizer,
        "final": final_row(&log),
        "skipped_steps": log.skipped_steps,
        "fd_failures": log.fd_failures,
        "train_seconds": log.wall_seconds,
    }))
}
