//! One module per subcommand. Each writes its CSV and JSON outputs into a [`RunDir`] and
//! returns a small JSON summary that is also saved as `summary.json`.

mod attack;
mod bounds;
mod checkerboard;
mod grad_angle;
mod regression;
mod toy_chain;

use anyhow::Context;
use inverse_lab::blocks::{serialize, Flow};
use inverse_lab::numerics::Rng;
use inverse_lab::training::{train, Task, TrainLog};
use serde_json::Value;

use crate::config::{Experiment, ExperimentConfig};
use crate::output::RunDir;

/// Stream of the model-initialization RNG; training uses its own streams of `seed`.
pub(crate) const INIT_STREAM: u64 = 100;

pub fn run(cfg: &ExperimentConfig, dir: &mut RunDir) -> anyhow::Result<Value> {
    let summary = match cfg.experiment {
        Experiment::ToyChain => toy_chain::run(cfg, dir)?,
        Experiment::Checkerboard => checkerboard::run(cfg, dir)?,
        Experiment::Regression2d => regression::run(cfg, dir)?,
        Experiment::GradAngle => grad_angle::run(cfg, dir)?,
        Experiment::Bounds => bounds::run(cfg, dir)?,
        Experiment::Attack => attack::run(cfg, dir)?,
    };
    dir.write_json("summary.json", &summary)?;
    Ok(summary)
}

pub(crate) fn build_flow(cfg: &ExperimentConfig) -> anyhow::Result<Flow<f64>> {
    Ok(cfg.flow_spec().build(&mut Rng::new(cfg.seed, INIT_STREAM))?)
}

pub(crate) fn load_flow(path: &std::path::Path) -> anyhow::Result<Flow<f64>> {
    serialize::load(path).with_context(|| format!("loading model {}", path.display()))
}

/// Trains `flow` and writes `metrics.csv` and `model.json`.
pub(crate) fn train_and_save(cfg: &ExperimentConfig, flow: &mut Flow<f64>, task: &Task, dir: &mut RunDir) -> anyhow::Result<TrainLog> {
    train_with(cfg, flow, task, &cfg.train_config(), dir)
}

pub(crate) fn train_with(
    cfg: &ExperimentConfig,
    flow: &mut Flow<f64>,
    task: &Task,
    tc: &inverse_lab::training::TrainConfig,
    dir: &mut RunDir,
) -> anyhow::Result<TrainLog> {
    let log = train(flow, task, tc, cfg.seed)?;
    dir.write("metrics.csv", log.to_csv())?;
    dir.write("model.json", serialize::to_json(flow, serialize::Encoding::Base64))?;
    Ok(log)
}

/// Final metric row as JSON, or null for an empty log.
pub(crate) fn final_row(log: &TrainLog) -> Value {
    log.last().map(|r| serde_json::to_value(r).expect("row serializes")).unwrap_or(Value::Null)
}
