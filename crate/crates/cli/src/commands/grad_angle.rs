use inverse_lab::training::{DensitySource, Task, TrainConfig};
use serde_json::{json, Value};

use super::{build_flow, regression, train_with};
use crate::config::{AngleTask, ExperimentConfig};
use crate::output::{opt, Csv, RunDir};

pub fn run(cfg: &ExperimentConfig, dir: &mut RunDir) -> anyhow::Result<Value> {
    let task = match cfg.angle_task {
        AngleTask::Checkerboard => Task::Density(DensitySource::Checkerboard),
        AngleTask::Regression => regression::task(cfg),
    };
    let tc = TrainConfig { angle: Some(cfg.angle_config()), ..cfg.train_config() };
    let mut flow = build_flow(cfg)?;
    let log = train_with(cfg, &mut flow, &task, &tc, dir)?;
    let mut csv = Csv::new(&["step", "grad_angle", "cond"]);
    for r in &log.rows {
        csv.row(&[r.step.to_string(), opt(r.grad_angle), crate::output::num(r.cond)]);
    }
    dir.write("grad_angle.csv", csv.finish())?;
    let angles: Vec<f64> = log.rows.iter().filter_map(|r| r.grad_angle).collect();
    let nonfinite = angles.iter().any(|a| !a.is_finite());
    let max = angles.iter().copied().filter(|a| a.is_finite()).fold(0.0, f64::max);
    Ok(json!({
        "angle_task": cfg.angle_task,
        "checkpoints": angles.len(),
        "max_finite_angle": max,
        "any_nonfinite": nonfinite,
    }))
}
