use inverse_lab::blocks::{Block, Flow};
use inverse_lab::numerics::Rng;
use inverse_lab::stability::{falsify, flow_bound, Domain};
use serde_json::{json, Value};

use super::{build_flow, load_flow};
use crate::config::ExperimentConfig;
use crate::output::{num, Csv, RunDir};

const NOISE_STREAM: u64 = 500;
const FALSIFY_STREAM: u64 = 501;

/// Built flows start as the identity; perturbing every parameter gives the bound something to
/// bite on. Residual blocks are re-normalized so they stay contractive.
fn perturbed(mut flow: Flow<f64>, sd: f64, rng: &mut Rng) -> Flow<f64> {
    let p: Vec<f64> = flow.params().into_iter().map(|v| v + sd * rng.normal()).collect();
    flow.set_params(&p);
    for b in flow.blocks_mut() {
        if let Block::Residual(r) = b {
            r.g = r.g.spectral_normalize(r.coeff);
        }
    }
    flow
}

pub fn run(cfg: &ExperimentConfig, dir: &mut RunDir) -> anyhow::Result<Value> {
    let flow = match &cfg.model {
        Some(p) => load_flow(p)?,
        None => perturbed(build_flow(cfg)?, cfg.param_noise, &mut Rng::new(cfg.seed, NOISE_STREAM)),
    };
    let domain = Domain::from_forward_image(&flow, cfg.domain_min, cfg.domain_max)?;
    let bound = flow_bound(&flow, Some(&domain));
    let report = falsify(&flow, &bound, &domain, cfg.falsify_samples, &mut Rng::new(cfg.seed, FALSIFY_STREAM));
    let mut csv = Csv::new(&["block", "kind", "lip_forward", "lip_inverse", "global"]);
    for b in &bound.per_block {
        csv.row(&[b.index.to_string(), b.kind.clone(), num(b.forward), num(b.inverse), (b.global as u8).to_string()]);
    }
    dir.write("bounds.csv", csv.finish())?;
    dir.write_json("bounds.json", &bound)?;
    dir.write_json("falsification.json", &report)?;
    Ok(json!({
        "lip_forward_upper": bound.lip_forward_upper,
        "lip_inverse_upper": bound.lip_inverse_upper,
        "duality_holds": bound.duality_holds(),
        "falsification_passed": report.passed(),
        "violations": report.violations,
        "samples": report.samples,
    }))
}
