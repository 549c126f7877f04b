//! Flat JSON experiment configuration.
//!
//! Resolution order, later wins: built-in defaults of the experiment, the `--config`
//! document, then command-line flags. The resolved document is what gets echoed and hashed.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use inverse_lab::blocks::{FlowSpec, Preset};
use inverse_lab::numerics::Precision;
use inverse_lab::subnet::Activation;
use inverse_lab::training::{AdamConfig, AngleConfig, AttackConfig, FdRegConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    ToyChain,
    Checkerboard,
    Regression2d,
    GradAngle,
    Bounds,
    Attack,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::ToyChain,
        Experiment::Checkerboard,
        Experiment::Regression2d,
        Experiment::GradAngle,
        Experiment::Bounds,
        Experiment::Attack,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::ToyChain => "toy-chain",
            Experiment::Checkerboard => "checkerboard",
            Experiment::Regression2d => "regression2d",
            Experiment::GradAngle => "grad-angle",
            Experiment::Bounds => "bounds",
            Experiment::Attack => "attack",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        Experiment::ALL.into_iter().find(|e| e.name() == s).with_context(|| format!("unknown experiment `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regularizer {
    None,
    Nf,
    Fd,
}

/// Task the gradient-angle experiment trains on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AngleTask {
    Checkerboard,
    Regression,
}

/// Every knob of every experiment; keys irrelevant to a subcommand are ignored by it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    /// Pipeline precision of reconstruction probes, chains and attacks.
    pub precision: Precision,
    /// Pipeline precision of the training passes.
    pub train_precision: Precision,
    pub out: PathBuf,

    pub preset: Preset,
    pub depth: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub actnorm: bool,

    pub steps: usize,
    /// Zero means full batch.
    pub batch_size: usize,
    pub lr: f64,
    pub lr_final: Option<f64>,
    pub weight_decay: f64,
    pub eval_every: usize,
    pub eval_size: usize,
    pub probe_points: usize,
    pub spectral_iters: usize,

    pub regularizer: Regularizer,
    pub nf_coeff: f64,
    pub fd_epsilon: f64,
    pub fd_every: usize,
    pub fd_coefficient: f64,
    pub fd_batch_size: usize,
    pub fd_bidirectional: bool,
    pub fd_directions: usize,

    pub depth_max: usize,
    pub chain_t: f64,
    pub chain_g: f64,

    pub grid_size: usize,
    pub grid_min: f64,
    pub grid_max: f64,
    pub samples: usize,

    pub n_points: usize,
    pub eps_var: f64,

    pub angle_task: AngleTask,
    pub angle_batches: usize,
    pub angle_batch_size: usize,

    pub domain_min: f64,
    pub domain_max: f64,
    pub falsify_samples: usize,
    /// Standard deviation of the Gaussian perturbation applied to a freshly built flow.
    pub param_noise: f64,

    /// Trained flow to load instead of building (bounds) or training (attack) one.
    pub model: Option<PathBuf>,
    /// CSV of `x,y` start points; drawn from the checkerboard when absent.
    pub start_points: Option<PathBuf>,
    pub n_starts: usize,
    pub attack_radius: f64,
    pub attack_step: f64,
    pub attack_iterations: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: Experiment::Checkerboard,
            seed: 0,
            precision: Precision::F32,
            train_precision: Precision::F64,
            out: PathBuf::from("out"),
            preset: Preset::AffineSigmoid,
            depth: 8,
            hidden: vec![32, 32],
            activation: Activation::Swish,
            actnorm: false,
            steps: 3000,
            batch_size: 256,
            lr: 1e-3,
            lr_final: None,
            weight_decay: 1e-5,
            eval_every: 500,
            eval_size: 1024,
            probe_points: 64,
            spectral_iters: 5,
            regularizer: Regularizer::None,
            nf_coeff: 1e-8,
            fd_epsilon: 0.1,
            fd_every: 1,
            fd_coefficient: 1e-12,
            fd_batch_size: 16,
            fd_bidirectional: true,
            fd_directions: 1,
            depth_max: 100,
            chain_t: 0.123456789,
            chain_g: 0.1,
            grid_size: 200,
            grid_min: -6.0,
            grid_max: 6.0,
            samples: 2000,
            n_points: 64,
            eps_var: 1e-24,
            angle_task: AngleTask::Regression,
            angle_batches: 40,
            angle_batch_size: 64,
            domain_min: -4.0,
            domain_max: 4.0,
            falsify_samples: 1000,
            param_noise: 0.1,
            model: None,
            start_points: None,
            n_starts: 20,
            attack_radius: 0.1,
            attack_step: 5e-4,
            attack_iterations: 200,
        }
    }
}

/// Desk-scale defaults per experiment, before any user input.
pub fn defaults_for(experiment: Experiment) -> ExperimentConfig {
    let base = ExperimentConfig { experiment, ..Default::default() };
    match experiment {
        Experiment::Regression2d => ExperimentConfig {
            depth: 4,
            hidden: vec![16, 16],
            activation: Activation::Relu,
            actnorm: true,
            steps: 30_000,
            batch_size: 0,
            lr_final: Some(1e-5),
            weight_decay: 0.0,
            eval_every: 1000,
            ..base
        },
        Experiment::GradAngle => ExperimentConfig {
            depth: 4,
            hidden: vec![16, 16],
            activation: Activation::Relu,
            actnorm: true,
            steps: 10_000,
            batch_size: 0,
            weight_decay: 0.0,
            eval_every: 1000,
            ..base
        },
        Experiment::Bounds => ExperimentConfig { depth: 4, hidden: vec![16, 16], ..base },
        Experiment::Checkerboard | Experiment::Attack => ExperimentConfig { depth: 16, ..base },
        _ => base,
    }
}

/// Overrides given on the command line; `None` leaves the key alone.
#[derive(Clone, Debug, Default)]
pub struct FlagOverrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub precision: Option<Precision>,
    pub preset: Option<String>,
}

impl FlagOverrides {
    fn apply(&self, map: &mut Map<String, Value>) {
        if let Some(s) = self.seed {
            map.insert("seed".into(), s.into());
        }
        if let Some(o) = &self.out {
            map.insert("out".into(), o.to_string_lossy().into_owned().into());
        }
        if let Some(p) = self.precision {
            map.insert("precision".into(), p.name().into());
        }
        if let Some(p) = &self.preset {
            map.insert("preset".into(), p.clone().into());
        }
    }
}

fn as_object(v: Value, what: &str) -> anyhow::Result<Map<String, Value>> {
    match v {
        Value::Object(m) => Ok(m),
        _ => bail!("{what} must be a flat JSON object"),
    }
}

/// Layers `layers` over the experiment defaults; each layer is a flat JSON object.
pub fn resolve(experiment: Experiment, layers: &[Map<String, Value>], flags: &FlagOverrides) -> anyhow::Result<ExperimentConfig> {
    let mut map = as_object(serde_json::to_value(defaults_for(experiment))?, "defaults")?;
    for layer in layers {
        if let Some(v) = layer.get("experiment") {
            if v.as_str() != Some(experiment.name()) {
                bail!("config is for experiment {v}, not `{experiment}`");
            }
        }
        for (k, v) in layer {
            if v.is_object() {
                bail!("config key `{k}` is nested; the config format is flat");
            }
            map.insert(k.clone(), v.clone());
        }
    }
    flags.apply(&mut map);
    let cfg: ExperimentConfig = serde_json::from_value(Value::Object(map)).context("invalid config")?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads a config document; returns the raw bytes for the verbatim echo.
pub fn read_config(path: &Path) -> anyhow::Result<(Vec<u8>, Map<String, Value>)> {
    let bytes = std::fs::read(path).with_context(|| format!("reading config {}", path.display()))?;
    let v: Value = serde_json::from_slice(&bytes).with_context(|| format!("parsing config {}", path.display()))?;
    Ok((bytes, as_object(v, "config")?))
}

impl ExperimentConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.depth == 0 || self.hidden.contains(&0) {
            bail!("depth and hidden widths must be positive");
        }
        if self.grid_size < 2 || !(self.grid_min < self.grid_max) {
            bail!("grid needs at least 2 points per axis and grid_min < grid_max");
        }
        if !(self.domain_min < self.domain_max) {
            bail!("domain_min must be below domain_max");
        }
        if self.n_points == 0 || self.n_starts == 0 {
            bail!("n_points and n_starts must be positive");
        }
        self.train_config().validate()?;
        self.attack_config().validate()?;
        Ok(())
    }

    pub fn flow_spec(&self) -> FlowSpec {
        FlowSpec { hidden: self.hidden.clone(), activation: self.activation, actnorm: self.actnorm, ..FlowSpec::new(self.preset, 2, self.depth) }
    }

    pub fn fd_config(&self) -> FdRegConfig {
        FdRegConfig {
            epsilon: self.fd_epsilon,
            directions_per_example: self.fd_directions,
            bidirectional: self.fd_bidirectional,
            apply_every_k: self.fd_every,
            coefficient: self.fd_coefficient,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            adam: AdamConfig { lr: self.lr, weight_decay: self.weight_decay, ..Default::default() },
            lr_final: self.lr_final,
            precision: self.train_precision,
            fd: (self.regularizer == Regularizer::Fd).then(|| self.fd_config()),
            fd_batch_size: self.fd_batch_size,
            eval_every: self.eval_every,
            eval_size: self.eval_size,
            probe_points: self.probe_points,
            probe_precision: self.precision,
            angle: None,
            spectral_iters: self.spectral_iters,
        }
    }

    pub fn angle_config(&self) -> AngleConfig {
        AngleConfig { batches: self.angle_batches, batch_size: self.angle_batch_size, precision: self.precision }
    }

    pub fn attack_config(&self) -> AttackConfig {
        AttackConfig { radius: self.attack_radius, step: self.attack_step, iterations: self.attack_iterations, precision: self.precision }
    }

    /// NF coefficient of the regression loss.
    pub fn nf_coeff_effective(&self) -> f64 {
        if self.regularizer == Regularizer::Nf {
            self.nf_coeff
        } else {
            0.0
        }
    }

    /// Canonical serialization: field order is fixed by the struct.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// First 12 hex digits of the SHA-256 of the canonical form, excluding `out`.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        let digest = Sha256::digest(c.canonical_json().as_bytes());
        hex::encode(&digest[..6])
    }
}
