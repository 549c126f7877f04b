use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::data::{dataset_checkerboard, RegressionData};
use super::fd::{fd_batch, fd_penalty_with_grad, FdRegConfig};
use super::loss::{mean_loss, NfLoss, RegressionLoss};
use crate::blocks::{Block, Flow};
use crate::error::{Error, Result};
use crate::gradients::{grad_angle, OutputLoss};
use crate::numerics::scalar::cast_vec;
use crate::numerics::{has_nonfinite, Precision, Rng, Scalar};
use crate::stability::{jacobian_report, recon_error_probe};

/// Fixed CSV header of the metric log.
pub const METRIC_HEADER: &str =
    "step,loss,bpd,mse,recon_err_mean,recon_err_max,pct_nonfinite,cond,min_sv,max_sv,fd_penalty,grad_angle";

/// Where density-estimation batches come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DensitySource {
    /// Fresh checkerboard samples every step.
    Checkerboard,
    /// Minibatches drawn with replacement from a fixed set.
    Points(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Task {
    Density(DensitySource),
    /// Full-batch or minibatch regression with loss `mse + nf_coeff · NfLoss`.
    Regression { data: RegressionData, nf_coeff: f64 },
}

impl Task {
    fn is_density(&self) -> bool {
        matches!(self, Task::Density(_))
    }
}

/// Gradient-angle probe run at every evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AngleConfig {
    pub batches: usize,
    pub batch_size: usize,
    pub precision: Precision,
}

impl Default for AngleConfig {
    fn default() -> Self {
        AngleConfig { batches: 40, batch_size: 64, precision: Precision::F32 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    /// Zero means full batch (fixed datasets only).
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Cosine-anneal the learning rate from `adam.lr` to this value over the run.
    pub lr_final: Option<f64>,
    /// Pipeline precision of the training passes.
    pub precision: Precision,
    pub fd: Option<FdRegConfig>,
    /// Examples per FD-regularized step; zero means the whole batch.
    pub fd_batch_size: usize,
    pub eval_every: usize,
    /// Points for the loss estimate of density tasks.
    pub eval_size: usize,
    /// Points for reconstruction and Jacobian metrics.
    pub probe_points: usize,
    pub probe_precision: Precision,
    pub angle: Option<AngleConfig>,
    /// Power iterations per step when re-normalizing residual blocks.
    pub spectral_iters: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 5000,
            batch_size: 256,
            adam: AdamConfig { lr: 1e-3, ..Default::default() },
            lr_final: None,
            precision: Precision::F64,
            fd: None,
            fd_batch_size: 0,
            eval_every: 500,
            eval_size: 1024,
            probe_points: 64,
            probe_precision: Precision::F32,
            angle: None,
            spectral_iters: 5,
        }
    }
}

impl TrainConfig {
    /// Learning rate of the update at `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        match self.lr_final {
            None => self.adam.lr,
            Some(end) => {
                let frac = step as f64 / self.steps.max(1) as f64;
                end + 0.5 * (self.adam.lr - end) * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eval_every == 0 {
            return Err(Error::InvalidConfig("eval_every must be at least 1".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::InvalidConfig(format!("learning rate must be positive, got {}", self.adam.lr)));
        }
        if let Some(lr) = self.lr_final {
            if !(lr >= 0.0 && lr <= self.adam.lr) {
                return Err(Error::InvalidConfig(format!("lr_final must lie in [0, lr], got {lr}")));
            }
        }
        if let Some(fd) = &self.fd {
            fd.validate()?;
        }
        if let Some(a) = &self.angle {
            if a.batches == 0 || a.batch_size == 0 {
                return Err(Error::InvalidConfig("angle batches and batch size must be positive".into()));
            }
        }
        Ok(())
    }
}

/// One evaluation. Optional fields are empty in the CSV when absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: usize,
    pub loss: f64,
    pub bpd: Option<f64>,
    pub mse: Option<f64>,
    pub recon_err_mean: f64,
    pub recon_err_max: f64,
    pub pct_nonfinite: f64,
    /// Worst condition number over the probe points.
    pub cond: f64,
    pub min_sv: f64,
    pub max_sv: f64,
    pub fd_penalty: Option<f64>,
    pub grad_angle: Option<f64>,
}

fn field(v: f64) -> String {
    format!("{v:e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(field).unwrap_or_default()
}

impl MetricRow {
    pub fn csv_line(&self) -> String {
        [
            self.step.to_string(),
            field(self.loss),
            opt(self.bpd),
            opt(self.mse),
            field(self.recon_err_mean),
            field(self.recon_err_max),
            field(self.pct_nonfinite),
            field(self.cond),
            field(self.min_sv),
            field(self.max_sv),
            opt(self.fd_penalty),
            opt(self.grad_angle),
        ]
        .join(",")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<MetricRow>,
    /// Steps whose loss or gradient was non-finite; parameters were left unchanged.
    pub skipped_steps: usize,
    /// Regularized steps where the FD penalty itself was non-finite.
    pub fd_failures: usize,
    /// Excluded from equality: differs between otherwise identical runs.
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(64 * (self.rows.len() + 1));
        s.push_str(METRIC_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.csv_line());
        }
        s
    }

    pub fn last(&self) -> Option<&MetricRow> {
        self.rows.last()
    }
}

/// Residual-block parameter projection state.
struct Renorm<T> {
    states: Vec<Vec<Vec<T>>>,
}

impl<T: Scalar> Renorm<T> {
    fn new(flow: &Flow<T>) -> Self {
        Renorm { states: vec![Vec::new(); flow.depth()] }
    }

    fn apply(&mut self, flow: &mut Flow<T>, iters: usize) {
        for (b, st) in flow.blocks_mut().iter_mut().zip(&mut self.states) {
            if let Block::Residual(r) = b {
                let c = r.coeff;
                r.g.spectral_normalize_in_place(c, st, iters);
            }
        }
    }
}

/// Inputs with optional targets.
type Batch<T> = (Vec<Vec<T>>, Option<Vec<Vec<T>>>);

struct EvalSet<T> {
    inputs: Vec<Vec<T>>,
    targets: Option<Vec<Vec<T>>>,
    probe: Vec<Vec<f64>>,
    angle_batches: Vec<Batch<T>>,
}

fn gather<T: Scalar>(src: &[Vec<f64>], idx: &[usize]) -> Vec<Vec<T>> {
    idx.iter().map(|&i| cast_vec(&src[i])).collect()
}

fn build_eval<T: Scalar>(task: &Task, cfg: &TrainConfig, rng: &Rng) -> EvalSet<T> {
    let mut r = rng.split(3);
    let (inputs, targets): (Vec<Vec<f64>>, Option<Vec<Vec<f64>>>) = match task {
        Task::Density(DensitySource::Checkerboard) => (dataset_checkerboard(&mut r, cfg.eval_size), None),
        Task::Density(DensitySource::Points(p)) => (p.iter().take(cfg.eval_size.max(1)).cloned().collect(), None),
        Task::Regression { data, .. } => (data.inputs.clone(), Some(data.targets.clone())),
    };
    let probe = inputs.iter().take(cfg.probe_points).cloned().collect();
    let mut angle_batches = Vec::new();
    if let Some(a) = &cfg.angle {
        let mut ar = rng.split(4);
        for _ in 0..a.batches {
            let b = match task {
                Task::Density(DensitySource::Checkerboard) => {
                    (dataset_checkerboard(&mut ar, a.batch_size).iter().map(|x| cast_vec(x)).collect(), None)
                }
                Task::Density(DensitySource::Points(p)) => {
                    let idx: Vec<usize> = (0..a.batch_size).map(|_| ar.below(p.len())).collect();
                    (gather(p, &idx), None)
                }
                Task::Regression { data, .. } => {
                    let idx: Vec<usize> = (0..a.batch_size).map(|_| ar.below(data.inputs.len())).collect();
                    (gather(&data.inputs, &idx), Some(gather(&data.targets, &idx)))
                }
            };
            angle_batches.push(b);
        }
    }
    EvalSet {
        inputs: inputs.iter().map(|x| cast_vec(x)).collect(),
        targets: targets.map(|t| t.iter().map(|y| cast_vec(y)).collect()),
        probe,
        angle_batches,
    }
}

/// Training batch at `step`, a pure function of the data stream and the step index.
fn batch_at<T: Scalar>(task: &Task, cfg: &TrainConfig, data_rng: &Rng, step: usize) -> (Vec<Vec<T>>, Option<Vec<Vec<T>>>) {
    let mut r = data_rng.split(step as u64);
    match task {
        Task::Density(DensitySource::Checkerboard) => {
            (dataset_checkerboard(&mut r, cfg.batch_size.max(1)).iter().map(|x| cast_vec(x)).collect(), None)
        }
        Task::Density(DensitySource::Points(p)) => {
            if cfg.batch_size == 0 || cfg.batch_size >= p.len() {
                (p.iter().map(|x| cast_vec(x)).collect(), None)
            } else {
                let idx: Vec<usize> = (0..cfg.batch_size).map(|_| r.below(p.len())).collect();
                (gather(p, &idx), None)
            }
        }
        Task::Regression { data, .. } => {
            let n = data.inputs.len();
            if cfg.batch_size == 0 || cfg.batch_size >= n {
                (
                    data.inputs.iter().map(|x| cast_vec(x)).collect(),
                    Some(data.targets.iter().map(|y| cast_vec(y)).collect()),
                )
            } else {
                let idx: Vec<usize> = (0..cfg.batch_size).map(|_| r.below(n)).collect();
                (gather(&data.inputs, &idx), Some(gather(&data.targets, &idx)))
            }
        }
    }
}

fn objective<'a, T: Scalar>(task: &Task, targets: &'a Option<Vec<Vec<T>>>) -> Box<dyn OutputLoss<T> + 'a> {
    match (task, targets) {
        (Task::Regression { nf_coeff, .. }, Some(t)) => Box::new(RegressionLoss { targets: t, nf_coeff: *nf_coeff }),
        _ => Box::new(NfLoss),
    }
}

fn evaluate<T: Scalar>(flow: &Flow<T>, task: &Task, cfg: &TrainConfig, ev: &EvalSet<T>, rng: &Rng, step: usize) -> MetricRow {
    let d = flow.dim();
    let per: Vec<Option<(f64, f64)>> = ev
        .inputs
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let (z, ld) = flow.eval(x, Precision::F64).ok()?;
            let nf = NfLoss::value(&z, ld);
            let mse = ev.targets.as_ref().map(|t| RegressionLoss::<T>::mse(&z, &t[i])).unwrap_or(0.0);
            Some((nf, mse))
        })
        .collect();
    let ok: Vec<(f64, f64)> = per.into_iter().flatten().filter(|(a, b)| a.is_finite() && b.is_finite()).collect();
    let n = ok.len().max(1) as f64;
    let nf_mean = ok.iter().map(|p| p.0).sum::<f64>() / n;
    let mse_mean = ok.iter().map(|p| p.1).sum::<f64>() / n;
    let (loss, bpd, mse) = match task {
        Task::Density(_) => (nf_mean, Some(NfLoss::bpd(nf_mean, d)), None),
        Task::Regression { nf_coeff, .. } => (mse_mean + nf_coeff * nf_mean, None, Some(mse_mean)),
    };

    let probe = recon_error_probe(flow, &ev.probe, cfg.probe_precision);
    let reports: Vec<_> = ev.probe.par_iter().map(|x| jacobian_report(flow, &cast_vec::<f64, T>(x))).collect();
    let mut cond = 0.0f64;
    let mut min_sv = f64::INFINITY;
    let mut max_sv = 0.0f64;
    for r in &reports {
        if r.nonfinite {
            cond = f64::INFINITY;
            continue;
        }
        cond = cond.max(r.cond_number);
        min_sv = min_sv.min(r.sigma_min());
        max_sv = max_sv.max(r.sigma_max());
    }

    let fd_penalty = cfg.fd.as_ref().map(|fd| {
        let mut r = rng.split(5);
        let vals: Vec<f64> = ev
            .probe
            .iter()
            .map(|x| {
                fd_penalty_with_grad(flow, &cast_vec::<f64, T>(x), fd, &mut r, Precision::F64, None)
                    .map(|t| t.total())
                    .unwrap_or(f64::INFINITY)
            })
            .collect();
        vals.iter().sum::<f64>() / vals.len().max(1) as f64
    });

    let grad_angle = cfg.angle.as_ref().map(|a| {
        let mut sum = 0.0;
        for (b, t) in &ev.angle_batches {
            let loss = objective(task, t);
            let pair = grad_angle(flow, b, loss.as_ref(), a.precision);
            sum += if pair.memsave_nonfinite { f64::NAN } else { pair.angle_radians };
        }
        sum / ev.angle_batches.len() as f64
    });

    MetricRow {
        step,
        loss,
        bpd,
        mse,
        recon_err_mean: probe.mean_finite(),
        recon_err_max: probe.max_finite(),
        pct_nonfinite: probe.pct_nonfinite(),
        cond,
        min_sv,
        max_sv,
        fd_penalty,
        grad_angle,
    }
}

/// Trains `flow` in place with Adam. Residual blocks are re-normalized after every update.
/// Non-finite steps are skipped and counted; the run itself never fails on them.
pub fn train<T: Scalar>(flow: &mut Flow<T>, task: &Task, cfg: &TrainConfig, seed: u64) -> Result<TrainLog> {
    cfg.validate()?;
    let start = Instant::now();
    let root = Rng::new(seed, 0);
    let data_rng = root.split(1);
    let mut fd_rng = root.split(2);
    let ev = build_eval::<T>(task, cfg, &root);
    let mut adam = AdamState::new(flow.num_params());
    let mut renorm = Renorm::new(flow);
    renorm.apply(flow, cfg.spectral_iters.max(20));
    let mut log = TrainLog { rows: Vec::new(), skipped_steps: 0, fd_failures: 0, wall_seconds: 0.0 };
    log.rows.push(evaluate(flow, task, cfg, &ev, &root, 0));
    for step in 0..cfg.steps {
        let (batch, targets) = batch_at::<T>(task, cfg, &data_rng, step);
        let loss = objective(task, &targets);
        let m = mean_loss(flow, &batch, loss.as_ref(), cfg.precision);
        let mut grad = m.grad;
        let mut ok = m.nonfinite == 0 && m.value.is_finite();
        if ok {
            if let Some(fd) = cfg.fd.as_ref().filter(|fd| fd.active_at(step)) {
                let k = if cfg.fd_batch_size == 0 { batch.len() } else { cfg.fd_batch_size.min(batch.len()) };
                match fd_batch(flow, &batch[..k], fd, &mut fd_rng, cfg.precision) {
                    Ok((_, g)) => {
                        for (a, b) in grad.iter_mut().zip(&g) {
                            *a = *a + *b;
                        }
                    }
                    Err(_) => log.fd_failures += 1,
                }
            }
            ok = !has_nonfinite(&grad);
        }
        if ok {
            let mut p = flow.params();
            adam_step(&mut p, &grad, &mut adam, &AdamConfig { lr: cfg.lr_at(step), ..cfg.adam });
            flow.set_params(&p);
            renorm.apply(flow, cfg.spectral_iters);
        } else {
            log.skipped_steps += 1;
        }
        let done = step + 1;
        if done % cfg.eval_every == 0 || done == cfg.steps {
            log.rows.push(evaluate(flow, task, cfg, &ev, &root, done));
        }
    }
    debug_assert!(task.is_density() || ev.targets.is_some());
    log.wall_seconds = start.elapsed().as_secs_f64();
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::{FlowSpec, Preset};
    use crate::training::data::dataset_regression2d;

    fn small_spec(preset: Preset) -> FlowSpec {
        FlowSpec { hidden: vec![8], ..FlowSpec::new(preset, 2, 2) }
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig { steps: 20, batch_size: 32, eval_every: 10, eval_size: 64, probe_points: 8, ..Default::default() }
    }

    #[test]
    fn density_training_reduces_loss_and_is_deterministic() {
        let spec = small_spec(Preset::AffineSigmoid);
        let run = || {
            let mut f: Flow<f64> = spec.build(&mut Rng::new(1, 9)).unwrap();
            let cfg = TrainConfig { steps: 60, eval_every: 30, ..quick_cfg() };
            train(&mut f, &Task::Density(DensitySource::Checkerboard), &cfg, 11).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.rows.len(), 3);
        assert!(a.rows[2].loss < a.rows[0].loss, "{:?}", a.rows);
        assert!(a.rows[0].bpd.is_some() && a.rows[0].mse.is_none());
    }

    #[test]
    fn csv_layout() {
        let mut f: Flow<f64> = small_spec(Preset::Additive).build(&mut Rng::new(2, 0)).unwrap();
        let data = dataset_regression2d(&mut Rng::new(3, 0), 32, 1e-24);
        let log = train(&mut f, &Task::Regression { data, nf_coeff: 0.0 }, &quick_cfg(), 5).unwrap();
        let csv = log.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(METRIC_HEADER));
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first.len(), 12);
        assert_eq!(first[0], "0");
        assert_eq!(first[2], "");
        assert!(!first[3].is_empty());
        assert_eq!(first[10], "");
        assert_eq!(first[11], "");
    }

    #[test]
    fn fd_cadence_leaves_data_stream_unchanged() {
        let data = dataset_regression2d(&mut Rng::new(4, 0), 64, 1e-24);
        let task = Task::Regression { data, nf_coeff: 0.0 };
        let spec = small_spec(Preset::AffineSigmoid);
        let logs: Vec<String> = [None, Some(1), Some(5), Some(10)]
            .into_iter()
            .map(|k| {
                let mut f: Flow<f64> = spec.build(&mut Rng::new(6, 0)).unwrap();
                let fd = k.map(|k| FdRegConfig { apply_every_k: k, coefficient: 0.0, ..Default::default() });
                let mut log = train(&mut f, &task, &TrainConfig { fd, ..quick_cfg() }, 7).unwrap();
                log.rows.iter_mut().for_each(|r| r.fd_penalty = None);
                log.to_csv()
            })
            .collect();
        assert!(logs.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn residual_blocks_stay_contractive() {
        let mut f: Flow<f64> = small_spec(Preset::Residual { coeff: 0.8 }).build(&mut Rng::new(8, 0)).unwrap();
        let cfg = TrainConfig { adam: AdamConfig { lr: 5e-2, ..Default::default() }, ..quick_cfg() };
        train(&mut f, &Task::Density(DensitySource::Checkerboard), &cfg, 3).unwrap();
        for b in f.blocks() {
            if let Block::Residual(r) = b {
                assert!(r.g.lip_upper_bound() < 0.81);
            }
        }
    }

    #[test]
    fn angle_column_filled_when_requested() {
        let mut f: Flow<f64> = small_spec(Preset::Additive).build(&mut Rng::new(9, 0)).unwrap();
        let cfg = TrainConfig {
            angle: Some(AngleConfig { batches: 2, batch_size: 8, precision: Precision::F32 }),
            ..quick_cfg()
        };
        let log = train(&mut f, &Task::Density(DensitySource::Checkerboard), &cfg, 1).unwrap();
        assert!(log.rows.iter().all(|r| r.grad_angle.unwrap() <= 1e-2));
    }
}
