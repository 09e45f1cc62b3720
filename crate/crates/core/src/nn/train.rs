use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tasks::Task;
use super::{Head, Loss, Network, Real, Workspace};
use crate::error::{Error, Result};

/// How a coherence curve is presented to the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputEncoding {
    /// Coherence values as they are.
    #[default]
    Raw,
    /// `−ln C`, compressed with `ln(1 + ·)`.
    LogDecay,
    /// `ln(−ln C)` shifted and scaled to order one; the spectrum is close
    /// to a local function of this quantity.
    LogChi,
}

impl InputEncoding {
    pub fn encode(self, c: f64) -> f64 {
        match self {
            InputEncoding::Raw => c,
            InputEncoding::LogDecay => (-c.max(1e-300).ln()).max(0.0).ln_1p(),
            InputEncoding::LogChi => {
                let chi = (-c.max(1e-300).ln()).max(1e-12);
                (chi.ln() + 7.0) / 7.0
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    #[serde(default)]
    pub task: Task,
    pub epochs: usize,
    pub batch_size: usize,
    pub max_lr: f64,
    /// Fraction of steps spent warming up to `max_lr`.
    pub warmup_fraction: f64,
    /// Starting learning rate is `max_lr / initial_div`.
    pub initial_div: f64,
    /// Final learning rate is `max_lr / final_div`.
    pub final_div: f64,
    pub seed: u64,
    pub hidden: usize,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
    #[serde(default)]
    pub input: InputEncoding,
    #[serde(default)]
    pub loss: Loss,
    /// Global gradient-norm cap applied before each optimizer step.
    #[serde(default)]
    pub clip_norm: Option<f64>,
    /// Wall-clock cap; training stops after the epoch that crosses it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_budget_s: Option<f64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            task: Task::Spectrum,
            epochs: 60,
            batch_size: 32,
            max_lr: 1e-3,
            warmup_fraction: 0.3,
            initial_div: 25.0,
            final_div: 1e4,
            seed: 0,
            hidden: 128,
            patience: None,
            input: InputEncoding::Raw,
            loss: Loss::Mape,
            clip_norm: Some(5.0),
            time_budget_s: None,
        }
    }
}

impl TrainingConfig {
    /// Spectrum estimator settings that converge in minutes on one core:
    /// log-χ inputs, log-ratio loss and a smaller hidden layer.
    pub fn spectrum_estimator() -> Self {
        Self {
            epochs: 100,
            hidden: 64,
            max_lr: 2e-3,
            input: InputEncoding::LogChi,
            loss: Loss::LogAbs,
            ..Self::default()
        }
    }

    /// Denoiser settings: noisy coherence in, clean `χ` out, trained in
    /// log space so every decade of the decay counts alike.
    pub fn denoiser() -> Self {
        Self {
            task: Task::Denoise,
            epochs: 150,
            hidden: 64,
            max_lr: 2e-3,
            input: InputEncoding::LogDecay,
            loss: Loss::LogAbs,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.hidden == 0 {
            return Err(Error::Config("epochs, batch size and hidden size must be positive".into()));
        }
        if !(self.max_lr > 0.0 && self.max_lr.is_finite()) {
            return Err(Error::Config(format!("max_lr must be positive, got {}", self.max_lr)));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config("warmup fraction must lie in [0, 1)".into()));
        }
        if !(self.initial_div >= 1.0 && self.final_div >= 1.0) {
            return Err(Error::Config("learning-rate divisors must be at least 1".into()));
        }
        Ok(())
    }
}

/// Learning rate at `step` of `total`: linear rise from `max/initial_div`
/// to `max`, then cosine decay to `max/final_div`.
pub fn one_cycle_lr(step: usize, total: usize, cfg: &TrainingConfig) -> f64 {
    let total = total.max(1) as f64;
    let s = step as f64;
    let warm = (cfg.warmup_fraction * total).max(1.0);
    let start = cfg.max_lr / cfg.initial_div;
    let end = cfg.max_lr / cfg.final_div;
    if s < warm {
        start + (cfg.max_lr - start) * s / warm
    } else {
        let frac = ((s - warm) / (total - warm).max(1.0)).min(1.0);
        end + (cfg.max_lr - end) * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

/// Adam moments.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn step<T: Real>(&mut self, params: &mut [T], grad: &[T], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i].to_f64();
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let upd = lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
            params[i] -= T::from_f64(upd);
        }
    }
}

/// Encoded inputs and targets, one row per record.
#[derive(Debug, Clone, Default)]
pub struct TrainingData {
    pub inputs: Vec<f32>,
    pub targets: Vec<f32>,
    pub steps: usize,
    pub output_dim: usize,
}

impl TrainingData {
    pub fn new(steps: usize, output_dim: usize) -> Self {
        Self { inputs: Vec::new(), targets: Vec::new(), steps, output_dim }
    }

    /// Adds one record; `curve` is encoded with `encoding`.
    pub fn push(&mut self, curve: &[f64], target: &[f64], encoding: InputEncoding) -> Result<()> {
        if curve.len() != self.steps || target.len() != self.output_dim {
            return Err(Error::GridMismatch(format!(
                "record has {} inputs and {} targets, expected {} and {}",
                curve.len(),
                target.len(),
                self.steps,
                self.output_dim
            )));
        }
        self.inputs.extend(curve.iter().map(|&c| encoding.encode(c) as f32));
        self.targets.extend(target.iter().map(|&t| t as f32));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.len().checked_div(self.steps).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn gather(&self, idx: &[usize], inputs: &mut Vec<f32>, targets: &mut Vec<f32>) {
        inputs.clear();
        targets.clear();
        for &i in idx {
            inputs.extend_from_slice(&self.inputs[i * self.steps..(i + 1) * self.steps]);
            targets.extend_from_slice(&self.targets[i * self.output_dim..(i + 1) * self.output_dim]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mape: f64,
    pub validation_mape: f64,
    pub learning_rate: f64,
    pub seconds: f64,
}

/// Network at its best validation epoch plus the full history.
#[derive(Debug, Clone)]
pub struct TrainedNetwork {
    pub network: Network<f32>,
    pub config: TrainingConfig,
    pub history: Vec<EpochRecord>,
    /// Epoch of the kept parameters; 0 means the initialization was never
    /// beaten on validation.
    pub best_epoch: usize,
    pub best_validation: f64,
    /// Set when training stopped on a non-finite loss after at least one
    /// good epoch.
    pub aborted: Option<String>,
}

impl TrainedNetwork {
    /// Runs the network on raw coherence curves.
    pub fn infer(&self, curves: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let steps = curves.first().map_or(0, |c| c.len());
        let mut inputs = Vec::with_capacity(curves.len() * steps);
        for c in curves {
            if c.len() != steps {
                return Err(Error::GridMismatch("curves differ in length".into()));
            }
            inputs.extend(c.iter().map(|&v| self.config.input.encode(v) as f32));
        }
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let out = self.network.predict(&inputs, steps, 256)?;
        let o = self.network.output_dim;
        Ok(out.chunks(o).map(|r| r.iter().map(|&v| v as f64).collect()).collect())
    }
}

/// Mean per-record MAPE of `net` on `data`.
pub fn evaluate(net: &Network<f32>, data: &TrainingData) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyTranche("evaluation set is empty".into()));
    }
    let pred = net.predict(&data.inputs, data.steps, 256)?;
    let o = data.output_dim;
    let mut total = 0.0;
    for (p, t) in pred.chunks(o).zip(data.targets.chunks(o)) {
        let p: Vec<f64> = p.iter().map(|&v| v as f64).collect();
        let t: Vec<f64> = t.iter().map(|&v| v as f64).collect();
        total += super::mape_loss(&p, &t)?;
    }
    Ok(total / data.len() as f64)
}

fn init_output_bias(net: &mut Network<f32>, data: &TrainingData) {
    let o = net.output_dim;
    let lay = net.layout();
    let n = data.len() as f64;
    for j in 0..o {
        let mean = data
            .targets
            .iter()
            .skip(j)
            .step_by(o)
            .map(|&t| match net.head {
                Head::Exponential => (t as f64).max(1e-30).ln(),
                Head::LinearClamped => t as f64,
            })
            .sum::<f64>()
            / n;
        net.params[lay.b_dense + j] = mean as f32;
    }
}

/// Trains a fresh network with the given head.
pub fn train(train_set: &TrainingData, validation: &TrainingData, head: Head, cfg: &TrainingConfig) -> Result<TrainedNetwork> {
    cfg.validate()?;
    if train_set.is_empty() || validation.is_empty() {
        return Err(Error::EmptyTranche("training and validation sets must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = Network::<f32>::init(1, cfg.hidden, train_set.output_dim, head, &mut rng);
    init_output_bias(&mut net, train_set);
    run(net, train_set, validation, cfg, &mut rng)
}

/// Continues training `base` on a small set with `max_lr` divided by 10.
pub fn fine_tune(
    base: &TrainedNetwork,
    train_set: &TrainingData,
    validation: &TrainingData,
    epochs: usize,
    time_budget_s: Option<f64>,
) -> Result<TrainedNetwork> {
    let mut cfg = base.config.clone();
    cfg.max_lr /= 10.0;
    cfg.epochs = epochs;
    cfg.time_budget_s = time_budget_s;
    cfg.seed = cfg.seed.wrapping_add(1);
    cfg.validate()?;
    if train_set.is_empty() || validation.is_empty() {
        return Err(Error::EmptyTranche("fine-tune sets must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    run(base.network.clone(), train_set, validation, &cfg, &mut rng)
}

fn run(
    mut net: Network<f32>,
    train_set: &TrainingData,
    validation: &TrainingData,
    cfg: &TrainingConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainedNetwork> {
    if train_set.steps != validation.steps || train_set.output_dim != validation.output_dim {
        return Err(Error::GridMismatch("training and validation shapes differ".into()));
    }
    let start = Instant::now();
    let budget = cfg.time_budget_s.map(Duration::from_secs_f64);
    let n = train_set.len();
    let bs = cfg.batch_size.min(n);
    let batches = n.div_ceil(bs);
    let total_steps = batches * cfg.epochs;

    let mut adam = Adam::new(net.params.len());
    let mut grad = vec![0f32; net.params.len()];
    let mut ws = Workspace::default();
    let (mut xb, mut yb) = (Vec::new(), Vec::new());
    let mut order: Vec<usize> = (0..n).collect();

    let initial = evaluate(&net, validation)?;
    let mut best = (initial, 0usize, net.params.clone());
    let mut history = Vec::new();
    let mut since_best = 0;
    let mut aborted = None;
    let mut step = 0;

    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let mut train_loss = 0.0;
        let mut lr = 0.0;
        for chunk in order.chunks(bs) {
            train_set.gather(chunk, &mut xb, &mut yb);
            lr = one_cycle_lr(step, total_steps, cfg);
            let loss = match net.loss_and_grad_with(cfg.loss, &xb, &yb, chunk.len(), train_set.steps, &mut ws, &mut grad) {
                Ok(l) => l,
                Err(Error::Divergence { context }) if !history.is_empty() => {
                    aborted = Some(format!("epoch {epoch}: {context}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            train_loss += loss * chunk.len() as f64;
            if let Some(max) = cfg.clip_norm {
                let norm = grad.iter().map(|g| (*g as f64).powi(2)).sum::<f64>().sqrt();
                if norm > max {
                    let k = (max / norm) as f32;
                    grad.iter_mut().for_each(|g| *g *= k);
                }
            }
            adam.step(&mut net.params, &grad, lr);
            step += 1;
        }
        let val = match evaluate(&net, validation) {
            Ok(v) if v.is_finite() => v,
            Ok(_) | Err(Error::Divergence { .. }) if !history.is_empty() => {
                aborted = Some(format!("epoch {epoch}: non-finite validation loss"));
                break;
            }
            Ok(_) => return Err(Error::Divergence { context: format!("epoch {epoch} validation") }),
            Err(e) => return Err(e),
        };
        history.push(EpochRecord {
            epoch,
            train_mape: train_loss / n as f64,
            validation_mape: val,
            learning_rate: lr,
            seconds: start.elapsed().as_secs_f64(),
        });
        if val < best.0 {
            best = (val, epoch, net.params.clone());
            since_best = 0;
        } else {
            since_best += 1;
        }
        if cfg.patience.is_some_and(|p| since_best >= p) {
            break;
        }
        if budget.is_some_and(|b| start.elapsed() >= b) {
            break;
        }
    }
    net.params = best.2;
    Ok(TrainedNetwork {
        network: net,
        config: cfg.clone(),
        history,
        best_epoch: best.1,
        best_validation: best.0,
        aborted,
    })
}
