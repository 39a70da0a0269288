//! Maximum-likelihood training: Adam with linear warmup, deterministic batching, evaluation.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor};
use crate::convkit::Tensor4;
use crate::error::{Error, Result};
use crate::flows::{check_pixels, dequantize, uniform_noise, FlowModel, ParamId};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Steps over which the learning rate ramps linearly from `lr / warmup` to `lr`.
    pub warmup: u64,
    pub batch: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, warmup: 100, batch: 32 }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        if self.eps <= 0.0 || self.batch == 0 {
            return Err(Error::invalid("epsilon and batch size must be positive"));
        }
        Ok(())
    }

    /// Learning rate for the 0-based step `t`.
    pub fn lr_at(&self, t: u64) -> f64 {
        if self.warmup == 0 {
            self.lr
        } else {
            self.lr * ((t + 1).min(self.warmup) as f64 / self.warmup as f64)
        }
    }
}

/// Adam moments for the trainable parameters of one store.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: OptimConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(cfg: OptimConfig) -> Self {
        Adam { cfg, m: Vec::new(), v: Vec::new(), t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update. `grads` pairs each trainable parameter with its gradient.
    pub fn update(&mut self, model: &mut FlowModel, grads: &[(ParamId, Tensor)]) {
        if self.m.len() != grads.len() {
            self.m = grads.iter().map(|(_, g)| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        let lr = self.cfg.lr_at(self.t);
        self.t += 1;
        let c1 = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.cfg.beta2.powi(self.t as i32);
        let (b1, b2, eps) = (self.cfg.beta1, self.cfg.beta2, self.cfg.eps);
        for (k, (id, g)) in grads.iter().enumerate() {
            let p = model.store_mut().get_mut(*id);
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                *w -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub bpd: f64,
    pub gnorm: f64,
}

impl fmt::Display for StepLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step={} bpd={:.6} gnorm={:.6}", self.step, self.bpd, self.gnorm)
    }
}

/// Mean bits/dim of the continuous batch `x` and its gradient.
pub fn loss_and_grads(model: &FlowModel, x: &Tensor4) -> Result<(f64, Vec<(ParamId, Tensor)>)> {
    let mut tape = Tape::new();
    let (loss, vars) = model.record_loss(&mut tape, x)?;
    let value = tape.value(loss).item()?;
    if !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    let mut grads = tape.backward(loss)?;
    let store = model.store();
    let out = store
        .ids()
        .filter(|&id| store.param(id).trainable)
        .map(|id| {
            let g = grads.take(vars[id.index()]).unwrap_or_else(|| Tensor::zeros(store.get(id).shape()));
            (id, g)
        })
        .collect();
    Ok((value, out))
}

pub fn grad_norm(grads: &[(ParamId, Tensor)]) -> f64 {
    grads.iter().flat_map(|(_, g)| g.data()).map(|v| v * v).sum::<f64>().sqrt()
}

/// Step-wise trainer over a fixed set of integer images.
///
/// Batches come from a per-epoch shuffle and dequantization noise is fresh every step, both
/// drawn from one seeded generator.
#[derive(Debug)]
pub struct Trainer {
    model: FlowModel,
    data: Tensor4,
    cfg: OptimConfig,
    adam: Adam,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    step: u64,
}

impl Trainer {
    /// Initializes the model's actnorm layers on the first batch if needed.
    pub fn new(mut model: FlowModel, data: Tensor4, cfg: OptimConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        check_pixels(&data)?;
        if data.batch() == 0 {
            return Err(Error::invalid("training set is empty"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..data.batch()).collect();
        order.shuffle(&mut rng);
        let mut trainer =
            Trainer { model: model.clone(), data, cfg, adam: Adam::new(cfg), rng, order, cursor: 0, step: 0 };
        if !model.is_initialized() {
            let x = trainer.peek_batch()?;
            model.initialize(&x)?;
            trainer.model = model;
        }
        Ok(trainer)
    }

    pub fn model(&self) -> &FlowModel {
        &self.model
    }

    pub fn into_model(self) -> FlowModel {
        self.model
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Generator driving batching and dequantization.
    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub fn config(&self) -> &OptimConfig {
        &self.cfg
    }

    fn indices(&mut self) -> Vec<usize> {
        let n = self.data.batch();
        let mut out = Vec::with_capacity(self.cfg.batch);
        while out.len() < self.cfg.batch {
            if self.cursor == n {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }

    fn gather(&self, idx: &[usize]) -> Tensor4 {
        let (_, c, h, w) = self.data.shape();
        let mut t = Tensor4::zeros(idx.len(), c, h, w);
        for (b, &i) in idx.iter().enumerate() {
            t.example_mut(b).copy_from_slice(self.data.example(i));
        }
        t
    }

    /// Dequantized first batch, without advancing the generator.
    fn peek_batch(&self) -> Result<Tensor4> {
        let mut rng = self.rng.clone();
        let idx: Vec<usize> = (0..self.cfg.batch).map(|k| self.order[k % self.order.len()]).collect();
        let x = self.gather(&idx);
        let (n, c, h, w) = x.shape();
        dequantize(&x, &uniform_noise(n, c, h, w, &mut rng))
    }

    /// Runs one optimizer step. The log reports the loss before the update.
    pub fn train_step(&mut self) -> Result<StepLog> {
        let idx = self.indices();
        let x_int = self.gather(&idx);
        let (n, c, h, w) = x_int.shape();
        let x = dequantize(&x_int, &uniform_noise(n, c, h, w, &mut self.rng))?;
        let (bpd, grads) = loss_and_grads(&self.model, &x)?;
        let gnorm = grad_norm(&grads);
        if !bpd.is_finite() || !gnorm.is_finite() {
            return Err(Error::NonFiniteLoss { step: self.step });
        }
        self.adam.update(&mut self.model, &grads);
        let log = StepLog { step: self.step, bpd, gnorm };
        self.step += 1;
        Ok(log)
    }
}

/// Mean and standard error of per-example bits/dim.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalStats {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

impl fmt::Display for EvalStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "bpd={:.6} stderr={:.6} n={}", self.mean, self.stderr, self.count)
    }
}

impl EvalStats {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n.max(1) as f64;
        let stderr = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        EvalStats { mean, stderr, count: n }
    }
}

/// Bits/dim over every image of `data`, in batches of `batch`, with dequantization noise
/// drawn from `seed`.
pub fn evaluate(model: &FlowModel, data: &Tensor4, batch: usize, seed: u64) -> Result<EvalStats> {
    if batch == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(data.batch());
    let mut start = 0;
    while start < data.batch() {
        let len = batch.min(data.batch() - start);
        let x = data.slice_batch(start, len);
        values.extend(model.bits_per_dim(&x, &mut rng)?);
        start += len;
    }
    Ok(EvalStats::from_values(&values))
}
