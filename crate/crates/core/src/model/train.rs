use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Model, Params, Sample};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::loss::{LossTerms, LossWeights};
use crate::masking::{augment_with, AugmentConfig, DEFAULT_MASK_RATIO};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Cosine decay from `lr` to 0 over the run; constant otherwise.
    pub cosine: bool,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
            cosine: true,
        }
    }
}

/// `lr * (1 + cos(pi * step / total)) / 2` for a zero-based step.
pub fn cosine_lr(lr: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return lr;
    }
    let t = step.min(total) as f64 / total as f64;
    lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    /// Schedule length in steps.
    pub total_steps: usize,
    step: usize,
    m: Params,
    v: Params,
}

impl AdamW {
    pub fn new(params: &Params, config: AdamWConfig, total_steps: usize) -> Self {
        Self {
            config,
            total_steps,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    /// Updates taken so far.
    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        if self.config.cosine {
            cosine_lr(self.config.lr, self.step, self.total_steps)
        } else {
            self.config.lr
        }
    }

    /// One decoupled-weight-decay Adam update.
    pub fn update(&mut self, params: &mut Params, grads: &Params) {
        let lr = self.current_lr();
        self.step += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (name, p) in params.iter_mut() {
            let g = grads.get(name).data();
            let m = self.m.get_mut(name).data_mut();
            for (mi, gi) in m.iter_mut().zip(g) {
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
            }
            let v = self.v.get_mut(name).data_mut();
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
            }
            let (m, v) = (self.m.get(name).data(), self.v.get(name).data());
            for ((w, mi), vi) in p.data_mut().iter_mut().zip(m).zip(v) {
                let step = (mi / bc1) / ((vi / bc2).sqrt() + c.eps) + c.weight_decay * *w;
                *w -= lr * step;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    /// One-based.
    pub step: usize,
    pub total: f64,
    pub terms: LossTerms,
    pub lr: f64,
}

impl StepLog {
    pub const CSV_HEADER: &'static str = "step,loss_total,loss_mse,loss_cd,loss_occ";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.12e},{:.12e},{:.12e},{:.12e}",
            self.step, self.total, self.terms.mse, self.terms.chamfer, self.terms.occupancy
        )
    }
}

/// Loss, gradient and one optimizer update on a prepared batch.
pub fn train_step(model: &mut Model, opt: &mut AdamW, batch: &[Sample], weights: &LossWeights) -> Result<StepLog> {
    let step = opt.steps_taken() + 1;
    let lr = opt.current_lr();
    let (loss, grads) = model.loss_and_grad(batch, weights, None).map_err(|e| match e {
        Error::NonFinite { term, .. } => Error::NonFinite { term, step: Some(step) },
        e => e,
    })?;
    opt.update(&mut model.params, &grads);
    Ok(StepLog {
        step,
        total: loss.total,
        terms: loss.terms,
        lr,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub mask_ratio: f64,
    pub augment: AugmentConfig,
    pub optimizer: AdamWConfig,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            batch_size: 8,
            mask_ratio: DEFAULT_MASK_RATIO,
            augment: AugmentConfig::default(),
            optimizer: AdamWConfig::default(),
            weights: LossWeights::default(),
        }
    }
}

/// Seeded pre-training loop: sample clouds, augment, tokenize, mask, update.
pub struct Trainer {
    pub model: Model,
    pub optimizer: AdamW,
    pub config: TrainConfig,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig, seed: u64) -> Result<Self> {
        if config.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&config.mask_ratio) {
            return Err(Error::Config(format!("mask ratio {} outside [0, 1)", config.mask_ratio)));
        }
        let optimizer = AdamW::new(&model.params, config.optimizer.clone(), config.steps);
        Ok(Self {
            model,
            optimizer,
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn next_batch(&mut self, corpus: &[PointCloud]) -> Result<Vec<Sample>> {
        if corpus.is_empty() {
            return Err(Error::InvalidInput("empty training corpus".into()));
        }
        let b = self.config.batch_size;
        let picks: Vec<usize> = if corpus.len() >= b {
            index::sample(&mut self.rng, corpus.len(), b).into_vec()
        } else {
            (0..b).map(|_| self.rng.random_range(0..corpus.len())).collect()
        };
        picks
            .into_iter()
            .map(|i| {
                let pc = augment_with(&corpus[i], &self.config.augment, &mut self.rng)?;
                Sample::from_cloud(&pc, &self.model.tokenizer, self.config.mask_ratio, &mut self.rng)
            })
            .collect()
    }

    pub fn step(&mut self, corpus: &[PointCloud]) -> Result<StepLog> {
        let batch = self.next_batch(corpus)?;
        train_step(&mut self.model, &mut self.optimizer, &batch, &self.config.weights)
    }

    /// Runs the configured number of steps, reporting each to `on_step`.
    pub fn run(&mut self, corpus: &[PointCloud], mut on_step: impl FnMut(&StepLog)) -> Result<Vec<StepLog>> {
        let mut logs = Vec::with_capacity(self.config.steps);
        for _ in 0..self.config.steps {
            let log = self.step(corpus)?;
            on_step(&log);
            logs.push(log);
        }
        Ok(logs)
    }
}
