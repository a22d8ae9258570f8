use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Prepared, ScorerParams};
use crate::dataset::TrainingExample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction, restricted to a set of trainable ranges.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(cfg: AdamConfig, n: usize) -> Self {
        Self {
            cfg,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One update of `params[r]` for every `r` in `trainable`; everything
    /// else is left untouched.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], trainable: &[Range<usize>]) {
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for r in trainable {
            for i in r.clone() {
                let g = grad[i];
                self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
                self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
                let mh = self.m[i] / bc1;
                let vh = self.v[i] / bc2;
                params[i] -= c.lr * mh / (vh.sqrt() + c.eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig {
                lr: 3e-3,
                ..AdamConfig::default()
            },
            steps: 1000,
            batch_size: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean weighted batch loss before each step.
    pub losses: Vec<f64>,
}

impl TrainLog {
    /// Mean of the first and last `window` losses.
    pub fn head_tail_means(&self, window: usize) -> (f64, f64) {
        let w = window.min(self.losses.len()).max(1);
        let head = self.losses.iter().take(w).sum::<f64>() / w as f64;
        let tail = self.losses.iter().rev().take(w).sum::<f64>() / w as f64;
        (head, tail)
    }
}

/// Deterministic mini-batch order: examples are put in a canonical order,
/// then each epoch is a seeded permutation.
pub(crate) struct Batcher {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Batcher {
    pub(crate) fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Self { order, pos: 0, rng }
    }

    pub(crate) fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size.min(self.order.len()) {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn canonical_order(examples: &[TrainingExample]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..examples.len()).collect();
    idx.sort_by(|&a, &b| {
        let (x, y) = (&examples[a], &examples[b]);
        x.user_id
            .cmp(&y.user_id)
            .then(x.timestamp.cmp(&y.timestamp))
            .then_with(|| x.target_episode.cmp(&y.target_episode))
            .then(x.control.cmp(&y.control))
    });
    idx
}

/// Instruction tuning: Adam on the mean weighted loss, all blocks trainable
/// (including the user projection).
pub fn train(
    mut params: ScorerParams,
    examples: &[TrainingExample],
    config: &TrainConfig,
) -> Result<(ScorerParams, TrainLog)> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("training examples"));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
    }
    let order = canonical_order(examples);
    let prepared: Vec<Prepared> = order
        .iter()
        .map(|&i| params.prepare(&examples[i]))
        .collect::<Result<_>>()?;
    let mut adam = Adam::new(config.adam, params.len());
    let mut batcher = Batcher::new(prepared.len(), config.seed);
    let all = 0..params.len();
    let mut log = TrainLog::default();
    for step in 0..config.steps {
        let batch: Vec<&Prepared> = batcher
            .next_batch(config.batch_size)
            .into_iter()
            .map(|i| &prepared[i])
            .collect();
        let (loss, grad) = params.prepared_grad(&batch);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss {
                step,
                detail: format!(
                    "loss = {loss}, last finite loss = {:?}, lr = {}",
                    log.losses.last(),
                    config.adam.lr
                ),
            });
        }
        log.losses.push(loss);
        adam.step(params.values_mut(), &grad, std::slice::from_ref(&all));
    }
    Ok((params, log))
}
