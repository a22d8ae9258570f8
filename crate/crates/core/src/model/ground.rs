//! Two-stage grounding of semantic-id tokens against content embeddings.
//!
//! Stage one trains only the SID token embeddings (plus a throwaway linear
//! probe) to regress the content embedding from the id's tokens. Stage two
//! freezes the embeddings and trains the level heads to emit the id from the
//! content embedding, with the context vector replaced by a linear map of
//! that embedding.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::linalg::{affine, affine_backward};
use super::train::{Adam, AdamConfig, Batcher};
use super::{accumulate, ScorerParams};
use crate::catalog::Episode;
use crate::error::{Error, Result};
use crate::quantizer::{Codebook, SemanticId};
use crate::util::log_softmax;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundStage {
    /// Embeddings only (id -> content).
    Embeddings,
    /// Heads only (content -> id).
    Heads,
    Both,
}

impl std::str::FromStr for GroundStage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "embeddings" | "a" => Ok(Self::Embeddings),
            "heads" | "b" => Ok(Self::Heads),
            "both" => Ok(Self::Both),
            other => Err(Error::InvalidConfig(format!("unknown grounding stage {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroundConfig {
    pub embed_steps: usize,
    pub head_steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for GroundConfig {
    fn default() -> Self {
        Self {
            embed_steps: 200,
            head_steps: 200,
            batch_size: 64,
            adam: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundLog {
    pub embed_losses: Vec<f64>,
    pub head_losses: Vec<f64>,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let g: f64 = StandardNormal.sample(rng);
            scale * g
        })
        .collect()
}

/// Runs the selected grounding stages over every catalog episode.
pub fn ground(
    mut params: ScorerParams,
    episodes: &[Episode],
    codebook: &Codebook,
    config: &GroundConfig,
    stage: GroundStage,
) -> Result<(ScorerParams, GroundLog)> {
    let shape = params.shape().clone();
    if codebook.k() != shape.k() || codebook.m() != shape.m() {
        return Err(Error::Incompatible(format!(
            "codebook is K={} M={}, scorer expects K={} M={}",
            codebook.k(),
            codebook.m(),
            shape.k(),
            shape.m()
        )));
    }
    let run_a = matches!(stage, GroundStage::Embeddings | GroundStage::Both) && config.embed_steps > 0;
    let run_b = matches!(stage, GroundStage::Heads | GroundStage::Both) && config.head_steps > 0;
    if !run_a && !run_b {
        return Err(Error::InvalidConfig("grounding has zero steps in every selected stage".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
    }
    if episodes.is_empty() {
        return Err(Error::EmptyInput("catalog"));
    }
    let items: Vec<(&[f64], SemanticId)> = episodes
        .iter()
        .map(|e| Ok((e.content_embedding.as_slice(), codebook.encode(&e.content_embedding)?)))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut log = GroundLog::default();
    if run_a {
        log.embed_losses = stage_embeddings(&mut params, &items, config, &mut rng);
    }
    if run_b {
        log.head_losses = stage_heads(&mut params, &items, config, &mut rng);
    }
    Ok((params, log))
}

fn stage_embeddings(
    params: &mut ScorerParams,
    items: &[(&[f64], SemanticId)],
    config: &GroundConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let shape = params.shape().clone();
    let (d_model, m) = (shape.d_model, shape.m());
    let d = items[0].0.len();
    let in_dim = m * d_model;
    // probe: [d x in_dim] weights followed by d biases
    let mut probe = gaussian(rng, d * in_dim, 1.0 / (in_dim as f64).sqrt());
    probe.extend(std::iter::repeat_n(0.0, d));
    let sid_range = params.sid_embedding_range();
    let n_sid = sid_range.len();
    let mut adam = Adam::new(config.adam, n_sid + probe.len());
    let mut batcher = Batcher::new(items.len(), config.seed ^ 0xa5a5);
    let mut losses = Vec::with_capacity(config.embed_steps);
    for _ in 0..config.embed_steps {
        let batch: Vec<&(&[f64], SemanticId)> = batcher
            .next_batch(config.batch_size)
            .into_iter()
            .map(|i| &items[i])
            .collect();
        let scale = 1.0 / batch.len() as f64;
        let p: &ScorerParams = params;
        let (loss, grad) = accumulate(&batch, n_sid + probe.len(), |(x, sid), g| {
            let mut input = Vec::with_capacity(in_dim);
            for (level, &c) in sid.codes().iter().enumerate() {
                input.extend_from_slice(p.embedding(shape.tokens.sid_token(level, c)));
            }
            let mut pred = vec![0.0; d];
            affine(&probe[..d * in_dim], &probe[d * in_dim..], &input, &mut pred);
            let diff: Vec<f64> = pred.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
            let loss = 0.5 * diff.iter().map(|v| v * v).sum::<f64>();
            let dy: Vec<f64> = diff.iter().map(|v| v * scale).collect();
            let (g_emb, g_probe) = g.split_at_mut(n_sid);
            let (dw, db) = g_probe.split_at_mut(d * in_dim);
            let mut dinput = vec![0.0; in_dim];
            affine_backward(&probe[..d * in_dim], &input, &dy, dw, db, Some(&mut dinput));
            for (level, &c) in sid.codes().iter().enumerate() {
                let tok = shape.tokens.sid_token(level, c) as usize - crate::sid_index::TokenSpace::SID_BASE as usize;
                let row = &mut g_emb[tok * d_model..(tok + 1) * d_model];
                for (r, v) in row.iter_mut().zip(&dinput[level * d_model..(level + 1) * d_model]) {
                    *r += v;
                }
            }
            loss
        });
        losses.push(loss * scale);
        let mut joint: Vec<f64> = params.values()[sid_range.clone()].to_vec();
        joint.extend_from_slice(&probe);
        let all = 0..joint.len();
        adam.step(&mut joint, &grad, &[all]);
        params.values_mut()[sid_range.clone()].copy_from_slice(&joint[..n_sid]);
        probe.copy_from_slice(&joint[n_sid..]);
    }
    losses
}

fn stage_heads(
    params: &mut ScorerParams,
    items: &[(&[f64], SemanticId)],
    config: &GroundConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let shape = params.shape().clone();
    let d_model = shape.d_model;
    let d = items[0].0.len();
    let n_params = params.len();
    // content map: [d_model x d] weights followed by d_model biases
    let mut content_map = gaussian(rng, d_model * d, 1.0 / (d as f64).sqrt());
    content_map.extend(std::iter::repeat_n(0.0, d_model));
    let mut adam = Adam::new(config.adam, n_params);
    let mut aux_adam = Adam::new(config.adam, content_map.len());
    let trainable = params.head_ranges();
    let mut batcher = Batcher::new(items.len(), config.seed ^ 0x5a5a);
    let mut losses = Vec::with_capacity(config.head_steps);
    for _ in 0..config.head_steps {
        let batch: Vec<&(&[f64], SemanticId)> = batcher
            .next_batch(config.batch_size)
            .into_iter()
            .map(|i| &items[i])
            .collect();
        let scale = 1.0 / batch.len() as f64;
        let p: &ScorerParams = params;
        let cm = &content_map;
        let (loss, grad) = accumulate(&batch, n_params + cm.len(), |(x, sid), g| {
            let mut ctx = vec![0.0; d_model];
            affine(&cm[..d_model * d], &cm[d_model * d..], x, &mut ctx);
            let (g_params, g_aux) = g.split_at_mut(n_params);
            let codes = sid.codes();
            let mut dctx = vec![0.0; d_model];
            let mut loss = 0.0;
            for level in 0..codes.len() {
                let hc = p.head_forward(&ctx, &codes[..level]);
                let lsm = log_softmax(&hc.logits);
                loss -= lsm[codes[level] as usize];
                let mut dlogits: Vec<f64> = lsm.iter().map(|v| scale * v.exp()).collect();
                dlogits[codes[level] as usize] -= scale;
                p.head_backward(level, &codes[..level], &hc, &dlogits, g_params, &mut dctx);
            }
            let (dw, db) = g_aux.split_at_mut(d_model * d);
            affine_backward(&cm[..d_model * d], x, &dctx, dw, db, None);
            loss
        });
        losses.push(loss * scale);
        adam.step(params.values_mut(), &grad[..n_params], &trainable);
        let all = 0..content_map.len();
        aux_adam.step(&mut content_map, &grad[n_params..], &[all]);
    }
    losses
}
