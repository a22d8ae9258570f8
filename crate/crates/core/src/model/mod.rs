//! Autoregressive scorer over semantic-id tokens.
//!
//! The prompt (history, soft-prompt user vector, control token, metadata) is
//! folded into a context vector by an affine mixer; level `m` of the id is
//! then predicted by its own two-layer head from the context and the
//! embeddings of the already-chosen codes. Gradients are derived by hand.

mod checkpoint;
mod ground;
mod linalg;
mod train;

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::TrainingExample;
use crate::error::{Error, Result};
use crate::quantizer::SemanticId;
use crate::sid_index::{ControlToken, TokenSpace};
use crate::util::log_softmax;

pub use checkpoint::CHECKPOINT_FORMAT;
pub use ground::{ground, GroundConfig, GroundLog, GroundStage};
pub use train::{train, Adam, AdamConfig, TrainConfig, TrainLog};

use linalg::{add_scaled, affine, affine_backward};

/// Examples per parallel gradient chunk. Fixed so the reduction order does
/// not depend on the thread count.
const GRAD_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerShape {
    pub tokens: TokenSpace,
    pub d_model: usize,
    /// Hidden width of the user projection and of every level head.
    pub hidden: usize,
    pub d_u: usize,
    /// Exponential recency decay for history pooling; `None` is a plain mean.
    #[serde(default)]
    pub history_decay: Option<f64>,
}

impl ScorerShape {
    pub fn k(&self) -> usize {
        self.tokens.k
    }

    pub fn m(&self) -> usize {
        self.tokens.m
    }

    fn validate(&self) -> Result<()> {
        const MAX_WIDTH: usize = 1 << 14;
        for (name, v) in [("d_model", self.d_model), ("hidden", self.hidden), ("d_u", self.d_u)] {
            if v == 0 || v > MAX_WIDTH {
                return Err(Error::InvalidConfig(format!("{name} must lie in 1..={MAX_WIDTH}")));
            }
        }
        if let Some(decay) = self.history_decay {
            if !(decay > 0.0 && decay <= 1.0) {
                return Err(Error::InvalidConfig("history_decay must lie in (0, 1]".into()));
            }
        }
        TokenSpace::new(self.tokens.k, self.tokens.m, self.tokens.locales.clone(), self.tokens.n_topics)?;
        Layout::checked_total(self).ok_or_else(|| Error::InvalidConfig("scorer is too large".into()))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeadLayout {
    in_dim: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

/// Offsets of every parameter block inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
struct Layout {
    emb: usize,
    p_w1: usize,
    p_b1: usize,
    p_w2: usize,
    p_b2: usize,
    mix_w: usize,
    mix_b: usize,
    heads: Vec<HeadLayout>,
    total: usize,
}

impl Layout {
    fn checked_total(s: &ScorerShape) -> Option<usize> {
        let d = s.d_model;
        let h = s.hidden;
        let mut total = s.tokens.len().checked_mul(d)?;
        total = total.checked_add(h.checked_mul(s.d_u)?)?.checked_add(h)?;
        total = total.checked_add(d.checked_mul(h)?)?.checked_add(d)?;
        total = total.checked_add(d.checked_mul(4 * d)?)?.checked_add(d)?;
        for level in 0..s.m() {
            let in_dim = (level + 1).checked_mul(d)?;
            total = total.checked_add(h.checked_mul(in_dim)?)?.checked_add(h)?;
            total = total.checked_add(s.k().checked_mul(h)?)?.checked_add(s.k())?;
        }
        (total <= 1 << 31).then_some(total)
    }

    fn new(s: &ScorerShape) -> Self {
        let d = s.d_model;
        let h = s.hidden;
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let emb = take(s.tokens.len() * d);
        let p_w1 = take(h * s.d_u);
        let p_b1 = take(h);
        let p_w2 = take(d * h);
        let p_b2 = take(d);
        let mix_w = take(d * 4 * d);
        let mix_b = take(d);
        let heads = (0..s.m())
            .map(|level| {
                let in_dim = (level + 1) * d;
                HeadLayout {
                    in_dim,
                    w1: take(h * in_dim),
                    b1: take(h),
                    w2: take(s.k() * h),
                    b2: take(s.k()),
                }
            })
            .collect();
        Self {
            emb,
            p_w1,
            p_b1,
            p_w2,
            p_b2,
            mix_w,
            mix_b,
            heads,
            total: at,
        }
    }
}

/// A named contiguous block of parameters, `rows x cols`, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl ParamBlock {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.rows * self.cols
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScorerConfig {
    pub d_model: usize,
    pub hidden: usize,
    pub history_decay: Option<f64>,
    /// Standard deviation of the initial token embeddings.
    pub embedding_scale: f64,
    pub seed: u64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            hidden: 64,
            history_decay: None,
            embedding_scale: 0.1,
            seed: 0,
        }
    }
}

/// Trainable parameters of the scorer, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerParams {
    shape: ScorerShape,
    layout: Layout,
    data: Vec<f64>,
}

/// Prompt inputs for one request or example.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptContext {
    /// Oldest first.
    pub history: Vec<SemanticId>,
    pub user_vector: Vec<f64>,
    pub control: ControlToken,
    /// Metadata token ids (locale, affinity topics).
    pub metadata: Vec<u32>,
}

impl PromptContext {
    /// Builds a context, mapping locale and topics into metadata tokens.
    /// Unknown locales or topics are dropped.
    pub fn new(
        tokens: &TokenSpace,
        history: Vec<SemanticId>,
        user_vector: Vec<f64>,
        control: ControlToken,
        locale: &str,
        affinity_topics: &[u32],
    ) -> Self {
        let mut metadata: Vec<u32> = tokens.locale_token(locale).into_iter().collect();
        metadata.extend(affinity_topics.iter().filter_map(|&t| tokens.topic_token(t)));
        Self {
            history,
            user_vector,
            control,
            metadata,
        }
    }

    pub fn from_example(tokens: &TokenSpace, ex: &TrainingExample) -> Self {
        Self::new(
            tokens,
            ex.history.iter().map(|h| h.sid.clone()).collect(),
            ex.user_vector.clone(),
            ex.control,
            &ex.locale,
            &ex.affinity_topics,
        )
    }
}

/// Intermediate values of the context computation, kept for backprop.
#[derive(Debug, Clone)]
pub(crate) struct ContextCache {
    hist_weights: Vec<f64>,
    proj_hidden: Vec<f64>,
    z: Vec<f64>,
    pub(crate) ctx: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct HeadCache {
    input: Vec<f64>,
    hidden: Vec<f64>,
    pub(crate) logits: Vec<f64>,
}

/// A context paired with its target, ready for loss evaluation.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    pub(crate) ctx: PromptContext,
    pub(crate) target: SemanticId,
    pub(crate) weight: f64,
}

impl ScorerParams {
    /// All-zero parameters; every level distribution is uniform.
    pub fn zeros(shape: ScorerShape) -> Result<Self> {
        shape.validate()?;
        let layout = Layout::new(&shape);
        Ok(Self {
            data: vec![0.0; layout.total],
            layout,
            shape,
        })
    }

    /// Random initialization: Gaussian embeddings, fan-in scaled weights and
    /// zero biases.
    pub fn init(tokens: TokenSpace, d_u: usize, config: &ScorerConfig) -> Result<Self> {
        let shape = ScorerShape {
            tokens,
            d_model: config.d_model,
            hidden: config.hidden,
            d_u,
            history_decay: config.history_decay,
        };
        let mut p = Self::zeros(shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for block in p.blocks() {
            let scale = if block.name == "token_embeddings" {
                config.embedding_scale
            } else if block.rows == 1 {
                0.0
            } else {
                1.0 / (block.cols as f64).sqrt()
            };
            if scale == 0.0 {
                continue;
            }
            for v in &mut p.data[block.range()] {
                let g: f64 = StandardNormal.sample(&mut rng);
                *v = scale * g;
            }
        }
        Ok(p)
    }

    pub fn shape(&self) -> &ScorerShape {
        &self.shape
    }

    pub fn tokens(&self) -> &TokenSpace {
        &self.shape.tokens
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Blocks in checkpoint order.
    pub fn blocks(&self) -> Vec<ParamBlock> {
        let l = &self.layout;
        let s = &self.shape;
        let (d, h) = (s.d_model, s.hidden);
        let mk = |name: &str, offset, rows, cols| ParamBlock {
            name: name.to_string(),
            offset,
            rows,
            cols,
        };
        let mut out = vec![
            mk("token_embeddings", l.emb, s.tokens.len(), d),
            mk("proj_w1", l.p_w1, h, s.d_u),
            mk("proj_b1", l.p_b1, 1, h),
            mk("proj_w2", l.p_w2, d, h),
            mk("proj_b2", l.p_b2, 1, d),
            mk("mixer_w", l.mix_w, d, 4 * d),
            mk("mixer_b", l.mix_b, 1, d),
        ];
        for (i, hl) in l.heads.iter().enumerate() {
            out.push(mk(&format!("head{i}_w1"), hl.w1, h, hl.in_dim));
            out.push(mk(&format!("head{i}_b1"), hl.b1, 1, h));
            out.push(mk(&format!("head{i}_w2"), hl.w2, s.k(), h));
            out.push(mk(&format!("head{i}_b2"), hl.b2, 1, s.k()));
        }
        out
    }

    /// Range of one token's embedding row.
    pub fn embedding_range(&self, token: u32) -> Range<usize> {
        let d = self.shape.d_model;
        let start = self.layout.emb + token as usize * d;
        start..start + d
    }

    pub fn embedding(&self, token: u32) -> &[f64] {
        &self.data[self.embedding_range(token)]
    }

    /// Range covering all semantic-id token embeddings.
    pub fn sid_embedding_range(&self) -> Range<usize> {
        let d = self.shape.d_model;
        let start = self.layout.emb + TokenSpace::SID_BASE as usize * d;
        start..start + self.shape.tokens.sid_tokens() * d
    }

    /// Ranges of every level head's parameters.
    pub fn head_ranges(&self) -> Vec<Range<usize>> {
        self.layout
            .heads
            .iter()
            .map(|h| h.w1..h.b2 + self.shape.k())
            .collect()
    }

    pub fn projection_range(&self) -> Range<usize> {
        self.layout.p_w1..self.layout.p_b2 + self.shape.d_model
    }

    fn validate_context(&self, ctx: &PromptContext) -> Result<()> {
        if ctx.user_vector.len() != self.shape.d_u {
            return Err(Error::DimensionMismatch {
                expected: self.shape.d_u,
                got: ctx.user_vector.len(),
            });
        }
        if ctx.user_vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("user vector"));
        }
        for sid in &ctx.history {
            sid.validate(self.shape.k(), self.shape.m())?;
        }
        if let Some(&t) = ctx.metadata.iter().find(|&&t| t as usize >= self.shape.tokens.len()) {
            return Err(Error::InvalidConfig(format!("metadata token {t} outside the vocabulary")));
        }
        Ok(())
    }

    fn history_weights(&self, n: usize) -> Vec<f64> {
        if n == 0 {
            return Vec::new();
        }
        match self.shape.history_decay {
            None => vec![1.0 / n as f64; n],
            Some(decay) => {
                let raw: Vec<f64> = (0..n).map(|i| decay.powi((n - 1 - i) as i32)).collect();
                let total: f64 = raw.iter().sum();
                raw.into_iter().map(|w| w / total).collect()
            }
        }
    }

    pub(crate) fn context_forward(&self, ctx: &PromptContext) -> Result<ContextCache> {
        self.validate_context(ctx)?;
        let s = &self.shape;
        let l = &self.layout;
        let d = s.d_model;
        let m = s.m();
        let mut z = vec![0.0; 4 * d];

        let hist_weights = self.history_weights(ctx.history.len());
        for (sid, &w) in ctx.history.iter().zip(&hist_weights) {
            for (level, &c) in sid.codes().iter().enumerate() {
                add_scaled(&mut z[..d], self.embedding(s.tokens.sid_token(level, c)), w / m as f64);
            }
        }

        let mut proj_hidden = vec![0.0; s.hidden];
        affine(
            &self.data[l.p_w1..l.p_b1],
            &self.data[l.p_b1..l.p_w2],
            &ctx.user_vector,
            &mut proj_hidden,
        );
        proj_hidden.iter_mut().for_each(|v| *v = v.tanh());
        affine(
            &self.data[l.p_w2..l.p_b2],
            &self.data[l.p_b2..l.p_b2 + d],
            &proj_hidden,
            &mut z[d..2 * d],
        );

        z[2 * d..3 * d].copy_from_slice(self.embedding(s.tokens.control_token(ctx.control)));

        if !ctx.metadata.is_empty() {
            let w = 1.0 / ctx.metadata.len() as f64;
            for &t in &ctx.metadata {
                add_scaled(&mut z[3 * d..], self.embedding(t), w);
            }
        }

        let mut out = vec![0.0; d];
        affine(&self.data[l.mix_w..l.mix_b], &self.data[l.mix_b..l.mix_b + d], &z, &mut out);
        Ok(ContextCache {
            hist_weights,
            proj_hidden,
            z,
            ctx: out,
        })
    }

    /// The context vector fed to every level head.
    pub fn context_vector(&self, ctx: &PromptContext) -> Result<Vec<f64>> {
        Ok(self.context_forward(ctx)?.ctx)
    }

    pub(crate) fn head_forward(&self, ctx_vec: &[f64], prefix: &[u32]) -> HeadCache {
        let s = &self.shape;
        let hl = self.layout.heads[prefix.len()];
        let mut input = Vec::with_capacity(hl.in_dim);
        input.extend_from_slice(ctx_vec);
        for (level, &c) in prefix.iter().enumerate() {
            input.extend_from_slice(self.embedding(s.tokens.sid_token(level, c)));
        }
        debug_assert_eq!(input.len(), hl.in_dim);
        let mut hidden = vec![0.0; s.hidden];
        affine(&self.data[hl.w1..hl.b1], &self.data[hl.b1..hl.w2], &input, &mut hidden);
        hidden.iter_mut().for_each(|v| *v = v.tanh());
        let mut logits = vec![0.0; s.k()];
        affine(&self.data[hl.w2..hl.b2], &self.data[hl.b2..hl.b2 + s.k()], &hidden, &mut logits);
        HeadCache { input, hidden, logits }
    }

    fn check_prefix(&self, prefix: &[u32]) -> Result<()> {
        if prefix.len() >= self.shape.m() {
            return Err(Error::PrefixTooLong {
                len: prefix.len(),
                levels: self.shape.m(),
            });
        }
        for (level, &c) in prefix.iter().enumerate() {
            if c as usize >= self.shape.k() {
                return Err(Error::CodeOutOfRange {
                    level,
                    code: c,
                    k: self.shape.k(),
                });
            }
        }
        Ok(())
    }

    /// Logits of the next level given a precomputed context vector.
    pub fn head_logits(&self, ctx_vec: &[f64], prefix: &[u32]) -> Result<Vec<f64>> {
        self.check_prefix(prefix)?;
        if ctx_vec.len() != self.shape.d_model {
            return Err(Error::DimensionMismatch {
                expected: self.shape.d_model,
                got: ctx_vec.len(),
            });
        }
        Ok(self.head_forward(ctx_vec, prefix).logits)
    }

    /// K logits for the code following `prefix`.
    pub fn level_logits(&self, ctx: &PromptContext, prefix: &[u32]) -> Result<Vec<f64>> {
        self.check_prefix(prefix)?;
        let cache = self.context_forward(ctx)?;
        Ok(self.head_forward(&cache.ctx, prefix).logits)
    }

    /// Log-probability of a full id under teacher forcing.
    pub fn sequence_log_prob(&self, ctx: &PromptContext, sid: &SemanticId) -> Result<f64> {
        sid.validate(self.shape.k(), self.shape.m())?;
        let cache = self.context_forward(ctx)?;
        let codes = sid.codes();
        Ok((0..codes.len())
            .map(|level| log_softmax(&self.head_forward(&cache.ctx, &codes[..level]).logits)[codes[level] as usize])
            .sum())
    }

    /// `weight * sum_m -log p(c_m | context, c_<m)`.
    pub fn example_loss(&self, ex: &TrainingExample) -> Result<f64> {
        let prep = self.prepare(ex)?;
        Ok(self.prepared_loss(&prep, None))
    }

    pub(crate) fn prepare(&self, ex: &TrainingExample) -> Result<Prepared> {
        ex.target.validate(self.shape.k(), self.shape.m())?;
        let ctx = PromptContext::from_example(&self.shape.tokens, ex);
        self.validate_context(&ctx)?;
        Ok(Prepared {
            ctx,
            target: ex.target.clone(),
            weight: ex.sample_weight,
        })
    }

    pub(crate) fn prepare_all(&self, examples: &[TrainingExample]) -> Result<Vec<Prepared>> {
        examples.iter().map(|e| self.prepare(e)).collect()
    }

    /// Loss of one prepared example; when `grad` is given, adds
    /// `scale * d loss / d params` into it.
    pub(crate) fn prepared_loss(&self, prep: &Prepared, grad: Option<(&mut [f64], f64)>) -> f64 {
        let cache = self
            .context_forward(&prep.ctx)
            .expect("prepared contexts are validated");
        let codes = prep.target.codes();
        let mut loss = 0.0;
        let mut heads = Vec::with_capacity(codes.len());
        for level in 0..codes.len() {
            let hc = self.head_forward(&cache.ctx, &codes[..level]);
            let lsm = log_softmax(&hc.logits);
            loss -= lsm[codes[level] as usize];
            heads.push((hc, lsm));
        }
        if let Some((grad, scale)) = grad {
            let w = scale * prep.weight;
            let mut dctx = vec![0.0; self.shape.d_model];
            for (level, (hc, lsm)) in heads.iter().enumerate() {
                let mut dlogits: Vec<f64> = lsm.iter().map(|v| w * v.exp()).collect();
                dlogits[codes[level] as usize] -= w;
                self.head_backward(level, &codes[..level], hc, &dlogits, grad, &mut dctx);
            }
            self.context_backward(&prep.ctx, &cache, &dctx, grad);
        }
        prep.weight * loss
    }

    /// Backprop through one level head. Adds into `grad` and `dctx`.
    pub(crate) fn head_backward(
        &self,
        level: usize,
        prefix: &[u32],
        hc: &HeadCache,
        dlogits: &[f64],
        grad: &mut [f64],
        dctx: &mut [f64],
    ) {
        let s = &self.shape;
        let d = s.d_model;
        let h = s.hidden;
        let hl = self.layout.heads[level];
        let mut dhidden = vec![0.0; h];
        {
            let (dw2, db2) = grad[hl.w2..hl.b2 + s.k()].split_at_mut(hl.b2 - hl.w2);
            affine_backward(&self.data[hl.w2..hl.b2], &hc.hidden, dlogits, dw2, db2, Some(&mut dhidden));
        }
        let da: Vec<f64> = dhidden
            .iter()
            .zip(&hc.hidden)
            .map(|(g, t)| g * (1.0 - t * t))
            .collect();
        let mut dinput = vec![0.0; hl.in_dim];
        {
            let (dw1, db1) = grad[hl.w1..hl.w2].split_at_mut(hl.b1 - hl.w1);
            affine_backward(&self.data[hl.w1..hl.b1], &hc.input, &da, dw1, db1, Some(&mut dinput));
        }
        add_scaled(dctx, &dinput[..d], 1.0);
        for (l, &c) in prefix.iter().enumerate() {
            let r = self.embedding_range(s.tokens.sid_token(l, c));
            add_scaled(&mut grad[r], &dinput[(l + 1) * d..(l + 2) * d], 1.0);
        }
    }

    fn context_backward(&self, ctx: &PromptContext, cache: &ContextCache, dctx: &[f64], grad: &mut [f64]) {
        let s = &self.shape;
        let l = &self.layout;
        let d = s.d_model;
        let m = s.m();
        let mut dz = vec![0.0; 4 * d];
        {
            let (dw, db) = grad[l.mix_w..l.mix_b + d].split_at_mut(l.mix_b - l.mix_w);
            affine_backward(&self.data[l.mix_w..l.mix_b], &cache.z, dctx, dw, db, Some(&mut dz));
        }
        for (sid, &w) in ctx.history.iter().zip(&cache.hist_weights) {
            for (level, &c) in sid.codes().iter().enumerate() {
                let r = self.embedding_range(s.tokens.sid_token(level, c));
                add_scaled(&mut grad[r], &dz[..d], w / m as f64);
            }
        }
        let mut dhidden = vec![0.0; s.hidden];
        {
            let (dw2, db2) = grad[l.p_w2..l.p_b2 + d].split_at_mut(l.p_b2 - l.p_w2);
            affine_backward(
                &self.data[l.p_w2..l.p_b2],
                &cache.proj_hidden,
                &dz[d..2 * d],
                dw2,
                db2,
                Some(&mut dhidden),
            );
        }
        let da: Vec<f64> = dhidden
            .iter()
            .zip(&cache.proj_hidden)
            .map(|(g, t)| g * (1.0 - t * t))
            .collect();
        {
            let (dw1, db1) = grad[l.p_w1..l.p_w2].split_at_mut(l.p_b1 - l.p_w1);
            affine_backward(&self.data[l.p_w1..l.p_b1], &ctx.user_vector, &da, dw1, db1, None);
        }
        let r = self.embedding_range(s.tokens.control_token(ctx.control));
        add_scaled(&mut grad[r], &dz[2 * d..3 * d], 1.0);
        if !ctx.metadata.is_empty() {
            let w = 1.0 / ctx.metadata.len() as f64;
            for &t in &ctx.metadata {
                let r = self.embedding_range(t);
                add_scaled(&mut grad[r], &dz[3 * d..], w);
            }
        }
    }

    pub(crate) fn prepared_grad(&self, batch: &[&Prepared]) -> (f64, Vec<f64>) {
        let n = batch.len().max(1) as f64;
        let (loss, grad) = accumulate(batch, self.data.len(), |p, g| {
            self.prepared_loss(p, Some((g, 1.0 / n)))
        });
        (loss / n, grad)
    }

    /// Mean weighted loss over `batch` and its gradient.
    pub fn grad(&self, batch: &[TrainingExample]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("batch"));
        }
        let prepared = self.prepare_all(batch)?;
        let refs: Vec<&Prepared> = prepared.iter().collect();
        Ok(self.prepared_grad(&refs))
    }

    /// Mean weighted loss over `examples`.
    pub fn mean_loss(&self, examples: &[TrainingExample]) -> Result<f64> {
        if examples.is_empty() {
            return Err(Error::EmptyInput("examples"));
        }
        let prepared = self.prepare_all(examples)?;
        let losses: Vec<f64> = prepared.par_iter().map(|p| self.prepared_loss(p, None)).collect();
        Ok(losses.iter().sum::<f64>() / prepared.len() as f64)
    }

    /// Digest of the shape and every parameter value.
    pub fn id(&self) -> String {
        let mut bytes = serde_json::to_vec(&self.shape).unwrap_or_default();
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        crate::util::digest_hex(&bytes)[..16].to_string()
    }
}

/// Sums `f(item, grad)` over `items` in fixed-size parallel chunks, each
/// with its own gradient buffer, then reduces the chunks in order.
pub(crate) fn accumulate<T, F>(items: &[T], grad_len: usize, f: F) -> (f64, Vec<f64>)
where
    T: Sync,
    F: Fn(&T, &mut [f64]) -> f64 + Sync,
{
    let partials: Vec<(f64, Vec<f64>)> = items
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut g = vec![0.0; grad_len];
            let loss = chunk.iter().fold(0.0, |acc, it| acc + f(it, &mut g));
            (loss, g)
        })
        .collect();
    let mut total = vec![0.0; grad_len];
    let mut loss = 0.0;
    for (l, g) in partials {
        loss += l;
        add_scaled(&mut total, &g, 1.0);
    }
    (loss, total)
}

#[cfg(test)]
mod tests;
