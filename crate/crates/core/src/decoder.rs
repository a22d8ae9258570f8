//! Candidate generation: beam search plus greedy and ancestral-sampling
//! ablations, optionally constrained to ids present in the lookup trie.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::TrainingExample;
use crate::error::{Error, Result};
use crate::model::{PromptContext, ScorerParams};
use crate::quantizer::SemanticId;
use crate::sid_index::PrefixTrie;
use crate::util::log_softmax;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    Beam,
    Greedy,
    Sample,
}

impl std::str::FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beam" => Ok(Self::Beam),
            "greedy" => Ok(Self::Greedy),
            "sample" => Ok(Self::Sample),
            other => Err(Error::InvalidConfig(format!("unknown decode mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub mode: DecodeMode,
    pub beam_width: usize,
    pub temperature: f64,
    pub top_p: f64,
    /// Restrict expansions to prefixes of known ids.
    pub constrained: bool,
    pub seed: u64,
    /// Number of sampled sequences (sample mode only).
    pub num_candidates: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            mode: DecodeMode::Beam,
            beam_width: 30,
            temperature: 1.0,
            top_p: 0.9,
            constrained: false,
            seed: 0,
            num_candidates: 30,
        }
    }
}

impl DecodeConfig {
    pub fn beam(width: usize) -> Self {
        Self {
            beam_width: width,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 {
            return Err(Error::InvalidConfig("beam_width must be at least 1".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidConfig("temperature must be positive".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::InvalidConfig("top_p must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub sid: SemanticId,
    /// Sum of per-level log-softmax values of the chosen codes.
    pub log_prob: f64,
}

/// Higher log-probability first, then the lexicographically smaller tuple.
fn rank(a: &(Vec<u32>, f64), b: &(Vec<u32>, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

fn trie_for<'a>(config: &DecodeConfig, trie: Option<&'a PrefixTrie>) -> Result<Option<&'a PrefixTrie>> {
    if !config.constrained {
        return Ok(None);
    }
    match trie {
        Some(t) if !t.is_empty() => Ok(Some(t)),
        _ => Err(Error::EmptyTrie),
    }
}

fn allowed_codes(trie: Option<&PrefixTrie>, prefix: &[u32], k: usize) -> Vec<u32> {
    match trie {
        Some(t) => t.allowed(prefix).to_vec(),
        None => (0..k as u32).collect(),
    }
}

/// Width-B beam search over all M levels.
pub fn beam_search(
    params: &ScorerParams,
    ctx: &PromptContext,
    config: &DecodeConfig,
    trie: Option<&PrefixTrie>,
) -> Result<Vec<Candidate>> {
    config.validate()?;
    let trie = trie_for(config, trie)?;
    let ctx_vec = params.context_vector(ctx)?;
    let k = params.shape().k();
    let mut beams: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), 0.0)];
    for _level in 0..params.shape().m() {
        let mut expanded = Vec::with_capacity(beams.len() * k);
        for (prefix, lp) in &beams {
            let lsm = log_softmax(&params.head_logits(&ctx_vec, prefix)?);
            for c in allowed_codes(trie, prefix, k) {
                let mut next = prefix.clone();
                next.push(c);
                expanded.push((next, lp + lsm[c as usize]));
            }
        }
        expanded.sort_by(rank);
        expanded.truncate(config.beam_width);
        beams = expanded;
    }
    Ok(beams
        .into_iter()
        .map(|(codes, log_prob)| Candidate {
            sid: SemanticId(codes),
            log_prob,
        })
        .collect())
}

/// Greedy (one sequence, argmax per level) or ancestral sampling with
/// temperature and nucleus truncation. Returned log-probabilities are the
/// untempered model values.
pub fn sample_decode(
    params: &ScorerParams,
    ctx: &PromptContext,
    config: &DecodeConfig,
    trie: Option<&PrefixTrie>,
) -> Result<Vec<Candidate>> {
    config.validate()?;
    let trie = trie_for(config, trie)?;
    let ctx_vec = params.context_vector(ctx)?;
    let k = params.shape().k();
    let m = params.shape().m();
    if config.mode != DecodeMode::Sample {
        let mut codes = Vec::with_capacity(m);
        let mut total = 0.0;
        for _ in 0..m {
            let lsm = log_softmax(&params.head_logits(&ctx_vec, &codes)?);
            let allowed = allowed_codes(trie, &codes, k);
            let best = *allowed
                .iter()
                .max_by(|&&a, &&b| lsm[a as usize].total_cmp(&lsm[b as usize]).then(b.cmp(&a)))
                .ok_or(Error::EmptyTrie)?;
            total += lsm[best as usize];
            codes.push(best);
        }
        return Ok(vec![Candidate {
            sid: SemanticId(codes),
            log_prob: total,
        }]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::with_capacity(config.num_candidates);
    for _ in 0..config.num_candidates {
        let mut codes = Vec::with_capacity(m);
        let mut total = 0.0;
        for _ in 0..m {
            let lsm = log_softmax(&params.head_logits(&ctx_vec, &codes)?);
            let allowed = allowed_codes(trie, &codes, k);
            let c = sample_nucleus(&lsm, &allowed, config.temperature, config.top_p, &mut rng)?;
            total += lsm[c as usize];
            codes.push(c);
        }
        out.push(Candidate {
            sid: SemanticId(codes),
            log_prob: total,
        });
    }
    Ok(out)
}

fn sample_nucleus(lsm: &[f64], allowed: &[u32], temperature: f64, top_p: f64, rng: &mut ChaCha8Rng) -> Result<u32> {
    if allowed.is_empty() {
        return Err(Error::EmptyTrie);
    }
    let scaled: Vec<f64> = allowed.iter().map(|&c| lsm[c as usize] / temperature).collect();
    let probs: Vec<f64> = log_softmax(&scaled).into_iter().map(f64::exp).collect();
    let mut order: Vec<usize> = (0..allowed.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut kept = Vec::new();
    let mut mass = 0.0;
    for i in order {
        kept.push(i);
        mass += probs[i];
        if mass >= top_p {
            break;
        }
    }
    let mut r = rng.random::<f64>() * mass;
    for &i in &kept {
        if r < probs[i] {
            return Ok(allowed[i]);
        }
        r -= probs[i];
    }
    Ok(allowed[*kept.last().expect("nucleus is non-empty")])
}

/// Dispatches on `config.mode`.
pub fn decode(
    params: &ScorerParams,
    ctx: &PromptContext,
    config: &DecodeConfig,
    trie: Option<&PrefixTrie>,
) -> Result<Vec<Candidate>> {
    match config.mode {
        DecodeMode::Beam => beam_search(params, ctx, config, trie),
        DecodeMode::Greedy | DecodeMode::Sample => sample_decode(params, ctx, config, trie),
    }
}

/// Decodes every example in parallel; output order follows `examples`.
pub fn decode_examples(
    params: &ScorerParams,
    examples: &[TrainingExample],
    config: &DecodeConfig,
    trie: Option<&PrefixTrie>,
) -> Result<Vec<Vec<Candidate>>> {
    examples
        .par_iter()
        .map(|ex| decode(params, &PromptContext::from_example(params.tokens(), ex), config, trie))
        .collect()
}

/// Fraction of examples where some top-`k` candidate agrees with the target
/// on its first `n` codes.
pub fn prefix_ceiling_recall(candidates: &[Vec<SemanticId>], targets: &[SemanticId], n: usize, k: usize) -> Result<f64> {
    if candidates.len() != targets.len() {
        return Err(Error::InvalidConfig("one candidate list per target is required".into()));
    }
    if targets.is_empty() {
        return Err(Error::EmptyInput("targets"));
    }
    let mut hits = 0usize;
    for (cands, target) in candidates.iter().zip(targets) {
        if n == 0 || n > target.len() {
            return Err(Error::InvalidConfig(format!(
                "prefix length {n} outside 1..={}",
                target.len()
            )));
        }
        let want = &target.codes()[..n];
        if cands.iter().take(k).any(|c| c.len() >= n && &c.codes()[..n] == want) {
            hits += 1;
        }
    }
    Ok(hits as f64 / targets.len() as f64)
}
