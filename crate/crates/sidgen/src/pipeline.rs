use std::collections::BTreeSet;

use sidgen_core::catalog::{generate_catalog, generate_events, Catalog, Episode, InteractionEvent, UserProfile};
use sidgen_core::dataset::{build_examples, split, TrainingExample};
use sidgen_core::decoder::DecodeConfig;
use sidgen_core::eval::{episode_candidates, evaluate, EvalReport};
use sidgen_core::model::{ground, train, GroundStage, ScorerConfig, ScorerParams};
use sidgen_core::quantizer::fit;
use sidgen_core::sid_index::build_lookup;
use sidgen_core::{Codebook, LookupTable, Result, TokenSpace};

use crate::config::PipelineConfig;

/// Token layout for a codebook plus the locales and topics present in the
/// catalog and profiles.
pub fn token_space(codebook: &Codebook, episodes: &[Episode], profiles: &[UserProfile]) -> Result<TokenSpace> {
    let locales: BTreeSet<String> = episodes
        .iter()
        .map(|e| e.locale.clone())
        .chain(profiles.iter().map(|p| p.locale.clone()))
        .collect();
    let n_topics = profiles
        .iter()
        .flat_map(|p| p.affinity_topics.iter())
        .map(|&t| t as usize + 1)
        .max()
        .unwrap_or(0);
    TokenSpace::new(codebook.k(), codebook.m(), locales.into_iter().collect(), n_topics)
}

pub fn init_model(
    codebook: &Codebook,
    episodes: &[Episode],
    profiles: &[UserProfile],
    config: &ScorerConfig,
) -> Result<ScorerParams> {
    let d_u = profiles.first().map(|p| p.cf_embedding.len()).unwrap_or(0);
    ScorerParams::init(token_space(codebook, episodes, profiles)?, d_u, config)
}

/// Generated catalog and events plus every derived artifact.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub catalog: Catalog,
    pub events: Vec<InteractionEvent>,
    pub codebook: Codebook,
    pub lookup: LookupTable,
    pub train: Vec<TrainingExample>,
    pub eval: Vec<TrainingExample>,
}

impl Benchmark {
    pub fn build(config: &PipelineConfig) -> Result<Self> {
        let catalog = generate_catalog(&config.synth)?;
        let events = generate_events(&catalog, &config.synth)?;
        let embeddings: Vec<Vec<f64>> = catalog.episodes.iter().map(|e| e.content_embedding.clone()).collect();
        let q = &config.quantizer;
        let codebook = fit(&embeddings, q.k, q.m, q.seed, q.max_iters)?;
        let lookup = build_lookup(&catalog.episodes, &codebook, 0)?;
        let examples = build_examples(&events, &catalog.profiles, &catalog.episodes, &lookup, &config.dataset)?;
        let (train, eval) = split(examples, config.dataset.eval_fraction, config.dataset.seed)?;
        Ok(Self {
            catalog,
            events,
            codebook,
            lookup,
            train,
            eval,
        })
    }

    pub fn init_model(&self, config: &ScorerConfig) -> Result<ScorerParams> {
        init_model(&self.codebook, &self.catalog.episodes, &self.catalog.profiles, config)
    }

    /// Optional grounding (both stages) followed by supervised training.
    pub fn fit(&self, params: ScorerParams, config: &PipelineConfig, grounded: bool) -> Result<ScorerParams> {
        let params = if grounded {
            ground(params, &self.catalog.episodes, &self.codebook, &config.ground, GroundStage::Both)?.0
        } else {
            params
        };
        Ok(train(params, &self.train, &config.train)?.0)
    }

    pub fn evaluate(&self, params: &ScorerParams, decode: &DecodeConfig, k: usize) -> Result<EvalReport> {
        evaluate_model(params, &self.lookup, &self.eval, decode, k)
    }
}

/// Episode-level report with run metadata attached.
pub fn evaluate_model(
    params: &ScorerParams,
    lookup: &LookupTable,
    examples: &[TrainingExample],
    decode: &DecodeConfig,
    k: usize,
) -> Result<EvalReport> {
    let candidates = episode_candidates(params, lookup, examples, decode, k)?;
    let mut report = evaluate(&candidates, examples, k)?;
    annotate(&mut report, params, lookup, decode);
    Ok(report)
}

pub fn annotate(report: &mut EvalReport, params: &ScorerParams, lookup: &LookupTable, decode: &DecodeConfig) {
    let meta = &mut report.metadata;
    meta.insert("checkpoint_id".into(), params.id());
    meta.insert("lookup_build_id".into(), lookup.build_id.clone());
    meta.insert("decode".into(), serde_json::to_string(decode).unwrap_or_default());
}
