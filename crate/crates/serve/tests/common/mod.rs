#![allow(dead_code)]

use sidgen_core::catalog::{generate_catalog, Catalog, Episode, SynthConfig, UserProfile};
use sidgen_core::model::{ScorerConfig, ScorerParams};
use sidgen_core::quantizer::fit;
use sidgen_core::sid_index::build_lookup;
use sidgen_core::{Codebook, ControlToken, LookupTable, TokenSpace};
use sidgen_serve::{RecommendRequest, ServeConfig, Service, ServingState};

pub struct Fixture {
    pub catalog: Catalog,
    pub codebook: Codebook,
    pub lookup: LookupTable,
    pub params: ScorerParams,
}

impl Fixture {
    pub fn state(&self) -> ServingState {
        ServingState::new(
            self.params.clone(),
            self.codebook.clone(),
            self.lookup.clone(),
            &self.catalog.episodes,
            self.catalog.profiles.clone(),
        )
        .unwrap()
    }

    pub fn service(&self, ttl_secs: u64) -> Service {
        let config = ServeConfig {
            cache_ttl_secs: ttl_secs,
            ..ServeConfig::default()
        };
        Service::new(self.state(), config).unwrap()
    }
}

pub fn params_for(k: usize, m: usize, catalog: &Catalog, d_model: usize, seed: u64) -> ScorerParams {
    let tokens = TokenSpace::new(k, m, catalog.locales(), 6).unwrap();
    let cfg = ScorerConfig {
        d_model,
        hidden: d_model,
        embedding_scale: 1.0,
        seed,
        ..ScorerConfig::default()
    };
    ScorerParams::init(tokens, catalog.profiles[0].cf_embedding.len(), &cfg).unwrap()
}

/// Synthetic catalog quantized with the given (K, M) and an untrained scorer.
pub fn synthetic(synth: SynthConfig, k: usize, m: usize, d_model: usize) -> Fixture {
    let catalog = generate_catalog(&synth).unwrap();
    let embeddings: Vec<Vec<f64>> = catalog.episodes.iter().map(|e| e.content_embedding.clone()).collect();
    let codebook = fit(&embeddings, k, m, 3, 50).unwrap();
    let lookup = build_lookup(&catalog.episodes, &codebook, 0).unwrap();
    let params = params_for(k, m, &catalog, d_model, 9);
    Fixture {
        catalog,
        codebook,
        lookup,
        params,
    }
}

pub fn small() -> Fixture {
    let synth = SynthConfig {
        n_shows: 12,
        episodes_per_show: 4,
        n_users: 10,
        d: 16,
        d_u: 8,
        ..SynthConfig::default()
    };
    synthetic(synth, 4, 2, 16)
}

fn episode(id: &str, popularity: u64, embedding: Vec<f64>, locale: &str, playable: bool) -> Episode {
    Episode {
        episode_id: id.into(),
        show_id: format!("show-{id}"),
        text_tokens: vec![1],
        content_embedding: embedding,
        popularity,
        locale: locale.into(),
        playable,
        publish_time: 0,
    }
}

/// K=2, M=1: five episodes share id <0>, one sits alone at <1>.
pub fn colliding(popularity: [u64; 5]) -> Fixture {
    let names = ["a", "b", "c", "d", "e"];
    let mut episodes: Vec<Episode> = names
        .iter()
        .zip(popularity)
        .map(|(n, p)| episode(n, p, vec![1.0, 0.0], "en", true))
        .collect();
    episodes.push(episode("z", 1, vec![0.0, 1.0], "en", true));
    let codebook = Codebook::from_levels(vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]]).unwrap();
    let lookup = build_lookup(&episodes, &codebook, 0).unwrap();
    let profiles = vec![UserProfile {
        user_id: "u".into(),
        cf_embedding: vec![0.5, -0.5],
        locale: "en".into(),
        affinity_topics: vec![0],
    }];
    let catalog = Catalog { episodes, profiles };
    let params = params_for(2, 1, &catalog, 4, 1);
    Fixture {
        catalog,
        codebook,
        lookup,
        params,
    }
}

pub fn request(user: &str, k: usize) -> RecommendRequest {
    RecommendRequest {
        user_id: Some(user.into()),
        profile: None,
        history: Vec::new(),
        control: ControlToken::Unfamiliar,
        k,
        locale: None,
        exclude: Vec::new(),
    }
}
