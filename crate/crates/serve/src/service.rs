use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use sidgen_core::decoder::{beam_search, DecodeConfig};
use sidgen_core::model::PromptContext;
use tracing::{info, warn};

use crate::api::{HealthReport, RecommendRequest, RecommendResponse, ReloadReport, ReloadRequest, ScoredEpisode};
use crate::error::ServeError;
use crate::metrics::Metrics;
use crate::state::{ArtifactPaths, ServingState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeConfig {
    pub beam_width: usize,
    /// Zero disables the cache.
    pub cache_ttl_secs: u64,
    /// Most recent history items fed to the scorer.
    pub history_len: usize,
    pub latency_window: usize,
    pub max_cache_entries: usize,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            beam_width: 30,
            cache_ttl_secs: 60,
            history_len: 20,
            latency_window: 4096,
            max_cache_entries: 10_000,
        }
    }
}

struct CacheEntry {
    stored: Instant,
    response: RecommendResponse,
}

pub struct Service {
    config: ServeConfig,
    state: RwLock<Arc<ServingState>>,
    cache: Mutex<HashMap<String, CacheEntry>>,
    reload_lock: Mutex<()>,
    next_generation: AtomicU64,
    metrics: Metrics,
    started: Instant,
}

impl Service {
    pub fn new(mut state: ServingState, config: ServeConfig) -> Result<Self, ServeError> {
        if config.beam_width == 0 {
            return Err(ServeError::InvalidRequest("beam_width must be at least 1".into()));
        }
        state.generation = 0;
        Ok(Self {
            metrics: Metrics::new(config.latency_window),
            config,
            state: RwLock::new(Arc::new(state)),
            cache: Mutex::new(HashMap::new()),
            reload_lock: Mutex::new(()),
            next_generation: AtomicU64::new(1),
            started: Instant::now(),
        })
    }

    pub fn config(&self) -> &ServeConfig {
        &self.config
    }

    /// Snapshot of the state new requests will use.
    pub fn state(&self) -> Arc<ServingState> {
        self.state.read().clone()
    }

    pub fn recommend_json(&self, body: &[u8]) -> Result<RecommendResponse, ServeError> {
        match RecommendRequest::parse(body) {
            Ok(req) => self.recommend(&req),
            Err(e) => {
                Metrics::bump(&self.metrics.requests, 1);
                Metrics::bump(&self.metrics.errors, 1);
                Err(e)
            }
        }
    }

    pub fn recommend(&self, req: &RecommendRequest) -> Result<RecommendResponse, ServeError> {
        let start = Instant::now();
        Metrics::bump(&self.metrics.requests, 1);
        let result = self.recommend_inner(req, start);
        match &result {
            Ok(resp) => self.metrics.record_latency(resp.latency_ms),
            Err(_) => Metrics::bump(&self.metrics.errors, 1),
        }
        result
    }

    fn recommend_inner(&self, req: &RecommendRequest, start: Instant) -> Result<RecommendResponse, ServeError> {
        req.validate()?;
        // one snapshot for the whole request
        let state = self.state();
        let ttl = Duration::from_secs(self.config.cache_ttl_secs);
        let key = format!("{}|{}", state.generation, req.canonical_key());
        if !ttl.is_zero() {
            if let Some(entry) = self.cache.lock().get(&key) {
                if entry.stored.elapsed() < ttl {
                    Metrics::bump(&self.metrics.cache_hits, 1);
                    let mut resp = entry.response.clone();
                    resp.cache_hit = true;
                    resp.latency_ms = start.elapsed().as_secs_f64() * 1e3;
                    return Ok(resp);
                }
            }
            Metrics::bump(&self.metrics.cache_misses, 1);
        }
        let mut resp = self.compute(&state, req)?;
        resp.latency_ms = start.elapsed().as_secs_f64() * 1e3;
        if !ttl.is_zero() {
            let mut cache = self.cache.lock();
            if cache.len() >= self.config.max_cache_entries {
                cache.retain(|_, e| e.stored.elapsed() < ttl);
                if cache.len() >= self.config.max_cache_entries {
                    cache.clear();
                }
            }
            cache.insert(
                key,
                CacheEntry {
                    stored: Instant::now(),
                    response: resp.clone(),
                },
            );
        }
        Ok(resp)
    }

    fn compute(&self, state: &ServingState, req: &RecommendRequest) -> Result<RecommendResponse, ServeError> {
        let profile = match (&req.profile, &req.user_id) {
            (Some(p), _) => p,
            (None, Some(uid)) => state
                .profiles
                .get(uid)
                .ok_or_else(|| ServeError::UnknownUser(uid.clone()))?,
            (None, None) => return Err(ServeError::InvalidRequest("either user_id or profile is required".into())),
        };
        let locale = req.locale.as_deref().unwrap_or(&profile.locale);

        let mut history = Vec::with_capacity(req.history.len());
        let mut skipped = 0u64;
        for ep in &req.history {
            match state.lookup.sid_of(ep) {
                Some(sid) => history.push(sid.clone()),
                None => skipped += 1,
            }
        }
        if skipped > 0 {
            warn!(skipped, "history episodes not in the lookup table");
            Metrics::bump(&self.metrics.skipped_history, skipped);
        }
        let keep_from = history.len().saturating_sub(self.config.history_len);
        history.drain(..keep_from);

        let ctx = PromptContext::new(
            state.params.tokens(),
            history,
            profile.cf_embedding.clone(),
            req.control,
            locale,
            &profile.affinity_topics,
        );
        let decode = DecodeConfig {
            constrained: true,
            ..DecodeConfig::beam(self.config.beam_width)
        };
        let decoded = beam_search(&state.params, &ctx, &decode, Some(&state.trie))?;

        let mut exclude: HashSet<String> = req.exclude.iter().cloned().collect();
        let eligible = |e: &str| {
            state
                .episodes
                .get(e)
                .is_some_and(|info| info.playable && info.locale == locale)
        };
        let candidates = state
            .lookup
            .resolve_ranked(decoded.iter().map(|c| &c.sid), eligible, &mut exclude, req.k)
            .into_iter()
            .map(|(i, episode_id)| ScoredEpisode {
                episode_id,
                score: decoded[i].log_prob,
            })
            .collect();
        Ok(RecommendResponse {
            candidates,
            checkpoint_id: state.checkpoint_id.clone(),
            lookup_build_id: state.lookup_build_id(),
            cache_hit: false,
            latency_ms: 0.0,
        })
    }

    /// Loads artifacts (unspecified paths keep their current value) and
    /// swaps them in. On failure the current state keeps serving.
    pub fn reload(&self, req: &ReloadRequest) -> Result<ReloadReport, ServeError> {
        let current = self.state();
        let pick = |new: &Option<String>, old: Option<&std::path::PathBuf>, what: &str| {
            match (new, old) {
                (Some(p), _) => Ok(p.into()),
                (None, Some(p)) => Ok(p.clone()),
                (None, None) => Err(ServeError::InvalidRequest(format!("no {what} path to reload from"))),
            }
        };
        let old = current.paths.as_ref();
        let paths = ArtifactPaths {
            checkpoint: pick(&req.checkpoint, old.map(|p| &p.checkpoint), "checkpoint")?,
            codebook: pick(&req.codebook, old.map(|p| &p.codebook), "codebook")?,
            lookup: pick(&req.lookup, old.map(|p| &p.lookup), "lookup")?,
            catalog: pick(&req.catalog, old.map(|p| &p.catalog), "catalog")?,
            profiles: pick(&req.profiles, old.map(|p| &p.profiles), "profiles")?,
        };
        let state = ServingState::load(&paths).inspect_err(|e| warn!(error = %e, "reload rejected"))?;
        Ok(self.install(state))
    }

    /// Atomically replaces the serving state and drops cached responses.
    /// Requests already running finish on the state they started with.
    pub fn install(&self, mut state: ServingState) -> ReloadReport {
        let _guard = self.reload_lock.lock();
        state.generation = self.next_generation.fetch_add(1, Ordering::SeqCst);
        let report = ReloadReport {
            generation: state.generation,
            checkpoint_id: state.checkpoint_id.clone(),
            lookup_build_id: state.lookup_build_id(),
        };
        *self.state.write() = Arc::new(state);
        self.cache.lock().clear();
        info!(generation = report.generation, lookup = %report.lookup_build_id, "state installed");
        report
    }

    pub fn healthz(&self) -> HealthReport {
        let state = self.state();
        let q = self.metrics.quantiles(&[0.5, 0.99]);
        HealthReport {
            status: "ok".into(),
            checkpoint_id: state.checkpoint_id.clone(),
            lookup_build_id: state.lookup_build_id(),
            generation: state.generation,
            uptime_secs: self.started.elapsed().as_secs_f64(),
            requests: Metrics::get(&self.metrics.requests),
            errors: Metrics::get(&self.metrics.errors),
            cache_hits: Metrics::get(&self.metrics.cache_hits),
            cache_misses: Metrics::get(&self.metrics.cache_misses),
            cache_entries: self.cache.lock().len(),
            skipped_history: Metrics::get(&self.metrics.skipped_history),
            p50_ms: q[0],
            p99_ms: q[1],
        }
    }
}
