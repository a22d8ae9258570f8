use serde::{Deserialize, Serialize};
use sidgen_core::catalog::UserProfile;
use sidgen_core::ControlToken;

use crate::error::ServeError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecommendRequest {
    #[serde(default)]
    pub user_id: Option<String>,
    /// Used instead of a stored profile when present.
    #[serde(default)]
    pub profile: Option<UserProfile>,
    /// Recent episode ids, oldest first.
    #[serde(default)]
    pub history: Vec<String>,
    pub control: ControlToken,
    pub k: usize,
    /// Defaults to the profile's locale.
    #[serde(default)]
    pub locale: Option<String>,
    #[serde(default)]
    pub exclude: Vec<String>,
}

impl RecommendRequest {
    pub fn parse(bytes: &[u8]) -> Result<Self, ServeError> {
        let req: Self = serde_json::from_slice(bytes).map_err(|e| ServeError::InvalidRequest(e.to_string()))?;
        req.validate()?;
        Ok(req)
    }

    pub fn validate(&self) -> Result<(), ServeError> {
        if self.k == 0 {
            return Err(ServeError::InvalidRequest("k must be at least 1".into()));
        }
        if self.user_id.is_none() && self.profile.is_none() {
            return Err(ServeError::InvalidRequest("either user_id or profile is required".into()));
        }
        if let Some(p) = &self.profile {
            if p.cf_embedding.iter().any(|v| !v.is_finite()) {
                return Err(ServeError::InvalidRequest("profile embedding is not finite".into()));
            }
        }
        Ok(())
    }

    /// Cache key: the request with `exclude` sorted and deduplicated.
    pub(crate) fn canonical_key(&self) -> String {
        let mut c = self.clone();
        c.exclude.sort();
        c.exclude.dedup();
        serde_json::to_string(&c).expect("request serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredEpisode {
    pub episode_id: String,
    /// Sequence log-probability of the id that produced this episode.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendResponse {
    pub candidates: Vec<ScoredEpisode>,
    pub checkpoint_id: String,
    pub lookup_build_id: String,
    pub cache_hit: bool,
    pub latency_ms: f64,
}

impl RecommendResponse {
    /// Equality ignoring `cache_hit` and `latency_ms`.
    pub fn same_payload(&self, other: &Self) -> bool {
        self.candidates == other.candidates
            && self.checkpoint_id == other.checkpoint_id
            && self.lookup_build_id == other.lookup_build_id
    }
}

/// Paths left out keep their current value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReloadRequest {
    #[serde(default)]
    pub checkpoint: Option<String>,
    #[serde(default)]
    pub codebook: Option<String>,
    #[serde(default)]
    pub lookup: Option<String>,
    #[serde(default)]
    pub catalog: Option<String>,
    #[serde(default)]
    pub profiles: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReloadReport {
    pub generation: u64,
    pub checkpoint_id: String,
    pub lookup_build_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthReport {
    pub status: String,
    pub checkpoint_id: String,
    pub lookup_build_id: String,
    pub generation: u64,
    pub uptime_secs: f64,
    pub requests: u64,
    pub errors: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub cache_entries: usize,
    pub skipped_history: u64,
    pub p50_ms: f64,
    pub p99_ms: f64,
}
