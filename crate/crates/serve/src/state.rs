use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sidgen_core::catalog::{parse_catalog, parse_profiles, Episode, UserProfile};
use sidgen_core::model::ScorerParams;
use sidgen_core::sid_index::PrefixTrie;
use sidgen_core::{Codebook, LookupTable};

use crate::error::ServeError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactPaths {
    pub checkpoint: PathBuf,
    pub codebook: PathBuf,
    pub lookup: PathBuf,
    pub catalog: PathBuf,
    pub profiles: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeInfo {
    pub playable: bool,
    pub locale: String,
}

/// Everything a request reads. Immutable once installed.
#[derive(Debug)]
pub struct ServingState {
    pub params: ScorerParams,
    pub codebook: Codebook,
    pub lookup: LookupTable,
    pub episodes: HashMap<String, EpisodeInfo>,
    pub profiles: HashMap<String, UserProfile>,
    pub checkpoint_id: String,
    pub(crate) trie: PrefixTrie,
    pub(crate) paths: Option<ArtifactPaths>,
    pub(crate) generation: u64,
}

fn read(path: &Path) -> Result<Vec<u8>, ServeError> {
    std::fs::read(path).map_err(|source| ServeError::Io {
        path: path.display().to_string(),
        source,
    })
}

impl ServingState {
    /// Cross-checks the artifacts: scorer, codebook and lookup must share
    /// (K, M); every looked-up episode must be in the catalog; profile
    /// vectors must match the scorer's user dimension.
    pub fn new(
        params: ScorerParams,
        codebook: Codebook,
        lookup: LookupTable,
        catalog: &[Episode],
        profiles: Vec<UserProfile>,
    ) -> Result<Self, ServeError> {
        let shape = params.shape();
        let dims = [
            ("checkpoint", shape.k(), shape.m()),
            ("codebook", codebook.k(), codebook.m()),
            ("lookup", lookup.k(), lookup.m()),
        ];
        if dims.iter().any(|&(_, k, m)| (k, m) != (dims[0].1, dims[0].2)) {
            let detail: Vec<String> = dims.iter().map(|(n, k, m)| format!("{n} K={k} M={m}")).collect();
            return Err(ServeError::Rejected(format!("token layouts disagree: {}", detail.join(", "))));
        }
        let episodes: HashMap<String, EpisodeInfo> = catalog
            .iter()
            .map(|e| {
                (
                    e.episode_id.clone(),
                    EpisodeInfo {
                        playable: e.playable,
                        locale: e.locale.clone(),
                    },
                )
            })
            .collect();
        if let Some(missing) = lookup
            .groups()
            .values()
            .flatten()
            .find(|e| !episodes.contains_key(e.as_str()))
        {
            return Err(ServeError::Rejected(format!("lookup episode {missing:?} not in catalog")));
        }
        let d_u = shape.d_u;
        if let Some(p) = profiles.iter().find(|p| p.cf_embedding.len() != d_u) {
            return Err(ServeError::Rejected(format!(
                "profile {:?} has dimension {}, scorer expects {d_u}",
                p.user_id,
                p.cf_embedding.len()
            )));
        }
        let trie = lookup.trie();
        if trie.is_empty() {
            return Err(ServeError::Rejected("lookup table is empty".into()));
        }
        Ok(Self {
            checkpoint_id: params.id(),
            trie,
            profiles: profiles.into_iter().map(|p| (p.user_id.clone(), p)).collect(),
            params,
            codebook,
            lookup,
            episodes,
            paths: None,
            generation: 0,
        })
    }

    pub fn load(paths: &ArtifactPaths) -> Result<Self, ServeError> {
        let params = ScorerParams::parse(&read(&paths.checkpoint)?)?;
        let codebook = Codebook::parse(&read(&paths.codebook)?)?;
        let lookup = LookupTable::parse(&read(&paths.lookup)?)?;
        let catalog = parse_catalog(&read(&paths.catalog)?)?;
        let profiles = parse_profiles(&read(&paths.profiles)?)?;
        let mut state = Self::new(params, codebook, lookup, &catalog, profiles)?;
        state.paths = Some(paths.clone());
        Ok(state)
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Build id of the lookup table, tagged with the install generation so
    /// that clients can tell reloads apart.
    pub fn lookup_build_id(&self) -> String {
        format!("{}#{}", self.lookup.build_id, self.generation)
    }
}
