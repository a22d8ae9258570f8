//! Token namespace for semantic ids, the SID-to-episode lookup table and
//! popularity-ordered collision resolution.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact::{format_err, read_jsonl, to_jsonl_bytes};
use crate::catalog::Episode;
use crate::error::{Error, Result};
use crate::quantizer::{Codebook, SemanticId};
use crate::util::{self, digest_hex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlToken {
    Familiar,
    Unfamiliar,
}

impl std::str::FromStr for ControlToken {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "familiar" => Ok(Self::Familiar),
            "unfamiliar" => Ok(Self::Unfamiliar),
            other => Err(Error::InvalidConfig(format!("unknown control token {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Bos,
    Eos,
    Placeholder,
    Control(ControlToken),
    Sid { level: usize, code: u32 },
    Locale(usize),
    Topic(u32),
}

/// Layout of the scorer vocabulary.
///
/// `[BOS, EOS, PLACEHOLDER, FAMILIAR, UNFAMILIAR]`, then `M*K` SID tokens
/// (level-major), then one token per locale, then one per affinity topic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpace {
    pub k: usize,
    pub m: usize,
    pub locales: Vec<String>,
    pub n_topics: usize,
}

impl TokenSpace {
    pub const BOS: u32 = 0;
    pub const EOS: u32 = 1;
    pub const PLACEHOLDER: u32 = 2;
    pub const FAMILIAR: u32 = 3;
    pub const UNFAMILIAR: u32 = 4;
    pub const SID_BASE: u32 = 5;

    pub fn new(k: usize, m: usize, locales: Vec<String>, n_topics: usize) -> Result<Self> {
        if k == 0 || m == 0 {
            return Err(Error::InvalidConfig("K and M must be at least 1".into()));
        }
        let total = m
            .checked_mul(k)
            .and_then(|s| s.checked_add(locales.len()))
            .and_then(|s| s.checked_add(n_topics))
            .and_then(|s| s.checked_add(Self::SID_BASE as usize));
        match total {
            Some(t) if t <= u32::MAX as usize => Ok(Self {
                k,
                m,
                locales,
                n_topics,
            }),
            _ => Err(Error::InvalidConfig("token space too large".into())),
        }
    }

    pub fn sid_tokens(&self) -> usize {
        self.m * self.k
    }

    pub fn len(&self) -> usize {
        Self::SID_BASE as usize + self.sid_tokens() + self.locales.len() + self.n_topics
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Token of `code` at zero-based `level`.
    pub fn sid_token(&self, level: usize, code: u32) -> u32 {
        debug_assert!(level < self.m && (code as usize) < self.k);
        Self::SID_BASE + (level * self.k) as u32 + code
    }

    pub fn control_token(&self, c: ControlToken) -> u32 {
        match c {
            ControlToken::Familiar => Self::FAMILIAR,
            ControlToken::Unfamiliar => Self::UNFAMILIAR,
        }
    }

    pub fn locale_token(&self, locale: &str) -> Option<u32> {
        self.locales
            .iter()
            .position(|l| l == locale)
            .map(|i| (Self::SID_BASE as usize + self.sid_tokens() + i) as u32)
    }

    pub fn topic_token(&self, topic: u32) -> Option<u32> {
        ((topic as usize) < self.n_topics)
            .then(|| (Self::SID_BASE as usize + self.sid_tokens() + self.locales.len() + topic as usize) as u32)
    }

    /// Inverse of the token layout; `None` for ids outside the vocabulary.
    pub fn decode(&self, token: u32) -> Option<TokenKind> {
        let t = token as usize;
        let sid_end = Self::SID_BASE as usize + self.sid_tokens();
        let loc_end = sid_end + self.locales.len();
        Some(match token {
            Self::BOS => TokenKind::Bos,
            Self::EOS => TokenKind::Eos,
            Self::PLACEHOLDER => TokenKind::Placeholder,
            Self::FAMILIAR => TokenKind::Control(ControlToken::Familiar),
            Self::UNFAMILIAR => TokenKind::Control(ControlToken::Unfamiliar),
            _ if t < sid_end => {
                let off = t - Self::SID_BASE as usize;
                TokenKind::Sid {
                    level: off / self.k,
                    code: (off % self.k) as u32,
                }
            }
            _ if t < loc_end => TokenKind::Locale(t - sid_end),
            _ if t < self.len() => TokenKind::Topic((t - loc_end) as u32),
            _ => return None,
        })
    }
}

/// Semantic id to ordered collision group, plus the reverse map.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupTable {
    k: usize,
    m: usize,
    groups: BTreeMap<SemanticId, Vec<String>>,
    reverse: HashMap<String, SemanticId>,
    pub build_id: String,
    pub built_at: i64,
}

fn group_order(a: &Episode, b: &Episode) -> std::cmp::Ordering {
    b.popularity
        .cmp(&a.popularity)
        .then_with(|| a.episode_id.cmp(&b.episode_id))
}

/// Encodes every episode and groups those sharing a semantic id, most
/// popular first (episode id breaks popularity ties).
pub fn build_lookup(episodes: &[Episode], codebook: &Codebook, built_at: i64) -> Result<LookupTable> {
    let mut by_sid: BTreeMap<SemanticId, Vec<&Episode>> = BTreeMap::new();
    for e in episodes {
        let sid = codebook.encode(&e.content_embedding)?;
        by_sid.entry(sid).or_default().push(e);
    }
    let groups = by_sid
        .into_iter()
        .map(|(sid, mut eps)| {
            eps.sort_by(|a, b| group_order(a, b));
            (sid, eps.into_iter().map(|e| e.episode_id.clone()).collect())
        })
        .collect();
    LookupTable::from_groups(codebook.k(), codebook.m(), groups, built_at)
}

impl LookupTable {
    /// Builds a table from already-ordered groups.
    pub fn from_groups(
        k: usize,
        m: usize,
        groups: BTreeMap<SemanticId, Vec<String>>,
        built_at: i64,
    ) -> Result<Self> {
        let mut reverse = HashMap::new();
        for (sid, eps) in &groups {
            sid.validate(k, m)?;
            if eps.is_empty() {
                return Err(Error::InvalidConfig(format!("empty collision group {sid}")));
            }
            for e in eps {
                if reverse.insert(e.clone(), sid.clone()).is_some() {
                    return Err(Error::InvalidConfig(format!("episode {e} appears in two groups")));
                }
            }
        }
        let mut table = Self {
            k,
            m,
            groups,
            reverse,
            build_id: String::new(),
            built_at,
        };
        table.build_id = table.content_digest();
        Ok(table)
    }

    fn content_digest(&self) -> String {
        let mut buf = format!("{}:{}\n", self.k, self.m);
        for (sid, eps) in &self.groups {
            buf.push_str(&format!("{sid} {}\n", eps.join(",")));
        }
        digest_hex(buf.as_bytes())[..16].to_string()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn groups(&self) -> &BTreeMap<SemanticId, Vec<String>> {
        &self.groups
    }

    pub fn group(&self, sid: &SemanticId) -> &[String] {
        self.groups.get(sid).map_or(&[], Vec::as_slice)
    }

    pub fn sid_of(&self, episode_id: &str) -> Option<&SemanticId> {
        self.reverse.get(episode_id)
    }

    pub fn contains(&self, sid: &SemanticId) -> bool {
        self.groups.contains_key(sid)
    }

    pub fn n_episodes(&self) -> usize {
        self.reverse.len()
    }

    /// First member of the collision group that is eligible and not
    /// excluded.
    pub fn resolve<F>(&self, sid: &SemanticId, eligible: F, exclude: &HashSet<String>) -> Option<&str>
    where
        F: Fn(&str) -> bool,
    {
        self.group(sid)
            .iter()
            .map(String::as_str)
            .find(|e| !exclude.contains(*e) && eligible(e))
    }

    /// Walks ranked ids and maps each to its first eligible, unexcluded
    /// member. Emitted episodes join `exclude`, so a group shared by several
    /// ids yields distinct episodes. Returns (index into `sids`, episode).
    pub fn resolve_ranked<'s, F>(
        &self,
        sids: impl IntoIterator<Item = &'s SemanticId>,
        eligible: F,
        exclude: &mut HashSet<String>,
        limit: usize,
    ) -> Vec<(usize, String)>
    where
        F: Fn(&str) -> bool,
    {
        let mut out = Vec::new();
        for (i, sid) in sids.into_iter().enumerate() {
            if out.len() >= limit {
                break;
            }
            if let Some(ep) = self.resolve(sid, &eligible, exclude) {
                let ep = ep.to_string();
                exclude.insert(ep.clone());
                out.push((i, ep));
            }
        }
        out
    }

    pub fn trie(&self) -> PrefixTrie {
        PrefixTrie::from_sids(self.m, self.groups.keys())
    }

    /// Group-size histogram and mean intra-group cosine similarity over
    /// groups with at least two members.
    pub fn collision_stats(&self, episodes: &[Episode]) -> Result<CollisionReport> {
        let index: HashMap<&str, &Episode> = episodes.iter().map(|e| (e.episode_id.as_str(), e)).collect();
        let mut histogram = BTreeMap::new();
        let mut groups = Vec::new();
        for eps in self.groups.values() {
            *histogram.entry(eps.len()).or_insert(0) += 1;
            if eps.len() >= 2 {
                let members = eps
                    .iter()
                    .map(|id| {
                        index
                            .get(id.as_str())
                            .map(|e| e.content_embedding.as_slice())
                            .ok_or_else(|| Error::UnknownEpisode(id.clone()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                groups.push(members);
            }
        }
        Ok(CollisionReport {
            histogram,
            colliding_groups: groups.len(),
            intra_group_similarity: mean_group_similarity(&groups),
        })
    }

    /// Intra-group similarity of random groupings with the same group sizes
    /// as this table, one value per resample.
    pub fn permutation_baseline(&self, episodes: &[Episode], resamples: usize, seed: u64) -> Result<Vec<f64>> {
        let index: HashMap<&str, &Episode> = episodes.iter().map(|e| (e.episode_id.as_str(), e)).collect();
        let mut pool = Vec::with_capacity(self.reverse.len());
        let mut sizes = Vec::new();
        for eps in self.groups.values() {
            sizes.push(eps.len());
            for id in eps {
                let e = index.get(id.as_str()).ok_or_else(|| Error::UnknownEpisode(id.clone()))?;
                pool.push(e.content_embedding.as_slice());
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(resamples);
        for _ in 0..resamples {
            pool.shuffle(&mut rng);
            let mut groups = Vec::new();
            let mut at = 0;
            for &s in &sizes {
                if s >= 2 {
                    groups.push(pool[at..at + s].to_vec());
                }
                at += s;
            }
            if let Some(v) = mean_group_similarity(&groups) {
                out.push(v);
            }
        }
        Ok(out)
    }
}

fn mean_group_similarity(groups: &[Vec<&[f64]>]) -> Option<f64> {
    if groups.is_empty() {
        return None;
    }
    let total: f64 = groups
        .iter()
        .map(|g| {
            let mut s = 0.0;
            let mut n = 0usize;
            for i in 0..g.len() {
                for j in i + 1..g.len() {
                    s += util::cosine(g[i], g[j]);
                    n += 1;
                }
            }
            s / n as f64
        })
        .sum();
    Some(total / groups.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    /// group size -> number of groups
    pub histogram: BTreeMap<usize, usize>,
    pub colliding_groups: usize,
    /// `None` when no group has two or more members.
    pub intra_group_similarity: Option<f64>,
}

/// Allowed next codes for every prefix of the known semantic ids.
#[derive(Debug, Clone, Default)]
pub struct PrefixTrie {
    m: usize,
    children: HashMap<Vec<u32>, Vec<u32>>,
}

impl PrefixTrie {
    pub fn from_sids<'a>(m: usize, sids: impl IntoIterator<Item = &'a SemanticId>) -> Self {
        let mut sets: HashMap<Vec<u32>, std::collections::BTreeSet<u32>> = HashMap::new();
        for sid in sids {
            for level in 0..sid.len().min(m) {
                sets.entry(sid.codes()[..level].to_vec())
                    .or_default()
                    .insert(sid.codes()[level]);
            }
        }
        Self {
            m,
            children: sets.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.children.is_empty()
    }

    pub fn levels(&self) -> usize {
        self.m
    }

    /// Sorted codes that extend `prefix` toward a known id.
    pub fn allowed(&self, prefix: &[u32]) -> &[u32] {
        self.children.get(prefix).map_or(&[], Vec::as_slice)
    }
}

// ---- file format ----

pub const LOOKUP_FORMAT: &str = "sidgen-lookup";

#[derive(Debug, Serialize, Deserialize)]
struct LookupMeta {
    k: usize,
    m: usize,
    build_id: String,
    built_at: i64,
    n_groups: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct GroupRecord {
    sid: SemanticId,
    episodes: Vec<String>,
}

impl LookupTable {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = LookupMeta {
            k: self.k,
            m: self.m,
            build_id: self.build_id.clone(),
            built_at: self.built_at,
            n_groups: self.groups.len(),
        };
        let records: Vec<GroupRecord> = self
            .groups
            .iter()
            .map(|(sid, eps)| GroupRecord {
                sid: sid.clone(),
                episodes: eps.clone(),
            })
            .collect();
        to_jsonl_bytes(LOOKUP_FORMAT, &meta, &records)
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let (meta, records): (LookupMeta, Vec<GroupRecord>) = read_jsonl(bytes, LOOKUP_FORMAT)?;
        if meta.n_groups != records.len() {
            return Err(format_err(LOOKUP_FORMAT, 1, "group count does not match header"));
        }
        let mut groups = BTreeMap::new();
        for (i, rec) in records.into_iter().enumerate() {
            if groups.insert(rec.sid, rec.episodes).is_some() {
                return Err(format_err(LOOKUP_FORMAT, i + 2, "duplicate semantic id"));
            }
        }
        let table = Self::from_groups(meta.k, meta.m, groups, meta.built_at)?;
        if table.build_id != meta.build_id {
            return Err(format_err(LOOKUP_FORMAT, 1, "build id does not match contents"));
        }
        Ok(table)
    }
}
