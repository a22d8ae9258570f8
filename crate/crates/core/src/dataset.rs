//! Familiarity segmentation and training-example construction.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::artifact::{format_err, read_jsonl, to_jsonl_bytes};
use crate::catalog::{Episode, InteractionEvent, Surface, UserProfile, SECONDS_PER_DAY};
use crate::error::{Error, Result};
use crate::quantizer::SemanticId;
use crate::sid_index::{ControlToken, LookupTable};
use crate::util::{stable_hash, unit_interval};

/// Trailing window for habit detection.
pub const HABIT_WINDOW_SECS: i64 = 28 * SECONDS_PER_DAY;
/// Minutes inside the window at which a show counts as habitual.
pub const HABIT_MINUTES: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FamiliarityLabel {
    Habitual,
    NonhabFamiliar,
    NonhabUnfamiliar,
}

impl FamiliarityLabel {
    pub fn control(self) -> Option<ControlToken> {
        match self {
            Self::Habitual => None,
            Self::NonhabFamiliar => Some(ControlToken::Familiar),
            Self::NonhabUnfamiliar => Some(ControlToken::Unfamiliar),
        }
    }
}

/// Labels a (user, show) pair at `ref_time` from that pair's events.
///
/// Window minutes are summed over `(ref_time - 28d, ref_time]`; lifetime
/// minutes over everything at or before `ref_time`.
pub fn label(events: &[InteractionEvent], ref_time: i64) -> Result<FamiliarityLabel> {
    if events.windows(2).any(|w| w[1].timestamp < w[0].timestamp) {
        return Err(Error::UnsortedEvents);
    }
    let mut window = 0.0;
    let mut lifetime = 0.0;
    for e in events.iter().take_while(|e| e.timestamp <= ref_time) {
        lifetime += e.listen_minutes;
        if e.timestamp > ref_time - HABIT_WINDOW_SECS {
            window += e.listen_minutes;
        }
    }
    Ok(if window >= HABIT_MINUTES {
        FamiliarityLabel::Habitual
    } else if lifetime == 0.0 {
        FamiliarityLabel::NonhabUnfamiliar
    } else {
        FamiliarityLabel::NonhabFamiliar
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryItem {
    pub sid: SemanticId,
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub user_id: String,
    /// Most recent streams before the target, oldest first.
    pub history: Vec<HistoryItem>,
    pub user_vector: Vec<f64>,
    pub locale: String,
    pub affinity_topics: Vec<u32>,
    pub control: ControlToken,
    pub target: SemanticId,
    pub target_episode: String,
    pub timestamp: i64,
    pub sample_weight: f64,
    pub surface: Surface,
}

impl TrainingExample {
    pub fn segment(&self) -> FamiliarityLabel {
        match self.control {
            ControlToken::Familiar => FamiliarityLabel::NonhabFamiliar,
            ControlToken::Unfamiliar => FamiliarityLabel::NonhabUnfamiliar,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Maximum history length L.
    pub history_len: usize,
    /// Maximum examples per target episode.
    pub cap_per_episode: usize,
    /// Sample weight for streams from randomized placements.
    pub exploration_weight: f64,
    /// Per-surface keep rate in [0, 1]; surfaces not listed keep everything.
    pub surface_mix: BTreeMap<Surface, f64>,
    pub eval_fraction: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            history_len: 20,
            cap_per_episode: 50,
            exploration_weight: 2.0,
            surface_mix: Surface::ALL.iter().map(|&s| (s, 1.0)).collect(),
            eval_fraction: 0.2,
            seed: 7,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cap_per_episode == 0 {
            return Err(Error::InvalidConfig("cap_per_episode must be at least 1".into()));
        }
        if !(self.exploration_weight > 0.0 && self.exploration_weight.is_finite()) {
            return Err(Error::InvalidConfig("exploration_weight must be positive".into()));
        }
        if self.surface_mix.values().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::InvalidConfig("surface_mix rates must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Builds one example per non-habitual stream, then applies the per-episode
/// cap (earliest timestamp, then user id, survive). Output is sorted by
/// `(user_id, timestamp)`.
pub fn build_examples(
    events: &[InteractionEvent],
    profiles: &[UserProfile],
    episodes: &[Episode],
    lookup: &LookupTable,
    config: &DatasetConfig,
) -> Result<Vec<TrainingExample>> {
    config.validate()?;
    let profile_of: HashMap<&str, &UserProfile> = profiles.iter().map(|p| (p.user_id.as_str(), p)).collect();
    let show_of: HashMap<&str, &str> = episodes
        .iter()
        .map(|e| (e.episode_id.as_str(), e.show_id.as_str()))
        .collect();
    let mut by_user: BTreeMap<&str, Vec<&InteractionEvent>> = BTreeMap::new();
    for e in events {
        by_user.entry(e.user_id.as_str()).or_default().push(e);
    }
    let mut out = Vec::new();
    for (user, mut evs) in by_user {
        let profile = profile_of
            .get(user)
            .ok_or_else(|| Error::MissingProfile(user.to_string()))?;
        evs.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.episode_id.cmp(&b.episode_id)));
        let mut per_show: HashMap<&str, Vec<InteractionEvent>> = HashMap::new();
        let mut history: Vec<HistoryItem> = Vec::new();
        for ev in evs {
            let sid = lookup
                .sid_of(&ev.episode_id)
                .ok_or_else(|| Error::UnknownEpisode(ev.episode_id.clone()))?;
            let show = *show_of
                .get(ev.episode_id.as_str())
                .ok_or_else(|| Error::UnknownEpisode(ev.episode_id.clone()))?;
            let prior = per_show.entry(show).or_default();
            let seg = label(prior, ev.timestamp)?;
            if let Some(control) = seg.control() {
                let rate = config.surface_mix.get(&ev.surface).copied().unwrap_or(1.0);
                let keep = rate >= 1.0
                    || unit_interval(stable_hash(config.seed, &[
                        "surface",
                        user,
                        &ev.timestamp.to_string(),
                        &ev.episode_id,
                    ])) < rate;
                if keep {
                    let start = history.len().saturating_sub(config.history_len);
                    out.push(TrainingExample {
                        user_id: user.to_string(),
                        history: history[start..].to_vec(),
                        user_vector: profile.cf_embedding.clone(),
                        locale: profile.locale.clone(),
                        affinity_topics: profile.affinity_topics.clone(),
                        control,
                        target: sid.clone(),
                        target_episode: ev.episode_id.clone(),
                        timestamp: ev.timestamp,
                        sample_weight: if ev.exploration { config.exploration_weight } else { 1.0 },
                        surface: ev.surface,
                    });
                }
            }
            prior.push(ev.clone());
            history.push(HistoryItem {
                sid: sid.clone(),
                timestamp: ev.timestamp,
            });
        }
    }
    // popularity cap
    let mut by_target: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, ex) in out.iter().enumerate() {
        by_target.entry(ex.target_episode.as_str()).or_default().push(i);
    }
    let mut keep = vec![true; out.len()];
    for idxs in by_target.values_mut() {
        if idxs.len() > config.cap_per_episode {
            idxs.sort_by(|&a, &b| {
                out[a]
                    .timestamp
                    .cmp(&out[b].timestamp)
                    .then_with(|| out[a].user_id.cmp(&out[b].user_id))
            });
            for &i in &idxs[config.cap_per_episode..] {
                keep[i] = false;
            }
        }
    }
    let mut kept: Vec<TrainingExample> = out
        .into_iter()
        .zip(keep)
        .filter_map(|(ex, k)| k.then_some(ex))
        .collect();
    kept.sort_by(|a, b| a.user_id.cmp(&b.user_id).then(a.timestamp.cmp(&b.timestamp)));
    Ok(kept)
}

/// Splits by user: users are ordered by a seeded hash and the first
/// `round(n * eval_fraction)` go to the evaluation side.
pub fn split(
    examples: Vec<TrainingExample>,
    eval_fraction: f64,
    seed: u64,
) -> Result<(Vec<TrainingExample>, Vec<TrainingExample>)> {
    if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(Error::InvalidConfig("eval_fraction must lie in (0, 1)".into()));
    }
    let mut users: Vec<&str> = examples.iter().map(|e| e.user_id.as_str()).collect();
    users.sort_unstable();
    users.dedup();
    let mut keyed: Vec<(u64, &str)> = users.iter().map(|u| (stable_hash(seed, &["split", u]), *u)).collect();
    keyed.sort_unstable();
    let n_eval = (users.len() as f64 * eval_fraction).round() as usize;
    if n_eval == 0 || n_eval == users.len() {
        return Err(Error::DegenerateSplit {
            train: users.len() - n_eval,
            eval: n_eval,
        });
    }
    let eval_users: std::collections::HashSet<String> =
        keyed[..n_eval].iter().map(|(_, u)| u.to_string()).collect();
    let (eval, train): (Vec<_>, Vec<_>) = examples.into_iter().partition(|e| eval_users.contains(&e.user_id));
    Ok((train, eval))
}

// ---- file format ----

pub const EXAMPLES_FORMAT: &str = "sidgen-examples";

#[derive(Debug, Serialize, Deserialize)]
struct ExamplesMeta {
    n_examples: usize,
}

pub fn examples_to_bytes(examples: &[TrainingExample]) -> Result<Vec<u8>> {
    to_jsonl_bytes(EXAMPLES_FORMAT, &ExamplesMeta { n_examples: examples.len() }, examples)
}

pub fn parse_examples(bytes: &[u8]) -> Result<Vec<TrainingExample>> {
    let (meta, examples): (ExamplesMeta, Vec<TrainingExample>) = read_jsonl(bytes, EXAMPLES_FORMAT)?;
    if meta.n_examples != examples.len() {
        return Err(format_err(EXAMPLES_FORMAT, 1, "example count does not match header"));
    }
    let m = examples.first().map(|e| e.target.len());
    for (i, ex) in examples.iter().enumerate() {
        let line = i + 2;
        if Some(ex.target.len()) != m || ex.history.iter().any(|h| Some(h.sid.len()) != m) || m == Some(0) {
            return Err(format_err(EXAMPLES_FORMAT, line, "inconsistent semantic id length"));
        }
        if !(ex.sample_weight > 0.0 && ex.sample_weight.is_finite()) {
            return Err(format_err(EXAMPLES_FORMAT, line, "sample_weight must be positive"));
        }
        if ex.user_vector.iter().any(|v| !v.is_finite()) {
            return Err(format_err(EXAMPLES_FORMAT, line, "non-finite user vector"));
        }
        if ex.history.windows(2).any(|w| w[1].timestamp < w[0].timestamp) {
            return Err(format_err(EXAMPLES_FORMAT, line, "history is not time-ordered"));
        }
    }
    Ok(examples)
}
