//! Synthetic podcast catalog, user profiles and interaction logs.
//!
//! Shows are drawn around latent topic vectors; every episode of a show is
//! the show vector plus isotropic noise, normalized. Users have a home topic
//! (habitual and familiar listening) and a discovery topic that their
//! collaborative vector points at (never-heard shows).

use std::collections::{HashMap, HashSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::artifact::{format_err, read_jsonl, to_jsonl_bytes};
use crate::error::{Error, Result};
use crate::util::{self, stable_hash};

pub const SECONDS_PER_DAY: i64 = 86_400;
/// Timestamp of day 0 of every synthetic log.
pub const EPOCH_START: i64 = 1_700_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub episode_id: String,
    pub show_id: String,
    pub text_tokens: Vec<u32>,
    pub content_embedding: Vec<f64>,
    pub popularity: u64,
    pub locale: String,
    pub playable: bool,
    pub publish_time: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Surface {
    Home,
    Search,
    Explore,
}

impl Surface {
    pub const ALL: [Surface; 3] = [Surface::Home, Surface::Search, Surface::Explore];

    pub fn as_str(self) -> &'static str {
        match self {
            Surface::Home => "home",
            Surface::Search => "search",
            Surface::Explore => "explore",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub user_id: String,
    pub episode_id: String,
    pub timestamp: i64,
    pub listen_minutes: f64,
    pub surface: Surface,
    pub exploration: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub cf_embedding: Vec<f64>,
    pub locale: String,
    pub affinity_topics: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_shows: usize,
    pub episodes_per_show: usize,
    pub n_users: usize,
    pub n_topics: usize,
    /// Content embedding dimension.
    pub d: usize,
    /// Collaborative user vector dimension.
    pub d_u: usize,
    pub horizon_days: u32,
    pub seed: u64,
    pub noise_scale: f64,
    /// Fraction of events flagged as coming from randomized placements.
    pub exploration_fraction: f64,
    pub vocab_per_topic: u32,
    pub tokens_per_episode: usize,
    /// First entry is the majority locale.
    pub locales: Vec<String>,
    pub playable_fraction: f64,
    /// Pareto shape of the popularity distribution; smaller is heavier-tailed.
    pub popularity_shape: f64,
    /// Probability that a discovery stream lands on the user's discovery topic.
    pub discovery_focus: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_shows: 60,
            episodes_per_show: 8,
            n_users: 300,
            n_topics: 6,
            d: 64,
            d_u: 32,
            horizon_days: 90,
            seed: 1,
            noise_scale: 0.35,
            exploration_fraction: 0.1,
            vocab_per_topic: 50,
            tokens_per_episode: 8,
            locales: vec!["en".into(), "sv".into()],
            playable_fraction: 0.97,
            popularity_shape: 1.16,
            discovery_focus: 0.85,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_shows", self.n_shows),
            ("episodes_per_show", self.episodes_per_show),
            ("n_users", self.n_users),
            ("n_topics", self.n_topics),
            ("d_u", self.d_u),
            ("horizon_days", self.horizon_days as usize),
            ("vocab_per_topic", self.vocab_per_topic as usize),
            ("tokens_per_episode", self.tokens_per_episode),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if self.d < 2 {
            return Err(Error::InvalidConfig("d must be at least 2".into()));
        }
        if self.locales.is_empty() {
            return Err(Error::InvalidConfig("at least one locale is required".into()));
        }
        let unit = [
            ("exploration_fraction", self.exploration_fraction),
            ("playable_fraction", self.playable_fraction),
            ("discovery_focus", self.discovery_focus),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1]")));
            }
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::InvalidConfig("noise_scale must be finite and >= 0".into()));
        }
        if !(self.popularity_shape > 0.0 && self.popularity_shape.is_finite()) {
            return Err(Error::InvalidConfig("popularity_shape must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    pub episodes: Vec<Episode>,
    pub profiles: Vec<UserProfile>,
}

impl Catalog {
    pub fn dim(&self) -> usize {
        self.episodes.first().map_or(0, |e| e.content_embedding.len())
    }

    /// Map from episode id to its position in `episodes`.
    pub fn index(&self) -> HashMap<&str, usize> {
        self.episodes
            .iter()
            .enumerate()
            .map(|(i, e)| (e.episode_id.as_str(), i))
            .collect()
    }

    /// Sorted, de-duplicated locales across episodes and profiles.
    pub fn locales(&self) -> Vec<String> {
        let mut set: Vec<String> = self
            .episodes
            .iter()
            .map(|e| e.locale.clone())
            .chain(self.profiles.iter().map(|p| p.locale.clone()))
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        set.sort();
        set
    }
}

fn sub_rng(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stable_hash(seed, &[label]))
}

fn gaussian_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        if util::normalize(&mut v) {
            return v;
        }
    }
}

fn topic_vectors(seed: u64, label: &str, n: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut rng = sub_rng(seed, label);
    (0..n).map(|_| gaussian_unit(&mut rng, dim)).collect()
}

fn pick_locale(rng: &mut ChaCha8Rng, locales: &[String]) -> String {
    if locales.len() == 1 || rng.random::<f64>() < 0.8 {
        locales[0].clone()
    } else {
        locales[1..].choose(rng).expect("non-empty").clone()
    }
}

/// Dominant topic of show `s`. Shows are spread round-robin over topics.
pub fn show_topic(show_index: usize, n_topics: usize) -> usize {
    show_index % n_topics
}

fn show_id(s: usize) -> String {
    format!("show{s:04}")
}

fn user_home_topic(config: &SynthConfig, u: usize) -> usize {
    (stable_hash(config.seed, &["home-topic", &u.to_string()]) % config.n_topics as u64) as usize
}

fn user_discovery_topic(config: &SynthConfig, u: usize) -> usize {
    let home = user_home_topic(config, u);
    if config.n_topics == 1 {
        return home;
    }
    let off = stable_hash(config.seed, &["discovery-topic", &u.to_string()])
        % (config.n_topics as u64 - 1);
    (home + 1 + off as usize) % config.n_topics
}

/// Generates episodes and user profiles. Deterministic in `config`.
pub fn generate_catalog(config: &SynthConfig) -> Result<Catalog> {
    config.validate()?;
    let d = config.d;
    let topics = topic_vectors(config.seed, "content-topics", config.n_topics, d);
    let user_topics = topic_vectors(config.seed, "user-topics", config.n_topics, config.d_u);
    let mut rng = sub_rng(config.seed, "catalog");
    let horizon_secs = config.horizon_days as i64 * SECONDS_PER_DAY;
    let noise_sd = config.noise_scale / (d as f64).sqrt();
    let mut episodes = Vec::with_capacity(config.n_shows * config.episodes_per_show);
    for s in 0..config.n_shows {
        let dom = show_topic(s, config.n_topics);
        let sec = rng.random_range(0..config.n_topics);
        let mut show_vec: Vec<f64> = topics[dom]
            .iter()
            .zip(&topics[sec])
            .map(|(a, b)| 0.85 * a + 0.3 * b)
            .collect();
        for x in show_vec.iter_mut() {
            let g: f64 = StandardNormal.sample(&mut rng);
            *x += 0.15 * g / (d as f64).sqrt();
        }
        util::normalize(&mut show_vec);
        let locale = pick_locale(&mut rng, &config.locales);
        for i in 0..config.episodes_per_show {
            let mut x = show_vec.clone();
            for v in x.iter_mut() {
                let g: f64 = StandardNormal.sample(&mut rng);
                *v += noise_sd * g;
            }
            if !util::normalize(&mut x) {
                x = show_vec.clone();
            }
            let text_tokens = (0..config.tokens_per_episode)
                .map(|_| {
                    let topic = if rng.random::<f64>() < 0.7 {
                        dom as u32
                    } else {
                        rng.random_range(0..config.n_topics as u32)
                    };
                    topic * config.vocab_per_topic + rng.random_range(0..config.vocab_per_topic)
                })
                .collect();
            let u: f64 = rng.random::<f64>().max(1e-12);
            let popularity = (10.0 * u.powf(-1.0 / config.popularity_shape)).min(1e12) as u64;
            episodes.push(Episode {
                episode_id: format!("ep{s:04}-{i:03}"),
                show_id: show_id(s),
                text_tokens,
                content_embedding: x,
                popularity,
                locale: locale.clone(),
                playable: rng.random::<f64>() < config.playable_fraction,
                publish_time: EPOCH_START - horizon_secs + rng.random_range(0..2 * horizon_secs),
            });
        }
    }
    let mut profiles = Vec::with_capacity(config.n_users);
    let mut urng = sub_rng(config.seed, "profiles");
    let noise_u = 0.2 / (config.d_u as f64).sqrt();
    for u in 0..config.n_users {
        let home = user_home_topic(config, u);
        let disc = user_discovery_topic(config, u);
        let cf_embedding = user_topics[disc]
            .iter()
            .zip(&user_topics[home])
            .map(|(a, b)| {
                let g: f64 = StandardNormal.sample(&mut urng);
                0.9 * a + 0.3 * b + noise_u * g
            })
            .collect();
        profiles.push(UserProfile {
            user_id: format!("user{u:05}"),
            cf_embedding,
            locale: pick_locale(&mut urng, &config.locales),
            affinity_topics: vec![home as u32],
        });
    }
    Ok(Catalog { episodes, profiles })
}

/// Generates a time-sorted interaction log (by user, then timestamp).
pub fn generate_events(catalog: &Catalog, config: &SynthConfig) -> Result<Vec<InteractionEvent>> {
    config.validate()?;
    if catalog.episodes.is_empty() {
        return Err(Error::EmptyInput("catalog"));
    }
    // show index -> episode indices
    let mut show_eps: Vec<(String, Vec<usize>)> = Vec::new();
    let mut show_pos: HashMap<&str, usize> = HashMap::new();
    for (i, e) in catalog.episodes.iter().enumerate() {
        let pos = *show_pos.entry(e.show_id.as_str()).or_insert_with(|| {
            show_eps.push((e.show_id.clone(), Vec::new()));
            show_eps.len() - 1
        });
        show_eps[pos].1.push(i);
    }
    let topic_of_show = |pos: usize| -> usize {
        let id = &show_eps[pos].0;
        id.strip_prefix("show")
            .and_then(|n| n.parse::<usize>().ok())
            .map(|s| show_topic(s, config.n_topics))
            .unwrap_or(pos % config.n_topics)
    };
    let mut by_topic: Vec<Vec<usize>> = vec![Vec::new(); config.n_topics];
    for pos in 0..show_eps.len() {
        by_topic[topic_of_show(pos)].push(pos);
    }
    let horizon = config.horizon_days as i64;
    let mut events = Vec::new();
    for (u, profile) in catalog.profiles.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(config.seed, &["events", &profile.user_id]));
        let home = user_home_topic(config, u);
        let disc = user_discovery_topic(config, u);
        let mut user_events: Vec<(i64, usize, f64)> = Vec::new();
        let mut heard: HashSet<usize> = HashSet::new();

        let pick_episode = |rng: &mut ChaCha8Rng, show: usize| -> usize {
            let eps = &show_eps[show].1;
            let weights: Vec<f64> = eps
                .iter()
                .map(|&i| (catalog.episodes[i].popularity as f64 + 1.0).sqrt())
                .collect();
            let total: f64 = weights.iter().sum();
            let mut r = rng.random::<f64>() * total;
            for (k, w) in weights.iter().enumerate() {
                if r < *w {
                    return eps[k];
                }
                r -= w;
            }
            *eps.last().expect("shows have episodes")
        };
        let at = |rng: &mut ChaCha8Rng, day: i64| -> i64 {
            EPOCH_START + day * SECONDS_PER_DAY + rng.random_range(0..SECONDS_PER_DAY)
        };

        let mut home_shows = by_topic[home].clone();
        shuffle(&mut rng, &mut home_shows);
        let n_hab = 2.min(home_shows.len());
        let habitual: Vec<usize> = home_shows[..n_hab].to_vec();
        let familiar: Vec<usize> = home_shows[n_hab..].iter().take(3).copied().collect();

        for &show in &habitual {
            heard.insert(show);
            let mut day = rng.random_range(0..3);
            while day < horizon {
                let ep = pick_episode(&mut rng, show);
                let ts = at(&mut rng, day);
                user_events.push((ts, ep, rng.random_range(15.0..45.0)));
                day += rng.random_range(2..5);
            }
        }
        for &show in &familiar {
            heard.insert(show);
            let mut day = rng.random_range(0..5);
            let ep = pick_episode(&mut rng, show);
            let ts = at(&mut rng, day);
            user_events.push((ts, ep, rng.random_range(2.0..5.0)));
            day += rng.random_range(10..17);
            while day < horizon {
                let ep = pick_episode(&mut rng, show);
                let ts = at(&mut rng, day);
                user_events.push((ts, ep, rng.random_range(1.0..3.0)));
                day += rng.random_range(10..17);
            }
        }
        let mut day = rng.random_range(0..5);
        while day < horizon {
            let pool: Vec<usize> = if rng.random::<f64>() < config.discovery_focus {
                by_topic[disc].iter().copied().filter(|s| !heard.contains(s)).collect()
            } else {
                (0..show_eps.len()).filter(|s| !heard.contains(s)).collect()
            };
            if let Some(&show) = pool.choose(&mut rng) {
                heard.insert(show);
                let ep = pick_episode(&mut rng, show);
                let ts = at(&mut rng, day);
                user_events.push((ts, ep, rng.random_range(5.0..40.0)));
            }
            day += rng.random_range(3..8);
        }
        user_events.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
        // keep per-user timestamps strictly increasing
        for i in 1..user_events.len() {
            if user_events[i].0 <= user_events[i - 1].0 {
                user_events[i].0 = user_events[i - 1].0 + 1;
            }
        }
        for (ts, ep, minutes) in user_events {
            let exploration = rng.random::<f64>() < config.exploration_fraction;
            let surface = if exploration {
                Surface::Explore
            } else if rng.random::<f64>() < 0.7 {
                Surface::Home
            } else {
                Surface::Search
            };
            events.push(InteractionEvent {
                user_id: profile.user_id.clone(),
                episode_id: catalog.episodes[ep].episode_id.clone(),
                timestamp: ts,
                listen_minutes: (minutes * 100.0f64).round() / 100.0,
                surface,
                exploration,
            });
        }
    }
    Ok(events)
}

fn shuffle<T>(rng: &mut ChaCha8Rng, v: &mut [T]) {
    use rand::seq::SliceRandom;
    v.shuffle(rng);
}

/// Deterministic bag-of-tokens text embedding: each token id seeds its own
/// Gaussian direction; the sum is L2-normalized.
pub fn embed_text(text_tokens: &[u32], d: usize) -> Result<Vec<f64>> {
    if text_tokens.is_empty() {
        return Err(Error::EmptyInput("text tokens"));
    }
    if d < 2 {
        return Err(Error::InvalidConfig("d must be at least 2".into()));
    }
    let mut acc = vec![0.0; d];
    for &t in text_tokens {
        let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9_7f4a_7c15 ^ u64::from(t));
        for a in acc.iter_mut() {
            let g: f64 = StandardNormal.sample(&mut rng);
            *a += g;
        }
    }
    if !util::normalize(&mut acc) {
        return Err(Error::NonFinite("text embedding"));
    }
    Ok(acc)
}

// ---- files ----

pub const CATALOG_FORMAT: &str = "sidgen-catalog";
pub const PROFILES_FORMAT: &str = "sidgen-profiles";
pub const EVENTS_FORMAT: &str = "sidgen-events";

#[derive(Debug, Serialize, Deserialize)]
struct CatalogMeta {
    d: usize,
    n_episodes: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProfilesMeta {
    d_u: usize,
    n_users: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct EventsMeta {
    n_events: usize,
}

pub fn catalog_to_bytes(episodes: &[Episode]) -> Result<Vec<u8>> {
    let meta = CatalogMeta {
        d: episodes.first().map_or(0, |e| e.content_embedding.len()),
        n_episodes: episodes.len(),
    };
    to_jsonl_bytes(CATALOG_FORMAT, &meta, episodes)
}

/// Parses and validates a catalog file.
pub fn parse_catalog(bytes: &[u8]) -> Result<Vec<Episode>> {
    let (meta, episodes): (CatalogMeta, Vec<Episode>) = read_jsonl(bytes, CATALOG_FORMAT)?;
    let mut seen = HashSet::new();
    for (i, e) in episodes.iter().enumerate() {
        let line = i + 2;
        if e.content_embedding.len() != meta.d {
            return Err(format_err(CATALOG_FORMAT, line, format!(
                "embedding has dimension {}, header says {}",
                e.content_embedding.len(),
                meta.d
            )));
        }
        if e.content_embedding.iter().any(|x| !x.is_finite()) {
            return Err(format_err(CATALOG_FORMAT, line, "non-finite embedding"));
        }
        if (util::norm(&e.content_embedding) - 1.0).abs() > 1e-6 {
            return Err(format_err(CATALOG_FORMAT, line, "embedding is not unit norm"));
        }
        if !seen.insert(e.episode_id.as_str()) {
            return Err(format_err(CATALOG_FORMAT, line, format!("duplicate episode id {}", e.episode_id)));
        }
    }
    if episodes.len() != meta.n_episodes {
        return Err(format_err(CATALOG_FORMAT, 1, "episode count does not match header"));
    }
    Ok(episodes)
}

pub fn profiles_to_bytes(profiles: &[UserProfile]) -> Result<Vec<u8>> {
    let meta = ProfilesMeta {
        d_u: profiles.first().map_or(0, |p| p.cf_embedding.len()),
        n_users: profiles.len(),
    };
    to_jsonl_bytes(PROFILES_FORMAT, &meta, profiles)
}

pub fn parse_profiles(bytes: &[u8]) -> Result<Vec<UserProfile>> {
    let (meta, profiles): (ProfilesMeta, Vec<UserProfile>) = read_jsonl(bytes, PROFILES_FORMAT)?;
    let mut seen = HashSet::new();
    for (i, p) in profiles.iter().enumerate() {
        if p.cf_embedding.len() != meta.d_u {
            return Err(format_err(PROFILES_FORMAT, i + 2, "user vector dimension differs from header"));
        }
        if p.cf_embedding.iter().any(|x| !x.is_finite()) {
            return Err(format_err(PROFILES_FORMAT, i + 2, "non-finite user vector"));
        }
        if !seen.insert(p.user_id.as_str()) {
            return Err(format_err(PROFILES_FORMAT, i + 2, format!("duplicate user id {}", p.user_id)));
        }
    }
    if profiles.len() != meta.n_users {
        return Err(format_err(PROFILES_FORMAT, 1, "user count does not match header"));
    }
    Ok(profiles)
}

pub fn events_to_bytes(events: &[InteractionEvent]) -> Result<Vec<u8>> {
    to_jsonl_bytes(EVENTS_FORMAT, &EventsMeta { n_events: events.len() }, events)
}

pub fn parse_events(bytes: &[u8]) -> Result<Vec<InteractionEvent>> {
    let (meta, events): (EventsMeta, Vec<InteractionEvent>) = read_jsonl(bytes, EVENTS_FORMAT)?;
    for (i, e) in events.iter().enumerate() {
        if !(e.listen_minutes >= 0.0 && e.listen_minutes.is_finite()) {
            return Err(format_err(EVENTS_FORMAT, i + 2, "listen_minutes must be finite and >= 0"));
        }
    }
    if events.len() != meta.n_events {
        return Err(format_err(EVENTS_FORMAT, 1, "event count does not match header"));
    }
    Ok(events)
}
