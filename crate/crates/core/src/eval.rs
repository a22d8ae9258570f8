//! Offline metrics over ranked candidate lists, split by familiarity
//! segment.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{FamiliarityLabel, TrainingExample};
use crate::decoder::{decode_examples, DecodeConfig};
use crate::error::{Error, Result};
use crate::model::ScorerParams;
use crate::quantizer::SemanticId;
use crate::sid_index::LookupTable;
use crate::util::digest_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Overall,
    Familiar,
    Unfamiliar,
}

impl Segment {
    pub const ALL: [Segment; 3] = [Segment::Overall, Segment::Familiar, Segment::Unfamiliar];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Overall => "overall",
            Self::Familiar => "familiar",
            Self::Unfamiliar => "unfamiliar",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|seg| seg.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Recall,
    HitRate,
    Ndcg,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Recall, Metric::HitRate, Metric::Ndcg];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Recall => "recall",
            Self::HitRate => "hitrate",
            Self::Ndcg => "ndcg",
        }
    }
}

/// Metrics for one segment. With a single held-out target per example,
/// recall@k and hit-rate@k coincide. Empty segments report zeros.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentMetrics {
    pub count: usize,
    pub recall: f64,
    pub hitrate: f64,
    pub ndcg: f64,
}

impl SegmentMetrics {
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Recall => self.recall,
            Metric::HitRate => self.hitrate,
            Metric::Ndcg => self.ndcg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    /// Digest of the evaluated examples; reports are comparable only when
    /// these agree.
    pub eval_set_id: String,
    pub overall: SegmentMetrics,
    pub familiar: SegmentMetrics,
    pub unfamiliar: SegmentMetrics,
    pub metadata: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn segment(&self, seg: Segment) -> &SegmentMetrics {
        match seg {
            Segment::Overall => &self.overall,
            Segment::Familiar => &self.familiar,
            Segment::Unfamiliar => &self.unfamiliar,
        }
    }

    fn segment_mut(&mut self, seg: Segment) -> &mut SegmentMetrics {
        match seg {
            Segment::Overall => &mut self.overall,
            Segment::Familiar => &mut self.familiar,
            Segment::Unfamiliar => &mut self.unfamiliar,
        }
    }

    /// `key=value` lines; floats use shortest round-trip formatting.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "k={}", self.k);
        let _ = writeln!(out, "eval_set_id={}", self.eval_set_id);
        for seg in Segment::ALL {
            let m = self.segment(seg);
            let name = seg.as_str();
            let _ = writeln!(out, "{name}.count={}", m.count);
            let _ = writeln!(out, "{name}.recall={}", m.recall);
            let _ = writeln!(out, "{name}.hitrate={}", m.hitrate);
            let _ = writeln!(out, "{name}.ndcg={}", m.ndcg);
        }
        for (key, value) in &self.metadata {
            let _ = writeln!(out, "meta.{key}={}", value.replace('\n', " "));
        }
        out
    }

    pub fn parse_kv(text: &str) -> Result<Self> {
        const WHAT: &str = "eval report";
        let mut report = EvalReport {
            k: 0,
            eval_set_id: String::new(),
            overall: SegmentMetrics::default(),
            familiar: SegmentMetrics::default(),
            unfamiliar: SegmentMetrics::default(),
            metadata: BTreeMap::new(),
        };
        let mut seen_k = false;
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: String| Error::Format {
                what: WHAT,
                line: line_no,
                msg,
            };
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected key=value".into()))?;
            if let Some(meta) = key.strip_prefix("meta.") {
                report.metadata.insert(meta.to_string(), value.to_string());
                continue;
            }
            match key {
                "k" => {
                    report.k = value.parse().map_err(|e| err(format!("bad k: {e}")))?;
                    seen_k = true;
                }
                "eval_set_id" => report.eval_set_id = value.to_string(),
                _ => {
                    let (seg, field) = key.split_once('.').ok_or_else(|| err(format!("unknown key {key:?}")))?;
                    let seg = Segment::parse(seg).ok_or_else(|| err(format!("unknown segment {seg:?}")))?;
                    let m = report.segment_mut(seg);
                    if field == "count" {
                        m.count = value.parse().map_err(|e| err(format!("bad count: {e}")))?;
                        continue;
                    }
                    let v: f64 = value.parse().map_err(|e| err(format!("bad value: {e}")))?;
                    if !(0.0..=1.0).contains(&v) {
                        return Err(err(format!("metric {v} outside [0, 1]")));
                    }
                    match field {
                        "recall" => m.recall = v,
                        "hitrate" => m.hitrate = v,
                        "ndcg" => m.ndcg = v,
                        _ => return Err(err(format!("unknown metric {field:?}"))),
                    }
                }
            }
        }
        if !seen_k || report.eval_set_id.is_empty() {
            return Err(Error::Format {
                what: WHAT,
                line: 0,
                msg: "missing k or eval_set_id".into(),
            });
        }
        Ok(report)
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "eval set {}  k={}", self.eval_set_id, self.k);
        let _ = writeln!(
            out,
            "{:<12} {:>7} {:>10} {:>10} {:>10}",
            "segment", "n", "recall", "hitrate", "ndcg"
        );
        for seg in Segment::ALL {
            let m = self.segment(seg);
            let _ = writeln!(
                out,
                "{:<12} {:>7} {:>10.4} {:>10.4} {:>10.4}",
                seg.as_str(),
                m.count,
                m.recall,
                m.hitrate,
                m.ndcg
            );
        }
        out
    }
}

/// Identifies an eval set by its examples' (user, time, target, control).
pub fn eval_set_id(examples: &[TrainingExample]) -> String {
    let mut text = String::new();
    for ex in examples {
        let _ = writeln!(
            text,
            "{}\t{}\t{}\t{:?}",
            ex.user_id, ex.timestamp, ex.target_episode, ex.control
        );
    }
    digest_hex(text.as_bytes())[..16].to_string()
}

fn segment_of(ex: &TrainingExample) -> Segment {
    match ex.segment() {
        FamiliarityLabel::NonhabUnfamiliar => Segment::Unfamiliar,
        _ => Segment::Familiar,
    }
}

fn evaluate_by<T: PartialEq>(
    candidates: &[Vec<T>],
    examples: &[TrainingExample],
    k: usize,
    target: impl Fn(&TrainingExample) -> &T,
) -> Result<EvalReport> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if examples.is_empty() {
        return Err(Error::EmptyInput("eval examples"));
    }
    if candidates.len() != examples.len() {
        return Err(Error::InvalidConfig(format!(
            "{} candidate lists for {} examples",
            candidates.len(),
            examples.len()
        )));
    }
    let mut report = EvalReport {
        k,
        eval_set_id: eval_set_id(examples),
        overall: SegmentMetrics::default(),
        familiar: SegmentMetrics::default(),
        unfamiliar: SegmentMetrics::default(),
        metadata: BTreeMap::new(),
    };
    for (cands, ex) in candidates.iter().zip(examples) {
        let want = target(ex);
        let rank = cands.iter().take(k).position(|c| c == want).map(|p| p + 1);
        let (hit, gain) = match rank {
            Some(r) => (1.0, 1.0 / ((r + 1) as f64).log2()),
            None => (0.0, 0.0),
        };
        for seg in [Segment::Overall, segment_of(ex)] {
            let m = report.segment_mut(seg);
            m.count += 1;
            m.recall += hit;
            m.hitrate += hit;
            m.ndcg += gain;
        }
    }
    for seg in Segment::ALL {
        let m = report.segment_mut(seg);
        if m.count > 0 {
            let n = m.count as f64;
            m.recall /= n;
            m.hitrate /= n;
            m.ndcg /= n;
        }
    }
    Ok(report)
}

/// Episode-level metrics: candidate lists hold episode ids ranked best
/// first, compared against each example's target episode.
pub fn evaluate(candidates: &[Vec<String>], examples: &[TrainingExample], k: usize) -> Result<EvalReport> {
    evaluate_by(candidates, examples, k, |ex| &ex.target_episode)
}

/// Id-level metrics: a hit is any candidate equal to the target id.
pub fn evaluate_sids(candidates: &[Vec<SemanticId>], examples: &[TrainingExample], k: usize) -> Result<EvalReport> {
    evaluate_by(candidates, examples, k, |ex| &ex.target)
}

/// Decodes every example and resolves the ranked ids to up to `k` distinct
/// episodes. Offline evaluation treats every catalog episode as eligible.
pub fn episode_candidates(
    params: &ScorerParams,
    lookup: &LookupTable,
    examples: &[TrainingExample],
    config: &DecodeConfig,
    k: usize,
) -> Result<Vec<Vec<String>>> {
    let trie = lookup.trie();
    let decoded = decode_examples(params, examples, config, Some(&trie))?;
    Ok(decoded
        .iter()
        .map(|cands| {
            let mut exclude = HashSet::new();
            lookup
                .resolve_ranked(cands.iter().map(|c| &c.sid), |_| true, &mut exclude, k)
                .into_iter()
                .map(|(_, ep)| ep)
                .collect()
        })
        .collect())
}

/// Decoded ids per example, best first.
pub fn sid_candidates(
    params: &ScorerParams,
    lookup: &LookupTable,
    examples: &[TrainingExample],
    config: &DecodeConfig,
) -> Result<Vec<Vec<SemanticId>>> {
    let trie = lookup.trie();
    let decoded = decode_examples(params, examples, config, Some(&trie))?;
    Ok(decoded
        .into_iter()
        .map(|cands| cands.into_iter().map(|c| c.sid).collect())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub segment: Segment,
    pub metric: Metric,
    pub baseline: f64,
    pub value: f64,
    /// `(value - baseline) / baseline`; undefined when the baseline is zero.
    pub relative: Option<f64>,
}

/// Relative change of `candidate` over `baseline` for every segment and
/// metric. Both reports must come from the same eval set and cutoff.
pub fn compare(baseline: &EvalReport, candidate: &EvalReport) -> Result<Vec<Delta>> {
    if baseline.eval_set_id != candidate.eval_set_id {
        return Err(Error::EvalSetMismatch(
            baseline.eval_set_id.clone(),
            candidate.eval_set_id.clone(),
        ));
    }
    if baseline.k != candidate.k {
        return Err(Error::Incompatible(format!(
            "reports use different cutoffs ({} vs {})",
            baseline.k, candidate.k
        )));
    }
    let mut out = Vec::new();
    for segment in Segment::ALL {
        for metric in Metric::ALL {
            let b = baseline.segment(segment).get(metric);
            let v = candidate.segment(segment).get(metric);
            out.push(Delta {
                segment,
                metric,
                baseline: b,
                value: v,
                relative: (b > 0.0).then(|| (v - b) / b),
            });
        }
    }
    Ok(out)
}

pub fn render_deltas(deltas: &[Delta]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12} {:<8} {:>10} {:>10} {:>10}",
        "segment", "metric", "baseline", "value", "change"
    );
    for d in deltas {
        let change = match d.relative {
            Some(r) => format!("{:+.1}%", r * 100.0),
            None => "n/a".to_string(),
        };
        let _ = writeln!(
            out,
            "{:<12} {:<8} {:>10.4} {:>10.4} {:>10}",
            d.segment.as_str(),
            d.metric.as_str(),
            d.baseline,
            d.value,
            change
        );
    }
    out
}
