//! Residual k-means quantization of content embeddings into semantic ids.
//!
//! Level 1 clusters the raw embeddings; level `m` clusters the residuals left
//! after subtracting the level `m-1` centroid. Residuals are not renormalized
//! between levels.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact::{format_err, read_jsonl, to_jsonl_bytes};
use crate::error::{Error, Result};
use crate::util::sq_dist;

/// A length-M tuple of per-level codes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SemanticId(pub Vec<u32>);

impl SemanticId {
    pub fn codes(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Checks length and code ranges against a `(k, m)` layout.
    pub fn validate(&self, k: usize, m: usize) -> Result<()> {
        if self.0.len() != m {
            return Err(Error::SidLength {
                expected: m,
                got: self.0.len(),
            });
        }
        for (level, &c) in self.0.iter().enumerate() {
            if c as usize >= k {
                return Err(Error::CodeOutOfRange { level, code: c, k });
            }
        }
        Ok(())
    }
}

impl fmt::Display for SemanticId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(u32::to_string).collect();
        write!(f, "<{}>", parts.join("-"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    pub seed: u64,
    pub max_iters: usize,
    /// Lloyd iterations run per level.
    pub iterations: Vec<usize>,
    /// Mean squared residual norm on the fitting set after each level.
    pub inertia: Vec<f64>,
    /// Always `"raw"`: residuals are quantized without renormalization.
    pub residual_mode: String,
}

/// M levels of K centroids each, stored level-major then index-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    k: usize,
    m: usize,
    d: usize,
    centroids: Vec<f64>,
    pub meta: FitMetadata,
}

impl Codebook {
    /// Builds a codebook from explicit centroids `levels[m][j]`.
    pub fn from_levels(levels: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let m = levels.len();
        let k = levels.first().map_or(0, Vec::len);
        let d = levels
            .first()
            .and_then(|l| l.first())
            .map_or(0, Vec::len);
        if m == 0 || k == 0 || d == 0 {
            return Err(Error::EmptyInput("codebook levels"));
        }
        let mut centroids = Vec::with_capacity(m * k * d);
        for level in &levels {
            if level.len() != k {
                return Err(Error::InvalidConfig("every level needs K centroids".into()));
            }
            for c in level {
                if c.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: c.len(),
                    });
                }
                if c.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite("centroid"));
                }
                centroids.extend_from_slice(c);
            }
        }
        Ok(Self {
            k,
            m,
            d,
            centroids,
            meta: FitMetadata {
                seed: 0,
                max_iters: 0,
                iterations: vec![0; m],
                inertia: Vec::new(),
                residual_mode: "raw".into(),
            },
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn centroid(&self, level: usize, code: usize) -> &[f64] {
        let start = (level * self.k + code) * self.d;
        &self.centroids[start..start + self.d]
    }

    fn nearest(&self, level: usize, r: &[f64]) -> usize {
        nearest_index((0..self.k).map(|j| self.centroid(level, j)), r)
    }

    /// Encodes `x`, also returning the final residual `r_M`.
    pub fn encode_with_residual(&self, x: &[f64]) -> Result<(SemanticId, Vec<f64>)> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: x.len(),
            });
        }
        let mut r = x.to_vec();
        let mut codes = Vec::with_capacity(self.m);
        for level in 0..self.m {
            let c = self.nearest(level, &r);
            for (ri, mu) in r.iter_mut().zip(self.centroid(level, c)) {
                *ri -= mu;
            }
            codes.push(c as u32);
        }
        Ok((SemanticId(codes), r))
    }

    /// Nearest centroid per level on successive residuals; ties go to the
    /// smallest code.
    pub fn encode(&self, x: &[f64]) -> Result<SemanticId> {
        self.encode_with_residual(x).map(|(sid, _)| sid)
    }

    /// Sum of the selected centroids.
    pub fn reconstruct(&self, sid: &SemanticId) -> Result<Vec<f64>> {
        sid.validate(self.k, self.m)?;
        let mut out = vec![0.0; self.d];
        for (level, &c) in sid.codes().iter().enumerate() {
            for (o, mu) in out.iter_mut().zip(self.centroid(level, c as usize)) {
                *o += mu;
            }
        }
        Ok(out)
    }

    /// Mean squared residual norm after each level.
    pub fn level_inertia(&self, embeddings: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut sums = vec![0.0; self.m];
        for x in embeddings {
            if x.len() != self.d {
                return Err(Error::DimensionMismatch {
                    expected: self.d,
                    got: x.len(),
                });
            }
            let mut r = x.clone();
            for (level, s) in sums.iter_mut().enumerate() {
                let c = self.nearest(level, &r);
                for (ri, mu) in r.iter_mut().zip(self.centroid(level, c)) {
                    *ri -= mu;
                }
                *s += r.iter().map(|v| v * v).sum::<f64>();
            }
        }
        let n = embeddings.len().max(1) as f64;
        Ok(sums.into_iter().map(|s| s / n).collect())
    }
}

fn nearest_index<'a>(candidates: impl Iterator<Item = &'a [f64]>, r: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in candidates.enumerate() {
        let d = sq_dist(r, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

/// Fits a residual k-means codebook.
///
/// Each level uses k-means++ seeding followed by Lloyd iterations until the
/// assignment stops changing or `max_iters` is reached. Empty clusters are
/// reseeded with the point farthest from its centroid.
pub fn fit(embeddings: &[Vec<f64>], k: usize, m: usize, seed: u64, max_iters: usize) -> Result<Codebook> {
    if k == 0 || m == 0 {
        return Err(Error::InvalidConfig("K and M must be at least 1".into()));
    }
    if max_iters == 0 {
        return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
    }
    if embeddings.len() < k {
        return Err(Error::NotEnoughVectors {
            needed: k,
            got: embeddings.len(),
        });
    }
    let d = embeddings[0].len();
    if d == 0 {
        return Err(Error::EmptyInput("embedding dimension"));
    }
    for x in embeddings {
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input embedding"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut residuals: Vec<Vec<f64>> = embeddings.to_vec();
    let mut centroids = Vec::with_capacity(m * k * d);
    let mut iterations = Vec::with_capacity(m);
    let mut inertia = Vec::with_capacity(m);
    for _level in 0..m {
        let (level_centroids, iters) = kmeans(&residuals, k, &mut rng, max_iters);
        let mut total = 0.0;
        for r in residuals.iter_mut() {
            let c = nearest_index(level_centroids.iter().map(Vec::as_slice), r);
            for (ri, mu) in r.iter_mut().zip(&level_centroids[c]) {
                *ri -= mu;
            }
            total += r.iter().map(|v| v * v).sum::<f64>();
        }
        inertia.push(total / residuals.len() as f64);
        iterations.push(iters);
        for c in level_centroids {
            centroids.extend(c);
        }
    }
    Ok(Codebook {
        k,
        m,
        d,
        centroids,
        meta: FitMetadata {
            seed,
            max_iters,
            iterations,
            inertia,
            residual_mode: "raw".into(),
        },
    })
}

fn kmeans_pp(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..n)].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if r < *w {
                    chosen = i;
                    break;
                }
                r -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = points[idx].clone();
        for (di, p) in d2.iter_mut().zip(points) {
            *di = di.min(sq_dist(p, &c));
        }
        centers.push(c);
    }
    centers
}

fn kmeans(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng, max_iters: usize) -> (Vec<Vec<f64>>, usize) {
    let d = points[0].len();
    let mut centers = kmeans_pp(points, k, rng);
    let mut assign = vec![usize::MAX; points.len()];
    let mut iters = 0;
    for it in 0..max_iters {
        let mut changed = false;
        for (a, p) in assign.iter_mut().zip(points) {
            let c = nearest_index(centers.iter().map(Vec::as_slice), p);
            if *a != c {
                *a = c;
                changed = true;
            }
        }
        iters = it + 1;
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assign.iter().zip(points) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                let inv = 1.0 / counts[j] as f64;
                centers[j] = sums[j].iter().map(|s| s * inv).collect();
            }
        }
        // Empty clusters take the point with the largest current residual.
        let empties: Vec<usize> = (0..k).filter(|&j| counts[j] == 0).collect();
        if !empties.is_empty() {
            let mut dist: Vec<f64> = assign
                .iter()
                .zip(points)
                .map(|(&a, p)| sq_dist(p, &centers[a]))
                .collect();
            for j in empties {
                let (far, _) = dist
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
                centers[j] = points[far].clone();
                dist[far] = f64::NEG_INFINITY;
            }
        }
    }
    (centers, iters)
}

// ---- file format ----

pub const CODEBOOK_FORMAT: &str = "sidgen-codebook";

#[derive(Debug, Serialize, Deserialize)]
struct CodebookMeta {
    d: usize,
    k: usize,
    m: usize,
    #[serde(flatten)]
    fit: FitMetadata,
}

#[derive(Debug, Serialize, Deserialize)]
struct CentroidRecord {
    level: usize,
    code: usize,
    values: Vec<f64>,
}

impl Codebook {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = CodebookMeta {
            d: self.d,
            k: self.k,
            m: self.m,
            fit: self.meta.clone(),
        };
        let records: Vec<CentroidRecord> = (0..self.m)
            .flat_map(|l| (0..self.k).map(move |j| (l, j)))
            .map(|(level, code)| CentroidRecord {
                level,
                code,
                values: self.centroid(level, code).to_vec(),
            })
            .collect();
        to_jsonl_bytes(CODEBOOK_FORMAT, &meta, &records)
    }

    /// Parses a codebook file; centroids must appear in level-major,
    /// index-major order.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let (meta, records): (CodebookMeta, Vec<CentroidRecord>) = read_jsonl(bytes, CODEBOOK_FORMAT)?;
        if meta.k == 0 || meta.m == 0 || meta.d == 0 {
            return Err(format_err(CODEBOOK_FORMAT, 1, "K, M and d must be positive"));
        }
        let expected = meta.k.checked_mul(meta.m);
        if expected != Some(records.len()) {
            return Err(format_err(CODEBOOK_FORMAT, 1, format!(
                "expected K*M = {}x{} centroids, found {}",
                meta.k,
                meta.m,
                records.len()
            )));
        }
        let mut centroids = Vec::with_capacity(records.len().saturating_mul(meta.d.min(1 << 16)));
        for (i, rec) in records.into_iter().enumerate() {
            let line = i + 2;
            if rec.level != i / meta.k || rec.code != i % meta.k {
                return Err(format_err(CODEBOOK_FORMAT, line, "centroids out of order"));
            }
            if rec.values.len() != meta.d {
                return Err(format_err(CODEBOOK_FORMAT, line, "centroid dimension differs from header"));
            }
            if rec.values.iter().any(|v| !v.is_finite()) {
                return Err(format_err(CODEBOOK_FORMAT, line, "non-finite centroid value"));
            }
            centroids.extend(rec.values);
        }
        Ok(Self {
            k: meta.k,
            m: meta.m,
            d: meta.d,
            centroids,
            meta: meta.fit,
        })
    }
}
