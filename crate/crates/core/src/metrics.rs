//! Recall@k and mean reciprocal rank.
//!
//! For a query set `Q`, with `rank_i` the 1-based position of the correct
//! object in query `i`'s list:
//!
//! ```text
//! Recall@k = |{ i : rank_i <= k }| / |Q|
//! MRR      = (1 / |Q|) * sum_i rr_i,   rr_i = 1 / rank_i if rank_i <= 10 else 0
//! ```
//!
//! A query whose correct object is missing from its list has no rank and
//! contributes zero to both.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::results::Rankings;

/// Rank beyond which the reciprocal rank counts as zero.
pub const MRR_CUTOFF: usize = 10;

/// Cutoffs reported in every [`EvalReport`].
pub const REPORTED_K: [usize; 3] = [1, 5, 10];

/// Scene id to correct object id.
pub type GroundTruth = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("no queries to evaluate")]
    EmptyResults,
    #[error("no ground truth for scene {0}")]
    MissingTruth(String),
    #[error("ground truth scene {0} has no results")]
    UnknownScene(String),
    #[error("k must be at least 1")]
    InvalidK,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalOptions {
    /// Score truth scenes without results as misses, and skip result scenes
    /// without truth, instead of failing.
    pub lenient: bool,
}

/// Per-scene rank of the correct object, in scene id order.
pub fn scene_ranks(
    results: &Rankings,
    truth: &GroundTruth,
    opts: EvalOptions,
) -> Result<BTreeMap<String, Option<usize>>, MetricsError> {
    let mut out = BTreeMap::new();
    for (scene, list) in results {
        let Some(correct) = truth.get(scene) else {
            if opts.lenient {
                tracing::warn!(scene = %scene, "no ground truth, scene skipped");
                continue;
            }
            return Err(MetricsError::MissingTruth(scene.clone()));
        };
        let rank = list.iter().position(|id| id == correct).map(|p| p + 1);
        out.insert(scene.clone(), rank);
    }
    for scene in truth.keys() {
        if !results.contains_key(scene) {
            if !opts.lenient {
                return Err(MetricsError::UnknownScene(scene.clone()));
            }
            tracing::warn!(scene = %scene, "no results, counted as a miss");
            out.insert(scene.clone(), None);
        }
    }
    if out.is_empty() {
        return Err(MetricsError::EmptyResults);
    }
    Ok(out)
}

/// Fraction of `ranks` at or above `k`.
///
/// ```
/// use samurai::metrics::recall_from_ranks;
///
/// let ranks = [Some(1), Some(2), Some(4), None];
/// assert_eq!(recall_from_ranks(&ranks, 1).unwrap(), 0.25);
/// assert_eq!(recall_from_ranks(&ranks, 5).unwrap(), 0.75);
/// ```
pub fn recall_from_ranks(ranks: &[Option<usize>], k: usize) -> Result<f64, MetricsError> {
    if k == 0 {
        return Err(MetricsError::InvalidK);
    }
    if ranks.is_empty() {
        return Err(MetricsError::EmptyResults);
    }
    let hits = ranks.iter().filter(|r| matches!(r, Some(r) if *r <= k)).count();
    Ok(hits as f64 / ranks.len() as f64)
}

/// Mean reciprocal rank with ranks past `cutoff` counted as zero. Sums in
/// slice order.
///
/// ```
/// use samurai::metrics::mrr_from_ranks;
///
/// let ranks = [Some(1), Some(2), Some(4), None];
/// assert_eq!(mrr_from_ranks(&ranks, 10).unwrap(), 0.4375);
/// ```
pub fn mrr_from_ranks(ranks: &[Option<usize>], cutoff: usize) -> Result<f64, MetricsError> {
    if ranks.is_empty() {
        return Err(MetricsError::EmptyResults);
    }
    let mut sum = 0.0f64;
    for r in ranks {
        if let Some(r) = *r {
            if r >= 1 && r <= cutoff {
                sum += 1.0 / r as f64;
            }
        }
    }
    Ok(sum / ranks.len() as f64)
}

fn ranks_vec(per_scene: &BTreeMap<String, Option<usize>>) -> Vec<Option<usize>> {
    per_scene.values().copied().collect()
}

pub fn recall_at_k(results: &Rankings, truth: &GroundTruth, k: usize, opts: EvalOptions) -> Result<f64, MetricsError> {
    if k == 0 {
        return Err(MetricsError::InvalidK);
    }
    recall_from_ranks(&ranks_vec(&scene_ranks(results, truth, opts)?), k)
}

pub fn mrr(results: &Rankings, truth: &GroundTruth, cutoff: usize, opts: EvalOptions) -> Result<f64, MetricsError> {
    mrr_from_ranks(&ranks_vec(&scene_ranks(results, truth, opts)?), cutoff)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub num_queries: usize,
    pub recall_at_1: f64,
    pub recall_at_5: f64,
    pub recall_at_10: f64,
    pub mrr: f64,
    pub per_scene: BTreeMap<String, Option<usize>>,
}

impl EvalReport {
    pub fn from_scene_ranks(per_scene: BTreeMap<String, Option<usize>>) -> Result<Self, MetricsError> {
        let ranks = ranks_vec(&per_scene);
        let [r1, r5, r10] = REPORTED_K.map(|k| recall_from_ranks(&ranks, k));
        Ok(Self {
            num_queries: ranks.len(),
            recall_at_1: r1?,
            recall_at_5: r5?,
            recall_at_10: r10?,
            mrr: mrr_from_ranks(&ranks, MRR_CUTOFF)?,
            per_scene,
        })
    }

    /// JSON with a fixed key order and metrics printed to four decimals.
    pub fn to_json(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{{");
        let _ = writeln!(s, "  \"num_queries\": {},", self.num_queries);
        let _ = writeln!(s, "  \"recall_at_1\": {:.4},", self.recall_at_1);
        let _ = writeln!(s, "  \"recall_at_5\": {:.4},", self.recall_at_5);
        let _ = writeln!(s, "  \"recall_at_10\": {:.4},", self.recall_at_10);
        let _ = writeln!(s, "  \"mrr\": {:.4},", self.mrr);
        if self.per_scene.is_empty() {
            let _ = writeln!(s, "  \"per_scene\": {{}}");
        } else {
            let _ = writeln!(s, "  \"per_scene\": {{");
            let n = self.per_scene.len();
            for (i, (scene, rank)) in self.per_scene.iter().enumerate() {
                let key = serde_json::to_string(scene).expect("string serialization");
                let value = rank.map_or_else(|| "null".to_owned(), |r| r.to_string());
                let sep = if i + 1 < n { "," } else { "" };
                let _ = writeln!(s, "    {key}: {value}{sep}");
            }
            let _ = writeln!(s, "  }}");
        }
        s.push_str("}\n");
        s
    }
}

pub fn evaluate(results: &Rankings, truth: &GroundTruth, opts: EvalOptions) -> Result<EvalReport, MetricsError> {
    EvalReport::from_scene_ranks(scene_ranks(results, truth, opts)?)
}
