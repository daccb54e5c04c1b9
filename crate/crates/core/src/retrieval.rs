//! Ranking strategies over an [`EmbeddingStore`].
//!
//! Four base strategies produce top-K lists per scene:
//!
//! | strategy | candidate set | ordering key |
//! | -------- | ------------- | ------------ |
//! | [`Strategy::TextOnly`] | whole catalog | text score |
//! | [`Strategy::ShapeOnly`] | whole catalog | shape score |
//! | [`Strategy::TextThenShapeShapeOrder`] | top-K by shape among the top-M by text | shape score |
//! | [`Strategy::TextThenShapeTextOrder`] | same set as above | text score |
//!
//! where the text score is `cosine(query_text, object_rgb)` and the shape
//! score is `cosine(query_shape, object_silhouette)`. [`Strategy::MajorityVote`]
//! fuses the four lists with [`majority_vote`].

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Manifest;
use crate::embedding::{cosine, EmbeddingStore, Modality};

pub const DEFAULT_K: usize = 10;
pub const DEFAULT_M: usize = 15;

/// Scale separating vote count from Borda points in the fused score.
const PACK_SCALE: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Strategy {
    TextOnly,
    ShapeOnly,
    TextThenShapeShapeOrder,
    TextThenShapeTextOrder,
    MajorityVote,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::TextOnly,
        Strategy::ShapeOnly,
        Strategy::TextThenShapeShapeOrder,
        Strategy::TextThenShapeTextOrder,
        Strategy::MajorityVote,
    ];

    /// CLI spelling.
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::TextOnly => "text",
            Self::ShapeOnly => "shape",
            Self::TextThenShapeShapeOrder => "ts-shape",
            Self::TextThenShapeTextOrder => "ts-text",
            Self::MajorityVote => "vote",
        }
    }

    /// Embedding modalities the strategy reads, as (scene side, object side) pairs.
    pub fn required_modalities(&self) -> &'static [(Modality, Modality)] {
        const TEXT: (Modality, Modality) = (Modality::QueryText, Modality::ObjectRgb);
        const SHAPE: (Modality, Modality) = (Modality::QueryShape, Modality::ObjectSilhouette);
        match self {
            Self::TextOnly => &[TEXT],
            Self::ShapeOnly => &[SHAPE],
            _ => &[TEXT, SHAPE],
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown strategy {s:?} (expected text|shape|ts-shape|ts-text|vote)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub object_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub scene_id: String,
    pub strategy: Strategy,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.entries.iter().map(|e| e.object_id.as_str())
    }

    /// 1-based rank of `object_id`, if listed.
    pub fn rank_of(&self, object_id: &str) -> Option<usize> {
        self.ids().position(|id| id == object_id).map(|p| p + 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct ids, non-increasing scores, at most `k` entries.
    pub fn check_invariants(&self, k: usize) -> Result<(), String> {
        if self.entries.len() > k {
            return Err(format!(
                "{}: {} entries exceed K={k}",
                self.scene_id,
                self.entries.len()
            ));
        }
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.object_id.as_str()) {
                return Err(format!("{}: duplicate object {}", self.scene_id, e.object_id));
            }
        }
        for w in self.entries.windows(2) {
            if w[0].score < w[1].score {
                return Err(format!(
                    "{}: score increases from {} to {}",
                    self.scene_id, w[0].object_id, w[1].object_id
                ));
            }
        }
        Ok(())
    }
}

/// Integer vote weights for the four base strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteWeights {
    pub text: u32,
    pub shape: u32,
    pub hybrid_shape: u32,
    pub hybrid_text: u32,
}

impl VoteWeights {
    pub fn new(text: u32, shape: u32, hybrid_shape: u32, hybrid_text: u32) -> Result<Self, RetrievalError> {
        let w = Self {
            text,
            shape,
            hybrid_shape,
            hybrid_text,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.text + self.shape + self.hybrid_shape + self.hybrid_text == 0 {
            return Err(RetrievalError::InvalidParams(
                "at least one vote weight must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn for_strategy(&self, strategy: Strategy) -> u32 {
        match strategy {
            Strategy::TextOnly => self.text,
            Strategy::ShapeOnly => self.shape,
            Strategy::TextThenShapeShapeOrder => self.hybrid_shape,
            Strategy::TextThenShapeTextOrder => self.hybrid_text,
            Strategy::MajorityVote => 0,
        }
    }
}

impl Default for VoteWeights {
    fn default() -> Self {
        Self {
            text: 1,
            shape: 1,
            hybrid_shape: 2,
            hybrid_text: 2,
        }
    }
}

impl FromStr for VoteWeights {
    type Err = String;

    /// `text,shape,ts-shape,ts-text`, e.g. `1,1,2,2`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts = s
            .split(',')
            .map(|p| p.trim().parse::<u32>().map_err(|e| format!("bad weight {p:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()?;
        let [a, b, c, d] = parts[..] else {
            return Err(format!("expected four comma-separated weights, got {s:?}"));
        };
        Self::new(a, b, c, d).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalParams {
    /// Final list depth.
    pub k: usize,
    /// Text pre-filter depth for the hybrid strategies.
    pub m: usize,
    pub weights: VoteWeights,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            m: DEFAULT_M,
            weights: VoteWeights::default(),
        }
    }
}

impl RetrievalParams {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.k == 0 {
            return Err(RetrievalError::InvalidParams("K must be at least 1".into()));
        }
        if self.k > self.m {
            return Err(RetrievalError::InvalidParams(format!(
                "K={} must not exceed M={}",
                self.k, self.m
            )));
        }
        self.weights.validate()
    }

    /// Clamps K and M to the catalog size. Returns the clamped params and
    /// whether anything changed.
    pub fn clamped(&self, catalog_size: usize) -> (Self, bool) {
        let out = Self {
            k: self.k.min(catalog_size),
            m: self.m.min(catalog_size),
            weights: self.weights,
        };
        (out, out != *self)
    }
}

/// The scene and object ids a run covers, each sorted and unique.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    pub scenes: Vec<String>,
    pub objects: Vec<String>,
}

impl Catalog {
    pub fn new(scenes: impl IntoIterator<Item = String>, objects: impl IntoIterator<Item = String>) -> Self {
        let sorted =
            |it: &mut dyn Iterator<Item = String>| -> Vec<String> { it.collect::<BTreeSet<_>>().into_iter().collect() };
        Self {
            scenes: sorted(&mut scenes.into_iter()),
            objects: sorted(&mut objects.into_iter()),
        }
    }

    pub fn from_manifest(manifest: &Manifest) -> Self {
        Self::new(manifest.scene_ids(), manifest.object_ids())
    }

    /// Every id that has a record of a scene-side or object-side modality.
    pub fn from_store(store: &EmbeddingStore) -> Self {
        let mut scenes = BTreeSet::new();
        let mut objects = BTreeSet::new();
        for m in Modality::ALL {
            let target = if m.is_object() { &mut objects } else { &mut scenes };
            target.extend(store.ids(m).map(str::to_owned));
        }
        Self {
            scenes: scenes.into_iter().collect(),
            objects: objects.into_iter().collect(),
        }
    }
}

fn join_missing(missing: &[(Modality, String)]) -> String {
    missing
        .iter()
        .map(|(m, id)| format!("({m}, {id})"))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RetrievalError {
    #[error("missing embeddings: {}", join_missing(.0))]
    MissingEmbedding(Vec<(Modality, String)>),
    #[error("{query} has dimension {query_dim} but {object} has dimension {object_dim}")]
    DimensionMismatch {
        query: Modality,
        query_dim: usize,
        object: Modality,
        object_dim: usize,
    },
    #[error("vote inputs disagree on scene: {expected} vs {found}")]
    SceneMismatch { expected: String, found: String },
    #[error("vote input lists object {0} outside the catalog")]
    CatalogMismatch(String),
    #[error("vote input for {0} is missing")]
    MissingVoteInput(Strategy),
    #[error("invalid retrieval parameters: {0}")]
    InvalidParams(String),
    #[error("catalog has no objects")]
    EmptyCatalog,
    #[error("cannot build worker pool: {0}")]
    WorkerPool(String),
}

/// Descending by score, ascending by id on ties.
fn by_score_then_id(a: &(&str, f32), b: &(&str, f32)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

/// Scores one scene against a fixed object list.
#[derive(Debug, Clone, Copy)]
pub struct Engine<'a> {
    store: &'a EmbeddingStore,
    objects: &'a [String],
}

impl<'a> Engine<'a> {
    pub fn new(store: &'a EmbeddingStore, objects: &'a [String]) -> Self {
        Self { store, objects }
    }

    fn vector(&self, modality: Modality, id: &str) -> Result<&'a [f32], RetrievalError> {
        self.store
            .get(modality, id)
            .ok_or_else(|| RetrievalError::MissingEmbedding(vec![(modality, id.to_owned())]))
    }

    /// `(object_id, cosine)` for every catalog object, in catalog order.
    pub fn scores(
        &self,
        scene_id: &str,
        query: Modality,
        object: Modality,
    ) -> Result<Vec<(&'a str, f32)>, RetrievalError> {
        let q = self.vector(query, scene_id)?;
        let mut missing = Vec::new();
        let mut out = Vec::with_capacity(self.objects.len());
        for id in self.objects {
            let Some(v) = self.store.get(object, id) else {
                missing.push((object, id.clone()));
                continue;
            };
            let s = cosine(q, v).map_err(|_| RetrievalError::DimensionMismatch {
                query,
                query_dim: q.len(),
                object,
                object_dim: v.len(),
            })?;
            out.push((id.as_str(), s));
        }
        if !missing.is_empty() {
            return Err(RetrievalError::MissingEmbedding(missing));
        }
        Ok(out)
    }

    fn text_scores(&self, scene_id: &str) -> Result<Vec<(&'a str, f32)>, RetrievalError> {
        self.scores(scene_id, Modality::QueryText, Modality::ObjectRgb)
    }

    fn shape_scores(&self, scene_id: &str) -> Result<Vec<(&'a str, f32)>, RetrievalError> {
        self.scores(scene_id, Modality::QueryShape, Modality::ObjectSilhouette)
    }

    fn top_k(scene_id: &str, strategy: Strategy, mut scored: Vec<(&str, f32)>, k: usize) -> RankedList {
        scored.sort_by(by_score_then_id);
        scored.truncate(k);
        RankedList {
            scene_id: scene_id.to_owned(),
            strategy,
            entries: scored
                .into_iter()
                .map(|(id, s)| RankedEntry {
                    object_id: id.to_owned(),
                    score: f64::from(s),
                })
                .collect(),
        }
    }

    pub fn rank_text(&self, scene_id: &str, k: usize) -> Result<RankedList, RetrievalError> {
        Ok(Self::top_k(
            scene_id,
            Strategy::TextOnly,
            self.text_scores(scene_id)?,
            k,
        ))
    }

    pub fn rank_shape(&self, scene_id: &str, k: usize) -> Result<RankedList, RetrievalError> {
        Ok(Self::top_k(
            scene_id,
            Strategy::ShapeOnly,
            self.shape_scores(scene_id)?,
            k,
        ))
    }

    /// Filter by text to the top `m`, keep the top `k` of those by shape, then
    /// order the survivors by shape or by text depending on `order`.
    pub fn rank_hybrid(
        &self,
        scene_id: &str,
        k: usize,
        m: usize,
        order: HybridOrder,
    ) -> Result<RankedList, RetrievalError> {
        let text = self.text_scores(scene_id)?;
        let shape = self.shape_scores(scene_id)?;
        Ok(hybrid_from_scores(scene_id, &text, &shape, k, m, order))
    }

    pub fn rank(
        &self,
        scene_id: &str,
        strategy: Strategy,
        params: &RetrievalParams,
    ) -> Result<RankedList, RetrievalError> {
        let RetrievalParams { k, m, weights } = *params;
        match strategy {
            Strategy::TextOnly => self.rank_text(scene_id, k),
            Strategy::ShapeOnly => self.rank_shape(scene_id, k),
            Strategy::TextThenShapeShapeOrder => self.rank_hybrid(scene_id, k, m, HybridOrder::Shape),
            Strategy::TextThenShapeTextOrder => self.rank_hybrid(scene_id, k, m, HybridOrder::Text),
            Strategy::MajorityVote => {
                let text = self.text_scores(scene_id)?;
                let shape = self.shape_scores(scene_id)?;
                let base = BaseLists {
                    text: Self::top_k(scene_id, Strategy::TextOnly, text.clone(), k),
                    shape: Self::top_k(scene_id, Strategy::ShapeOnly, shape.clone(), k),
                    hybrid_shape: hybrid_from_scores(scene_id, &text, &shape, k, m, HybridOrder::Shape),
                    hybrid_text: hybrid_from_scores(scene_id, &text, &shape, k, m, HybridOrder::Text),
                };
                let text_map: BTreeMap<String, f32> = text.into_iter().map(|(id, s)| (id.to_owned(), s)).collect();
                majority_vote(&base, &weights, k, &text_map)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HybridOrder {
    Shape,
    Text,
}

fn hybrid_from_scores(
    scene_id: &str,
    text: &[(&str, f32)],
    shape: &[(&str, f32)],
    k: usize,
    m: usize,
    order: HybridOrder,
) -> RankedList {
    let mut by_text = text.to_vec();
    by_text.sort_by(by_score_then_id);
    by_text.truncate(m);

    let shape_of: BTreeMap<&str, f32> = shape.iter().copied().collect();
    let mut refined: Vec<(&str, f32)> = by_text.iter().map(|&(id, _)| (id, shape_of[id])).collect();
    // Stable: equal shape scores keep their text order when choosing members.
    refined.sort_by(|a, b| b.1.total_cmp(&a.1));
    refined.truncate(k);

    match order {
        HybridOrder::Shape => Engine::top_k(scene_id, Strategy::TextThenShapeShapeOrder, refined, k),
        HybridOrder::Text => {
            let text_of: BTreeMap<&str, f32> = by_text.iter().copied().collect();
            let rekeyed = refined.into_iter().map(|(id, _)| (id, text_of[id])).collect();
            Engine::top_k(scene_id, Strategy::TextThenShapeTextOrder, rekeyed, k)
        }
    }
}

/// The four base lists for one scene, the input to [`majority_vote`].
#[derive(Debug, Clone, PartialEq)]
pub struct BaseLists {
    pub text: RankedList,
    pub shape: RankedList,
    pub hybrid_shape: RankedList,
    pub hybrid_text: RankedList,
}

impl BaseLists {
    fn iter(&self) -> [(Strategy, &RankedList); 4] {
        [
            (Strategy::TextOnly, &self.text),
            (Strategy::ShapeOnly, &self.shape),
            (Strategy::TextThenShapeShapeOrder, &self.hybrid_shape),
            (Strategy::TextThenShapeTextOrder, &self.hybrid_text),
        ]
    }
}

/// Weighted per-appearance voting.
///
/// Every object listed by a base strategy `s` at 1-based rank `r` receives
/// `w_s` votes and `w_s * (len_s + 1 - r)` Borda points. Objects are ordered by
/// votes, then Borda points, then text score (all descending), then id, and the
/// top `k` are kept. The reported score packs the first two keys as
/// `votes + borda / 1e6`.
///
/// `text_scores` must hold the text score of every catalog object; any listed
/// object missing from it is reported as [`RetrievalError::CatalogMismatch`].
pub fn majority_vote(
    lists: &BaseLists,
    weights: &VoteWeights,
    k: usize,
    text_scores: &BTreeMap<String, f32>,
) -> Result<RankedList, RetrievalError> {
    let scene_id = &lists.text.scene_id;
    // (votes, borda) per object
    let mut tally: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for (strategy, list) in lists.iter() {
        if &list.scene_id != scene_id {
            return Err(RetrievalError::SceneMismatch {
                expected: scene_id.clone(),
                found: list.scene_id.clone(),
            });
        }
        let w = u64::from(weights.for_strategy(strategy));
        let len = list.entries.len() as u64;
        for (pos, entry) in list.entries.iter().enumerate() {
            if !text_scores.contains_key(&entry.object_id) {
                return Err(RetrievalError::CatalogMismatch(entry.object_id.clone()));
            }
            let t = tally.entry(entry.object_id.as_str()).or_default();
            t.0 += w;
            t.1 += w * (len - pos as u64);
        }
    }

    let mut fused: Vec<(&str, u64, u64, f32)> = tally
        .into_iter()
        .map(|(id, (votes, borda))| (id, votes, borda, text_scores[id]))
        .collect();
    fused.sort_by(|a, b| {
        b.1.cmp(&a.1)
            .then(b.2.cmp(&a.2))
            .then(b.3.total_cmp(&a.3))
            .then(a.0.cmp(b.0))
    });
    fused.truncate(k);

    Ok(RankedList {
        scene_id: scene_id.clone(),
        strategy: Strategy::MajorityVote,
        entries: fused
            .into_iter()
            .map(|(id, votes, borda, _)| RankedEntry {
                object_id: id.to_owned(),
                score: votes as f64 + borda as f64 / PACK_SCALE,
            })
            .collect(),
    })
}

/// Every `(modality, id)` the strategy needs that the store lacks.
pub fn missing_embeddings(catalog: &Catalog, store: &EmbeddingStore, strategy: Strategy) -> Vec<(Modality, String)> {
    let mut missing = Vec::new();
    for &(query, object) in strategy.required_modalities() {
        missing.extend(
            catalog
                .scenes
                .iter()
                .filter(|id| !store.contains(query, id))
                .map(|id| (query, id.clone())),
        );
        missing.extend(
            catalog
                .objects
                .iter()
                .filter(|id| !store.contains(object, id))
                .map(|id| (object, id.clone())),
        );
    }
    missing
}

/// Ranks every catalog scene with `strategy`, fanning out over `workers` threads.
///
/// Output order follows `catalog.scenes` regardless of worker count.
pub fn retrieve_all(
    catalog: &Catalog,
    store: &EmbeddingStore,
    params: &RetrievalParams,
    strategy: Strategy,
    workers: usize,
) -> Result<Vec<RankedList>, RetrievalError> {
    params.validate()?;
    if catalog.objects.is_empty() {
        return Err(RetrievalError::EmptyCatalog);
    }
    let (params, changed) = params.clamped(catalog.objects.len());
    if changed {
        tracing::warn!(
            k = params.k,
            m = params.m,
            catalog = catalog.objects.len(),
            "K/M clamped to catalog size"
        );
    }
    let missing = missing_embeddings(catalog, store, strategy);
    if !missing.is_empty() {
        return Err(RetrievalError::MissingEmbedding(missing));
    }
    for &(query, object) in strategy.required_modalities() {
        if let (Some(qd), Some(od)) = (store.dim(query), store.dim(object)) {
            if qd != od {
                return Err(RetrievalError::DimensionMismatch {
                    query,
                    query_dim: qd,
                    object,
                    object_dim: od,
                });
            }
        }
    }

    let engine = Engine::new(store, &catalog.objects);
    let run = || {
        catalog
            .scenes
            .par_iter()
            .map(|scene| engine.rank(scene, strategy, &params))
            .collect::<Result<Vec<_>, _>>()
    };
    if workers <= 1 {
        return catalog
            .scenes
            .iter()
            .map(|scene| engine.rank(scene, strategy, &params))
            .collect();
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| RetrievalError::WorkerPool(e.to_string()))?
        .install(run)
}
