//! BM25 relevance over an inverted index of node descriptor text.
//!
//! One document per node, document text = the rendered descriptor. Scoring
//! uses the plus-one IDF form `ln(1 + (N - n_t + 0.5) / (n_t + 0.5))`, which
//! is non-negative by construction, so every emitted score is >= 0.
//!
//! Ranking contract shared by all Top-k entry points: descending score,
//! ties broken by ascending [`NodeId`], zero-scoring documents excluded.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::graph::{Graph, NodeId};

/// Term-frequency saturation (`k1`) and length normalization (`b`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Bm25Params {
    /// Validated constructor: requires `k1 >= 0` and `0 <= b <= 1`.
    pub fn new(k1: f64, b: f64) -> Result<Self, IndexError> {
        if !(k1 >= 0.0) || !(0.0..=1.0).contains(&b) {
            return Err(IndexError::InvalidParams { k1, b });
        }
        Ok(Bm25Params { k1, b })
    }
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("invalid BM25 parameters k1={k1}, b={b} (need k1 >= 0 and 0 <= b <= 1)")]
    InvalidParams { k1: f64, b: f64 },
    #[error("node `{id}` is not indexed")]
    UnknownNode { id: NodeId },
    #[error("inconsistent index data: {0}")]
    Inconsistent(String),
}

/// A node together with its non-negative relevance score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredNode {
    pub id: NodeId,
    pub score: f64,
}

/// Lowercases and splits on any non-alphanumeric character, dropping empty
/// tokens. No stemming, no stop-word removal.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Deduplicates query tokens preserving first occurrence, so repeated query
/// words do not inflate scores and summation order stays deterministic.
fn dedup_tokens(tokens: Vec<String>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    tokens.into_iter().filter(|t| seen.insert(t.clone())).collect()
}

/// Immutable BM25 inverted index over one graph.
///
/// Documents sit at the same positions as the graph's nodes (ascending
/// [`NodeId`] order), so posting lists sorted by position are sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    ids: Vec<NodeId>,
    positions: HashMap<NodeId, u32>,
    postings: HashMap<String, Vec<(u32, u32)>>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    params: Bm25Params,
}

impl InvertedIndex {
    /// Indexes every node of `graph`, one document per node with the
    /// rendered descriptor as document text.
    pub fn build(graph: &Graph, params: Bm25Params) -> InvertedIndex {
        let mut ids = Vec::with_capacity(graph.node_count());
        let mut doc_lengths = Vec::with_capacity(graph.node_count());
        let mut postings: HashMap<String, Vec<(u32, u32)>> = HashMap::new();

        for (pos, node) in graph.nodes().iter().enumerate() {
            let text = crate::graph::render_descriptor(&node.fields);
            let tokens = tokenize(&text);
            doc_lengths.push(tokens.len() as u32);
            ids.push(node.id.clone());

            let mut counts: HashMap<String, u32> = HashMap::new();
            for token in tokens {
                *counts.entry(token).or_insert(0) += 1;
            }
            for (token, tf) in counts {
                postings.entry(token).or_default().push((pos as u32, tf));
            }
        }
        // Nodes are visited in ascending id order, but HashMap drains the
        // per-document counts in arbitrary order only within one document,
        // so each posting list is already position-sorted. Sort anyway to
        // keep the invariant independent of the build path.
        for list in postings.values_mut() {
            list.sort_unstable();
        }

        Self::assemble(ids, doc_lengths, postings, params)
    }

    /// Reassembles an index from serialized parts, revalidating invariants.
    pub fn from_parts(
        ids: Vec<NodeId>,
        doc_lengths: Vec<u32>,
        postings: HashMap<String, Vec<(u32, u32)>>,
        params: Bm25Params,
    ) -> Result<InvertedIndex, IndexError> {
        if ids.len() != doc_lengths.len() {
            return Err(IndexError::Inconsistent(format!(
                "{} ids but {} document lengths",
                ids.len(),
                doc_lengths.len()
            )));
        }
        for (token, list) in &postings {
            if !list.windows(2).all(|w| w[0].0 < w[1].0) {
                return Err(IndexError::Inconsistent(format!(
                    "postings for `{token}` are not strictly sorted by document"
                )));
            }
            if let Some(&(pos, _)) = list.last() {
                if pos as usize >= ids.len() {
                    return Err(IndexError::Inconsistent(format!(
                        "postings for `{token}` reference document {pos} out of {}",
                        ids.len()
                    )));
                }
            }
        }
        Ok(Self::assemble(ids, doc_lengths, postings, params))
    }

    fn assemble(
        ids: Vec<NodeId>,
        doc_lengths: Vec<u32>,
        postings: HashMap<String, Vec<(u32, u32)>>,
        params: Bm25Params,
    ) -> InvertedIndex {
        let positions = ids
            .iter()
            .enumerate()
            .map(|(pos, id)| (id.clone(), pos as u32))
            .collect();
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avg_doc_length = if doc_lengths.is_empty() {
            0.0
        } else {
            total as f64 / doc_lengths.len() as f64
        };
        InvertedIndex {
            ids,
            positions,
            postings,
            doc_lengths,
            avg_doc_length,
            params,
        }
    }

    pub fn doc_count(&self) -> usize {
        self.ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_length(&self, id: &NodeId) -> Option<u32> {
        self.positions
            .get(id)
            .map(|&pos| self.doc_lengths[pos as usize])
    }

    /// Document frequency of one token.
    pub fn doc_frequency(&self, token: &str) -> usize {
        self.postings.get(token).map_or(0, Vec::len)
    }

    /// Posting lists in ascending token order, for serialization.
    pub fn sorted_postings(&self) -> Vec<(&str, &[(u32, u32)])> {
        let mut entries: Vec<_> = self
            .postings
            .iter()
            .map(|(t, l)| (t.as_str(), l.as_slice()))
            .collect();
        entries.sort_unstable_by_key(|&(t, _)| t);
        entries
    }

    pub fn doc_lengths(&self) -> &[u32] {
        &self.doc_lengths
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    fn idf(&self, doc_frequency: usize) -> f64 {
        let n = self.ids.len() as f64;
        let df = doc_frequency as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn length_norm(&self, pos: u32) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let len_ratio = if self.avg_doc_length > 0.0 {
            self.doc_lengths[pos as usize] as f64 / self.avg_doc_length
        } else {
            1.0
        };
        k1 * (1.0 - b + b * len_ratio)
    }

    fn term_contribution(&self, tf: u32, pos: u32, idf: f64) -> f64 {
        let tf = tf as f64;
        idf * (tf * (self.params.k1 + 1.0)) / (tf + self.length_norm(pos))
    }

    /// BM25 relevance of node `v` for query `q`. Query tokens absent from
    /// the index contribute zero; the result is always >= 0.
    pub fn rel_score(&self, q: &str, v: &NodeId) -> Result<f64, IndexError> {
        let pos = *self
            .positions
            .get(v)
            .ok_or_else(|| IndexError::UnknownNode { id: v.clone() })?;
        let mut score = 0.0;
        for token in dedup_tokens(tokenize(q)) {
            if let Some(list) = self.postings.get(&token) {
                if let Ok(slot) = list.binary_search_by_key(&pos, |&(p, _)| p) {
                    score += self.term_contribution(list[slot].1, pos, self.idf(list.len()));
                }
            }
        }
        Ok(score)
    }

    fn accumulate<F>(&self, q: &str, mut admit: F) -> HashMap<u32, f64>
    where
        F: FnMut(u32) -> bool,
    {
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for token in dedup_tokens(tokenize(q)) {
            if let Some(list) = self.postings.get(&token) {
                let idf = self.idf(list.len());
                for &(pos, tf) in list {
                    if admit(pos) {
                        *scores.entry(pos).or_insert(0.0) +=
                            self.term_contribution(tf, pos, idf);
                    }
                }
            }
        }
        scores
    }

    fn rank(&self, scores: HashMap<u32, f64>, k: usize) -> Vec<ScoredNode> {
        let mut ranked: Vec<(u32, f64)> = scores.into_iter().filter(|&(_, s)| s > 0.0).collect();
        ranked.sort_unstable_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("BM25 scores are never NaN")
                .then(a.0.cmp(&b.0))
        });
        ranked.truncate(k);
        ranked
            .into_iter()
            .map(|(pos, score)| ScoredNode {
                id: self.ids[pos as usize].clone(),
                score,
            })
            .collect()
    }

    /// The `k` highest-scoring nodes in the whole graph for `q`.
    pub fn top_k_global(&self, q: &str, k: usize) -> Vec<ScoredNode> {
        self.rank(self.accumulate(q, |_| true), k)
    }

    /// Top-k restricted to `candidates`. With an empty (or token-free) query
    /// the ranking contract is replaced by ascending id order over all
    /// candidates, scores reported as zero and nothing excluded.
    pub fn top_k_subset(
        &self,
        q: &str,
        candidates: &BTreeSet<NodeId>,
        k: usize,
    ) -> Vec<ScoredNode> {
        if tokenize(q).is_empty() {
            return candidates
                .iter()
                .filter(|id| self.positions.contains_key(*id))
                .take(k)
                .map(|id| ScoredNode {
                    id: id.clone(),
                    score: 0.0,
                })
                .collect();
        }
        let positions: std::collections::HashSet<u32> = candidates
            .iter()
            .filter_map(|id| self.positions.get(id).copied())
            .collect();
        self.rank(self.accumulate(q, |pos| positions.contains(&pos)), k)
    }
}
