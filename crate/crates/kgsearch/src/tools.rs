//! The two retrieval tools exposed to agent policies: global lexical search
//! and filtered one-hop neighborhood exploration.
//!
//! Tools are the only gateway between a policy and the graph. Failures a
//! policy can recover from (empty query, unknown node, bad type label) are
//! typed [`ToolError`]s meant to be rendered back as tool-error
//! observations, never panics.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::graph::{Direction, Graph, NodeId};
use crate::index::{InvertedIndex, ScoredNode};

/// Characters of descriptor text carried in result snippets.
pub const SNIPPET_CHARS: usize = 300;

/// Optional node / relation type constraints on neighborhood candidates.
/// An absent component means "no constraint".
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_types: Option<BTreeSet<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation_types: Option<BTreeSet<String>>,
}

impl TypeFilter {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_unconstrained(&self) -> bool {
        self.node_types.is_none() && self.relation_types.is_none()
    }
}

/// Per-call budgets: default result count for global search (overridable
/// per call) and the fixed neighborhood budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolBudget {
    pub search_default_k: usize,
    pub neighbor_k: usize,
}

impl Default for ToolBudget {
    fn default() -> Self {
        ToolBudget {
            search_default_k: 5,
            neighbor_k: 20,
        }
    }
}

/// Ablation switches: query-based neighbor ranking and type-based filtering
/// can each be disabled to measure their contribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolOptions {
    pub rank_neighbors: bool,
    pub type_filtering: bool,
}

impl Default for ToolOptions {
    fn default() -> Self {
        ToolOptions {
            rank_neighbors: true,
            type_filtering: true,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ToolError {
    #[error("empty query: no tokens survive tokenization")]
    EmptyQuery,
    #[error("k must be >= 1, got {given}")]
    InvalidK { given: usize },
    #[error("unknown node id `{id}`")]
    UnknownNode { id: NodeId },
    #[error("unknown {kind} type `{label}`; valid labels: {}", valid.join(", "))]
    UnknownTypeLabel {
        kind: &'static str,
        label: String,
        valid: Vec<String>,
    },
}

/// One global-search hit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub id: NodeId,
    pub node_type: String,
    pub score: f64,
    pub snippet: String,
}

/// One neighborhood-exploration hit: every qualifying connection between
/// the queried node and this neighbor, plus a score when the call was
/// ranked by a subquery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborEntry {
    pub id: NodeId,
    pub node_type: String,
    pub connections: Vec<(String, Direction)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    pub snippet: String,
}

/// Stateless tool façade over an immutable graph + index pair; safe to
/// share across any number of concurrent agents.
#[derive(Debug, Clone)]
pub struct Toolkit {
    graph: Arc<Graph>,
    index: Arc<InvertedIndex>,
    budget: ToolBudget,
    options: ToolOptions,
}

impl Toolkit {
    pub fn new(graph: Arc<Graph>, index: Arc<InvertedIndex>, budget: ToolBudget) -> Self {
        Toolkit {
            graph,
            index,
            budget,
            options: ToolOptions::default(),
        }
    }

    pub fn with_options(mut self, options: ToolOptions) -> Self {
        self.options = options;
        self
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn index(&self) -> &InvertedIndex {
        &self.index
    }

    pub fn budget(&self) -> ToolBudget {
        self.budget
    }

    pub fn options(&self) -> ToolOptions {
        self.options
    }

    fn snippet(&self, id: &NodeId) -> String {
        let text = self
            .graph
            .descriptor_text(id)
            .expect("snippets are only rendered for loaded nodes");
        text.chars().take(SNIPPET_CHARS).collect()
    }

    /// The `k` highest-scoring nodes in the whole graph for `q` (default
    /// `k` from the budget). Zero-scoring nodes are excluded, so an empty
    /// result is a successful "nothing matched".
    pub fn global_search(&self, q: &str, k: Option<usize>) -> Result<Vec<SearchHit>, ToolError> {
        if crate::index::tokenize(q).is_empty() {
            return Err(ToolError::EmptyQuery);
        }
        let k = k.unwrap_or(self.budget.search_default_k);
        if k == 0 {
            return Err(ToolError::InvalidK { given: 0 });
        }
        Ok(self
            .index
            .top_k_global(q, k)
            .into_iter()
            .map(|ScoredNode { id, score }| {
                let node_type = self
                    .graph
                    .node(&id)
                    .expect("indexed nodes are loaded")
                    .node_type
                    .clone();
                let snippet = self.snippet(&id);
                SearchHit {
                    id,
                    node_type,
                    score,
                    snippet,
                }
            })
            .collect())
    }

    fn validate_filter(&self, filter: &TypeFilter) -> Result<(), ToolError> {
        let manifest = self.graph.manifest();
        if let Some(node_types) = &filter.node_types {
            for label in node_types {
                if !manifest.entity_types.contains(label) {
                    return Err(ToolError::UnknownTypeLabel {
                        kind: "entity",
                        label: label.clone(),
                        valid: manifest.entity_types.iter().cloned().collect(),
                    });
                }
            }
        }
        if let Some(relation_types) = &filter.relation_types {
            for label in relation_types {
                if !manifest.relation_types.contains(label) {
                    return Err(ToolError::UnknownTypeLabel {
                        kind: "relation",
                        label: label.clone(),
                        valid: manifest.relation_types.iter().cloned().collect(),
                    });
                }
            }
        }
        Ok(())
    }

    /// The filtered one-hop candidate set N_F(v): neighbors whose node type
    /// passes the node filter and that are connected by at least one edge
    /// whose relation type passes the relation filter. Each candidate maps
    /// to its qualifying `(relation, direction)` connections.
    ///
    /// This is the set the `neighbors` tool ranks and truncates; it is
    /// exposed separately so the filter semantics can be checked directly.
    pub fn filtered_neighborhood(
        &self,
        v: &NodeId,
        filter: &TypeFilter,
    ) -> Result<BTreeMap<NodeId, Vec<(String, Direction)>>, ToolError> {
        let pos = self
            .graph
            .position(v)
            .map_err(|_| ToolError::UnknownNode { id: v.clone() })?;
        let filter = if self.options.type_filtering {
            self.validate_filter(filter)?;
            filter.clone()
        } else {
            TypeFilter::none()
        };

        let mut candidates: BTreeMap<NodeId, Vec<(String, Direction)>> = BTreeMap::new();
        for entry in self.graph.adjacency_at(pos) {
            let neighbor = self.graph.node_at(entry.neighbor);
            if let Some(node_types) = &filter.node_types {
                if !node_types.contains(&neighbor.node_type) {
                    continue;
                }
            }
            let relation = self.graph.relation_name(entry.relation);
            if let Some(relation_types) = &filter.relation_types {
                if !relation_types.contains(relation) {
                    continue;
                }
            }
            candidates
                .entry(neighbor.id.clone())
                .or_default()
                .push((relation.to_string(), entry.direction));
        }
        Ok(candidates)
    }

    /// One-hop neighborhood exploration: candidates from
    /// [`filtered_neighborhood`](Self::filtered_neighborhood), ranked by the
    /// subquery when one is given (ascending id otherwise), truncated to the
    /// fixed neighbor budget. Single hop only; deeper exploration comes from
    /// composing calls.
    pub fn neighbors(
        &self,
        v: &NodeId,
        q: Option<&str>,
        filter: &TypeFilter,
    ) -> Result<Vec<NeighborEntry>, ToolError> {
        let candidates = self.filtered_neighborhood(v, filter)?;
        let ranked_query = match q {
            Some(query) if self.options.rank_neighbors => query,
            _ => "",
        };
        let ids: BTreeSet<NodeId> = candidates.keys().cloned().collect();
        let ranked = self
            .index
            .top_k_subset(ranked_query, &ids, self.budget.neighbor_k);
        let scored = !crate::index::tokenize(ranked_query).is_empty();

        Ok(ranked
            .into_iter()
            .map(|ScoredNode { id, score }| {
                let node_type = self
                    .graph
                    .node(&id)
                    .expect("candidates are loaded nodes")
                    .node_type
                    .clone();
                let connections = candidates[&id].clone();
                let snippet = self.snippet(&id);
                NeighborEntry {
                    id,
                    node_type,
                    connections,
                    score: scored.then_some(score),
                    snippet,
                }
            })
            .collect())
    }

    /// Machine-readable schemas for the two tools, with the loaded graph's
    /// type vocabularies inlined as enumerations.
    pub fn schemas(&self) -> Vec<ToolSchema> {
        let manifest = self.graph.manifest();
        let entity_types: Vec<String> = manifest.entity_types.iter().cloned().collect();
        let relation_types: Vec<String> = manifest.relation_types.iter().cloned().collect();
        vec![
            ToolSchema {
                name: "global_search".to_string(),
                description: "Search the whole graph for the k nodes whose text best \
                              matches the query. Use it to find entry points or to answer \
                              text-only questions directly."
                    .to_string(),
                parameters: vec![
                    ParamSchema {
                        name: "q".to_string(),
                        param_type: ParamType::String,
                        required: true,
                        default: None,
                        allowed: None,
                        description: "Textual subquery to match against node text.".to_string(),
                    },
                    ParamSchema {
                        name: "k".to_string(),
                        param_type: ParamType::Integer,
                        required: false,
                        default: Some(serde_json::json!(self.budget.search_default_k)),
                        allowed: None,
                        description: "How many nodes to return.".to_string(),
                    },
                ],
            },
            ToolSchema {
                name: "neighbors".to_string(),
                description: format!(
                    "List nodes adjacent to node v (one hop, either direction), optionally \
                     restricted by node/relation types and ranked by a subquery. Returns at \
                     most {} neighbors with their relation types and edge directions.",
                    self.budget.neighbor_k
                ),
                parameters: vec![
                    ParamSchema {
                        name: "v".to_string(),
                        param_type: ParamType::String,
                        required: true,
                        default: None,
                        allowed: None,
                        description: "Id of the node to expand.".to_string(),
                    },
                    ParamSchema {
                        name: "q".to_string(),
                        param_type: ParamType::String,
                        required: false,
                        default: None,
                        allowed: None,
                        description: "Optional subquery used to rank the neighborhood."
                            .to_string(),
                    },
                    ParamSchema {
                        name: "node_types".to_string(),
                        param_type: ParamType::StringArray,
                        required: false,
                        default: None,
                        allowed: Some(entity_types),
                        description: "Keep only neighbors with one of these node types."
                            .to_string(),
                    },
                    ParamSchema {
                        name: "relation_types".to_string(),
                        param_type: ParamType::StringArray,
                        required: false,
                        default: None,
                        allowed: Some(relation_types),
                        description: "Keep only neighbors connected by one of these relation \
                                      types."
                            .to_string(),
                    },
                ],
            },
        ]
    }
}

/// Parameter value types used in tool schemas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamType {
    String,
    Integer,
    StringArray,
}

/// One tool parameter: name, type, requiredness, default, and (for string
/// arrays) the allowed label vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSchema {
    pub name: String,
    #[serde(rename = "type")]
    pub param_type: ParamType,
    pub required: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub default: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub allowed: Option<Vec<String>>,
    pub description: String,
}

/// Machine-readable description of one tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    pub parameters: Vec<ParamSchema>,
}

impl ToolSchema {
    /// Renders the schema in the `{"type": "function", "function": ...}`
    /// shape chat-completion endpoints expect.
    pub fn to_function_value(&self) -> serde_json::Value {
        let mut properties = serde_json::Map::new();
        let mut required = Vec::new();
        for param in &self.parameters {
            let mut prop = serde_json::Map::new();
            match param.param_type {
                ParamType::String => {
                    prop.insert("type".into(), "string".into());
                }
                ParamType::Integer => {
                    prop.insert("type".into(), "integer".into());
                }
                ParamType::StringArray => {
                    prop.insert("type".into(), "array".into());
                    let mut items = serde_json::Map::new();
                    items.insert("type".into(), "string".into());
                    if let Some(allowed) = &param.allowed {
                        items.insert("enum".into(), serde_json::json!(allowed));
                    }
                    prop.insert("items".into(), serde_json::Value::Object(items));
                }
            }
            prop.insert("description".into(), param.description.clone().into());
            if let Some(default) = &param.default {
                prop.insert("default".into(), default.clone());
            }
            properties.insert(param.name.clone(), serde_json::Value::Object(prop));
            if param.required {
                required.push(param.name.clone());
            }
        }
        serde_json::json!({
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": {
                    "type": "object",
                    "properties": properties,
                    "required": required,
                },
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Graph, TypeManifest};
    use crate::index::Bm25Params;
    use crate::testutil::fix7;

    fn toolkit() -> Toolkit {
        let graph = Arc::new(fix7());
        let index = Arc::new(InvertedIndex::build(&graph, Bm25Params::default()));
        Toolkit::new(graph, index, ToolBudget::default())
    }

    fn filter(node_types: &[&str], relation_types: &[&str]) -> TypeFilter {
        TypeFilter {
            node_types: (!node_types.is_empty())
                .then(|| node_types.iter().map(|s| s.to_string()).collect()),
            relation_types: (!relation_types.is_empty())
                .then(|| relation_types.iter().map(|s| s.to_string()).collect()),
        }
    }

    #[test]
    fn global_search_cites_finds_p2() {
        let tk = toolkit();
        let hits = tk.global_search("cites", Some(5)).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].id, NodeId::from("P2"));
        assert_eq!(hits[0].node_type, "paper");
        assert!(hits[0].score > 0.0);
        assert!(hits[0].snippet.starts_with("title: A survey"));
    }

    #[test]
    fn global_search_k_override_is_a_prefix() {
        let tk = toolkit();
        let five = tk.global_search("retrieval graph", Some(5)).unwrap();
        let one = tk.global_search("retrieval graph", Some(1)).unwrap();
        assert_eq!(one.as_slice(), &five[..1]);
    }

    #[test]
    fn global_search_no_match_is_success() {
        let tk = toolkit();
        assert!(tk.global_search("zzz-no-such-token", None).unwrap().is_empty());
    }

    #[test]
    fn global_search_empty_query_is_tool_error() {
        let tk = toolkit();
        assert!(matches!(
            tk.global_search("  --- !!", None),
            Err(ToolError::EmptyQuery)
        ));
        assert!(matches!(
            tk.global_search("graph", Some(0)),
            Err(ToolError::InvalidK { given: 0 })
        ));
    }

    #[test]
    fn neighbors_author_filter_on_p1() {
        let tk = toolkit();
        let entries = tk
            .neighbors(&NodeId::from("P1"), None, &filter(&["author"], &[]))
            .unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].id, NodeId::from("A1"));
        assert_eq!(
            entries[0].connections,
            vec![("authored_by".to_string(), Direction::Outgoing)]
        );
        assert_eq!(entries[0].score, None);
    }

    #[test]
    fn neighbors_filter_excluding_everything_is_empty_success() {
        let tk = toolkit();
        let entries = tk
            .neighbors(&NodeId::from("A1"), None, &filter(&[], &["has_field"]))
            .unwrap();
        assert!(entries.is_empty());
    }

    #[test]
    fn neighbors_of_f1_ranked_by_graph_query() {
        let tk = toolkit();
        let entries = tk
            .neighbors(&NodeId::from("F1"), Some("graph"), &TypeFilter::none())
            .unwrap();
        let ids: Vec<&str> = entries.iter().map(|e| e.id.as_str()).collect();
        // Both incident papers mention "graph"; the oracle ranking is
        // asserted in the acceptance suite, membership and scoring here.
        assert_eq!(entries.len(), 2);
        assert!(ids.contains(&"P1") && ids.contains(&"P3"));
        assert!(entries.iter().all(|e| e.score.unwrap() > 0.0));
        assert!(entries.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn neighbors_unranked_order_is_ascending_id() {
        let tk = toolkit();
        let entries = tk
            .neighbors(&NodeId::from("P1"), None, &TypeFilter::none())
            .unwrap();
        let ids: Vec<&str> = entries.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["A1", "F1", "P2"]);
        assert!(entries.iter().all(|e| e.score.is_none()));
    }

    #[test]
    fn neighbors_never_returns_the_queried_node() {
        let tk = toolkit();
        for node in tk.graph().nodes() {
            let entries = tk.neighbors(&node.id, None, &TypeFilter::none()).unwrap();
            assert!(entries.iter().all(|e| e.id != node.id));
        }
    }

    #[test]
    fn neighbors_unknown_node_and_bad_label() {
        let tk = toolkit();
        assert!(matches!(
            tk.neighbors(&NodeId::from("ghost"), None, &TypeFilter::none()),
            Err(ToolError::UnknownNode { .. })
        ));
        match tk.neighbors(&NodeId::from("P1"), None, &filter(&["planet"], &[])) {
            Err(ToolError::UnknownTypeLabel { kind, label, valid }) => {
                assert_eq!(kind, "entity");
                assert_eq!(label, "planet");
                assert_eq!(valid, ["author", "field", "paper"]);
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn ranked_neighbors_exclude_zero_scores() {
        let tk = toolkit();
        // "cites" appears in no neighbor of F1, so the ranked call returns
        // nothing even though two candidates exist.
        let entries = tk
            .neighbors(&NodeId::from("F1"), Some("cites"), &TypeFilter::none())
            .unwrap();
        assert!(entries.is_empty());
    }

    #[test]
    fn ablation_switches() {
        let graph = Arc::new(fix7());
        let index = Arc::new(InvertedIndex::build(&graph, Bm25Params::default()));
        let tk = Toolkit::new(graph, index, ToolBudget::default()).with_options(ToolOptions {
            rank_neighbors: false,
            type_filtering: false,
        });
        // Filters ignored: author filter no longer restricts.
        let entries = tk
            .neighbors(&NodeId::from("P1"), None, &filter(&["author"], &[]))
            .unwrap();
        assert_eq!(entries.len(), 3);
        // Ranking ignored: subquery no longer reorders or scores.
        let entries = tk
            .neighbors(&NodeId::from("F1"), Some("graph"), &TypeFilter::none())
            .unwrap();
        let ids: Vec<&str> = entries.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["P1", "P3"]);
        assert!(entries.iter().all(|e| e.score.is_none()));
    }

    #[test]
    fn snippet_is_char_capped() {
        let manifest = TypeManifest::new(["t"], Vec::<String>::new());
        let long = "x ".repeat(500);
        let nodes = vec![crate::graph::NodeRecord {
            id: NodeId::from("n"),
            node_type: "t".to_string(),
            fields: vec![("body".to_string(), long)],
        }];
        let graph = Arc::new(Graph::build(manifest, nodes, vec![]).unwrap());
        let index = Arc::new(InvertedIndex::build(&graph, Bm25Params::default()));
        let tk = Toolkit::new(graph, index, ToolBudget::default());
        let hits = tk.global_search("x", None).unwrap();
        assert_eq!(hits[0].snippet.chars().count(), SNIPPET_CHARS);
    }

    #[test]
    fn schemas_enumerate_graph_vocabularies() {
        let tk = toolkit();
        let schemas = tk.schemas();
        assert_eq!(schemas.len(), 2);
        assert_eq!(schemas[0].name, "global_search");
        assert_eq!(schemas[1].name, "neighbors");
        let relation_param = schemas[1]
            .parameters
            .iter()
            .find(|p| p.name == "relation_types")
            .unwrap();
        assert_eq!(
            relation_param.allowed.as_deref().unwrap(),
            ["authored_by", "cites", "has_field"]
        );
        let k_param = schemas[0].parameters.iter().find(|p| p.name == "k").unwrap();
        assert_eq!(k_param.default, Some(serde_json::json!(5)));
    }

    #[test]
    fn schemas_with_empty_registry_have_empty_enums() {
        let graph = Arc::new(Graph::build(TypeManifest::default(), vec![], vec![]).unwrap());
        let index = Arc::new(InvertedIndex::build(&graph, Bm25Params::default()));
        let tk = Toolkit::new(graph, index, ToolBudget::default());
        let schemas = tk.schemas();
        for schema in &schemas {
            for param in &schema.parameters {
                if let Some(allowed) = &param.allowed {
                    assert!(allowed.is_empty());
                }
            }
        }
    }

    #[test]
    fn schema_round_trip_is_identity() {
        let tk = toolkit();
        for schema in tk.schemas() {
            let json = serde_json::to_string(&schema).unwrap();
            let back: ToolSchema = serde_json::from_str(&json).unwrap();
            assert_eq!(back, schema);
        }
    }

    #[test]
    fn budget_bounds_result_sizes() {
        let graph = Arc::new(fix7());
        let index = Arc::new(InvertedIndex::build(&graph, Bm25Params::default()));
        let tk = Toolkit::new(
            graph,
            index,
            ToolBudget {
                search_default_k: 2,
                neighbor_k: 2,
            },
        );
        assert!(tk.global_search("title name", None).unwrap().len() <= 2);
        assert!(
            tk.neighbors(&NodeId::from("P1"), None, &TypeFilter::none())
                .unwrap()
                .len()
                <= 2
        );
    }
}
