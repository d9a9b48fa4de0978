//! Immutable heterogeneous knowledge graph: typed nodes with textual
//! descriptors, typed directed edges, and symmetric adjacency.
//!
//! The graph is validated once at construction and never mutated afterwards,
//! so it can be shared freely across agent workers.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Opaque node identifier. Ordering is lexicographic over the identifier
/// text and is the tie-break order used everywhere ranking needs one.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_string())
    }
}

/// A typed entity with an ordered sequence of textual descriptor fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: NodeId,
    #[serde(rename = "type")]
    pub node_type: String,
    /// (field name, field value) pairs; input order is preserved and
    /// significant for [`Graph::descriptor_text`].
    pub fields: Vec<(String, String)>,
}

/// A typed directed relation between two loaded nodes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub src: NodeId,
    pub dst: NodeId,
    #[serde(rename = "type")]
    pub relation_type: String,
}

/// Which side of a stored edge the neighbor sits on, seen from the queried
/// node: `Outgoing` means the queried node is the edge source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Outgoing,
    Incoming,
}

impl Direction {
    pub fn flipped(self) -> Self {
        match self {
            Direction::Outgoing => Direction::Incoming,
            Direction::Incoming => Direction::Outgoing,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Direction::Outgoing => f.write_str("outgoing"),
            Direction::Incoming => f.write_str("incoming"),
        }
    }
}

/// Declared type vocabularies. Every node and edge type label must be a
/// member; unknown labels are rejected at load time.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeManifest {
    pub entity_types: BTreeSet<String>,
    pub relation_types: BTreeSet<String>,
}

impl TypeManifest {
    pub fn new<I, J, S, T>(entity_types: I, relation_types: J) -> Self
    where
        I: IntoIterator<Item = S>,
        J: IntoIterator<Item = T>,
        S: Into<String>,
        T: Into<String>,
    {
        TypeManifest {
            entity_types: entity_types.into_iter().map(Into::into).collect(),
            relation_types: relation_types.into_iter().map(Into::into).collect(),
        }
    }
}

/// Validation and lookup failures for graph construction and access.
#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("node id must be non-empty")]
    EmptyNodeId,
    #[error("duplicate node id `{id}`")]
    DuplicateNode { id: NodeId },
    #[error("node `{id}` has undeclared entity type `{node_type}`")]
    UndeclaredEntityType { id: NodeId, node_type: String },
    #[error("edge {src}->{dst} has undeclared relation type `{relation_type}`")]
    UndeclaredRelationType {
        src: NodeId,
        dst: NodeId,
        relation_type: String,
    },
    #[error("edge {src}->{dst} ({relation_type}) references unknown node `{missing}`")]
    DanglingEdge {
        src: NodeId,
        dst: NodeId,
        relation_type: String,
        missing: NodeId,
    },
    #[error("self-loop on `{id}` ({relation_type}) is not allowed")]
    SelfLoop { id: NodeId, relation_type: String },
    #[error("unknown node id `{id}`")]
    UnknownNode { id: NodeId },
}

/// Aggregate counts reported by [`Graph::stats`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub entity_types: usize,
    pub relation_types: usize,
    pub nodes: usize,
    pub edges: usize,
    pub average_degree: f64,
}

/// One adjacency slot: neighbor position, interned relation type, direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) struct AdjEntry {
    pub neighbor: u32,
    pub relation: u16,
    pub direction: Direction,
}

/// Validated, immutable knowledge graph with symmetric adjacency.
///
/// Nodes are held in ascending [`NodeId`] order; internal positions follow
/// that order, so position comparisons coincide with id comparisons.
#[derive(Debug)]
pub struct Graph {
    manifest: TypeManifest,
    nodes: Vec<NodeRecord>,
    positions: HashMap<NodeId, u32>,
    adjacency: Vec<Vec<AdjEntry>>,
    edges: Vec<EdgeRecord>,
    relation_names: Vec<String>,
    dropped_duplicate_edges: usize,
}

impl Graph {
    /// Validates records against the manifest and builds the graph.
    ///
    /// Edge input order is irrelevant: adjacency lists and the retained edge
    /// list are canonically sorted. Exact `(src, dst, relation)` duplicates
    /// are dropped with a warning; parallel edges with distinct relation
    /// types are kept.
    pub fn build(
        manifest: TypeManifest,
        mut nodes: Vec<NodeRecord>,
        edges: Vec<EdgeRecord>,
    ) -> Result<Graph, GraphError> {
        nodes.sort_by(|a, b| a.id.cmp(&b.id));

        let mut positions = HashMap::with_capacity(nodes.len());
        for (pos, node) in nodes.iter().enumerate() {
            if node.id.as_str().is_empty() {
                return Err(GraphError::EmptyNodeId);
            }
            if !manifest.entity_types.contains(&node.node_type) {
                return Err(GraphError::UndeclaredEntityType {
                    id: node.id.clone(),
                    node_type: node.node_type.clone(),
                });
            }
            if positions.insert(node.id.clone(), pos as u32).is_some() {
                return Err(GraphError::DuplicateNode {
                    id: node.id.clone(),
                });
            }
        }

        let relation_names: Vec<String> = manifest.relation_types.iter().cloned().collect();
        let relation_ids: HashMap<&str, u16> = relation_names
            .iter()
            .enumerate()
            .map(|(i, name)| (name.as_str(), i as u16))
            .collect();

        let mut adjacency: Vec<Vec<AdjEntry>> = vec![Vec::new(); nodes.len()];
        let mut kept: Vec<EdgeRecord> = Vec::with_capacity(edges.len());
        let mut seen: HashSet<(u32, u32, u16)> = HashSet::with_capacity(edges.len());
        let mut dropped = 0usize;

        for edge in edges {
            let relation = *relation_ids.get(edge.relation_type.as_str()).ok_or_else(|| {
                GraphError::UndeclaredRelationType {
                    src: edge.src.clone(),
                    dst: edge.dst.clone(),
                    relation_type: edge.relation_type.clone(),
                }
            })?;
            let lookup = |id: &NodeId| {
                positions
                    .get(id)
                    .copied()
                    .ok_or_else(|| GraphError::DanglingEdge {
                        src: edge.src.clone(),
                        dst: edge.dst.clone(),
                        relation_type: edge.relation_type.clone(),
                        missing: id.clone(),
                    })
            };
            let src = lookup(&edge.src)?;
            let dst = lookup(&edge.dst)?;
            if src == dst {
                return Err(GraphError::SelfLoop {
                    id: edge.src.clone(),
                    relation_type: edge.relation_type.clone(),
                });
            }
            if !seen.insert((src, dst, relation)) {
                log::warn!(
                    "dropping duplicate edge {}->{} ({})",
                    edge.src,
                    edge.dst,
                    edge.relation_type
                );
                dropped += 1;
                continue;
            }
            adjacency[src as usize].push(AdjEntry {
                neighbor: dst,
                relation,
                direction: Direction::Outgoing,
            });
            adjacency[dst as usize].push(AdjEntry {
                neighbor: src,
                relation,
                direction: Direction::Incoming,
            });
            kept.push(edge);
        }

        for list in &mut adjacency {
            list.sort();
        }
        kept.sort();

        Ok(Graph {
            manifest,
            nodes,
            positions,
            adjacency,
            edges: kept,
            relation_names,
            dropped_duplicate_edges: dropped,
        })
    }

    pub fn manifest(&self) -> &TypeManifest {
        &self.manifest
    }

    /// All node records in ascending id order.
    pub fn nodes(&self) -> &[NodeRecord] {
        &self.nodes
    }

    /// Retained edge records in canonical `(src, dst, relation)` order.
    pub fn edges(&self) -> &[EdgeRecord] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Count of exact-duplicate edges dropped during build.
    pub fn dropped_duplicate_edges(&self) -> usize {
        self.dropped_duplicate_edges
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.positions.contains_key(id)
    }

    pub fn node(&self, id: &NodeId) -> Result<&NodeRecord, GraphError> {
        self.position(id).map(|pos| &self.nodes[pos as usize])
    }

    pub(crate) fn position(&self, id: &NodeId) -> Result<u32, GraphError> {
        self.positions
            .get(id)
            .copied()
            .ok_or_else(|| GraphError::UnknownNode { id: id.clone() })
    }

    pub(crate) fn node_at(&self, pos: u32) -> &NodeRecord {
        &self.nodes[pos as usize]
    }

    pub(crate) fn adjacency_at(&self, pos: u32) -> &[AdjEntry] {
        &self.adjacency[pos as usize]
    }

    pub(crate) fn relation_name(&self, relation: u16) -> &str {
        &self.relation_names[relation as usize]
    }

    /// Incident edge records of `v`, counting both directions; parallel
    /// edges count individually.
    pub fn degree(&self, v: &NodeId) -> Result<usize, GraphError> {
        Ok(self.adjacency[self.position(v)? as usize].len())
    }

    /// The open neighborhood of `v`: every `(neighbor, relation, direction)`
    /// triple reachable over one edge in either direction. `v` itself never
    /// appears (self-loops are rejected at load).
    pub fn open_neighborhood(
        &self,
        v: &NodeId,
    ) -> Result<BTreeSet<(NodeId, String, Direction)>, GraphError> {
        let pos = self.position(v)?;
        Ok(self.adjacency[pos as usize]
            .iter()
            .map(|entry| {
                (
                    self.nodes[entry.neighbor as usize].id.clone(),
                    self.relation_names[entry.relation as usize].clone(),
                    entry.direction,
                )
            })
            .collect())
    }

    /// Renders the descriptor of `v` as one indexable document: one line per
    /// field, `<name>: <value>`, in input order. Backslashes and newlines
    /// inside names or values are escaped (`\\`, `\n`) so the line structure
    /// stays parseable and distinct field sequences render distinctly.
    pub fn descriptor_text(&self, v: &NodeId) -> Result<String, GraphError> {
        Ok(render_descriptor(&self.node(v)?.fields))
    }

    pub fn stats(&self) -> GraphStats {
        let nodes = self.nodes.len();
        let edges = self.edges.len();
        GraphStats {
            entity_types: self.manifest.entity_types.len(),
            relation_types: self.manifest.relation_types.len(),
            nodes,
            edges,
            average_degree: if nodes == 0 {
                0.0
            } else {
                2.0 * edges as f64 / nodes as f64
            },
        }
    }
}

fn escape_field(text: &str) -> String {
    text.replace('\\', "\\\\").replace('\n', "\\n")
}

/// Descriptor rendering shared by [`Graph::descriptor_text`] and index
/// construction.
pub fn render_descriptor(fields: &[(String, String)]) -> String {
    fields
        .iter()
        .map(|(name, value)| format!("{}: {}", escape_field(name), escape_field(value)))
        .collect::<Vec<_>>()
        .join("\n")
}
