//! Shared in-code test fixture: a 7-node bibliographic graph small enough
//! for exhaustive hand checks but heterogeneous enough to exercise type
//! filters. The JSONL copy under `fixtures/fix7/` must stay in sync; a test
//! in `ingest` compares the two.

use crate::graph::{EdgeRecord, Graph, NodeId, NodeRecord, TypeManifest};

fn node(id: &str, node_type: &str, fields: &[(&str, &str)]) -> NodeRecord {
    NodeRecord {
        id: NodeId::from(id),
        node_type: node_type.to_string(),
        fields: fields
            .iter()
            .map(|(n, v)| (n.to_string(), v.to_string()))
            .collect(),
    }
}

fn edge(src: &str, dst: &str, relation: &str) -> EdgeRecord {
    EdgeRecord {
        src: NodeId::from(src),
        dst: NodeId::from(dst),
        relation_type: relation.to_string(),
    }
}

/// Record-level form of the fixture, for tests that need to perturb it.
pub fn fix7_records() -> (TypeManifest, Vec<NodeRecord>, Vec<EdgeRecord>) {
    let manifest = TypeManifest::new(
        ["paper", "author", "field"],
        ["authored_by", "has_field", "cites"],
    );
    let nodes = vec![
        node(
            "P1",
            "paper",
            &[
                ("title", "Adaptive retrieval over a knowledge graph"),
                (
                    "abstract",
                    "Interleaves global search with neighborhood expansion to gather multi hop evidence.",
                ),
            ],
        ),
        node(
            "P2",
            "paper",
            &[
                ("title", "A survey of benchmark protocols"),
                (
                    "abstract",
                    "Research survey of evaluation protocols that cites adaptive retrieval systems.",
                ),
            ],
        ),
        node(
            "P3",
            "paper",
            &[
                ("title", "Sparse lexical scoring at scale"),
                (
                    "abstract",
                    "Builds inverted indexes with term saturation for large graph corpora.",
                ),
            ],
        ),
        node(
            "P4",
            "paper",
            &[
                ("title", "Typed traversal of heterogeneous graphs"),
                (
                    "abstract",
                    "Follows typed edges and relation filters across entities.",
                ),
            ],
        ),
        node(
            "A1",
            "author",
            &[
                ("name", "Ada Reyes"),
                ("affiliation", "Knowledge Systems Research Group"),
            ],
        ),
        node(
            "A2",
            "author",
            &[
                ("name", "Kenji Sato"),
                ("affiliation", "Search Infrastructure Lab"),
            ],
        ),
        node(
            "F1",
            "field",
            &[
                ("name", "information retrieval"),
                ("description", "Research field covering search and ranking."),
            ],
        ),
    ];
    let edges = vec![
        edge("P1", "A1", "authored_by"),
        edge("P2", "A1", "authored_by"),
        edge("P3", "A2", "authored_by"),
        edge("P4", "A2", "authored_by"),
        edge("P1", "F1", "has_field"),
        edge("P3", "F1", "has_field"),
        edge("P2", "P1", "cites"),
        edge("P4", "P3", "cites"),
    ];
    (manifest, nodes, edges)
}

/// The fixture graph: 7 nodes, 8 edges, 3 entity types, 3 relation types.
pub fn fix7() -> Graph {
    let (manifest, nodes, edges) = fix7_records();
    Graph::build(manifest, nodes, edges).expect("fixture graph is valid")
}
