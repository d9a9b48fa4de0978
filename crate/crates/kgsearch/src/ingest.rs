//! Line-delimited ingestion of graph dumps.
//!
//! Node line:  `{"id": "...", "type": "...", "fields": [["name", "value"], ...]}`
//! Edge line:  `{"src": "...", "dst": "...", "type": "..."}`
//! Manifest (sidecar JSON): `{"entity_types": [...], "relation_types": [...]}`
//!
//! Files are UTF-8, one record per line. Parse failures report the file and
//! 1-based line number.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::graph::{EdgeRecord, Graph, GraphError, NodeId, NodeRecord, TypeManifest};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: invalid manifest: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Deserialize)]
struct NodeLine {
    id: String,
    #[serde(rename = "type")]
    node_type: String,
    #[serde(default)]
    fields: Vec<(String, String)>,
}

#[derive(Deserialize)]
struct EdgeLine {
    src: String,
    dst: String,
    #[serde(rename = "type")]
    relation_type: String,
}

fn io_err(path: &Path, source: std::io::Error) -> IngestError {
    IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_lines<T, R>(path: &Path, reader: R) -> Result<Vec<T>, IngestError>
where
    T: serde::de::DeserializeOwned,
    R: Read,
{
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line).map_err(|e| IngestError::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<TypeManifest, IngestError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| IngestError::Manifest {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn read_nodes(path: &Path) -> Result<Vec<NodeRecord>, IngestError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let lines: Vec<NodeLine> = parse_lines(path, file)?;
    Ok(lines
        .into_iter()
        .map(|n| NodeRecord {
            id: NodeId::new(n.id),
            node_type: n.node_type,
            fields: n.fields,
        })
        .collect())
}

pub fn read_edges(path: &Path) -> Result<Vec<EdgeRecord>, IngestError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let lines: Vec<EdgeLine> = parse_lines(path, file)?;
    Ok(lines
        .into_iter()
        .map(|e| EdgeRecord {
            src: NodeId::new(e.src),
            dst: NodeId::new(e.dst),
            relation_type: e.relation_type,
        })
        .collect())
}

/// Loads and validates a graph from a manifest plus node/edge JSONL files.
pub fn load_graph(
    manifest_path: &Path,
    nodes_path: &Path,
    edges_path: &Path,
) -> Result<Graph, IngestError> {
    let manifest = read_manifest(manifest_path)?;
    let nodes = read_nodes(nodes_path)?;
    let edges = read_edges(edges_path)?;
    Ok(Graph::build(manifest, nodes, edges)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::fix7;
    use std::io::Write;

    fn fixture_path(name: &str) -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("fixtures/fix7")
            .join(name)
    }

    #[test]
    fn fixture_files_match_in_code_fixture() {
        let from_files = load_graph(
            &fixture_path("manifest.json"),
            &fixture_path("nodes.jsonl"),
            &fixture_path("edges.jsonl"),
        )
        .unwrap();
        let in_code = fix7();
        assert_eq!(from_files.manifest(), in_code.manifest());
        assert_eq!(from_files.nodes(), in_code.nodes());
        assert_eq!(from_files.edges(), in_code.edges());
    }

    #[test]
    fn empty_streams_give_empty_graph() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("manifest.json");
        let nodes = dir.path().join("nodes.jsonl");
        let edges = dir.path().join("edges.jsonl");
        std::fs::write(&manifest, r#"{"entity_types": [], "relation_types": []}"#).unwrap();
        std::fs::write(&nodes, "").unwrap();
        std::fs::write(&edges, "").unwrap();
        let g = load_graph(&manifest, &nodes, &edges).unwrap();
        assert_eq!(g.node_count(), 0);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn malformed_edge_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("edges.jsonl");
        let mut f = File::create(&path).unwrap();
        writeln!(f, r#"{{"src": "a", "dst": "b", "type": "r"}}"#).unwrap();
        writeln!(f, r#"{{"src": "a", "dst": }}"#).unwrap();
        drop(f);
        let err = read_edges(&path).unwrap_err();
        match err {
            IngestError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error: {other}"),
        }
    }
}
