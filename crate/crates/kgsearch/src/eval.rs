//! Retrieval evaluation: Hit@1, Hit@5, Recall@20 and MRR over query splits,
//! plus trajectory-level behavior statistics (tool-call allocation and
//! neighborhood-call distributions).
//!
//! Split files are line-delimited JSON, one query per line:
//! `{"id": "...", "query": "...", "answers": ["node", ...]}`.
//! Every answer id must resolve in the loaded graph; metrics are computed
//! on rankings already truncated to 20 entries (ground truth beyond rank 20
//! contributes nothing, including to MRR).

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::Trajectory;
use crate::graph::{Graph, NodeId};
use crate::par::parallel_map;

/// Rank cutoff shared by Recall@20 and the MRR truncation rule.
pub const RANKING_CUTOFF: usize = 20;

/// One evaluation query with its non-empty ground-truth node set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryCase {
    pub id: String,
    pub query: String,
    pub answers: BTreeSet<NodeId>,
}

#[derive(Debug, thiserror::Error)]
pub enum SplitError {
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
    #[error("query `{id}` has an empty answer set")]
    EmptyAnswers { id: String },
    #[error("duplicate query id `{id}`")]
    DuplicateQueryId { id: String },
    #[error("query `{id}` references answer node `{answer}` not present in the graph")]
    UnresolvedAnswer { id: String, answer: NodeId },
    #[error("split contains no queries")]
    Empty,
}

/// Loads a split file and validates every case against the graph.
pub fn load_split(path: &Path, graph: &Graph) -> Result<Vec<QueryCase>, SplitError> {
    let file = std::fs::File::open(path).map_err(|e| SplitError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut cases = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| SplitError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let case: QueryCase = serde_json::from_str(&line).map_err(|e| SplitError::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        if case.answers.is_empty() {
            return Err(SplitError::EmptyAnswers { id: case.id });
        }
        if !seen.insert(case.id.clone()) {
            return Err(SplitError::DuplicateQueryId { id: case.id });
        }
        for answer in &case.answers {
            if !graph.contains(answer) {
                return Err(SplitError::UnresolvedAnswer {
                    id: case.id,
                    answer: answer.clone(),
                });
            }
        }
        cases.push(case);
    }
    if cases.is_empty() {
        return Err(SplitError::Empty);
    }
    Ok(cases)
}

/// Per-query metric vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerQueryMetrics {
    pub hit1: f64,
    pub hit5: f64,
    pub recall20: f64,
    pub rr: f64,
}

impl PerQueryMetrics {
    pub const ZERO: PerQueryMetrics = PerQueryMetrics {
        hit1: 0.0,
        hit5: 0.0,
        recall20: 0.0,
        rr: 0.0,
    };
}

/// Metrics for one ranking against one ground-truth set. The ranking is
/// expected deduplicated and at most 20 long (anything beyond the cutoff is
/// ignored, for MRR too).
pub fn metrics_for(ranking: &[NodeId], gt: &BTreeSet<NodeId>) -> PerQueryMetrics {
    let top = &ranking[..ranking.len().min(RANKING_CUTOFF)];
    let hit_at = |k: usize| top.iter().take(k).any(|id| gt.contains(id));
    let overlap = top.iter().filter(|id| gt.contains(*id)).count();
    let rr = top
        .iter()
        .position(|id| gt.contains(id))
        .map_or(0.0, |idx| 1.0 / (idx + 1) as f64);
    PerQueryMetrics {
        hit1: if hit_at(1) { 1.0 } else { 0.0 },
        hit5: if hit_at(5) { 1.0 } else { 0.0 },
        recall20: overlap as f64 / gt.len() as f64,
        rr,
    }
}

/// One row of the per-query breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query_id: String,
    pub ranking: Vec<NodeId>,
    pub metrics: PerQueryMetrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Aggregate report: arithmetic means over the per-query breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub queries: usize,
    pub hit1: f64,
    pub hit5: f64,
    pub recall20: f64,
    pub mrr: f64,
    pub per_query: Vec<QueryOutcome>,
}

impl MetricReport {
    fn from_outcomes(per_query: Vec<QueryOutcome>) -> MetricReport {
        let n = per_query.len();
        let mean = |f: fn(&PerQueryMetrics) -> f64| {
            if n == 0 {
                0.0
            } else {
                per_query.iter().map(|o| f(&o.metrics)).sum::<f64>() / n as f64
            }
        };
        MetricReport {
            queries: n,
            hit1: mean(|m| m.hit1),
            hit5: mean(|m| m.hit5),
            recall20: mean(|m| m.recall20),
            mrr: mean(|m| m.rr),
            per_query,
        }
    }

    /// Plain-text table for terminal output.
    pub fn render_table(&self) -> String {
        format!(
            "queries  hit@1   hit@5   recall@20  mrr\n\
             {:<8} {:<7.4} {:<7.4} {:<10.4} {:<7.4}",
            self.queries, self.hit1, self.hit5, self.recall20, self.mrr
        )
    }
}

/// Runs `retrieve` for every case (concurrently when `workers > 1`) and
/// averages the per-query metrics. A failed retrieval scores zero and is
/// flagged in the breakdown rather than excluded.
pub fn evaluate_split<F>(cases: &[QueryCase], retrieve: F, workers: usize) -> MetricReport
where
    F: Fn(&QueryCase) -> Result<Vec<NodeId>, String> + Sync,
{
    let outcomes = parallel_map(cases, workers, |case| match retrieve(case) {
        Ok(ranking) => QueryOutcome {
            query_id: case.id.clone(),
            metrics: metrics_for(&ranking, &case.answers),
            ranking,
            error: None,
        },
        Err(error) => QueryOutcome {
            query_id: case.id.clone(),
            ranking: Vec::new(),
            metrics: PerQueryMetrics::ZERO,
            error: Some(error),
        },
    });
    MetricReport::from_outcomes(outcomes)
}

/// Tool-call allocation over a trajectory set. Fractions are absent when
/// no tool was called at all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolUsageStats {
    pub global_search_calls: usize,
    pub neighbors_calls: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub global_search_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub neighbors_fraction: Option<f64>,
}

pub fn tool_usage_stats(trajectories: &[Trajectory]) -> ToolUsageStats {
    let global_search_calls: usize = trajectories
        .iter()
        .map(|t| t.tool_calls("global_search"))
        .sum();
    let neighbors_calls: usize = trajectories.iter().map(|t| t.tool_calls("neighbors")).sum();
    let total = global_search_calls + neighbors_calls;
    let fraction = |calls: usize| (total > 0).then(|| calls as f64 / total as f64);
    ToolUsageStats {
        global_search_calls,
        neighbors_calls,
        global_search_fraction: fraction(global_search_calls),
        neighbors_fraction: fraction(neighbors_calls),
    }
}

/// Distribution of per-trajectory `neighbors` call counts, split by whether
/// the trajectory's query was answered (its hit indicator).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborsCallHistogram {
    pub success: BTreeMap<usize, usize>,
    pub failure: BTreeMap<usize, usize>,
}

pub fn neighbors_call_histogram<'a, I>(runs: I) -> NeighborsCallHistogram
where
    I: IntoIterator<Item = (&'a Trajectory, bool)>,
{
    let mut histogram = NeighborsCallHistogram::default();
    for (trajectory, hit) in runs {
        let calls = trajectory.tool_calls("neighbors");
        let bucket = if hit {
            &mut histogram.success
        } else {
            &mut histogram.failure
        };
        *bucket.entry(calls).or_insert(0) += 1;
    }
    histogram
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{Action, RetrievedList, Step, Termination};
    use crate::testutil::fix7;
    use proptest::prelude::*;
    use std::io::Write;

    fn ids(names: &[&str]) -> Vec<NodeId> {
        names.iter().map(|n| NodeId::from(*n)).collect()
    }

    fn gt(names: &[&str]) -> BTreeSet<NodeId> {
        names.iter().map(|n| NodeId::from(*n)).collect()
    }

    #[test]
    fn perfect_single_answer() {
        let m = metrics_for(&ids(&["g", "x", "y"]), &gt(&["g"]));
        assert_eq!(m, PerQueryMetrics { hit1: 1.0, hit5: 1.0, recall20: 1.0, rr: 1.0 });
    }

    #[test]
    fn third_rank_hit_with_half_recall() {
        let m = metrics_for(&ids(&["x", "y", "g"]), &gt(&["g", "h"]));
        assert_eq!(m.hit1, 0.0);
        assert_eq!(m.hit5, 1.0);
        assert_eq!(m.recall20, 0.5);
        assert!((m.rr - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_ranking_scores_zero() {
        let m = metrics_for(&[], &gt(&["g"]));
        assert_eq!(m, PerQueryMetrics::ZERO);
    }

    #[test]
    fn ground_truth_beyond_cutoff_contributes_nothing() {
        let long: Vec<NodeId> = (0..25).map(|i| NodeId::new(format!("n{i:02}"))).collect();
        let m = metrics_for(&long, &gt(&["n22"]));
        assert_eq!(m, PerQueryMetrics::ZERO);
        let m = metrics_for(&long, &gt(&["n05", "n22"]));
        assert_eq!(m.recall20, 0.5);
    }

    #[test]
    fn mrr_is_mean_of_reciprocal_ranks() {
        let cases = vec![
            QueryCase { id: "a".into(), query: "qa".into(), answers: gt(&["g"]) },
            QueryCase { id: "b".into(), query: "qb".into(), answers: gt(&["h"]) },
        ];
        let report = evaluate_split(
            &cases,
            |case| {
                Ok(match case.id.as_str() {
                    "a" => ids(&["g"]),
                    _ => ids(&["x", "y", "h"]),
                })
            },
            1,
        );
        assert!((report.mrr - (1.0 + 1.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(report.hit1, 0.5);
    }

    #[test]
    fn failed_query_scores_zero_and_is_flagged() {
        let cases = vec![
            QueryCase { id: "a".into(), query: "qa".into(), answers: gt(&["g"]) },
            QueryCase { id: "b".into(), query: "qb".into(), answers: gt(&["g"]) },
        ];
        let report = evaluate_split(
            &cases,
            |case| {
                if case.id == "b" {
                    Err("endpoint down".into())
                } else {
                    Ok(ids(&["g"]))
                }
            },
            2,
        );
        assert_eq!(report.hit1, 0.5);
        let failed = &report.per_query[1];
        assert_eq!(failed.error.as_deref(), Some("endpoint down"));
        assert_eq!(failed.metrics, PerQueryMetrics::ZERO);
    }

    #[test]
    fn aggregate_equals_mean_of_breakdown() {
        let cases: Vec<QueryCase> = (0..7)
            .map(|i| QueryCase {
                id: format!("q{i}"),
                query: "x".into(),
                answers: gt(&["g"]),
            })
            .collect();
        let report = evaluate_split(
            &cases,
            |case| {
                let rank: usize = case.id[1..].parse().unwrap();
                let mut ranking = vec![NodeId::from("z"); rank];
                ranking.push(NodeId::from("g"));
                Ok(ranking)
            },
            3,
        );
        let mean_rr: f64 =
            report.per_query.iter().map(|o| o.metrics.rr).sum::<f64>() / report.queries as f64;
        assert!((report.mrr - mean_rr).abs() < 1e-15);
    }

    proptest! {
        // rr = 1 exactly when the first entry is ground truth (hit1 = 1),
        // and hit1 <= hit5 always.
        #[test]
        fn rank_metric_consistency(
            ranking in proptest::collection::vec(0u8..8, 0..10),
            answers in proptest::collection::btree_set(0u8..8, 1..4),
        ) {
            let ranking: Vec<NodeId> = {
                let mut seen = BTreeSet::new();
                ranking.into_iter()
                    .filter(|v| seen.insert(*v))
                    .map(|v| NodeId::new(format!("v{v}")))
                    .collect()
            };
            let answers: BTreeSet<NodeId> =
                answers.into_iter().map(|v| NodeId::new(format!("v{v}"))).collect();
            let m = metrics_for(&ranking, &answers);
            prop_assert!(m.hit1 <= m.hit5);
            prop_assert_eq!(m.rr == 1.0, m.hit1 == 1.0);
            if m.recall20 > 0.0 {
                prop_assert!(m.rr > 0.0);
            }
        }
    }

    fn trajectory_with_calls(search: usize, neighbors: usize) -> Trajectory {
        let mut actions = Vec::new();
        for _ in 0..search {
            actions.push(Action::GlobalSearch { q: "x".into(), k: None });
        }
        for _ in 0..neighbors {
            actions.push(Action::Neighbors {
                v: NodeId::from("P1"),
                q: None,
                filter: crate::tools::TypeFilter::none(),
            });
        }
        Trajectory {
            query: "q".into(),
            steps: vec![Step {
                index: 1,
                state_digest: String::new(),
                assistant_text: String::new(),
                actions,
                observation: String::new(),
            }],
            termination: Termination::Finish,
            final_list: RetrievedList::new(),
            failure: None,
        }
    }

    #[test]
    fn tool_usage_fractions() {
        let trajectories = vec![trajectory_with_calls(2, 1), trajectory_with_calls(1, 0)];
        let stats = tool_usage_stats(&trajectories);
        assert_eq!(stats.global_search_calls, 3);
        assert_eq!(stats.neighbors_calls, 1);
        assert_eq!(stats.global_search_fraction, Some(0.75));
        assert_eq!(stats.neighbors_fraction, Some(0.25));
    }

    #[test]
    fn tool_usage_absent_without_calls() {
        let trajectories = vec![trajectory_with_calls(0, 0)];
        let stats = tool_usage_stats(&trajectories);
        assert_eq!(stats.global_search_fraction, None);
        assert_eq!(stats.neighbors_fraction, None);
    }

    #[test]
    fn histogram_splits_by_outcome() {
        let t2 = trajectory_with_calls(1, 2);
        let t0 = trajectory_with_calls(1, 0);
        let t7 = trajectory_with_calls(0, 7);
        let histogram = neighbors_call_histogram([(&t2, true), (&t0, true), (&t2, true), (&t7, false)]);
        assert_eq!(histogram.success.get(&2), Some(&2));
        assert_eq!(histogram.success.get(&0), Some(&1));
        assert_eq!(histogram.failure.get(&7), Some(&1));
        assert!(histogram.failure.get(&0).is_none());
        let empty = neighbors_call_histogram([]);
        assert!(empty.success.is_empty() && empty.failure.is_empty());
    }

    #[test]
    fn load_split_validates_against_graph() {
        let g = fix7();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.jsonl");

        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, r#"{{"id": "q1", "query": "x", "answers": ["P3"]}}"#).unwrap();
        writeln!(f, r#"{{"id": "q2", "query": "y", "answers": ["A1", "A2"]}}"#).unwrap();
        drop(f);
        let cases = load_split(&path, &g).unwrap();
        assert_eq!(cases.len(), 2);
        assert_eq!(cases[1].answers.len(), 2);

        std::fs::write(&path, "{\"id\": \"q\", \"query\": \"x\", \"answers\": [\"GHOST\"]}\n")
            .unwrap();
        assert!(matches!(
            load_split(&path, &g),
            Err(SplitError::UnresolvedAnswer { .. })
        ));

        std::fs::write(&path, "{\"id\": \"q\", \"query\": \"x\", \"answers\": []}\n").unwrap();
        assert!(matches!(load_split(&path, &g), Err(SplitError::EmptyAnswers { .. })));

        std::fs::write(&path, "").unwrap();
        assert!(matches!(load_split(&path, &g), Err(SplitError::Empty)));
    }
}
