//! Parallel agents and rank fusion.
//!
//! `n` independent agents answer the same query; their ordered lists are
//! combined by vote count (how many lists contain a node), ties broken by
//! the earliest position at which the node appears in any single list, then
//! by ascending node id. The fused ranking is truncated once, to 20
//! entries, and that truncated ranking is what all metrics consume.

use serde::{Deserialize, Serialize};

use crate::agent::{run_agent, AgentConfig, RetrievedList, Termination, Trajectory};
use crate::graph::NodeId;
use crate::policy::Policy;
use crate::tools::Toolkit;

/// Entries kept after fusion.
pub const FUSION_TRUNCATION: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusedEntry {
    pub id: NodeId,
    pub votes: usize,
    /// Minimum 0-based index of the node across the input lists.
    pub first_position: usize,
}

/// The aggregated ranking. Invariants: votes non-increasing; within equal
/// votes, first_position non-decreasing; within equal (votes, position),
/// ascending id; no duplicates; at most `truncation` entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusedRanking {
    pub entries: Vec<FusedEntry>,
    pub truncation: usize,
}

impl FusedRanking {
    pub fn ids(&self) -> Vec<NodeId> {
        self.entries.iter().map(|e| e.id.clone()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Fuses per-agent retrieved lists, truncating to `truncation` entries.
pub fn fuse_with_truncation(lists: &[RetrievedList], truncation: usize) -> FusedRanking {
    use std::collections::BTreeMap;
    let mut tally: BTreeMap<NodeId, (usize, usize)> = BTreeMap::new();
    for list in lists {
        for (position, id) in list.ids().iter().enumerate() {
            let entry = tally.entry(id.clone()).or_insert((0, position));
            entry.0 += 1;
            entry.1 = entry.1.min(position);
        }
    }
    let mut entries: Vec<FusedEntry> = tally
        .into_iter()
        .map(|(id, (votes, first_position))| FusedEntry {
            id,
            votes,
            first_position,
        })
        .collect();
    // BTreeMap iteration already yields ascending ids, and the sort is
    // stable, so the id tie-break comes for free.
    entries.sort_by(|a, b| {
        b.votes
            .cmp(&a.votes)
            .then(a.first_position.cmp(&b.first_position))
    });
    entries.truncate(truncation);
    FusedRanking {
        entries,
        truncation,
    }
}

/// Fuses with the standard truncation of 20.
pub fn fuse(lists: &[RetrievedList]) -> FusedRanking {
    fuse_with_truncation(lists, FUSION_TRUNCATION)
}

/// The result of one parallel run: the fused ranking over the successful
/// agents plus every trajectory (failed ones included) for logging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelOutcome {
    pub fused: FusedRanking,
    pub trajectories: Vec<Trajectory>,
}

impl ParallelOutcome {
    pub fn successful(&self) -> usize {
        self.trajectories
            .iter()
            .filter(|t| t.termination != Termination::Failed)
            .count()
    }

    pub fn all_failed(&self) -> bool {
        self.successful() == 0
    }
}

/// Runs `n` independent agents concurrently over the shared toolkit and
/// fuses their lists. Failed agents are excluded from fusion; if every
/// agent fails the ranking is empty (check [`ParallelOutcome::all_failed`]).
pub fn run_parallel<F>(
    query: &str,
    mut make_policy: F,
    n: usize,
    toolkit: &Toolkit,
    config: &AgentConfig,
) -> ParallelOutcome
where
    F: FnMut(usize) -> Box<dyn Policy>,
{
    assert!(n >= 1, "at least one agent is required");
    let policies: Vec<Box<dyn Policy>> = (0..n).map(&mut make_policy).collect();

    let mut slots: Vec<Option<(RetrievedList, Trajectory)>> = Vec::new();
    slots.resize_with(n, || None);
    std::thread::scope(|scope| {
        for (slot, mut policy) in slots.iter_mut().zip(policies) {
            scope.spawn(move || {
                *slot = Some(run_agent(query, policy.as_mut(), toolkit, config));
            });
        }
    });

    let mut lists = Vec::with_capacity(n);
    let mut trajectories = Vec::with_capacity(n);
    for slot in slots {
        let (list, trajectory) = slot.expect("agent thread completed");
        if trajectory.termination != Termination::Failed {
            lists.push(list);
        }
        trajectories.push(trajectory);
    }
    ParallelOutcome {
        fused: fuse(&lists),
        trajectories,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::Action;
    use crate::index::{Bm25Params, InvertedIndex};
    use crate::policy::{PolicyError, PolicyTurn, Script, ScriptStep, ScriptedPolicy};
    use crate::testutil::fix7;
    use crate::tools::ToolBudget;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn list(ids: &[&str]) -> RetrievedList {
        RetrievedList::from(ids.iter().map(|s| NodeId::from(*s)).collect::<Vec<_>>())
    }

    fn entry(id: &str, votes: usize, first_position: usize) -> FusedEntry {
        FusedEntry {
            id: NodeId::from(id),
            votes,
            first_position,
        }
    }

    #[test]
    fn single_list_is_identity_with_unit_votes() {
        let fused = fuse(&[list(&["a", "b"])]);
        assert_eq!(fused.entries, vec![entry("a", 1, 0), entry("b", 1, 1)]);
    }

    #[test]
    fn vote_count_dominates_then_position() {
        let fused = fuse(&[list(&["a", "b"]), list(&["b", "c"]), list(&["b"])]);
        assert_eq!(
            fused.entries,
            vec![entry("b", 3, 0), entry("a", 1, 0), entry("c", 1, 1)]
        );
    }

    #[test]
    fn full_tie_falls_back_to_id_order() {
        let fused = fuse(&[list(&["b"]), list(&["a"])]);
        assert_eq!(fused.entries, vec![entry("a", 1, 0), entry("b", 1, 0)]);
    }

    #[test]
    fn truncates_to_twenty() {
        let many: Vec<String> = (0..30).map(|i| format!("n{i:02}")).collect();
        let refs: Vec<&str> = many.iter().map(String::as_str).collect();
        let fused = fuse(&[list(&refs)]);
        assert_eq!(fused.entries.len(), FUSION_TRUNCATION);
        assert_eq!(fused.truncation, FUSION_TRUNCATION);
    }

    proptest! {
        // Permuting agent order never changes the fused ranking: the
        // tie-break chain contains no agent index.
        #[test]
        fn agent_order_invariance(
            lists in proptest::collection::vec(
                proptest::collection::vec(0u8..6, 0..5),
                1..5
            ),
            swap_a in 0usize..5,
            swap_b in 0usize..5,
        ) {
            let as_lists: Vec<RetrievedList> = lists.iter().map(|raw| {
                RetrievedList::from(raw.iter().map(|n| NodeId::new(format!("v{n}"))).collect::<Vec<_>>())
            }).collect();
            let mut permuted = as_lists.clone();
            let (a, b) = (swap_a % permuted.len(), swap_b % permuted.len());
            permuted.swap(a, b);
            prop_assert_eq!(fuse(&as_lists), fuse(&permuted));
        }

        // A node appearing in every list outranks any node in fewer lists.
        #[test]
        fn majority_dominance(
            lists in proptest::collection::vec(
                proptest::collection::vec(0u8..6, 1..5),
                2..4
            ),
        ) {
            let as_lists: Vec<RetrievedList> = lists.iter().map(|raw| {
                RetrievedList::from(raw.iter().map(|n| NodeId::new(format!("v{n}"))).collect::<Vec<_>>())
            }).collect();
            let fused = fuse(&as_lists);
            let n = as_lists.len();
            let positions: std::collections::HashMap<&NodeId, usize> = fused
                .entries.iter().enumerate().map(|(i, e)| (&e.id, i)).collect();
            for e in &fused.entries {
                if e.votes == n {
                    for other in &fused.entries {
                        if other.votes < n {
                            prop_assert!(positions[&e.id] < positions[&other.id]);
                        }
                    }
                }
            }
        }
    }

    fn select_p3_script() -> Script {
        Script {
            steps: vec![
                ScriptStep::Do {
                    actions: vec![Action::GlobalSearch {
                        q: "sparse lexical scoring".into(),
                        k: Some(1),
                    }],
                },
                ScriptStep::Do {
                    actions: vec![
                        Action::Select {
                            ids: vec![NodeId::from("P3")],
                        },
                        Action::Finish,
                    ],
                },
            ],
        }
    }

    fn toolkit() -> Toolkit {
        let graph = Arc::new(fix7());
        let index = Arc::new(InvertedIndex::build(&graph, Bm25Params::default()));
        Toolkit::new(graph, index, ToolBudget::default())
    }

    #[test]
    fn n_equal_one_matches_single_agent_list() {
        let tk = toolkit();
        let outcome = run_parallel(
            "q",
            |_| Box::new(ScriptedPolicy::new(select_p3_script())),
            1,
            &tk,
            &AgentConfig::default(),
        );
        assert_eq!(outcome.fused.ids(), vec![NodeId::from("P3")]);
        assert_eq!(outcome.trajectories.len(), 1);
    }

    #[test]
    fn identical_scripts_give_unanimous_votes() {
        let tk = toolkit();
        let outcome = run_parallel(
            "q",
            |_| Box::new(ScriptedPolicy::new(select_p3_script())),
            3,
            &tk,
            &AgentConfig::default(),
        );
        assert_eq!(outcome.fused.entries, vec![entry("P3", 3, 0)]);
        assert_eq!(outcome.successful(), 3);
    }

    struct FailingPolicy;
    impl Policy for FailingPolicy {
        fn decide(
            &mut self,
            _messages: &[crate::agent::Message],
            _tools: &[crate::tools::ToolSchema],
        ) -> Result<PolicyTurn, PolicyError> {
            Err(PolicyError::Transport("down".into()))
        }
    }

    #[test]
    fn failed_agents_are_excluded_from_fusion() {
        let tk = toolkit();
        let config = AgentConfig {
            transport_retries: 0,
            ..AgentConfig::default()
        };
        let outcome = run_parallel(
            "q",
            |i| {
                if i == 1 {
                    Box::new(FailingPolicy) as Box<dyn Policy>
                } else {
                    Box::new(ScriptedPolicy::new(select_p3_script()))
                }
            },
            3,
            &tk,
            &config,
        );
        assert_eq!(outcome.successful(), 2);
        assert_eq!(outcome.fused.entries, vec![entry("P3", 2, 0)]);
    }

    #[test]
    fn all_failed_yields_empty_ranking() {
        let tk = toolkit();
        let config = AgentConfig {
            transport_retries: 0,
            ..AgentConfig::default()
        };
        let outcome = run_parallel("q", |_| Box::new(FailingPolicy), 2, &tk, &config);
        assert!(outcome.all_failed());
        assert!(outcome.fused.is_empty());
        assert_eq!(outcome.trajectories.len(), 2);
    }
}
