//! The interactive retrieval loop.
//!
//! A policy is shown the rendered conversation state and replies with a
//! sequence of actions: tool calls, SELECT (append observed nodes to the
//! retrieved list) and FINISH. The loop executes tool calls against the
//! [`Toolkit`](crate::tools::Toolkit), feeds observations back, and stops on
//! FINISH or after `t_max` steps. Earlier selections receive higher rank in
//! the final list.

use std::collections::BTreeSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::graph::NodeId;
use crate::policy::{Policy, PolicyError};
use crate::prompt::PromptAsset;
use crate::tools::{NeighborEntry, SearchHit, ToolError, Toolkit, TypeFilter};

/// Default maximum trajectory length.
pub const DEFAULT_T_MAX: usize = 20;

/// Character cap per rendered tool observation (~2,000 tokens at the usual
/// ~4 chars/token), applied before an observation enters the conversation.
pub const OBSERVATION_CHAR_CAP: usize = 8_000;

/// Character budget the conversation is designed to fit: ~16,384 tokens.
/// Old observations are never dropped within the step limit; the
/// per-observation cap above keeps full conversations inside this budget
/// for typical snippet-bounded observations.
pub const CONTEXT_CHAR_CAP: usize = 65_536;

const ELISION_MARKER: &str = " …[truncated]";

/// One agent action. Tool calls carry their parameters inline; the two
/// tool variants are the only tools that exist.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    GlobalSearch {
        q: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        k: Option<usize>,
    },
    Neighbors {
        v: NodeId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        q: Option<String>,
        #[serde(flatten)]
        filter: TypeFilter,
    },
    Select {
        ids: Vec<NodeId>,
    },
    Finish,
}

impl Action {
    /// Tool name for tool-call variants, `None` for SELECT/FINISH.
    pub fn tool_name(&self) -> Option<&'static str> {
        match self {
            Action::GlobalSearch { .. } => Some("global_search"),
            Action::Neighbors { .. } => Some("neighbors"),
            _ => None,
        }
    }
}

/// Canonical one-line JSON rendering of an action sequence; used as the
/// assistant text for scripted policies and anywhere a deterministic
/// serialization of a turn is needed.
pub fn render_actions(actions: &[Action]) -> String {
    #[derive(Serialize)]
    struct Turn<'a> {
        actions: &'a [Action],
    }
    serde_json::to_string(&Turn { actions }).expect("actions serialize")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

/// One conversation message as rendered for (and produced by) policies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Message {
            role,
            content: content.into(),
        }
    }
}

/// One executed step: the policy's raw output, the parsed actions, and the
/// observation returned to the policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    /// 1-based, strictly increasing.
    pub index: usize,
    /// SHA-256 over the rendered state the policy saw for this step.
    pub state_digest: String,
    pub assistant_text: String,
    pub actions: Vec<Action>,
    pub observation: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Finish,
    StepLimit,
    Failed,
}

/// Ordered list of retrieved nodes. No duplicates; rank of a node is
/// 1 + its position.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RetrievedList(Vec<NodeId>);

impl RetrievedList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.0.contains(id)
    }
}

impl From<Vec<NodeId>> for RetrievedList {
    /// Keeps the first occurrence of each id.
    fn from(ids: Vec<NodeId>) -> Self {
        let mut list = RetrievedList::new();
        let mut seen = BTreeSet::new();
        for id in ids {
            if seen.insert(id.clone()) {
                list.0.push(id);
            }
        }
        list
    }
}

/// What happened to each id passed to [`apply_select`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SelectOutcome {
    pub added: Vec<NodeId>,
    pub duplicates: Vec<NodeId>,
    pub unobserved: Vec<NodeId>,
}

/// Appends `ids` to the list in the given order. Ids never seen in a tool
/// observation are dropped (reported in the outcome, to be surfaced as a
/// warning observation); ids already in the list are skipped.
pub fn apply_select(
    list: &mut RetrievedList,
    ids: &[NodeId],
    observed: &BTreeSet<NodeId>,
) -> SelectOutcome {
    let mut outcome = SelectOutcome::default();
    for id in ids {
        if !observed.contains(id) {
            outcome.unobserved.push(id.clone());
        } else if list.contains(id) {
            outcome.duplicates.push(id.clone());
        } else {
            list.0.push(id.clone());
            outcome.added.push(id.clone());
        }
    }
    outcome
}

/// The complete record of one agent run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub query: String,
    pub steps: Vec<Step>,
    pub termination: Termination,
    pub final_list: RetrievedList,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl Trajectory {
    /// Count of tool-call actions with the given tool name.
    pub fn tool_calls(&self, tool: &str) -> usize {
        self.steps
            .iter()
            .flat_map(|s| &s.actions)
            .filter(|a| a.tool_name() == Some(tool))
            .count()
    }
}

/// Loop configuration: step limit, prompt asset, and transport retry
/// behavior for flaky policy backends.
#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub t_max: usize,
    pub prompt: PromptAsset,
    pub transport_retries: usize,
    pub retry_backoff: Duration,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            t_max: DEFAULT_T_MAX,
            prompt: PromptAsset::default(),
            transport_retries: 2,
            retry_backoff: Duration::from_millis(200),
        }
    }
}

/// Renders the conversation a policy sees: system prompt, the user query,
/// then one assistant message per step followed by its tool observation
/// (omitted when the step produced none). Pure in its inputs.
pub fn render_state(prompt: &PromptAsset, query: &str, steps: &[Step]) -> Vec<Message> {
    let mut messages = Vec::with_capacity(2 + 2 * steps.len());
    messages.push(Message::new(Role::System, prompt.content.clone()));
    messages.push(Message::new(Role::User, query));
    for step in steps {
        messages.push(Message::new(Role::Assistant, step.assistant_text.clone()));
        if !step.observation.is_empty() {
            messages.push(Message::new(Role::Tool, step.observation.clone()));
        }
    }
    messages
}

fn state_digest(messages: &[Message]) -> String {
    let mut hasher = Sha256::new();
    for message in messages {
        hasher.update([match message.role {
            Role::System => 0u8,
            Role::User => 1,
            Role::Assistant => 2,
            Role::Tool => 3,
        }]);
        hasher.update((message.content.len() as u64).to_le_bytes());
        hasher.update(message.content.as_bytes());
    }
    hex::encode(hasher.finalize())
}

/// Caps an observation at [`OBSERVATION_CHAR_CAP`] characters, replacing the
/// tail with an explicit elision marker.
pub fn truncate_observation(text: &str) -> String {
    if text.chars().count() <= OBSERVATION_CHAR_CAP {
        return text.to_string();
    }
    let keep = OBSERVATION_CHAR_CAP - ELISION_MARKER.chars().count();
    let mut out: String = text.chars().take(keep).collect();
    out.push_str(ELISION_MARKER);
    out
}

fn flatten(text: &str) -> String {
    text.replace('\n', " / ")
}

fn render_search_observation(q: &str, hits: &[SearchHit]) -> String {
    if hits.is_empty() {
        return format!("global_search(\"{q}\") returned no results.");
    }
    let mut out = format!("global_search(\"{q}\") returned {} result(s):", hits.len());
    for (i, hit) in hits.iter().enumerate() {
        out.push_str(&format!(
            "\n{}. {} [{}] score={:.4} — {}",
            i + 1,
            hit.id,
            hit.node_type,
            hit.score,
            flatten(&hit.snippet)
        ));
    }
    out
}

fn render_neighbors_observation(
    v: &NodeId,
    q: Option<&str>,
    filter: &TypeFilter,
    entries: &[NeighborEntry],
) -> String {
    let mut call = format!("neighbors(\"{v}\"");
    if let Some(q) = q {
        call.push_str(&format!(", q=\"{q}\""));
    }
    if let Some(node_types) = &filter.node_types {
        let labels: Vec<&str> = node_types.iter().map(String::as_str).collect();
        call.push_str(&format!(", node_types=[{}]", labels.join(", ")));
    }
    if let Some(relation_types) = &filter.relation_types {
        let labels: Vec<&str> = relation_types.iter().map(String::as_str).collect();
        call.push_str(&format!(", relation_types=[{}]", labels.join(", ")));
    }
    call.push(')');
    if entries.is_empty() {
        return format!("{call} returned no neighbors.");
    }
    let mut out = format!("{call} returned {} neighbor(s):", entries.len());
    for (i, entry) in entries.iter().enumerate() {
        let connections: Vec<String> = entry
            .connections
            .iter()
            .map(|(relation, direction)| format!("{relation}({direction})"))
            .collect();
        let score = entry
            .score
            .map(|s| format!(" score={s:.4}"))
            .unwrap_or_default();
        out.push_str(&format!(
            "\n{}. {} [{}] via {}{} — {}",
            i + 1,
            entry.id,
            entry.node_type,
            connections.join(", "),
            score,
            flatten(&entry.snippet)
        ));
    }
    out
}

fn render_select_ack(outcome: &SelectOutcome, list_len: usize) -> String {
    let names = |ids: &[NodeId]| {
        ids.iter()
            .map(|id| id.as_str().to_string())
            .collect::<Vec<_>>()
            .join(", ")
    };
    let mut out = format!(
        "select: added {} node(s) [{}]; retrieved list now has {} node(s).",
        outcome.added.len(),
        names(&outcome.added),
        list_len
    );
    if !outcome.duplicates.is_empty() {
        out.push_str(&format!(
            " Skipped {} already-retrieved id(s) [{}].",
            outcome.duplicates.len(),
            names(&outcome.duplicates)
        ));
    }
    if !outcome.unobserved.is_empty() {
        out.push_str(&format!(
            " Warning: ignored {} id(s) never seen in a tool result [{}].",
            outcome.unobserved.len(),
            names(&outcome.unobserved)
        ));
    }
    out
}

fn render_tool_error(tool: &str, error: &ToolError) -> String {
    format!("tool error ({tool}): {error}")
}

/// Runs one trajectory: repeatedly renders the state, asks the policy for
/// actions, executes them, and stops on FINISH, the step limit, or an
/// unrecoverable policy failure (bounded transport retries first).
///
/// Malformed policy output costs a step and is fed back as an error
/// observation; a second consecutive malformed turn forces FINISH.
pub fn run_agent(
    query: &str,
    policy: &mut dyn Policy,
    toolkit: &Toolkit,
    config: &AgentConfig,
) -> (RetrievedList, Trajectory) {
    let schemas = toolkit.schemas();
    let mut steps: Vec<Step> = Vec::new();
    let mut list = RetrievedList::new();
    let mut observed: BTreeSet<NodeId> = BTreeSet::new();
    let mut termination = Termination::StepLimit;
    let mut failure = None;
    let mut consecutive_malformed = 0usize;

    for index in 1..=config.t_max {
        let messages = render_state(&config.prompt, query, &steps);
        let digest = state_digest(&messages);

        let mut attempt = 0;
        let turn = loop {
            match policy.decide(&messages, &schemas) {
                Err(PolicyError::Transport(message)) if attempt < config.transport_retries => {
                    attempt += 1;
                    std::thread::sleep(config.retry_backoff * (1 << (attempt - 1)) as u32);
                    log::warn!("policy transport failure (attempt {attempt}): {message}");
                }
                other => break other,
            }
        };

        let turn = match turn {
            Ok(turn) => turn,
            Err(PolicyError::Transport(message)) => {
                termination = Termination::Failed;
                failure = Some(format!("policy transport failure: {message}"));
                break;
            }
            Err(PolicyError::Malformed { raw, message }) => {
                consecutive_malformed += 1;
                if consecutive_malformed > 1 {
                    // Repair turn already spent; force FINISH.
                    steps.push(Step {
                        index,
                        state_digest: digest,
                        assistant_text: raw,
                        actions: vec![Action::Finish],
                        observation: String::new(),
                    });
                    termination = Termination::Finish;
                    break;
                }
                steps.push(Step {
                    index,
                    state_digest: digest,
                    assistant_text: raw,
                    actions: Vec::new(),
                    observation: truncate_observation(&format!(
                        "error: could not interpret the previous reply ({message}). \
                         Reply with tool calls, {{\"select\": [...]}} or \
                         {{\"final_answer\": [...]}}."
                    )),
                });
                continue;
            }
        };

        if turn.actions.is_empty() {
            consecutive_malformed += 1;
            if consecutive_malformed > 1 {
                steps.push(Step {
                    index,
                    state_digest: digest,
                    assistant_text: turn.assistant_text,
                    actions: vec![Action::Finish],
                    observation: String::new(),
                });
                termination = Termination::Finish;
                break;
            }
            steps.push(Step {
                index,
                state_digest: digest,
                assistant_text: turn.assistant_text,
                actions: Vec::new(),
                observation: "error: the reply contained no actions.".to_string(),
            });
            continue;
        }
        consecutive_malformed = 0;

        let mut observations: Vec<String> = Vec::new();
        let mut finish = false;
        for action in &turn.actions {
            match action {
                Action::GlobalSearch { q, k } => {
                    let text = match toolkit.global_search(q, *k) {
                        Ok(hits) => {
                            for hit in &hits {
                                observed.insert(hit.id.clone());
                            }
                            render_search_observation(q, &hits)
                        }
                        Err(err) => render_tool_error("global_search", &err),
                    };
                    observations.push(truncate_observation(&text));
                }
                Action::Neighbors { v, q, filter } => {
                    let text = match toolkit.neighbors(v, q.as_deref(), filter) {
                        Ok(entries) => {
                            for entry in &entries {
                                observed.insert(entry.id.clone());
                            }
                            render_neighbors_observation(v, q.as_deref(), filter, &entries)
                        }
                        Err(err) => render_tool_error("neighbors", &err),
                    };
                    observations.push(truncate_observation(&text));
                }
                Action::Select { ids } => {
                    let outcome = apply_select(&mut list, ids, &observed);
                    observations.push(render_select_ack(&outcome, list.len()));
                }
                Action::Finish => finish = true,
            }
        }

        steps.push(Step {
            index,
            state_digest: digest,
            assistant_text: turn.assistant_text,
            actions: turn.actions,
            observation: observations.join("\n\n"),
        });

        if finish {
            termination = Termination::Finish;
            break;
        }
    }

    let trajectory = Trajectory {
        query: query.to_string(),
        steps,
        termination,
        final_list: list.clone(),
        failure,
    };
    (list, trajectory)
}
