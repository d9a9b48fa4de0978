//! Agent policies: the deterministic scripted policy used for tests and
//! replays, and the remote chat-completion policy used with real models.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::agent::{render_actions, Action, Message, Role};
use crate::graph::NodeId;
use crate::tools::ToolSchema;

/// One policy turn: the raw assistant text (kept verbatim for trajectory
/// export) and the actions parsed from it.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTurn {
    pub assistant_text: String,
    pub actions: Vec<Action>,
}

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    /// The policy backend could not be reached or answered abnormally;
    /// retried by the agent loop, then the trajectory is marked failed.
    #[error("transport: {0}")]
    Transport(String),
    /// The backend answered, but the reply could not be interpreted as
    /// actions; fed back as an error observation (one repair turn).
    #[error("malformed policy output: {message}")]
    Malformed { raw: String, message: String },
}

/// A decision procedure for the agent loop. Implementations must be `Send`
/// so independent agents can run on worker threads.
pub trait Policy: Send {
    fn decide(
        &mut self,
        messages: &[Message],
        tools: &[ToolSchema],
    ) -> Result<PolicyTurn, PolicyError>;
}

// ---------------------------------------------------------------------------
// Scripted policy
// ---------------------------------------------------------------------------

/// Pattern rules evaluated against the most recent tool observation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// Select the first `count` result ids listed in the last observation
    /// (finishes instead when there are none).
    SelectTopHits { count: usize },
}

/// One script entry: either a literal action sequence or a pattern rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptStep {
    Do {
        #[serde(rename = "do")]
        actions: Vec<Action>,
    },
    Rule(Rule),
}

/// A finite action table keyed by step index. When the script is exhausted
/// before FINISH, the policy finishes implicitly.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Script {
    pub steps: Vec<ScriptStep>,
}

impl Script {
    pub fn from_path(path: &Path) -> Result<Script, std::io::Error> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))
    }
}

/// Scripts for a whole query split: per-query entries with an optional
/// fallback used for queries without one.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptBook {
    #[serde(default)]
    pub default: Option<Script>,
    #[serde(default)]
    pub scripts: BTreeMap<String, Script>,
}

impl ScriptBook {
    pub fn from_path(path: &Path) -> Result<ScriptBook, std::io::Error> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))
    }

    pub fn for_query(&self, query_id: &str) -> Option<&Script> {
        self.scripts.get(query_id).or(self.default.as_ref())
    }
}

/// Extracts result ids from a rendered tool observation: lines shaped
/// `"<rank>. <id> ..."`, in listed order.
pub fn extract_hit_ids(observation: &str) -> Vec<NodeId> {
    observation
        .lines()
        .filter_map(|line| {
            let rest = line.trim_start_matches(|c: char| c.is_ascii_digit());
            let rest = rest.strip_prefix(". ")?;
            let id = rest.split_whitespace().next()?;
            (rest.len() < line.len()).then(|| NodeId::from(id))
        })
        .collect()
}

/// Fully deterministic policy replaying a [`Script`]; enables end-to-end
/// runs without any model in the loop.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    script: Script,
    cursor: usize,
}

impl ScriptedPolicy {
    pub fn new(script: Script) -> Self {
        ScriptedPolicy { script, cursor: 0 }
    }
}

impl Policy for ScriptedPolicy {
    fn decide(
        &mut self,
        messages: &[Message],
        _tools: &[ToolSchema],
    ) -> Result<PolicyTurn, PolicyError> {
        let entry = self.script.steps.get(self.cursor).cloned();
        self.cursor += 1;
        let actions = match entry {
            None => vec![Action::Finish],
            Some(ScriptStep::Do { actions }) => actions,
            Some(ScriptStep::Rule(Rule::SelectTopHits { count })) => {
                let last_observation = messages
                    .iter()
                    .rev()
                    .find(|m| m.role == Role::Tool)
                    .map(|m| m.content.as_str())
                    .unwrap_or("");
                let mut ids = extract_hit_ids(last_observation);
                ids.truncate(count);
                if ids.is_empty() {
                    vec![Action::Finish]
                } else {
                    vec![Action::Select { ids }]
                }
            }
        };
        Ok(PolicyTurn {
            assistant_text: render_actions(&actions),
            actions,
        })
    }
}

// ---------------------------------------------------------------------------
// Remote chat-completion policy
// ---------------------------------------------------------------------------

/// How the model is expected to end a run: structured final-answer text
/// (default, declared in the system prompt) or a dedicated `finish` tool.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalAnswerMode {
    #[default]
    Text,
    Tool,
}

/// Connection settings for a chat-completion style endpoint that accepts a
/// message list plus tool schemas and returns tool invocations or text.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub url: String,
    pub model: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub final_answer_mode: FinalAnswerMode,
}

fn default_temperature() -> f64 {
    0.7
}

fn default_timeout_secs() -> u64 {
    120
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        EndpointConfig {
            url: url.into(),
            model: model.into(),
            temperature: default_temperature(),
            api_key: None,
            timeout_secs: default_timeout_secs(),
            final_answer_mode: FinalAnswerMode::default(),
        }
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessageOut,
}

#[derive(Deserialize)]
struct ChatMessageOut {
    #[serde(default)]
    content: Option<String>,
    #[serde(default)]
    tool_calls: Option<serde_json::Value>,
}

#[derive(Deserialize)]
struct RawToolCall {
    function: RawFunction,
}

#[derive(Deserialize)]
struct RawFunction {
    name: String,
    #[serde(default)]
    arguments: serde_json::Value,
}

#[derive(Deserialize)]
struct SearchArgs {
    #[serde(alias = "query")]
    q: String,
    #[serde(default)]
    k: Option<usize>,
}

#[derive(Deserialize)]
struct NeighborArgs {
    #[serde(alias = "node", alias = "id")]
    v: String,
    #[serde(default, alias = "query")]
    q: Option<String>,
    #[serde(default)]
    node_types: Option<std::collections::BTreeSet<String>>,
    #[serde(default)]
    relation_types: Option<std::collections::BTreeSet<String>>,
}

#[derive(Deserialize)]
struct FinishArgs {
    #[serde(default, alias = "ids", alias = "final_answer")]
    answer_ids: Vec<String>,
}

/// Tool arguments may arrive as a JSON object or as a JSON-encoded string.
fn argument_object(value: &serde_json::Value) -> Result<serde_json::Value, String> {
    match value {
        serde_json::Value::String(s) if s.trim().is_empty() => Ok(serde_json::json!({})),
        serde_json::Value::String(s) => {
            serde_json::from_str(s).map_err(|e| format!("unparseable tool arguments: {e}"))
        }
        serde_json::Value::Null => Ok(serde_json::json!({})),
        other => Ok(other.clone()),
    }
}

fn action_from_tool_call(
    call: &RawToolCall,
    mode: FinalAnswerMode,
) -> Result<Vec<Action>, String> {
    let args = argument_object(&call.function.arguments)?;
    match call.function.name.as_str() {
        "global_search" => {
            let args: SearchArgs =
                serde_json::from_value(args).map_err(|e| format!("global_search: {e}"))?;
            Ok(vec![Action::GlobalSearch {
                q: args.q,
                k: args.k,
            }])
        }
        "neighbors" => {
            let args: NeighborArgs =
                serde_json::from_value(args).map_err(|e| format!("neighbors: {e}"))?;
            Ok(vec![Action::Neighbors {
                v: NodeId::new(args.v),
                q: args.q,
                filter: crate::tools::TypeFilter {
                    node_types: args.node_types,
                    relation_types: args.relation_types,
                },
            }])
        }
        "finish" if mode == FinalAnswerMode::Tool => {
            let args: FinishArgs =
                serde_json::from_value(args).map_err(|e| format!("finish: {e}"))?;
            let mut actions = Vec::new();
            if !args.answer_ids.is_empty() {
                actions.push(Action::Select {
                    ids: args.answer_ids.into_iter().map(NodeId::new).collect(),
                });
            }
            actions.push(Action::Finish);
            Ok(actions)
        }
        other => Err(format!("unknown tool `{other}`")),
    }
}

#[derive(Deserialize)]
struct FinalText {
    #[serde(default)]
    select: Option<Vec<String>>,
    #[serde(default)]
    final_answer: Option<Vec<String>>,
}

/// Parses the structured final-answer protocol out of assistant text:
/// `{"select": [...]}` to keep going, `{"final_answer": [...]}` to stop.
fn actions_from_text(content: &str) -> Result<Vec<Action>, String> {
    let candidate = content.trim();
    let parsed: FinalText = serde_json::from_str(candidate)
        .or_else(|_| {
            // Tolerate surrounding prose: take the outermost brace span.
            let start = candidate.find('{').ok_or(())?;
            let end = candidate.rfind('}').ok_or(())?;
            serde_json::from_str(&candidate[start..=end]).map_err(|_| ())
        })
        .map_err(|_| "no tool calls and no select/final_answer object".to_string())?;

    if parsed.select.is_none() && parsed.final_answer.is_none() {
        return Err("reply object has neither `select` nor `final_answer`".to_string());
    }
    let mut actions = Vec::new();
    if let Some(ids) = parsed.select {
        if !ids.is_empty() {
            actions.push(Action::Select {
                ids: ids.into_iter().map(NodeId::new).collect(),
            });
        }
    }
    if let Some(ids) = parsed.final_answer {
        if !ids.is_empty() {
            actions.push(Action::Select {
                ids: ids.into_iter().map(NodeId::new).collect(),
            });
        }
        actions.push(Action::Finish);
    }
    if actions.is_empty() {
        // `{"select": []}` carries no information; treat as malformed so the
        // agent loop can ask for a usable turn.
        return Err("select list was empty".to_string());
    }
    Ok(actions)
}

/// Policy backed by a remote chat-completion endpoint. Temperature is
/// passed through; transport failures surface as [`PolicyError::Transport`]
/// for the agent loop's bounded retry, malformed replies as
/// [`PolicyError::Malformed`] for the repair turn.
pub struct RemoteModelPolicy {
    config: EndpointConfig,
    client: reqwest::blocking::Client,
}

impl RemoteModelPolicy {
    pub fn new(config: EndpointConfig) -> Result<Self, PolicyError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| PolicyError::Transport(e.to_string()))?;
        Ok(RemoteModelPolicy { config, client })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    fn finish_tool_schema() -> serde_json::Value {
        serde_json::json!({
            "type": "function",
            "function": {
                "name": "finish",
                "description": "Record the final answer node ids (highest-confidence first) and stop.",
                "parameters": {
                    "type": "object",
                    "properties": {
                        "answer_ids": {
                            "type": "array",
                            "items": {"type": "string"},
                            "description": "Node ids that answer the query."
                        }
                    },
                    "required": ["answer_ids"]
                }
            }
        })
    }

    fn request_body(&self, messages: &[Message], tools: &[ToolSchema]) -> serde_json::Value {
        let mut tool_values: Vec<serde_json::Value> =
            tools.iter().map(ToolSchema::to_function_value).collect();
        if self.config.final_answer_mode == FinalAnswerMode::Tool {
            tool_values.push(Self::finish_tool_schema());
        }
        serde_json::json!({
            "model": self.config.model,
            "messages": messages,
            "tools": tool_values,
            "temperature": self.config.temperature,
        })
    }
}

impl Policy for RemoteModelPolicy {
    fn decide(
        &mut self,
        messages: &[Message],
        tools: &[ToolSchema],
    ) -> Result<PolicyTurn, PolicyError> {
        let mut request = self
            .client
            .post(&self.config.url)
            .json(&self.request_body(messages, tools));
        if let Some(key) = &self.config.api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .map_err(|e| PolicyError::Transport(e.to_string()))?;
        let status = response.status();
        let body = response
            .text()
            .map_err(|e| PolicyError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(PolicyError::Transport(format!("HTTP {status}: {body}")));
        }
        let parsed: ChatResponse = serde_json::from_str(&body)
            .map_err(|e| PolicyError::Transport(format!("unparseable response: {e}")))?;
        let message = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| PolicyError::Transport("response had no choices".to_string()))?
            .message;

        let content = message.content.unwrap_or_default();
        match message.tool_calls {
            Some(calls_value) if !calls_value.as_array().map_or(true, Vec::is_empty) => {
                let assistant_text = serde_json::to_string(&serde_json::json!({
                    "content": content,
                    "tool_calls": calls_value,
                }))
                .expect("assistant turn serializes");
                let calls: Vec<RawToolCall> = serde_json::from_value(calls_value)
                    .map_err(|e| PolicyError::Malformed {
                        raw: assistant_text.clone(),
                        message: format!("unparseable tool_calls: {e}"),
                    })?;
                let mut actions = Vec::new();
                for call in &calls {
                    actions.extend(
                        action_from_tool_call(call, self.config.final_answer_mode).map_err(
                            |message| PolicyError::Malformed {
                                raw: assistant_text.clone(),
                                message,
                            },
                        )?,
                    );
                }
                Ok(PolicyTurn {
                    assistant_text,
                    actions,
                })
            }
            _ => {
                let actions =
                    actions_from_text(&content).map_err(|message| PolicyError::Malformed {
                        raw: content.clone(),
                        message,
                    })?;
                Ok(PolicyTurn {
                    assistant_text: content,
                    actions,
                })
            }
        }
    }
}
