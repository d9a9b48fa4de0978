//! Trajectory recording and export as supervised fine-tuning data.
//!
//! A trajectory converts losslessly into its rendered conversation with a
//! per-message loss mask: exactly the assistant-authored messages are
//! marked `train`, user/system/tool content is `mask`ed. Records export as
//! UTF-8 JSONL with a byte-stable round trip, keyed by `(query_id, repeat)`
//! so interrupted collections can resume.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{render_state, run_agent, AgentConfig, Role, Termination, Trajectory};
use crate::eval::QueryCase;
use crate::par::parallel_map;
use crate::policy::Policy;
use crate::prompt::PromptAsset;
use crate::tools::Toolkit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMask {
    Train,
    Mask,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    pub loss_mask: LossMask,
}

/// One training conversation. Message order reproduces the agent's rendered
/// state exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRecord {
    pub messages: Vec<ChatMessage>,
}

/// Converts a completed trajectory (either termination) into its chat
/// record. Deterministic in the trajectory and prompt.
pub fn record(trajectory: &Trajectory, prompt: &PromptAsset) -> ChatRecord {
    let messages = render_state(prompt, &trajectory.query, &trajectory.steps)
        .into_iter()
        .map(|message| ChatMessage {
            loss_mask: if message.role == Role::Assistant {
                LossMask::Train
            } else {
                LossMask::Mask
            },
            role: message.role,
            content: message.content,
        })
        .collect();
    ChatRecord { messages }
}

/// One exported line: the conversation plus its collection key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub query_id: String,
    pub repeat: usize,
    #[serde(flatten)]
    pub record: ChatRecord,
}

/// Collection settings: how many trajectories per query, the sampling
/// temperature given to remote policies, the query cap per graph, and the
/// per-trajectory step limit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CollectionConfig {
    pub repeats: usize,
    pub temperature: f64,
    pub max_queries: usize,
    pub t_max: usize,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_workers() -> usize {
    1
}

impl Default for CollectionConfig {
    fn default() -> Self {
        CollectionConfig {
            repeats: 3,
            temperature: 0.7,
            max_queries: 6_000,
            t_max: crate::agent::DEFAULT_T_MAX,
            workers: 1,
        }
    }
}

/// A trajectory that could not be collected; logged, never exported.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureNote {
    pub query_id: String,
    pub repeat: usize,
    pub reason: String,
}

/// What a collection run produced, for the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionManifest {
    pub queries: usize,
    pub repeats: usize,
    pub records: usize,
    pub failures: usize,
    pub skipped: usize,
    pub temperature: f64,
    pub t_max: usize,
    pub max_queries: usize,
    pub prompt_version: String,
    pub prompt_sha256: String,
}

#[derive(Debug)]
pub struct CollectOutcome {
    pub records: Vec<ExportRecord>,
    pub failures: Vec<FailureNote>,
    pub manifest: CollectionManifest,
}

/// Runs `repeats` trajectories per query (skipping `skip` keys, so
/// interrupted collections resume) and returns the successful conversations
/// ordered by `(query_id, repeat)`. Failed trajectories are logged in the
/// outcome, not exported; there is no other filtering.
pub fn collect<F>(
    cases: &[QueryCase],
    make_policy: F,
    toolkit: &Toolkit,
    config: &CollectionConfig,
    agent_config: &AgentConfig,
    skip: &BTreeSet<(String, usize)>,
) -> CollectOutcome
where
    F: Fn(&QueryCase, usize) -> Box<dyn Policy> + Sync,
{
    let cases = &cases[..cases.len().min(config.max_queries)];
    let agent_config = AgentConfig {
        t_max: config.t_max,
        ..agent_config.clone()
    };

    let mut tasks: Vec<(&QueryCase, usize)> = Vec::new();
    let mut skipped = 0usize;
    for case in cases {
        for repeat in 0..config.repeats {
            if skip.contains(&(case.id.clone(), repeat)) {
                skipped += 1;
            } else {
                tasks.push((case, repeat));
            }
        }
    }

    let results = parallel_map(&tasks, config.workers, |&(case, repeat)| {
        let mut policy = make_policy(case, repeat);
        let (_, trajectory) = run_agent(&case.query, policy.as_mut(), toolkit, &agent_config);
        (case.id.clone(), repeat, trajectory)
    });

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (query_id, repeat, trajectory) in results {
        if trajectory.termination == Termination::Failed {
            failures.push(FailureNote {
                query_id,
                repeat,
                reason: trajectory
                    .failure
                    .unwrap_or_else(|| "unknown failure".to_string()),
            });
        } else {
            records.push(ExportRecord {
                query_id,
                repeat,
                record: record(&trajectory, &agent_config.prompt),
            });
        }
    }
    records.sort_by(|a, b| (&a.query_id, a.repeat).cmp(&(&b.query_id, b.repeat)));
    failures.sort_by(|a, b| (&a.query_id, a.repeat).cmp(&(&b.query_id, b.repeat)));

    let manifest = CollectionManifest {
        queries: cases.len(),
        repeats: config.repeats,
        records: records.len(),
        failures: failures.len(),
        skipped,
        temperature: config.temperature,
        t_max: config.t_max,
        max_queries: config.max_queries,
        prompt_version: agent_config.prompt.version.clone(),
        prompt_sha256: agent_config.prompt.sha256(),
    };
    CollectOutcome {
        records,
        failures,
        manifest,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: loss mask violation: {role:?} message marked {mask:?}")]
    MaskViolation {
        line: usize,
        role: Role,
        mask: LossMask,
    },
}

/// Writes records as JSONL, one compact object per line.
pub fn export_records<W: Write>(records: &[ExportRecord], mut writer: W) -> std::io::Result<()> {
    for record in records {
        serde_json::to_writer(&mut writer, record)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Parses an export stream, enforcing the mask invariant
/// (`train` exactly on assistant messages).
pub fn parse_records<R: BufRead>(reader: R) -> Result<Vec<ExportRecord>, ExportError> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| ExportError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ExportRecord = serde_json::from_str(&line).map_err(|e| ExportError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        for message in &record.record.messages {
            let expected = if message.role == Role::Assistant {
                LossMask::Train
            } else {
                LossMask::Mask
            };
            if message.loss_mask != expected {
                return Err(ExportError::MaskViolation {
                    line: idx + 1,
                    role: message.role,
                    mask: message.loss_mask,
                });
            }
        }
        records.push(record);
    }
    Ok(records)
}

/// Collection keys already present in an export file (empty when the file
/// does not exist); used to resume interrupted collections.
pub fn load_completed(path: &Path) -> Result<BTreeSet<(String, usize)>, ExportError> {
    if !path.exists() {
        return Ok(BTreeSet::new());
    }
    let file = std::fs::File::open(path).map_err(|e| ExportError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let records = parse_records(std::io::BufReader::new(file))?;
    Ok(records
        .into_iter()
        .map(|r| (r.query_id, r.repeat))
        .collect())
}
