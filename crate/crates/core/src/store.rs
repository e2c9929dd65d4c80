//! Exploration history and its seven-table persistence layout.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{Action, ActionRecord, ProvenanceProgram};
use crate::chart::ChartDoc;
use crate::coordination::CoordinationSchema;
use crate::figure::{FigureMeta, FigureState};
use crate::interaction::InteractionEvent;
use crate::ledger::{ArtifactEntry, ArtifactState, ArtifactVersion, LedgerEdge, UserInputRecord, VersionLedger};
use crate::slice::DataSlice;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub conversation_id: String,
    pub created_at: DateTime<Utc>,
    pub backend: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact_id: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub message_id: String,
    pub conversation_id: String,
    pub seq: u64,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interaction: Option<InteractionEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_input_id: Option<String>,
    #[serde(default)]
    pub figure_ids: Vec<String>,
    pub created_at: DateTime<Utc>,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MessageArtifact {
    pub message_id: String,
    pub artifact_id: String,
    pub version_id: String,
}

/// Conversations and messages plus the version ledger they point into.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub conversations: BTreeMap<String, Conversation>,
    pub messages: Vec<Message>,
    pub message_artifact: BTreeSet<MessageArtifact>,
    pub ledger: VersionLedger,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn messages_of(&self, conversation_id: &str) -> Vec<&Message> {
        self.messages.iter().filter(|m| m.conversation_id == conversation_id).collect()
    }

    /// Appends a message with the next sequence number of its conversation.
    pub fn push_message(&mut self, mut m: Message) -> String {
        m.seq = self.messages.iter().filter(|x| x.conversation_id == m.conversation_id).count() as u64;
        m.message_id = format!("{}-m{}", m.conversation_id, m.seq);
        let id = m.message_id.clone();
        self.messages.push(m);
        id
    }

    pub fn to_tables(&self) -> Tables {
        to_tables(self)
    }

    pub fn from_tables(t: Tables) -> Result<Self, StorageError> {
        from_tables(t)
    }

    pub fn save(&self, dir: &Path) -> Result<(), StorageError> {
        self.to_tables().write_dir(dir)
    }

    pub fn load(dir: &Path) -> Result<Self, StorageError> {
        Self::from_tables(Tables::read_dir(dir)?)
    }
}

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{table} line {line}: {reason}")]
    Parse { table: &'static str, line: usize, reason: String },
    #[error("integrity error in {table}: dangling reference `{id}` ({detail})")]
    Integrity {
        table: &'static str,
        id: String,
        detail: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRow {
    pub artifact_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conversation_id: Option<String>,
    pub user_input: UserInputRecord,
    pub figure_ids: Vec<String>,
    pub coordination_edges: Vec<String>,
    pub schemas: Vec<CoordinationSchema>,
    pub head_version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParentLink {
    pub parent: String,
    pub trigger: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactVersionRow {
    pub version_id: String,
    pub artifact_id: String,
    pub parents: Vec<ParentLink>,
    pub trigger: UserInputRecord,
    pub figure_ids: Vec<String>,
    /// Figure version ids, aligned with `figure_ids`.
    pub figure_versions: Vec<String>,
    pub schemas: Vec<CoordinationSchema>,
    pub committed_at: DateTime<Utc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FigureRow {
    pub figure_id: String,
    pub artifact_id: String,
    pub head_version: String,
    pub visualization: ChartDoc,
    pub code: Vec<Action>,
    pub data: DataSlice,
    pub meta: FigureMeta,
    pub action_records: Vec<ActionRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FigureVersionRow {
    pub version_id: String,
    pub figure_id: String,
    pub state: FigureState,
}

/// The seven tables, row by row.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Tables {
    pub conversations: Vec<Conversation>,
    pub messages: Vec<Message>,
    pub message_artifact: Vec<MessageArtifact>,
    pub artifacts: Vec<ArtifactRow>,
    pub artifact_versions: Vec<ArtifactVersionRow>,
    pub figures: Vec<FigureRow>,
    pub figure_versions: Vec<FigureVersionRow>,
}

pub const TABLE_NAMES: [&str; 7] = [
    "conversations",
    "messages",
    "message_artifact",
    "artifacts",
    "artifact_versions",
    "figures",
    "figure_versions",
];

fn jsonl<T: Serialize>(rows: &[T]) -> String {
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(r).expect("row json"));
        s.push('\n');
    }
    s
}

fn parse_jsonl<T: DeserializeOwned>(table: &'static str, text: &str) -> Result<Vec<T>, StorageError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| StorageError::Parse {
                table,
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

impl Tables {
    /// One JSONL document per table, in `TABLE_NAMES` order.
    pub fn to_jsonl(&self) -> Vec<(&'static str, String)> {
        vec![
            ("conversations", jsonl(&self.conversations)),
            ("messages", jsonl(&self.messages)),
            ("message_artifact", jsonl(&self.message_artifact)),
            ("artifacts", jsonl(&self.artifacts)),
            ("artifact_versions", jsonl(&self.artifact_versions)),
            ("figures", jsonl(&self.figures)),
            ("figure_versions", jsonl(&self.figure_versions)),
        ]
    }

    pub fn from_jsonl(get: impl Fn(&str) -> Option<String>) -> Result<Self, StorageError> {
        let text = |t: &'static str| get(t).unwrap_or_default();
        Ok(Tables {
            conversations: parse_jsonl("conversations", &text("conversations"))?,
            messages: parse_jsonl("messages", &text("messages"))?,
            message_artifact: parse_jsonl("message_artifact", &text("message_artifact"))?,
            artifacts: parse_jsonl("artifacts", &text("artifacts"))?,
            artifact_versions: parse_jsonl("artifact_versions", &text("artifact_versions"))?,
            figures: parse_jsonl("figures", &text("figures"))?,
            figure_versions: parse_jsonl("figure_versions", &text("figure_versions"))?,
        })
    }

    /// Writes every table to a temp file, then renames them into place.
    pub fn write_dir(&self, dir: &Path) -> Result<(), StorageError> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| StorageError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let docs = self.to_jsonl();
        for (name, body) in &docs {
            let tmp = dir.join(format!(".{name}.jsonl.tmp"));
            let mut f = fs::File::create(&tmp).map_err(io(&tmp))?;
            f.write_all(body.as_bytes()).map_err(io(&tmp))?;
            f.sync_all().map_err(io(&tmp))?;
        }
        for (name, _) in &docs {
            let tmp = dir.join(format!(".{name}.jsonl.tmp"));
            let dst = dir.join(format!("{name}.jsonl"));
            fs::rename(&tmp, &dst).map_err(io(&dst))?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self, StorageError> {
        let mut docs = BTreeMap::new();
        for name in TABLE_NAMES {
            let p = dir.join(format!("{name}.jsonl"));
            match fs::read_to_string(&p) {
                Ok(s) => {
                    docs.insert(name, s);
                }
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(source) => {
                    return Err(StorageError::Io {
                        path: p.display().to_string(),
                        source,
                    })
                }
            }
        }
        Self::from_jsonl(|n| docs.get(n).cloned())
    }
}

fn to_tables(h: &History) -> Tables {
    let ledger = &h.ledger;
    let mut t = Tables {
        conversations: h.conversations.values().cloned().collect(),
        messages: h.messages.clone(),
        message_artifact: h.message_artifact.iter().cloned().collect(),
        ..Tables::default()
    };
    let conv_of: BTreeMap<&str, &str> = h
        .conversations
        .values()
        .filter_map(|c| c.artifact_id.as_deref().map(|a| (a, c.conversation_id.as_str())))
        .collect();
    let mut figure_versions: BTreeMap<String, FigureVersionRow> = BTreeMap::new();
    // Latest state of each figure, by commit time then version id.
    let mut latest: BTreeMap<String, (DateTime<Utc>, String, FigureState)> = BTreeMap::new();
    for v in ledger.versions.values() {
        let mut links = Vec::new();
        for p in &v.parents {
            let trigger = ledger
                .edges
                .iter()
                .find(|e| &e.parent == p && e.child == v.version_id)
                .map(|e| e.trigger.clone())
                .unwrap_or_default();
            links.push(ParentLink {
                parent: p.clone(),
                trigger,
            });
        }
        let mut fv = Vec::new();
        for id in &v.state.figure_ids {
            let f = &v.state.figures[id];
            fv.push(f.meta.version_id.clone());
            figure_versions.entry(f.meta.version_id.clone()).or_insert_with(|| FigureVersionRow {
                version_id: f.meta.version_id.clone(),
                figure_id: id.clone(),
                state: f.clone(),
            });
            let newer = latest
                .get(id)
                .is_none_or(|(at, vid, _)| (v.committed_at, &v.version_id) > (*at, vid));
            if newer {
                latest.insert(id.clone(), (v.committed_at, v.version_id.clone(), f.clone()));
            }
        }
        t.artifact_versions.push(ArtifactVersionRow {
            version_id: v.version_id.clone(),
            artifact_id: v.artifact_id.clone(),
            parents: links,
            trigger: v.trigger.clone(),
            figure_ids: v.state.figure_ids.clone(),
            figure_versions: fv,
            schemas: v.state.schemas.clone(),
            committed_at: v.committed_at,
        });
    }
    for a in ledger.artifacts.values() {
        let head = &ledger.versions[&a.head_version].state;
        t.artifacts.push(ArtifactRow {
            artifact_id: a.artifact_id.clone(),
            conversation_id: conv_of.get(a.artifact_id.as_str()).map(|s| s.to_string()),
            user_input: a.user_input.clone(),
            figure_ids: head.figure_ids.clone(),
            coordination_edges: head.schemas.iter().map(|s| s.schema_id.clone()).collect(),
            schemas: head.schemas.clone(),
            head_version: a.head_version.clone(),
        });
    }
    for (id, (_, _, f)) in latest {
        t.figures.push(FigureRow {
            figure_id: id,
            artifact_id: f.meta.artifact_id.clone(),
            head_version: f.meta.version_id.clone(),
            code: f.actions(),
            action_records: f.code.steps.clone(),
            visualization: f.visualization,
            data: f.data,
            meta: f.meta,
        });
    }
    t.figure_versions = figure_versions.into_values().collect();
    t
}

fn dangling(table: &'static str, id: &str, detail: impl Into<String>) -> StorageError {
    StorageError::Integrity {
        table,
        id: id.to_string(),
        detail: detail.into(),
    }
}

fn from_tables(t: Tables) -> Result<History, StorageError> {
    let conversations: BTreeMap<String, Conversation> = t
        .conversations
        .into_iter()
        .map(|c| (c.conversation_id.clone(), c))
        .collect();
    let message_ids: BTreeSet<&str> = t.messages.iter().map(|m| m.message_id.as_str()).collect();
    for m in &t.messages {
        if !conversations.contains_key(&m.conversation_id) {
            return Err(dangling("messages", &m.conversation_id, "unknown conversation"));
        }
    }
    let artifact_ids: BTreeSet<&str> = t.artifacts.iter().map(|a| a.artifact_id.as_str()).collect();
    let version_ids: BTreeSet<&str> = t.artifact_versions.iter().map(|v| v.version_id.as_str()).collect();
    let figure_ids: BTreeSet<&str> = t.figures.iter().map(|f| f.figure_id.as_str()).collect();
    let figure_versions: BTreeMap<&str, &FigureVersionRow> =
        t.figure_versions.iter().map(|f| (f.version_id.as_str(), f)).collect();

    for ma in &t.message_artifact {
        if !message_ids.contains(ma.message_id.as_str()) {
            return Err(dangling("message_artifact", &ma.message_id, "unknown message"));
        }
        if !artifact_ids.contains(ma.artifact_id.as_str()) {
            return Err(dangling("message_artifact", &ma.artifact_id, "unknown artifact"));
        }
        if !version_ids.contains(ma.version_id.as_str()) {
            return Err(dangling("message_artifact", &ma.version_id, "unknown artifact version"));
        }
    }
    for c in conversations.values() {
        if let Some(a) = &c.artifact_id {
            if !artifact_ids.contains(a.as_str()) {
                return Err(dangling("conversations", a, "unknown artifact"));
            }
        }
    }
    for a in &t.artifacts {
        if !version_ids.contains(a.head_version.as_str()) {
            return Err(dangling("artifacts", &a.head_version, "unknown head version"));
        }
        if let Some(c) = &a.conversation_id {
            if !conversations.contains_key(c) {
                return Err(dangling("artifacts", c, "unknown conversation"));
            }
        }
        for f in &a.figure_ids {
            if !figure_ids.contains(f.as_str()) {
                return Err(dangling("artifacts", f, "figure row missing"));
            }
        }
        let schema_ids: Vec<&String> = a.schemas.iter().map(|s| &s.schema_id).collect();
        if schema_ids != a.coordination_edges.iter().collect::<Vec<_>>() {
            return Err(dangling("artifacts", &a.artifact_id, "coordination edges disagree with schemas"));
        }
    }
    for f in &t.figures {
        let Some(v) = figure_versions.get(f.head_version.as_str()) else {
            return Err(dangling("figures", &f.head_version, "unknown figure version"));
        };
        if v.figure_id != f.figure_id {
            return Err(dangling("figures", &f.head_version, "version belongs to another figure"));
        }
        let steps: Vec<Action> = f.action_records.iter().map(|r| r.action.clone()).collect();
        if steps != f.code {
            return Err(dangling("figures", &f.figure_id, "code disagrees with action records"));
        }
    }
    for fv in &t.figure_versions {
        if !figure_ids.contains(fv.figure_id.as_str()) {
            return Err(dangling("figure_versions", &fv.figure_id, "figure row missing"));
        }
        if fv.state.meta.version_id != fv.version_id || fv.state.figure_id != fv.figure_id {
            return Err(dangling("figure_versions", &fv.version_id, "row disagrees with its state"));
        }
    }

    let mut ledger = VersionLedger::new();
    for v in &t.artifact_versions {
        if !artifact_ids.contains(v.artifact_id.as_str()) {
            return Err(dangling("artifact_versions", &v.artifact_id, "unknown artifact"));
        }
        if v.figure_ids.len() != v.figure_versions.len() {
            return Err(dangling("artifact_versions", &v.version_id, "figure lists differ in length"));
        }
        let mut state = ArtifactState::new(v.artifact_id.clone());
        for (fid, vid) in v.figure_ids.iter().zip(&v.figure_versions) {
            let Some(row) = figure_versions.get(vid.as_str()) else {
                return Err(dangling("artifact_versions", vid, "unknown figure version"));
            };
            if &row.figure_id != fid {
                return Err(dangling("artifact_versions", vid, "figure version belongs to another figure"));
            }
            state.put_figure(row.state.clone());
        }
        state.schemas = v.schemas.clone();
        for p in &v.parents {
            if !version_ids.contains(p.parent.as_str()) {
                return Err(dangling("artifact_versions", &p.parent, "unknown parent version"));
            }
            ledger.edges.insert(LedgerEdge {
                parent: p.parent.clone(),
                child: v.version_id.clone(),
                trigger: p.trigger.clone(),
            });
        }
        ledger.versions.insert(
            v.version_id.clone(),
            ArtifactVersion {
                version_id: v.version_id.clone(),
                artifact_id: v.artifact_id.clone(),
                parents: v.parents.iter().map(|p| p.parent.clone()).collect(),
                trigger: v.trigger.clone(),
                state,
                committed_at: v.committed_at,
            },
        );
    }
    for a in t.artifacts {
        ledger.artifacts.insert(
            a.artifact_id.clone(),
            ArtifactEntry {
                artifact_id: a.artifact_id,
                user_input: a.user_input,
                head_version: a.head_version,
            },
        );
    }
    ledger.check_dag().map_err(|e| dangling("artifact_versions", "", e))?;
    Ok(History {
        conversations,
        messages: t.messages,
        message_artifact: t.message_artifact.into_iter().collect(),
        ledger,
    })
}

/// Rebuilds a figure from its row, for callers holding only the figures table.
pub fn figure_from_row(r: &FigureRow) -> FigureState {
    FigureState {
        figure_id: r.figure_id.clone(),
        visualization: r.visualization.clone(),
        code: ProvenanceProgram {
            steps: r.action_records.clone(),
        },
        data: r.data.clone(),
        meta: r.meta.clone(),
    }
}
