//! Artifact states and the append-only version DAG over them.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::Action;
use crate::catalog::TableCatalog;
use crate::coordination::CoordinationSchema;
use crate::digest::{Digest, DigestBuilder};
use crate::figure::{replay_figure, FigureState, Operation};
use crate::interaction::InteractionEvent;

/// What the user did to cause a transition: text, a gesture, or both.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserInputRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interaction: Option<InteractionEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsed: Option<serde_json::Value>,
    pub at: DateTime<Utc>,
}

impl UserInputRecord {
    pub fn new(raw_text: Option<String>, interaction: Option<InteractionEvent>, at: DateTime<Utc>) -> Self {
        let d = DigestBuilder::new()
            .part(raw_text.as_deref().unwrap_or(""))
            .part(serde_json::to_vec(&interaction).expect("event json"))
            .part(at.to_rfc3339())
            .finish();
        Self {
            id: format!("in-{}", d.short(20)),
            raw_text,
            interaction,
            parsed: None,
            at,
        }
    }

    pub fn text(s: impl Into<String>) -> Self {
        Self::new(Some(s.into()), None, Utc::now())
    }

    pub fn is_valid(&self) -> bool {
        self.raw_text.as_deref().is_some_and(|t| !t.trim().is_empty()) || self.interaction.is_some()
    }
}

/// A working copy of an artifact: figures, coordination schemas and the version it
/// was checked out from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactState {
    pub artifact_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_version: Option<String>,
    pub figure_ids: Vec<String>,
    pub figures: BTreeMap<String, FigureState>,
    #[serde(default)]
    pub schemas: Vec<CoordinationSchema>,
}

impl ArtifactState {
    pub fn new(artifact_id: impl Into<String>) -> Self {
        Self {
            artifact_id: artifact_id.into(),
            base_version: None,
            figure_ids: Vec::new(),
            figures: BTreeMap::new(),
            schemas: Vec::new(),
        }
    }

    pub fn figure(&self, id: &str) -> Option<&FigureState> {
        self.figures.get(id)
    }

    /// Inserts a new figure or replaces the current version of an existing one.
    pub fn put_figure(&mut self, fig: FigureState) {
        if !self.figure_ids.contains(&fig.figure_id) {
            self.figure_ids.push(fig.figure_id.clone());
        }
        self.figures.insert(fig.figure_id.clone(), fig);
    }

    pub fn schemas_from(&self, figure_id: &str) -> Vec<&CoordinationSchema> {
        self.schemas.iter().filter(|s| s.source_figure == figure_id).collect()
    }

    /// Next figure id for this artifact, stable given the current figure count.
    pub fn next_figure_id(&self) -> String {
        let d = DigestBuilder::new()
            .part(&self.artifact_id)
            .part((self.figure_ids.len() as u64).to_be_bytes())
            .finish();
        format!("fig-{}", d.short(16))
    }

    /// Hash of the snapshot, excluding timestamps and the base version.
    pub fn content_id(&self) -> String {
        let mut b = DigestBuilder::new()
            .part(b"provfig.artifact.v1")
            .part(&self.artifact_id);
        for id in &self.figure_ids {
            let f = &self.figures[id];
            b = b.part(id).part(&f.meta.version_id).part(f.content_digest().0);
        }
        for s in &self.schemas {
            b = b.part(serde_json::to_vec(s).expect("schema json"));
        }
        format!("av-{}", b.finish().short(24))
    }

    /// Figure and coordination invariants.
    pub fn check(&self) -> Result<(), String> {
        let ids: BTreeSet<&String> = self.figure_ids.iter().collect();
        if ids.len() != self.figure_ids.len() || ids.len() != self.figures.len() {
            return Err("figure id list does not match figures".into());
        }
        for (id, f) in &self.figures {
            if !ids.contains(id) || &f.figure_id != id {
                return Err(format!("figure `{id}` is not listed"));
            }
            if f.meta.artifact_id != self.artifact_id {
                return Err(format!("figure `{id}` belongs to another artifact"));
            }
            f.check().map_err(|e| format!("figure `{id}`: {e}"))?;
            if f.meta.operation == Operation::CoordinateUpdate
                && !self.schemas.iter().any(|s| s.target_figure == *id)
            {
                return Err(format!("figure `{id}` is a coordinate update without a schema"));
            }
        }
        for s in &self.schemas {
            if !ids.contains(&s.source_figure) || !ids.contains(&s.target_figure) {
                return Err(format!("schema `{}` references a non-member figure", s.schema_id));
            }
        }
        crate::coordination::propagation_order(&self.schemas).map_err(|e| e.to_string())?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactVersion {
    pub version_id: String,
    pub artifact_id: String,
    pub parents: Vec<String>,
    pub trigger: UserInputRecord,
    pub state: ArtifactState,
    pub committed_at: DateTime<Utc>,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LedgerEdge {
    pub parent: String,
    pub child: String,
    /// Id of the user input that caused the transition.
    pub trigger: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub artifact_id: String,
    pub user_input: UserInputRecord,
    pub head_version: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LedgerError {
    #[error("validation failed: {0}")]
    ValidationFailed(String),
    #[error("unknown version `{0}`")]
    UnknownVersion(String),
    #[error("unknown artifact `{0}`")]
    UnknownArtifact(String),
    #[error("commit would close a cycle at `{0}`")]
    CycleRejected(String),
    #[error("missing source table `{0}`")]
    MissingSourceTable(String),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VersionLedger {
    pub artifacts: BTreeMap<String, ArtifactEntry>,
    pub versions: BTreeMap<String, ArtifactVersion>,
    pub edges: BTreeSet<LedgerEdge>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitOutcome {
    pub version_id: String,
    /// False when the state equals its base and nothing was appended.
    pub created: bool,
}

impl VersionLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn head(&self, artifact_id: &str) -> Option<&str> {
        self.artifacts.get(artifact_id).map(|a| a.head_version.as_str())
    }

    pub fn version(&self, id: &str) -> Result<&ArtifactVersion, LedgerError> {
        self.versions.get(id).ok_or_else(|| LedgerError::UnknownVersion(id.to_string()))
    }

    /// True if `a` equals `b` or lies on a path from a root to `b`.
    pub fn is_ancestor(&self, a: &str, b: &str) -> bool {
        self.ancestors(b).contains(a)
    }

    fn ancestors(&self, id: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut stack = vec![id.to_string()];
        while let Some(v) = stack.pop() {
            if !out.insert(v.clone()) {
                continue;
            }
            if let Some(n) = self.versions.get(&v) {
                stack.extend(n.parents.iter().cloned());
            }
        }
        out
    }

    /// Appends a snapshot of `state` as a child of `state.base_version` and advances the
    /// head. Identical states share an id: committing the base's own content is a no-op.
    pub fn commit(&mut self, state: &ArtifactState, trigger: UserInputRecord) -> Result<CommitOutcome, LedgerError> {
        state.check().map_err(LedgerError::ValidationFailed)?;
        if !trigger.is_valid() {
            return Err(LedgerError::ValidationFailed("trigger has neither text nor interaction".into()));
        }
        let parent = state.base_version.clone();
        if let Some(p) = &parent {
            let pv = self.version(p)?;
            if pv.artifact_id != state.artifact_id {
                return Err(LedgerError::ValidationFailed("base version belongs to another artifact".into()));
            }
        } else if self.artifacts.contains_key(&state.artifact_id) {
            return Err(LedgerError::ValidationFailed(format!(
                "artifact `{}` already has a root; commit from a checkout",
                state.artifact_id
            )));
        }
        let id = state.content_id();
        if parent.as_deref() == Some(id.as_str()) {
            return Ok(CommitOutcome {
                version_id: id,
                created: false,
            });
        }
        let mut snapshot = state.clone();
        snapshot.base_version = None;
        if let Some(existing) = self.versions.get(&id) {
            // Same content reached along another path: add an edge unless it closes a cycle.
            let p = parent.clone().expect("existing versions have a root");
            if self.ancestors(&p).contains(&existing.version_id) {
                return Err(LedgerError::CycleRejected(id));
            }
            if !existing.parents.contains(&p) {
                self.versions.get_mut(&id).expect("exists").parents.push(p.clone());
                self.edges.insert(LedgerEdge {
                    parent: p,
                    child: id.clone(),
                    trigger: trigger.id.clone(),
                });
            }
        } else {
            if let Some(p) = &parent {
                self.edges.insert(LedgerEdge {
                    parent: p.clone(),
                    child: id.clone(),
                    trigger: trigger.id.clone(),
                });
            }
            self.versions.insert(
                id.clone(),
                ArtifactVersion {
                    version_id: id.clone(),
                    artifact_id: state.artifact_id.clone(),
                    parents: parent.into_iter().collect(),
                    trigger: trigger.clone(),
                    state: snapshot,
                    committed_at: trigger.at,
                },
            );
        }
        self.artifacts
            .entry(state.artifact_id.clone())
            .and_modify(|a| a.head_version = id.clone())
            .or_insert_with(|| ArtifactEntry {
                artifact_id: state.artifact_id.clone(),
                user_input: trigger,
                head_version: id.clone(),
            });
        Ok(CommitOutcome {
            version_id: id,
            created: true,
        })
    }

    /// Read-only copy of a snapshot, based at that version. The head does not move.
    pub fn checkout(&self, version_id: &str) -> Result<ArtifactState, LedgerError> {
        let v = self.version(version_id)?;
        let mut s = v.state.clone();
        s.base_version = Some(version_id.to_string());
        Ok(s)
    }

    /// Working copy of the artifact's head.
    pub fn checkout_head(&self, artifact_id: &str) -> Result<ArtifactState, LedgerError> {
        let head = self
            .head(artifact_id)
            .ok_or_else(|| LedgerError::UnknownArtifact(artifact_id.to_string()))?
            .to_string();
        self.checkout(&head)
    }

    pub fn versions_of(&self, artifact_id: &str) -> Vec<&ArtifactVersion> {
        let mut v: Vec<&ArtifactVersion> = self.versions.values().filter(|v| v.artifact_id == artifact_id).collect();
        v.sort_by(|a, b| a.committed_at.cmp(&b.committed_at).then(a.version_id.cmp(&b.version_id)));
        v
    }

    pub fn children(&self, version_id: &str) -> Vec<&str> {
        self.edges
            .iter()
            .filter(|e| e.parent == version_id)
            .map(|e| e.child.as_str())
            .collect()
    }

    /// DAG invariants: parents exist, no cycles, heads exist, edges mirror parents.
    pub fn check_dag(&self) -> Result<(), String> {
        let mut indeg: BTreeMap<&str, usize> = BTreeMap::new();
        for (id, v) in &self.versions {
            indeg.entry(id).or_insert(0);
            for p in &v.parents {
                if !self.versions.contains_key(p) {
                    return Err(format!("version {id} has unknown parent {p}"));
                }
                if !self.edges.iter().any(|e| &e.parent == p && &e.child == id) {
                    return Err(format!("missing edge {p} -> {id}"));
                }
            }
            *indeg.entry(id).or_insert(0) += v.parents.len();
        }
        if self.edges.len() != self.versions.values().map(|v| v.parents.len()).sum::<usize>() {
            return Err("edge list does not mirror parent lists".into());
        }
        let mut ready: Vec<&str> = indeg.iter().filter(|(_, d)| **d == 0).map(|(k, _)| *k).collect();
        let mut seen = 0;
        while let Some(v) = ready.pop() {
            seen += 1;
            for c in self.children(v) {
                let d = indeg.get_mut(c).expect("known child");
                *d -= 1;
                if *d == 0 {
                    ready.push(c);
                }
            }
        }
        if seen != self.versions.len() {
            return Err("version graph has a cycle".into());
        }
        for a in self.artifacts.values() {
            if !self.versions.contains_key(&a.head_version) {
                return Err(format!("head {} of {} is missing", a.head_version, a.artifact_id));
            }
        }
        Ok(())
    }

    /// Hash of every snapshot, for immutability checks.
    pub fn snapshot_hashes(&self) -> BTreeMap<String, Digest> {
        self.versions
            .iter()
            .map(|(k, v)| (k.clone(), Digest::of_json(&v.state)))
            .collect()
    }

    /// Replays every figure of a version against `catalog`.
    pub fn replay_artifact(&self, version_id: &str, catalog: &TableCatalog) -> Result<ReplayReport, LedgerError> {
        let v = self.version(version_id)?;
        replay_state(&v.state, version_id, catalog)
    }

    /// Added/removed figures, appended steps and schema changes between two versions.
    pub fn diff(&self, from: &str, to: &str) -> Result<ChangeSet, LedgerError> {
        let a = &self.version(from)?.state;
        let b = &self.version(to)?.state;
        Ok(diff_states(a, b))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FigureReplay {
    pub figure_id: String,
    pub expected_digest: Digest,
    pub replayed_digest: Option<Digest>,
    pub matched: bool,
    pub nondeterministic: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub version_id: String,
    pub figures: Vec<FigureReplay>,
}

impl ReplayReport {
    /// Every figure matched, or mismatched only where nondeterminism was declared.
    pub fn ok(&self) -> bool {
        self.figures.iter().all(|f| f.matched || f.nondeterministic)
    }

    pub fn all_matched(&self) -> bool {
        self.figures.iter().all(|f| f.matched)
    }
}

pub fn replay_state(state: &ArtifactState, version_id: &str, catalog: &TableCatalog) -> Result<ReplayReport, LedgerError> {
    let mut figures = Vec::new();
    for id in &state.figure_ids {
        let f = &state.figures[id];
        let nondeterministic = f.code.has_nondeterministic_step();
        let entry = match replay_figure(f, catalog) {
            Ok(o) => FigureReplay {
                figure_id: id.clone(),
                expected_digest: f.data.digest,
                replayed_digest: Some(o.figure.data.digest),
                matched: o.data_match && o.chart_match,
                nondeterministic,
                note: o.note,
            },
            Err(crate::figure::ReplayError::MissingSourceTable(t)) => return Err(LedgerError::MissingSourceTable(t)),
            Err(e) => FigureReplay {
                figure_id: id.clone(),
                expected_digest: f.data.digest,
                replayed_digest: None,
                matched: false,
                nondeterministic,
                note: Some(e.to_string()),
            },
        };
        figures.push(entry);
    }
    Ok(ReplayReport {
        version_id: version_id.to_string(),
        figures,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FigureChange {
    pub figure_id: String,
    pub from_version: String,
    pub to_version: String,
    pub appended_steps: Vec<Action>,
    /// True if the earlier program is not a prefix of the later one.
    pub rewritten: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChangeSet {
    pub added_figures: Vec<String>,
    pub removed_figures: Vec<String>,
    pub changed_figures: Vec<FigureChange>,
    pub added_schemas: Vec<String>,
    pub removed_schemas: Vec<String>,
}

impl ChangeSet {
    pub fn is_empty(&self) -> bool {
        self.added_figures.is_empty()
            && self.removed_figures.is_empty()
            && self.changed_figures.is_empty()
            && self.added_schemas.is_empty()
            && self.removed_schemas.is_empty()
    }
}

pub fn diff_states(a: &ArtifactState, b: &ArtifactState) -> ChangeSet {
    let mut c = ChangeSet::default();
    for id in &b.figure_ids {
        match a.figures.get(id) {
            None => c.added_figures.push(id.clone()),
            Some(fa) => {
                let fb = &b.figures[id];
                if fa.meta.version_id != fb.meta.version_id {
                    let pa = fa.actions();
                    let pb = fb.actions();
                    let prefix = pb.len() >= pa.len() && pb[..pa.len()] == pa[..];
                    c.changed_figures.push(FigureChange {
                        figure_id: id.clone(),
                        from_version: fa.meta.version_id.clone(),
                        to_version: fb.meta.version_id.clone(),
                        appended_steps: if prefix { pb[pa.len()..].to_vec() } else { pb },
                        rewritten: !prefix,
                    });
                }
            }
        }
    }
    for id in &a.figure_ids {
        if !b.figures.contains_key(id) {
            c.removed_figures.push(id.clone());
        }
    }
    let sa: BTreeSet<&String> = a.schemas.iter().map(|s| &s.schema_id).collect();
    let sb: BTreeSet<&String> = b.schemas.iter().map(|s| &s.schema_id).collect();
    c.added_schemas = sb.difference(&sa).map(|s| s.to_string()).collect();
    c.removed_schemas = sa.difference(&sb).map(|s| s.to_string()).collect();
    c
}
