//! Conversations over a shared catalog and history: message turns run the planning
//! loop and commit the result; gestures propagate along coordination schemas.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    backend_by_name, run_loop, triage, DataContext, Evaluation, IntentBackend, LoopConfig, LoopError, LoopEvent,
    PlanTarget, Route,
};
use crate::bundle::{export_artifact, read_bundle, BundleError};
use crate::catalog::TableCatalog;
use crate::coordination::{propagate, propagation_order, CoordinationError, Propagation, WorkflowTemplate};
use crate::digest::{Digest, DigestBuilder};
use crate::figure::Operation;
use crate::interaction::{gesture_to_predicate, selected_rows, Gesture, InteractionEvent};
use crate::ledger::{ArtifactState, LedgerError, ReplayReport, UserInputRecord};
use crate::predicate::Predicate;
use crate::store::{Conversation, History, Message, MessageArtifact, Role};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("unprocessable: {0}")]
    Unprocessable(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl SessionError {
    pub fn status(&self) -> u16 {
        match self {
            SessionError::NotFound(_) => 404,
            SessionError::BadRequest(_) => 400,
            SessionError::Unprocessable(_) => 422,
            SessionError::Conflict(_) => 409,
            SessionError::Internal(_) => 500,
        }
    }
}

impl From<LedgerError> for SessionError {
    fn from(e: LedgerError) -> Self {
        match e {
            LedgerError::UnknownVersion(_) | LedgerError::UnknownArtifact(_) => SessionError::NotFound(e.to_string()),
            LedgerError::CycleRejected(_) => SessionError::Conflict(e.to_string()),
            LedgerError::MissingSourceTable(_) | LedgerError::ValidationFailed(_) => {
                SessionError::Unprocessable(e.to_string())
            }
        }
    }
}

impl From<BundleError> for SessionError {
    fn from(e: BundleError) -> Self {
        match e {
            BundleError::UnknownArtifact(_) => SessionError::NotFound(e.to_string()),
            BundleError::Conflict(_) => SessionError::Conflict(e.to_string()),
            _ => SessionError::Unprocessable(e.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    #[serde(default = "default_backend")]
    pub backend: String,
    #[serde(default)]
    pub loop_config: LoopConfig,
}

fn default_backend() -> String {
    "template".into()
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            backend: default_backend(),
            loop_config: LoopConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub backend: String,
    pub artifact_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_version: Option<String>,
    pub figure_ids: Vec<String>,
    pub messages: usize,
    pub loop_config: LoopConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MessageRequest {
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub interaction: Option<InteractionEvent>,
    /// Figure a text-only request refers to; defaults to the newest figure.
    #[serde(default)]
    pub target_figure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    ActionSelected {
        round: usize,
        rank: usize,
        rationale: String,
        actions: Vec<crate::action::Action>,
    },
    ActionResult {
        round: usize,
        rank: usize,
        status: crate::action::StepStatus,
        summary: String,
    },
    Evaluation {
        round: usize,
        rank: usize,
        score: f64,
        rationale: String,
    },
    FigureReady {
        figure_id: String,
        version_id: String,
        operation: Operation,
    },
    Error {
        message: String,
    },
    Done {
        message_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        version_id: Option<String>,
        figure_ids: Vec<String>,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::ActionSelected { .. } => "action_selected",
            EventKind::ActionResult { .. } => "action_result",
            EventKind::Evaluation { .. } => "evaluation",
            EventKind::FigureReady { .. } => "figure_ready",
            EventKind::Error { .. } => "error",
            EventKind::Done { .. } => "done",
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, EventKind::Error { .. } | EventKind::Done { .. })
    }
}

impl From<&LoopEvent> for EventKind {
    fn from(e: &LoopEvent) -> Self {
        match e.clone() {
            LoopEvent::ActionSelected {
                round,
                rank,
                rationale,
                actions,
            } => EventKind::ActionSelected {
                round,
                rank,
                rationale,
                actions,
            },
            LoopEvent::ActionResult {
                round,
                rank,
                status,
                summary,
            } => EventKind::ActionResult {
                round,
                rank,
                status,
                summary,
            },
            LoopEvent::Evaluation {
                round,
                rank,
                score,
                rationale,
            } => EventKind::Evaluation {
                round,
                rank,
                score,
                rationale,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamEvent {
    pub seq: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Numbers events densely from 0.
pub struct Emitter<'a> {
    next: u64,
    sink: &'a mut dyn FnMut(StreamEvent),
}

impl<'a> Emitter<'a> {
    pub fn new(sink: &'a mut dyn FnMut(StreamEvent)) -> Self {
        Self { next: 0, sink }
    }

    pub fn emit(&mut self, kind: EventKind) {
        let seq = self.next;
        self.next += 1;
        (self.sink)(StreamEvent { seq, kind });
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MessageReply {
    pub message_id: String,
    pub user_message_id: String,
    pub route: Route,
    pub text: String,
    pub figure_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<Evaluation>,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Everything a turn needs, captured under the workspace lock.
#[derive(Clone, Debug)]
pub struct PreparedTurn {
    pub session_id: String,
    pub input: UserInputRecord,
    pub state: ArtifactState,
    pub ctx: DataContext,
    pub config: SessionConfig,
    pub catalog: TableCatalog,
}

/// Result of running a turn outside the lock.
#[derive(Clone, Debug)]
pub struct TurnResult {
    pub route: Result<Route, String>,
    pub outcome: Option<Result<crate::agent::LoopOutcome, LoopError>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateStatus {
    Updated,
    Unchanged,
    EmptySelection,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FigureUpdate {
    pub schema_id: String,
    pub figure_id: String,
    pub status: UpdateStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub figure_version: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// Predicate echo for a gesture, plus any coordinated updates it caused.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GestureReply {
    pub figure_id: String,
    pub predicate: Predicate,
    pub predicate_sql: String,
    pub selected_count: usize,
    /// Up to 20 selected row keys, in key order.
    pub sample_keys: Vec<String>,
    pub updates: Vec<FigureUpdate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version_id: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportSummary {
    pub artifact_id: String,
    pub head_version: String,
    pub versions_added: usize,
    pub tables_added: Vec<String>,
}

/// Catalog plus history plus per-session settings.
#[derive(Clone, Debug, Default)]
pub struct Workspace {
    pub catalog: TableCatalog,
    pub history: History,
    pub configs: BTreeMap<String, SessionConfig>,
    /// When set, every timestamp the workspace produces.
    pub fixed_clock: Option<DateTime<Utc>>,
    created: u64,
}

pub fn artifact_id_for(session_id: &str) -> String {
    format!("art-{}", DigestBuilder::new().part(session_id).finish().short(16))
}

impl Workspace {
    pub fn new(catalog: TableCatalog) -> Self {
        Self {
            catalog,
            ..Self::default()
        }
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.fixed_clock.unwrap_or_else(Utc::now)
    }

    pub fn create_session(&mut self, config: SessionConfig) -> Result<String, SessionError> {
        if backend_by_name(&config.backend).is_none() {
            return Err(SessionError::BadRequest(format!("unknown backend `{}`", config.backend)));
        }
        let lc = &config.loop_config;
        if !(0.0..=1.0).contains(&lc.threshold) || lc.beam == 0 || lc.max_depth == 0 {
            return Err(SessionError::BadRequest("loop config out of range".into()));
        }
        self.created += 1;
        let now = self.now();
        let id = loop {
            let d = DigestBuilder::new()
                .part(self.created.to_le_bytes())
                .part(now.timestamp_nanos_opt().unwrap_or(0).to_le_bytes())
                .part(self.history.conversations.len().to_le_bytes())
                .finish();
            let id = format!("s-{}", d.short(16));
            if !self.history.conversations.contains_key(&id) {
                break id;
            }
            self.created += 1;
        };
        self.history.conversations.insert(
            id.clone(),
            Conversation {
                conversation_id: id.clone(),
                created_at: now,
                backend: config.backend.clone(),
                artifact_id: Some(artifact_id_for(&id)),
            },
        );
        self.configs.insert(id.clone(), config);
        Ok(id)
    }

    fn conversation(&self, id: &str) -> Result<&Conversation, SessionError> {
        self.history
            .conversations
            .get(id)
            .ok_or_else(|| SessionError::NotFound(format!("session {id}")))
    }

    fn config_of(&self, id: &str) -> Result<SessionConfig, SessionError> {
        let c = self.conversation(id)?;
        Ok(self.configs.get(id).cloned().unwrap_or_else(|| SessionConfig {
            backend: c.backend.clone(),
            loop_config: LoopConfig::default(),
        }))
    }

    /// Head state of an artifact, or an empty state if nothing is committed yet.
    pub fn head_state(&self, artifact_id: &str) -> Result<ArtifactState, SessionError> {
        match self.history.ledger.head(artifact_id) {
            Some(_) => Ok(self.history.ledger.checkout_head(artifact_id)?),
            None => Ok(ArtifactState::new(artifact_id)),
        }
    }

    pub fn session_info(&self, id: &str) -> Result<SessionInfo, SessionError> {
        let c = self.conversation(id)?;
        let artifact_id = c.artifact_id.clone().unwrap_or_else(|| artifact_id_for(id));
        let state = self.head_state(&artifact_id)?;
        Ok(SessionInfo {
            session_id: id.to_string(),
            backend: c.backend.clone(),
            head_version: self.history.ledger.head(&artifact_id).map(str::to_string),
            artifact_id,
            figure_ids: state.figure_ids,
            messages: self.history.messages_of(id).len(),
            loop_config: self.config_of(id)?.loop_config,
        })
    }

    /// Artifact whose head holds `figure_id`.
    pub fn locate_figure(&self, figure_id: &str) -> Option<ArtifactState> {
        self.history.ledger.artifacts.keys().find_map(|a| {
            let s = self.history.ledger.checkout_head(a).ok()?;
            s.figure(figure_id).is_some().then_some(s)
        })
    }

    /// Validates a request and snapshots what the loop needs. Fails without side effects.
    pub fn prepare_message(&self, session_id: &str, req: MessageRequest) -> Result<PreparedTurn, SessionError> {
        let conv = self.conversation(session_id)?;
        let config = self.config_of(session_id)?;
        let artifact_id = conv.artifact_id.clone().unwrap_or_else(|| artifact_id_for(session_id));
        let state = self.head_state(&artifact_id)?;
        let text = req.text.filter(|t| !t.trim().is_empty());
        if text.is_none() && req.interaction.is_none() {
            return Err(SessionError::BadRequest("message needs text or an interaction".into()));
        }
        if let Some(t) = &text {
            if t.len() > 4000 {
                return Err(SessionError::BadRequest("message text too long".into()));
            }
        }
        if let Some(ev) = &req.interaction {
            if state.figure(&ev.figure_id).is_none() {
                return Err(SessionError::NotFound(format!("figure {}", ev.figure_id)));
            }
            ev.gesture
                .check_bounds()
                .map_err(|e| SessionError::Unprocessable(e.to_string()))?;
        }
        if let Some(f) = &req.target_figure {
            if state.figure(f).is_none() {
                return Err(SessionError::NotFound(format!("figure {f}")));
            }
        }
        let input = UserInputRecord::new(text, req.interaction, self.now());
        let mut ctx = DataContext::for_state(&state, req.target_figure.as_deref());
        for m in self.history.messages_of(session_id) {
            if let Some(t) = &m.text {
                ctx.push_turn(t.clone());
            }
        }
        Ok(PreparedTurn {
            session_id: session_id.to_string(),
            input,
            state,
            ctx,
            config,
            catalog: self.catalog.clone(),
        })
    }

    /// Applies a finished turn: commits the winning state, stores both messages and
    /// emits the closing events.
    pub fn finish_message(
        &mut self,
        turn: PreparedTurn,
        result: TurnResult,
        em: &mut Emitter<'_>,
    ) -> Result<MessageReply, SessionError> {
        let at = turn.input.at;
        let user_id = self.history.push_message(Message {
            message_id: String::new(),
            conversation_id: turn.session_id.clone(),
            seq: 0,
            role: Role::User,
            text: turn.input.raw_text.clone(),
            interaction: turn.input.interaction.clone(),
            user_input_id: Some(turn.input.id.clone()),
            figure_ids: vec![],
            created_at: at,
        });
        let mut reply = MessageReply {
            message_id: String::new(),
            user_message_id: user_id.clone(),
            route: Route::Execute,
            text: String::new(),
            figure_ids: vec![],
            version_id: None,
            evaluation: None,
            converged: false,
            error: None,
        };
        match result.route {
            Err(e) => {
                reply.error = Some(e.clone());
                reply.text = format!("The intent backend failed: {e}");
            }
            Ok(Route::Decompose(items)) => {
                reply.text = format!("This question breaks into steps:\n{}", numbered(&items));
                reply.route = Route::Decompose(items);
            }
            Ok(Route::Recommend(items)) => {
                reply.text = format!("Possible next steps:\n{}", numbered(&items));
                reply.route = Route::Recommend(items);
            }
            Ok(Route::Execute) => match result.outcome {
                None => reply.error = Some("loop did not run".into()),
                Some(Err(e)) => {
                    reply.error = Some(e.to_string());
                    reply.text = format!("No figure was produced: {e}.");
                }
                Some(Ok(out)) => {
                    let mut state = turn.state.clone();
                    let fig = out.best.figure.clone();
                    let fid = fig.figure_id.clone();
                    if let PlanTarget::Manipulate { figure_id } = &out.best.candidate.target {
                        rebind_templates(&mut state, figure_id, &fig);
                    }
                    state.put_figure(fig.clone());
                    if let Some(schema) = out.best.schema.clone() {
                        state.schemas.push(schema);
                    }
                    match self.history.ledger.commit(&state, turn.input.clone()) {
                        Ok(c) => {
                            em.emit(EventKind::FigureReady {
                                figure_id: fid.clone(),
                                version_id: fig.meta.version_id.clone(),
                                operation: fig.meta.operation,
                            });
                            reply.version_id = Some(c.version_id);
                            reply.figure_ids = vec![fid];
                            reply.text = crate::chart::summarize_insight(&fig.visualization, &fig.data);
                            reply.converged = out.converged;
                            reply.evaluation = Some(out.evaluation);
                        }
                        Err(e) => {
                            reply.error = Some(e.to_string());
                            reply.text = format!("The result could not be committed: {e}.");
                        }
                    }
                }
            },
        }
        let asst_id = self.history.push_message(Message {
            message_id: String::new(),
            conversation_id: turn.session_id.clone(),
            seq: 0,
            role: Role::Assistant,
            text: Some(reply.text.clone()),
            interaction: None,
            user_input_id: Some(turn.input.id.clone()),
            figure_ids: reply.figure_ids.clone(),
            created_at: at,
        });
        if let Some(v) = &reply.version_id {
            let artifact_id = turn.state.artifact_id.clone();
            for m in [&user_id, &asst_id] {
                self.history.message_artifact.insert(MessageArtifact {
                    message_id: m.clone(),
                    artifact_id: artifact_id.clone(),
                    version_id: v.clone(),
                });
            }
        }
        reply.message_id = asst_id.clone();
        match &reply.error {
            Some(e) => em.emit(EventKind::Error { message: e.clone() }),
            None => em.emit(EventKind::Done {
                message_id: asst_id,
                version_id: reply.version_id.clone(),
                figure_ids: reply.figure_ids.clone(),
            }),
        }
        Ok(reply)
    }

    /// Prepare, run and finish in one call.
    pub fn post_message(
        &mut self,
        session_id: &str,
        req: MessageRequest,
        sink: &mut dyn FnMut(StreamEvent),
    ) -> Result<MessageReply, SessionError> {
        let turn = self.prepare_message(session_id, req)?;
        let mut em = Emitter::new(sink);
        let result = run_turn(&turn, &mut em);
        self.finish_message(turn, result, &mut em)
    }

    /// Echoes the predicate a gesture selects and re-runs every coordination schema
    /// downstream of the figure. Commits once if anything changed.
    pub fn post_gesture(&mut self, ev: InteractionEvent) -> Result<GestureReply, SessionError> {
        let mut state = self
            .locate_figure(&ev.figure_id)
            .ok_or_else(|| SessionError::NotFound(format!("figure {}", ev.figure_id)))?;
        ev.gesture
            .check_bounds()
            .map_err(|e| SessionError::Unprocessable(e.to_string()))?;
        let fig = state.figure(&ev.figure_id).expect("located").clone();
        let map = fig.mark_map().map_err(|e| SessionError::Internal(e.to_string()))?;
        let predicate = gesture_to_predicate(&ev.gesture, &map, &fig.visualization, &fig.data)
            .map_err(|e| SessionError::Unprocessable(e.to_string()))?;
        let rows = selected_rows(&fig.data, &predicate);
        let mut reply = GestureReply {
            figure_id: ev.figure_id.clone(),
            predicate_sql: predicate.to_sql(),
            predicate,
            selected_count: rows.len(),
            sample_keys: rows.iter().take(20).map(|k| k.0.clone()).collect(),
            updates: vec![],
            version_id: None,
        };
        if matches!(ev.gesture, Gesture::Hover { .. }) || state.schemas_from(&ev.figure_id).is_empty() {
            return Ok(reply);
        }
        let order = propagation_order(&state.schemas).map_err(|e| SessionError::Internal(e.to_string()))?;
        let mut changed: std::collections::BTreeSet<String> = std::collections::BTreeSet::new();
        let at = ev.at;
        for sid in order {
            let i = state.schemas.iter().position(|s| s.schema_id == sid).expect("ordered id");
            let schema = state.schemas[i].clone();
            let (gesture, direct) = if schema.source_figure == ev.figure_id {
                (ev.gesture.clone(), true)
            } else if changed.contains(&schema.source_figure) {
                (schema.last_gesture.clone(), false)
            } else {
                continue;
            };
            let source = state.figure(&schema.source_figure).expect("member").clone();
            let target = state.figure(&schema.target_figure).expect("member").clone();
            let mut update = FigureUpdate {
                schema_id: sid.clone(),
                figure_id: schema.target_figure.clone(),
                status: UpdateStatus::Unchanged,
                figure_version: None,
                detail: None,
            };
            match propagate(&schema, &source, &target, &gesture, &self.catalog, at) {
                Ok(Propagation::Updated { figure, predicate }) => {
                    update.status = UpdateStatus::Updated;
                    update.figure_version = Some(figure.meta.version_id.clone());
                    changed.insert(figure.figure_id.clone());
                    state.put_figure(figure);
                    let s = &mut state.schemas[i];
                    if direct {
                        s.last_gesture = gesture;
                    }
                    s.last_predicate = predicate;
                }
                Ok(Propagation::Unchanged { .. }) => {
                    update.figure_version = Some(target.meta.version_id.clone());
                }
                Err(CoordinationError::EmptySelection) => {
                    update.status = UpdateStatus::EmptySelection;
                    update.detail = Some("the selection matches no rows".into());
                }
                Err(e) => {
                    update.status = UpdateStatus::Failed;
                    update.detail = Some(e.to_string());
                }
            }
            reply.updates.push(update);
        }
        if !changed.is_empty() {
            let input = UserInputRecord::new(None, Some(ev.clone()), at);
            let c = self.history.ledger.commit(&state, input.clone())?;
            reply.version_id = Some(c.version_id.clone());
            if let Some(conv) = self
                .history
                .conversations
                .values()
                .find(|c| c.artifact_id.as_deref() == Some(state.artifact_id.as_str()))
                .map(|c| c.conversation_id.clone())
            {
                let mid = self.history.push_message(Message {
                    message_id: String::new(),
                    conversation_id: conv,
                    seq: 0,
                    role: Role::User,
                    text: None,
                    interaction: Some(ev),
                    user_input_id: Some(input.id),
                    figure_ids: changed.into_iter().collect(),
                    created_at: at,
                });
                self.history.message_artifact.insert(MessageArtifact {
                    message_id: mid,
                    artifact_id: state.artifact_id.clone(),
                    version_id: c.version_id,
                });
            }
        }
        Ok(reply)
    }

    /// Writes history tables under `dir/history` and the catalog under `dir/catalog`.
    pub fn save(&self, dir: &std::path::Path) -> Result<(), SessionError> {
        self.history
            .save(&dir.join("history"))
            .map_err(|e| SessionError::Internal(e.to_string()))?;
        crate::bundle::save_catalog(&self.catalog, &dir.join("catalog")).map_err(|e| SessionError::Internal(e.to_string()))
    }

    /// Loads what `save` wrote. A directory without a saved catalog gets `catalog`.
    pub fn open(dir: &std::path::Path, catalog: TableCatalog) -> Result<Self, SessionError> {
        let internal = |e: String| SessionError::Internal(e);
        let catalog = if dir.join("catalog/manifest.json").exists() {
            crate::bundle::load_catalog(&dir.join("catalog")).map_err(|e| internal(e.to_string()))?
        } else {
            catalog
        };
        let history = if dir.join("history").exists() {
            History::load(&dir.join("history")).map_err(|e| internal(e.to_string()))?
        } else {
            History::new()
        };
        Ok(Self {
            catalog,
            history,
            ..Self::default()
        })
    }

    pub fn replay(&self, version_id: &str) -> Result<ReplayReport, SessionError> {
        Ok(self.history.ledger.replay_artifact(version_id, &self.catalog)?)
    }

    pub fn export(&self, artifact_id: &str) -> Result<Vec<u8>, SessionError> {
        if !self.history.ledger.artifacts.contains_key(artifact_id) {
            return Err(SessionError::NotFound(format!("artifact {artifact_id}")));
        }
        Ok(export_artifact(&self.history, artifact_id, &self.catalog)?)
    }

    /// Merges a bundle: its source tables (which must agree with any same-named table
    /// already loaded), versions, edges, conversations and messages. The artifact head
    /// moves forward only when the imported head descends from the current one.
    pub fn import(&mut self, bytes: &[u8]) -> Result<ImportSummary, SessionError> {
        let b = read_bundle(bytes)?;
        if let Some((t, e)) = b.table_errors.iter().next() {
            return Err(SessionError::Unprocessable(format!("table {t}: {e}")));
        }
        let mut catalog = self.catalog.clone();
        let mut tables_added = Vec::new();
        for e in &b.manifest.tables {
            let theirs = b.catalog.table(&e.id).expect("loaded without error");
            match catalog.table(&e.id) {
                Some(mine) => {
                    if Digest::of(mine.to_csv().as_bytes()) != e.digest {
                        return Err(SessionError::Conflict(format!("table {} differs from the loaded copy", e.id)));
                    }
                }
                None => {
                    catalog
                        .register_table(e.id.clone(), theirs.schema.clone(), theirs.rows.clone())
                        .map_err(|err| SessionError::Unprocessable(err.to_string()))?;
                    tables_added.push(e.id.clone());
                }
            }
        }
        let aid = b.header.artifact_id.clone();
        let mut merged = self.history.clone();
        let mut added = 0;
        for (id, v) in &b.history.ledger.versions {
            if !merged.ledger.versions.contains_key(id) {
                merged.ledger.versions.insert(id.clone(), v.clone());
                added += 1;
            }
        }
        merged.ledger.edges.extend(b.history.ledger.edges.iter().cloned());
        let theirs = &b.history.ledger.artifacts[&aid];
        match merged.ledger.artifacts.get(&aid).map(|a| a.head_version.clone()) {
            None => {
                merged.ledger.artifacts.insert(aid.clone(), theirs.clone());
            }
            Some(mine) if mine == theirs.head_version => {}
            Some(mine) => {
                if merged.ledger.is_ancestor(&mine, &theirs.head_version) {
                    merged.ledger.artifacts.get_mut(&aid).expect("present").head_version = theirs.head_version.clone();
                } else if !merged.ledger.is_ancestor(&theirs.head_version, &mine) {
                    return Err(SessionError::Conflict(format!(
                        "artifact {aid} has diverged: local head {mine}, bundle head {}",
                        theirs.head_version
                    )));
                }
            }
        }
        for (id, c) in &b.history.conversations {
            merged.conversations.entry(id.clone()).or_insert_with(|| c.clone());
        }
        for m in &b.history.messages {
            if !merged.messages.iter().any(|x| x.message_id == m.message_id) {
                merged.messages.push(m.clone());
            }
        }
        merged.message_artifact.extend(b.history.message_artifact.iter().cloned());
        merged.ledger.check_dag().map_err(SessionError::Conflict)?;
        let head = merged.ledger.artifacts[&aid].head_version.clone();
        self.history = merged;
        self.catalog = catalog;
        Ok(ImportSummary {
            artifact_id: aid,
            head_version: head,
            versions_added: added,
            tables_added,
        })
    }
}

fn numbered(items: &[String]) -> String {
    items
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {s}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

/// After a manipulation of a coordination target, its schemas replay the new program.
fn rebind_templates(state: &mut ArtifactState, figure_id: &str, fig: &crate::figure::FigureState) {
    let actions = fig.actions();
    for s in state.schemas.iter_mut().filter(|s| s.target_figure == figure_id) {
        let hole = s.workflow_template.hole;
        if hole < actions.len() {
            let mut steps = actions.clone();
            steps[hole] = crate::action::Action::FilterRows {
                predicate: Predicate::default(),
            };
            s.workflow_template = WorkflowTemplate { steps, hole };
        }
    }
}

/// Triage and the planning loop; touches nothing shared.
pub fn run_turn(turn: &PreparedTurn, em: &mut Emitter<'_>) -> TurnResult {
    let Some(backend) = backend_by_name(&turn.config.backend) else {
        return TurnResult {
            route: Err(format!("unknown backend `{}`", turn.config.backend)),
            outcome: None,
        };
    };
    run_turn_with(turn, backend.as_ref(), em)
}

pub fn run_turn_with(turn: &PreparedTurn, backend: &dyn IntentBackend, em: &mut Emitter<'_>) -> TurnResult {
    let schema = turn.catalog.schema();
    let route = match triage(&turn.input, &turn.ctx, &schema, backend) {
        Ok(r) => r,
        Err(e) => {
            return TurnResult {
                route: Err(e.to_string()),
                outcome: None,
            }
        }
    };
    if route != Route::Execute {
        return TurnResult {
            route: Ok(route),
            outcome: None,
        };
    }
    let mut forward = |e: &LoopEvent| em.emit(EventKind::from(e));
    let outcome = run_loop(
        &turn.input,
        &turn.state,
        &turn.catalog,
        backend,
        turn.ctx.clone(),
        &turn.config.loop_config,
        &mut forward,
    );
    TurnResult {
        route: Ok(Route::Execute),
        outcome: Some(outcome),
    }
}
