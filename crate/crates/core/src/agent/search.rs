//! Budgeted beam search over executed candidates.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BackendError, Candidate, ContextRecord, DataContext, Evaluation, IntentBackend, PlanTarget};
use crate::action::{validate_sequence, Action, ActionRecord, StepStatus};
use crate::catalog::TableCatalog;
use crate::coordination::{record_schema, would_cycle, CoordinationSchema};
use crate::digest::DigestBuilder;
use crate::explore::{apply_manipulation, extend_from_selection, extension_program, selection_prefix};
use crate::figure::{assemble_figure, execute_actions, FigureState, Operation, VersionInfo};
use crate::interaction::gesture_to_predicate;
use crate::ledger::{ArtifactState, UserInputRecord};
use crate::predicate::Predicate;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    /// Score at which the loop stops.
    pub threshold: f64,
    /// Times a candidate may fail before it is no longer tried.
    pub max_retries: usize,
    /// Maximum rounds.
    pub max_depth: usize,
    /// Candidates executed per round.
    pub beam: usize,
    pub budget: Budget,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            threshold: 0.7,
            max_retries: 2,
            max_depth: 8,
            beam: 3,
            budget: Budget::default(),
        }
    }
}

/// Work allowance: each proposal call and each candidate execution costs one unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub units: u64,
}

impl Default for Budget {
    fn default() -> Self {
        Self { units: 64 }
    }
}

/// Progress notifications, in the order they happen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LoopEvent {
    ActionSelected {
        round: usize,
        rank: usize,
        rationale: String,
        actions: Vec<Action>,
    },
    ActionResult {
        round: usize,
        rank: usize,
        status: StepStatus,
        summary: String,
    },
    Evaluation {
        round: usize,
        rank: usize,
        score: f64,
        rationale: String,
    },
}

/// One executed (or rejected) candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub round: usize,
    pub rank: usize,
    pub candidate: Candidate,
    pub status: StepStatus,
    pub records: Vec<ActionRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<Evaluation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Catalog queries run while executing this candidate.
    pub queries: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub entries: Vec<TraceEntry>,
    /// Backend errors by round.
    #[serde(default)]
    pub backend_errors: Vec<(usize, String)>,
}

/// A scored candidate in the search tree. Round `r` nodes hang off the best node of
/// round `r - 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchNode {
    pub id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<usize>,
    pub round: usize,
    pub rank: usize,
    pub trace_entry: usize,
    pub score: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchTree {
    pub nodes: Vec<SearchNode>,
}

/// A candidate that ran to completion.
#[derive(Clone, Debug, PartialEq)]
pub struct ExecutedCandidate {
    pub candidate: Candidate,
    pub figure: FigureState,
    /// Set for extensions: the schema linking source and new figure.
    pub schema: Option<CoordinationSchema>,
    pub predicate: Option<Predicate>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoopOutcome {
    pub best: ExecutedCandidate,
    pub evaluation: Evaluation,
    /// True if the best score reached the threshold.
    pub converged: bool,
    pub trace: Trace,
    pub tree: SearchTree,
    pub spent: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LoopError {
    #[error("budget exhausted before any candidate succeeded")]
    BudgetExhausted { trace: Trace },
    #[error("every candidate failed")]
    AllBranchesFailed { trace: Trace },
    #[error(transparent)]
    Backend(BackendError),
}

impl LoopError {
    pub fn trace(&self) -> Option<&Trace> {
        match self {
            LoopError::BudgetExhausted { trace } | LoopError::AllBranchesFailed { trace } => Some(trace),
            LoopError::Backend(_) => None,
        }
    }
}

fn candidate_key(c: &Candidate) -> String {
    DigestBuilder::new()
        .part(serde_json::to_vec(&c.target).expect("target json"))
        .part(serde_json::to_vec(&c.actions).expect("actions json"))
        .finish()
        .short(24)
}

/// Highest score wins; ties go to the better rank, then the smaller serialization hash.
pub fn select_action<'a>(scored: &'a [(usize, f64, &'a Candidate)]) -> Option<&'a (usize, f64, &'a Candidate)> {
    scored.iter().min_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then(a.0.cmp(&b.0))
            .then_with(|| candidate_key(a.2).cmp(&candidate_key(b.2)))
    })
}

fn failed(index: usize, action: Option<&Action>, msg: &str) -> Vec<ActionRecord> {
    let action = action.cloned().unwrap_or(Action::SelectColumns { columns: vec![] });
    vec![ActionRecord {
        index,
        action,
        generated_query_text: None,
        status: StepStatus::Failed,
        result_digest: None,
        nondeterministic: false,
        error: Some(msg.to_string()),
    }]
}

/// Failure of one candidate: the step records to log and a message.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateFailure {
    pub records: Vec<ActionRecord>,
    pub message: String,
}

fn fail(index: usize, actions: &[Action], msg: impl Into<String>) -> CandidateFailure {
    let message = msg.into();
    CandidateFailure {
        records: failed(index, actions.get(index).or(actions.last()), &message),
        message,
    }
}

fn validate(actions: &[Action], catalog: &TableCatalog) -> Result<(), CandidateFailure> {
    let report = validate_sequence(actions, &catalog.schema());
    match report.violations.first() {
        None => Ok(()),
        Some(v) => Err(fail(v.index, actions, report.messages().join("; "))),
    }
}

/// Validates and runs a candidate against the current artifact state. Nothing is
/// executed when validation fails.
pub fn execute_candidate(
    c: &Candidate,
    state: &ArtifactState,
    catalog: &TableCatalog,
    input: &UserInputRecord,
    at: DateTime<Utc>,
) -> Result<ExecutedCandidate, CandidateFailure> {
    let done = |figure, schema, predicate| ExecutedCandidate {
        candidate: c.clone(),
        figure,
        schema,
        predicate,
    };
    match &c.target {
        PlanTarget::Generate => {
            validate(&c.actions, catalog)?;
            let exec = execute_actions(&c.actions, catalog).map_err(|e| fail(e.step().unwrap_or(0), &c.actions, e.to_string()))?;
            let fig = assemble_figure(
                exec,
                VersionInfo {
                    figure_id: state.next_figure_id(),
                    artifact_id: state.artifact_id.clone(),
                    parent_version: None,
                    operation: Operation::Generate,
                    description: c.rationale.clone(),
                    created_at: at,
                },
            );
            Ok(done(fig, None, None))
        }
        PlanTarget::Manipulate { figure_id } => {
            let fig = state
                .figure(figure_id)
                .ok_or_else(|| fail(0, &c.actions, format!("unknown figure {figure_id}")))?;
            let mut all = fig.actions();
            let offset = all.len();
            all.extend(c.actions.iter().cloned());
            validate(&all, catalog).map_err(|mut f| {
                for r in &mut f.records {
                    r.index = r.index.saturating_sub(offset);
                }
                f
            })?;
            let next = apply_manipulation(fig, &c.actions, catalog, at).map_err(|e| fail(0, &c.actions, e.to_string()))?;
            Ok(done(next, None, None))
        }
        PlanTarget::Extend { source } => {
            let src = state
                .figure(source)
                .ok_or_else(|| fail(0, &c.actions, format!("unknown figure {source}")))?;
            let ev = input
                .interaction
                .as_ref()
                .filter(|ev| ev.figure_id == *source)
                .ok_or_else(|| fail(0, &c.actions, "extension needs a gesture on the source figure"))?;
            let map = src.mark_map().map_err(|e| fail(0, &c.actions, e.to_string()))?;
            let predicate = gesture_to_predicate(&ev.gesture, &map, &src.visualization, &src.data)
                .map_err(|e| fail(0, &c.actions, e.to_string()))?;
            let schema = catalog.schema();
            let (program, _) = extension_program(selection_prefix(src, &predicate, &schema), &predicate, &c.actions);
            validate(&program, catalog)?;
            let new_id = state.next_figure_id();
            if would_cycle(&state.schemas, source, &new_id) {
                return Err(fail(0, &c.actions, "link would close a cycle"));
            }
            let ext = extend_from_selection(src, ev, &c.actions, catalog, &new_id).map_err(|e| fail(0, &c.actions, e.to_string()))?;
            let ext_fig = FigureState {
                meta: crate::figure::FigureMeta {
                    created_at: at,
                    ..ext.figure.meta.clone()
                },
                ..ext.figure.clone()
            };
            let link = record_schema(src, &ext_fig, &ext, catalog).map_err(|e| fail(0, &c.actions, e.to_string()))?;
            Ok(done(ext_fig, Some(link), Some(ext.predicate)))
        }
    }
}

struct Spend {
    left: u64,
    used: u64,
}

impl Spend {
    fn take(&mut self) -> bool {
        if self.left == 0 {
            return false;
        }
        self.left -= 1;
        self.used += 1;
        true
    }
}

/// Runs propose → execute → evaluate rounds until a candidate scores at least the
/// threshold, the depth or budget runs out, or nothing is left to try. Never touches
/// the ledger; the caller commits the winner.
pub fn run_loop(
    input: &UserInputRecord,
    state: &ArtifactState,
    catalog: &TableCatalog,
    backend: &dyn IntentBackend,
    mut ctx: DataContext,
    cfg: &LoopConfig,
    on_event: &mut dyn FnMut(&LoopEvent),
) -> Result<LoopOutcome, LoopError> {
    let schema = catalog.schema();
    let at = input.at;
    let mut trace = Trace::default();
    let mut tree = SearchTree::default();
    let mut spend = Spend {
        left: cfg.budget.units,
        used: 0,
    };
    let mut failures: BTreeMap<String, usize> = BTreeMap::new();
    let mut explored: BTreeSet<String> = BTreeSet::new();
    let mut best: Option<(ExecutedCandidate, Evaluation, usize)> = None;
    let mut parent: Option<usize> = None;
    let mut exhausted = false;

    'rounds: for round in 0..cfg.max_depth.max(1) {
        if !spend.take() {
            exhausted = true;
            break;
        }
        ctx.round = round;
        let proposals = match backend.propose(input, &ctx, &schema) {
            Ok(p) => p,
            Err(e) => {
                trace.backend_errors.push((round, e.to_string()));
                if best.is_none() && trace.entries.is_empty() && round == 0 && matches!(e, BackendError::Unavailable(_)) {
                    return Err(LoopError::Backend(e));
                }
                continue;
            }
        };
        let fresh: Vec<(usize, Candidate)> = proposals
            .into_iter()
            .enumerate()
            .filter(|(_, c)| {
                let k = candidate_key(c);
                !explored.contains(&k) && failures.get(&k).copied().unwrap_or(0) <= cfg.max_retries
            })
            .take(cfg.beam.max(1))
            .collect();
        if fresh.is_empty() {
            break;
        }
        let mut scored: Vec<(usize, f64, usize, ExecutedCandidate, Evaluation)> = Vec::new();
        for (rank, c) in fresh {
            if !spend.take() {
                exhausted = true;
                break;
            }
            on_event(&LoopEvent::ActionSelected {
                round,
                rank,
                rationale: c.rationale.clone(),
                actions: c.actions.clone(),
            });
            let before = catalog.queries_executed();
            let key = candidate_key(&c);
            let entry_index = trace.entries.len();
            match execute_candidate(&c, state, catalog, input, at) {
                Ok(done) => {
                    explored.insert(key);
                    let eval = backend.evaluate(&c, &done.figure, input);
                    let summary = crate::chart::summarize_insight(&done.figure.visualization, &done.figure.data);
                    on_event(&LoopEvent::ActionResult {
                        round,
                        rank,
                        status: StepStatus::Ok,
                        summary: summary.clone(),
                    });
                    on_event(&LoopEvent::Evaluation {
                        round,
                        rank,
                        score: eval.score,
                        rationale: eval.rationale.clone(),
                    });
                    trace.entries.push(TraceEntry {
                        round,
                        rank,
                        candidate: c.clone(),
                        status: StepStatus::Ok,
                        records: done.figure.code.steps.clone(),
                        evaluation: Some(eval.clone()),
                        error: None,
                        queries: catalog.queries_executed() - before,
                    });
                    ctx.push(ContextRecord {
                        trace_entry: entry_index,
                        action_index: c.actions.len().saturating_sub(1),
                        objective: c.rationale.clone(),
                        status: StepStatus::Ok,
                        result_summary: summary,
                        score: Some(eval.score),
                        rationale: eval.rationale.clone(),
                        remaining: eval.remaining_plan.clone(),
                        salience: if eval.score >= cfg.threshold { 3 } else { 2 },
                    });
                    scored.push((rank, eval.score, entry_index, done, eval));
                }
                Err(f) => {
                    *failures.entry(key).or_default() += 1;
                    on_event(&LoopEvent::ActionResult {
                        round,
                        rank,
                        status: StepStatus::Failed,
                        summary: f.message.clone(),
                    });
                    ctx.push(ContextRecord {
                        trace_entry: entry_index,
                        action_index: f.records.first().map(|r| r.index).unwrap_or(0),
                        objective: c.rationale.clone(),
                        status: StepStatus::Failed,
                        result_summary: f.message.clone(),
                        score: None,
                        rationale: String::new(),
                        remaining: None,
                        salience: 1,
                    });
                    trace.entries.push(TraceEntry {
                        round,
                        rank,
                        candidate: c,
                        status: StepStatus::Failed,
                        records: f.records,
                        evaluation: None,
                        error: Some(f.message),
                        queries: catalog.queries_executed() - before,
                    });
                }
            }
        }
        let keyed: Vec<(usize, f64, &Candidate)> = scored.iter().map(|s| (s.0, s.1, &s.3.candidate)).collect();
        let pick = select_action(&keyed).map(|(rank, _, _)| *rank);
        let mut round_best = None;
        for (rank, score, entry, done, eval) in scored {
            let id = tree.nodes.len();
            tree.nodes.push(SearchNode {
                id,
                parent,
                round,
                rank,
                trace_entry: entry,
                score,
            });
            if Some(rank) == pick {
                round_best = Some(id);
                let better = best.as_ref().is_none_or(|(_, e, _)| score > e.score);
                if better {
                    best = Some((done, eval, id));
                }
            }
        }
        if round_best.is_some() {
            parent = round_best;
        }
        if best.as_ref().is_some_and(|(_, e, _)| e.score >= cfg.threshold) {
            break 'rounds;
        }
        if exhausted {
            break;
        }
    }
    match best {
        Some((best, evaluation, _)) => Ok(LoopOutcome {
            converged: evaluation.score >= cfg.threshold,
            best,
            evaluation,
            trace,
            tree,
            spent: spend.used,
        }),
        None if exhausted => Err(LoopError::BudgetExhausted { trace }),
        None => Err(LoopError::AllBranchesFailed { trace }),
    }
}
