//! Coordination schemas: stored workflows that re-run a target figure when the
//! selection on its source changes.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::Action;
use crate::catalog::TableCatalog;
use crate::chart::{Channel, InteractionKind};
use crate::digest::DigestBuilder;
use crate::explore::{extension_program, selection_prefix, Extension};
use crate::figure::{assemble_figure, execute_actions, BuildError, FigureState, Operation, VersionInfo};
use crate::interaction::{gesture_to_predicate, selected_rows, Gesture, InteractionError};
use crate::predicate::Predicate;

/// The target program with its selection filter left open.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkflowTemplate {
    /// Program steps; `steps[hole]` is a placeholder filter.
    pub steps: Vec<Action>,
    pub hole: usize,
}

impl WorkflowTemplate {
    pub fn fill(&self, predicate: &Predicate) -> Vec<Action> {
        let mut s = self.steps.clone();
        s[self.hole] = Action::FilterRows {
            predicate: predicate.clone(),
        };
        s
    }

    /// Steps after the hole: the analysis applied to the selection.
    pub fn downstream(&self) -> &[Action] {
        &self.steps[self.hole + 1..]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoleBinding {
    pub channels: Vec<Channel>,
    pub columns: BTreeSet<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordinationSchema {
    pub schema_id: String,
    pub source_figure: String,
    pub target_figure: String,
    pub trigger: InteractionKind,
    pub workflow_template: WorkflowTemplate,
    pub hole_binding: HoleBinding,
    /// The gesture most recently propagated along this edge.
    pub last_gesture: Gesture,
    pub last_predicate: Predicate,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoordinationError {
    #[error("template extraction failed: {0}")]
    TemplateExtractionFailed(String),
    #[error("gesture kind {got} does not match trigger {expected}")]
    KindMismatch { expected: &'static str, got: &'static str },
    #[error("the selection matches no rows")]
    EmptySelection,
    #[error("selection binds columns {got:?}, schema is bound to {expected:?}")]
    BindingMismatch {
        expected: BTreeSet<String>,
        got: BTreeSet<String>,
    },
    #[error("coordination cycle through figure `{0}`")]
    CycleDetected(String),
    #[error(transparent)]
    Interaction(#[from] InteractionError),
    #[error(transparent)]
    Build(#[from] BuildError),
}

fn gesture_channels(g: &Gesture, source: &FigureState) -> Vec<Channel> {
    match g {
        Gesture::Brush1d { channel, .. } => vec![*channel],
        Gesture::Brush2d { .. } => vec![Channel::X, Channel::Y],
        Gesture::Click { .. } | Gesture::Hover { .. } => source.visualization.encodings.keys().copied().collect(),
    }
}

fn schema_id(source: &str, target: &str, template: &WorkflowTemplate) -> String {
    let d = DigestBuilder::new()
        .part(b"provfig.coordination.v1")
        .part(source)
        .part(target)
        .part(serde_json::to_vec(template).expect("template json"))
        .finish();
    format!("cs-{}", d.short(20))
}

/// Builds the schema linking `source` to a target made by `extend_from_selection`.
/// Verifies that filling the hole with the original predicate reproduces the target.
pub fn record_schema(
    source: &FigureState,
    target: &FigureState,
    ext: &Extension,
    catalog: &TableCatalog,
) -> Result<CoordinationSchema, CoordinationError> {
    let actions = target.actions();
    let hole = ext.selection_index;
    match actions.get(hole) {
        Some(Action::FilterRows { predicate }) if *predicate == ext.predicate => {}
        _ => {
            return Err(CoordinationError::TemplateExtractionFailed(
                "target program has no selection-derived filter step".into(),
            ))
        }
    }
    let mut steps = actions;
    steps[hole] = Action::FilterRows {
        predicate: Predicate::default(),
    };
    let template = WorkflowTemplate { steps, hole };
    let check = execute_actions(&template.fill(&ext.predicate), catalog)?;
    if check.data.digest != target.data.digest {
        return Err(CoordinationError::TemplateExtractionFailed(
            "template does not reproduce the target".into(),
        ));
    }
    Ok(CoordinationSchema {
        schema_id: schema_id(&source.figure_id, &target.figure_id, &template),
        source_figure: source.figure_id.clone(),
        target_figure: target.figure_id.clone(),
        trigger: ext.gesture.interaction_kind(),
        hole_binding: HoleBinding {
            channels: gesture_channels(&ext.gesture, source),
            columns: ext.predicate.columns(),
        },
        workflow_template: template,
        last_gesture: ext.gesture.clone(),
        last_predicate: ext.predicate.clone(),
    })
}

/// Point and 1-D interval selections are interchangeable; otherwise kinds must agree.
pub fn trigger_compatible(trigger: InteractionKind, got: InteractionKind) -> bool {
    use InteractionKind::*;
    trigger == got && got != Hover || matches!((trigger, got), (SingleSelect, Interval1d) | (Interval1d, SingleSelect))
}

#[derive(Clone, Debug, PartialEq)]
pub enum Propagation {
    /// A new target version.
    Updated { figure: FigureState, predicate: Predicate },
    /// The gesture reproduces the target's current content; no version is created.
    Unchanged { predicate: Predicate },
}

/// Re-runs the schema's workflow for `gesture` on the current `source`, producing the
/// next version of `target`.
pub fn propagate(
    schema: &CoordinationSchema,
    source: &FigureState,
    target: &FigureState,
    gesture: &Gesture,
    catalog: &TableCatalog,
    at: DateTime<Utc>,
) -> Result<Propagation, CoordinationError> {
    let kind = gesture.interaction_kind();
    if !trigger_compatible(schema.trigger, kind) {
        return Err(CoordinationError::KindMismatch {
            expected: schema.trigger.as_str(),
            got: kind.as_str(),
        });
    }
    let map = source.mark_map().map_err(BuildError::from)?;
    let predicate = gesture_to_predicate(gesture, &map, &source.visualization, &source.data)?;
    if predicate.columns() != schema.hole_binding.columns {
        return Err(CoordinationError::BindingMismatch {
            expected: schema.hole_binding.columns.clone(),
            got: predicate.columns(),
        });
    }
    if selected_rows(&source.data, &predicate).is_empty() {
        return Err(CoordinationError::EmptySelection);
    }
    let prefix = selection_prefix(source, &predicate, &catalog.schema());
    let (program, _) = extension_program(prefix, &predicate, schema.workflow_template.downstream());
    let exec = execute_actions(&program, catalog)?;
    if exec.data.digest == target.data.digest && exec.chart == target.visualization && program == target.actions() {
        return Ok(Propagation::Unchanged { predicate });
    }
    let figure = assemble_figure(
        exec,
        VersionInfo {
            figure_id: target.figure_id.clone(),
            artifact_id: target.meta.artifact_id.clone(),
            parent_version: Some(target.meta.version_id.clone()),
            operation: Operation::CoordinateUpdate,
            description: format!("coordinate update via {} where {}", schema.schema_id, predicate),
            created_at: at,
        },
    );
    Ok(Propagation::Updated { figure, predicate })
}

/// Topological order over schemas: a schema comes after every schema targeting its
/// source. Ties go to the smaller schema id.
pub fn propagation_order(schemas: &[CoordinationSchema]) -> Result<Vec<String>, CoordinationError> {
    let ids: BTreeMap<&str, &CoordinationSchema> = schemas.iter().map(|s| (s.schema_id.as_str(), s)).collect();
    let mut indegree: BTreeMap<&str, usize> = ids.keys().map(|k| (*k, 0)).collect();
    for s in ids.values() {
        for t in ids.values() {
            if t.target_figure == s.source_figure {
                *indegree.get_mut(s.schema_id.as_str()).expect("known") += 1;
            }
        }
    }
    let mut ready: BTreeSet<&str> = indegree.iter().filter(|(_, d)| **d == 0).map(|(k, _)| *k).collect();
    let mut out = Vec::new();
    while let Some(id) = ready.pop_first() {
        out.push(id.to_string());
        let done = ids[id];
        for s in ids.values() {
            if s.source_figure == done.target_figure {
                let d = indegree.get_mut(s.schema_id.as_str()).expect("known");
                *d -= 1;
                if *d == 0 {
                    ready.insert(s.schema_id.as_str());
                }
            }
        }
    }
    if out.len() != ids.len() {
        let stuck = indegree
            .iter()
            .find(|(_, d)| **d > 0)
            .map(|(k, _)| ids[k].source_figure.clone())
            .unwrap_or_default();
        return Err(CoordinationError::CycleDetected(stuck));
    }
    Ok(out)
}

/// True if adding an edge `source → target` would close a cycle.
pub fn would_cycle(schemas: &[CoordinationSchema], source: &str, target: &str) -> bool {
    if source == target {
        return true;
    }
    // Is `source` reachable from `target`?
    let mut stack = vec![target.to_string()];
    let mut seen = BTreeSet::new();
    while let Some(f) = stack.pop() {
        if f == source {
            return true;
        }
        if !seen.insert(f.clone()) {
            continue;
        }
        for s in schemas.iter().filter(|s| s.source_figure == f) {
            stack.push(s.target_figure.clone());
        }
    }
    false
}
