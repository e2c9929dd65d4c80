//! Manipulating a figure in place and extending a new figure from a selection.

use chrono::{DateTime, Utc};
use thiserror::Error;

use crate::action::{Action, ProvenanceProgram};
use crate::catalog::{CatalogSchema, TableCatalog};
use crate::compile::normalize_data_steps;
use crate::figure::{assemble_figure, execute_actions, BuildError, Executed, FigureState, Operation, VersionInfo};
use crate::interaction::{gesture_to_predicate, selected_rows, Gesture, InteractionError, InteractionEvent};
use crate::predicate::Predicate;
use crate::value::ROW_KEY_COLUMN;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExploreError {
    #[error("{0} is not allowed here")]
    DisallowedAction(&'static str),
    #[error("the selection matches no rows")]
    EmptySelection,
    #[error(transparent)]
    Interaction(#[from] InteractionError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error("source figure has no data steps")]
    NoSourceProgram,
}

fn describe_steps(steps: &[Action]) -> String {
    if steps.is_empty() {
        return "no-op".into();
    }
    steps.iter().map(Action::describe).collect::<Vec<_>>().join("; ")
}

/// Appends `steps` to a figure's program and re-executes, producing its next version.
/// Existing program records are kept as they are.
pub fn apply_manipulation(
    fig: &FigureState,
    steps: &[Action],
    catalog: &TableCatalog,
    at: DateTime<Utc>,
) -> Result<FigureState, ExploreError> {
    if let Some(bad) = steps.iter().find(|a| !a.is_manipulation()) {
        return Err(ExploreError::DisallowedAction(bad.kind()));
    }
    let mut actions = fig.actions();
    let old = actions.len();
    actions.extend(steps.iter().cloned());
    let exec = execute_actions(&actions, catalog)?;
    let mut records = fig.code.steps.clone();
    records.extend(exec.program.steps.into_iter().skip(old));
    let exec = Executed {
        program: ProvenanceProgram { steps: records },
        ..exec
    };
    Ok(assemble_figure(
        exec,
        VersionInfo {
            figure_id: fig.figure_id.clone(),
            artifact_id: fig.meta.artifact_id.clone(),
            parent_version: Some(fig.meta.version_id.clone()),
            operation: Operation::Manipulate,
            description: describe_steps(steps),
            created_at: at,
        },
    ))
}

/// Data steps of `fig` that read raw rows: the table selection and joins.
fn backbone(actions: &[Action]) -> Vec<Action> {
    actions
        .iter()
        .filter(|a| matches!(a, Action::SelectTable { .. } | Action::JoinTables { .. }))
        .cloned()
        .collect()
}

/// The program prefix a selection on `source` is replayed over. When every predicate
/// column exists in the source's raw rows the selection is applied to those rows
/// (dropping the source's own filters and aggregation); otherwise it applies to the
/// source's full data pipeline.
pub fn selection_prefix(source: &FigureState, predicate: &Predicate, catalog: &CatalogSchema) -> Vec<Action> {
    let actions = source.actions();
    let base = backbone(&actions);
    let numbered: Vec<(usize, Action)> = base.iter().cloned().enumerate().collect();
    let aggregated = actions.iter().any(|a| matches!(a, Action::Aggregate { .. }));
    if let Ok(n) = normalize_data_steps(&numbered, catalog) {
        let fits = predicate.columns().iter().all(|c| {
            if c == ROW_KEY_COLUMN {
                !aggregated
            } else {
                n.schema.index_of(c).is_some()
            }
        });
        if fits {
            return base;
        }
    }
    actions.into_iter().filter(Action::is_data_step).collect()
}

/// `prefix`, then the selection filter, then `steps` (minus a redundant leading
/// select_table of the same table). Returns the program and the filter's index.
pub fn extension_program(prefix: Vec<Action>, predicate: &Predicate, steps: &[Action]) -> (Vec<Action>, usize) {
    let mut program = prefix;
    let hole = program.len();
    program.push(Action::FilterRows {
        predicate: predicate.clone(),
    });
    let skip = match (steps.first(), program.first()) {
        (Some(Action::SelectTable { table: a }), Some(Action::SelectTable { table: b })) if a == b => 1,
        _ => 0,
    };
    program.extend(steps.iter().skip(skip).cloned());
    (program, hole)
}

/// Result of extending a figure from a selection.
#[derive(Clone, Debug, PartialEq)]
pub struct Extension {
    pub figure: FigureState,
    pub predicate: Predicate,
    /// Index of the selection filter in the new figure's program.
    pub selection_index: usize,
    pub gesture: Gesture,
}

/// Builds a new figure from the rows a gesture selects on `source`, followed by `steps`.
pub fn extend_from_selection(
    source: &FigureState,
    ev: &InteractionEvent,
    steps: &[Action],
    catalog: &TableCatalog,
    new_figure_id: &str,
) -> Result<Extension, ExploreError> {
    if steps.iter().skip(1).any(|a| matches!(a, Action::SelectTable { .. })) {
        return Err(ExploreError::DisallowedAction("select_table"));
    }
    let map = source.mark_map().map_err(BuildError::from)?;
    if ev.figure_id != source.figure_id {
        return Err(InteractionError::FigureMismatch {
            event: ev.figure_id.clone(),
            map: source.figure_id.clone(),
        }
        .into());
    }
    let predicate = gesture_to_predicate(&ev.gesture, &map, &source.visualization, &source.data)?;
    if selected_rows(&source.data, &predicate).is_empty() {
        return Err(ExploreError::EmptySelection);
    }
    let prefix = selection_prefix(source, &predicate, &catalog.schema());
    if prefix.is_empty() {
        return Err(ExploreError::NoSourceProgram);
    }
    let (program, hole) = extension_program(prefix, &predicate, steps);
    let exec = execute_actions(&program, catalog)?;
    let figure = assemble_figure(
        exec,
        VersionInfo {
            figure_id: new_figure_id.to_string(),
            artifact_id: source.meta.artifact_id.clone(),
            parent_version: None,
            operation: Operation::Extend,
            description: format!("extend {} where {}: {}", source.figure_id, predicate, describe_steps(steps)),
            created_at: ev.at,
        },
    );
    Ok(Extension {
        figure,
        predicate,
        selection_index: hole,
        gesture: ev.gesture.clone(),
    })
}
