//! Figure states: chart, program, data and metadata, plus replay.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{Action, ActionRecord, ProvenanceProgram, StepStatus};
use crate::catalog::TableCatalog;
use crate::chart::{materialize_marks, ChartDoc, ChartError, MarkMap};
use crate::compile::{compile_to_chart, compile_to_query, CompileError};
use crate::digest::{Digest, DigestBuilder};
use crate::engine::{execute_plan, ExecError};
use crate::slice::DataSlice;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    Generate,
    Manipulate,
    Extend,
    CoordinateUpdate,
}

impl Operation {
    pub fn as_str(self) -> &'static str {
        match self {
            Operation::Generate => "generate",
            Operation::Manipulate => "manipulate",
            Operation::Extend => "extend",
            Operation::CoordinateUpdate => "coordinate_update",
        }
    }
}

/// Figure metadata. `created_at` takes no part in equality or version ids.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FigureMeta {
    pub created_at: DateTime<Utc>,
    pub version_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_version: Option<String>,
    pub operation: Operation,
    pub operation_description: String,
    pub artifact_id: String,
}

impl PartialEq for FigureMeta {
    fn eq(&self, o: &Self) -> bool {
        self.version_id == o.version_id
            && self.parent_version == o.parent_version
            && self.operation == o.operation
            && self.operation_description == o.operation_description
            && self.artifact_id == o.artifact_id
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FigureState {
    pub figure_id: String,
    pub visualization: ChartDoc,
    pub code: ProvenanceProgram,
    pub data: DataSlice,
    pub meta: FigureMeta,
}

impl FigureState {
    /// Digest of chart, program and data; the basis of version ids.
    pub fn content_digest(&self) -> Digest {
        content_digest(&self.visualization, &self.code, &self.data)
    }

    pub fn mark_map(&self) -> Result<MarkMap, ChartError> {
        let (_, mut map) = materialize_marks(&self.visualization, &self.data)?;
        map.figure_id = self.figure_id.clone();
        Ok(map)
    }

    pub fn actions(&self) -> Vec<Action> {
        self.code.actions()
    }

    /// Checks the figure invariants: marks resolve to row keys of the data,
    /// mark ids unique, program structure valid.
    pub fn check(&self) -> Result<(), String> {
        let keys = self.data.row_keys();
        let mut ids = std::collections::BTreeSet::new();
        for m in &self.visualization.marks {
            if !ids.insert(&m.mark_id) {
                return Err(format!("duplicate mark id {}", m.mark_id));
            }
            if m.row_keys.is_empty() || !m.row_keys.iter().all(|k| keys.contains(k)) {
                return Err(format!("mark {} does not resolve to data rows", m.mark_id));
            }
        }
        self.code.check_structure()?;
        if self.data.recompute_digest() != self.data.digest {
            return Err("data digest does not match rows".into());
        }
        Ok(())
    }
}

pub fn content_digest(chart: &ChartDoc, code: &ProvenanceProgram, data: &DataSlice) -> Digest {
    DigestBuilder::new()
        .part(b"provfig.figure.v1")
        .part(serde_json::to_vec(chart).expect("chart json"))
        .part(serde_json::to_vec(code).expect("program json"))
        .part(data.digest.0)
        .finish()
}

/// Version id: content plus lineage in the version history; no timestamps.
pub fn figure_version_id(
    figure_id: &str,
    content: Digest,
    parent: Option<&str>,
    operation: Operation,
    description: &str,
    artifact_id: &str,
) -> String {
    let d = DigestBuilder::new()
        .part(b"provfig.figure-version.v1")
        .part(figure_id)
        .part(content.0)
        .part(parent.unwrap_or(""))
        .part(operation.as_str())
        .part(description)
        .part(artifact_id)
        .finish();
    format!("fv-{}", d.short(24))
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BuildError {
    #[error("compile: {0}")]
    Compile(#[from] CompileError),
    #[error("execute: {0}")]
    Exec(#[from] ExecError),
    #[error("chart: {0}")]
    Chart(#[from] ChartError),
}

impl BuildError {
    /// Index of the step to blame, where known.
    pub fn step(&self) -> Option<usize> {
        match self {
            BuildError::Compile(e) => Some(e.index),
            _ => None,
        }
    }
}

/// Output of executing an action sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Executed {
    pub program: ProvenanceProgram,
    pub data: DataSlice,
    pub chart: ChartDoc,
}

/// Compiles and executes `actions`, recording each step with its query text.
pub fn execute_actions(actions: &[Action], catalog: &TableCatalog) -> Result<Executed, BuildError> {
    let compiled = compile_to_query(actions, &catalog.schema())?;
    let data = execute_plan(&compiled.plan, catalog)?;
    let chart = compile_to_chart(actions, &data)?;
    let last_data = actions.iter().rposition(Action::is_data_step);
    let steps = actions
        .iter()
        .enumerate()
        .map(|(i, a)| ActionRecord {
            index: i,
            action: a.clone(),
            generated_query_text: compiled.step_queries.get(&i).cloned(),
            status: StepStatus::Ok,
            result_digest: (Some(i) == last_data).then_some(data.digest),
            nondeterministic: a.is_nondeterministic(),
            error: None,
        })
        .collect();
    Ok(Executed {
        program: ProvenanceProgram { steps },
        data,
        chart,
    })
}

/// Identity and history fields for a new figure version.
#[derive(Clone, Debug)]
pub struct VersionInfo {
    pub figure_id: String,
    pub artifact_id: String,
    pub parent_version: Option<String>,
    pub operation: Operation,
    pub description: String,
    pub created_at: DateTime<Utc>,
}

pub fn assemble_figure(exec: Executed, info: VersionInfo) -> FigureState {
    let content = content_digest(&exec.chart, &exec.program, &exec.data);
    let version_id = figure_version_id(
        &info.figure_id,
        content,
        info.parent_version.as_deref(),
        info.operation,
        &info.description,
        &info.artifact_id,
    );
    FigureState {
        figure_id: info.figure_id,
        visualization: exec.chart,
        code: exec.program,
        data: exec.data,
        meta: FigureMeta {
            created_at: info.created_at,
            version_id,
            parent_version: info.parent_version,
            operation: info.operation,
            operation_description: info.description,
            artifact_id: info.artifact_id,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReplayError {
    #[error("missing source table `{0}`")]
    MissingSourceTable(String),
    #[error("step {index} failed: {cause}")]
    StepExecutionFailed { index: usize, cause: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayOutcome {
    pub figure: FigureState,
    pub reproduced: bool,
    pub data_match: bool,
    pub chart_match: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Re-executes a figure's program against `catalog` and compares the result.
pub fn replay_figure(fig: &FigureState, catalog: &TableCatalog) -> Result<ReplayOutcome, ReplayError> {
    for t in &fig.data.lineage.sources {
        if catalog.table(t).is_none() {
            return Err(ReplayError::MissingSourceTable(t.clone()));
        }
    }
    let actions = fig.actions();
    let exec = execute_actions(&actions, catalog).map_err(|e| match e {
        BuildError::Exec(ExecError::MissingSourceTable(t)) => ReplayError::MissingSourceTable(t),
        other => ReplayError::StepExecutionFailed {
            index: other.step().unwrap_or_else(|| actions.len().saturating_sub(1)),
            cause: other.to_string(),
        },
    })?;
    let data_match = exec.data.digest == fig.data.digest;
    let chart_match = exec.chart == fig.visualization;
    let nondet: Vec<usize> = fig
        .code
        .steps
        .iter()
        .filter(|s| s.nondeterministic)
        .map(|s| s.index)
        .collect();
    let reproduced = data_match && chart_match && nondet.is_empty();
    let note = if !nondet.is_empty() {
        Some(format!(
            "declared nondeterministic step(s) {:?}; mismatches are expected",
            nondet
        ))
    } else {
        None
    };
    let figure = FigureState {
        figure_id: fig.figure_id.clone(),
        visualization: exec.chart,
        code: fig.code.clone(),
        data: exec.data,
        meta: fig.meta.clone(),
    };
    Ok(ReplayOutcome {
        figure,
        reproduced,
        data_match,
        chart_match,
        note,
    })
}
