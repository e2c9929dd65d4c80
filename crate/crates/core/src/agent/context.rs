use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::action::{Action, StepStatus};
use crate::chart::{Channel, ChartType, EncodingSpec};
use crate::figure::FigureState;
use crate::ledger::ArtifactState;
use crate::value::Column;

/// What a backend needs to know about a live figure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FigureBrief {
    pub figure_id: String,
    /// First source table of the figure's data.
    pub table: String,
    pub chart_type: ChartType,
    pub encodings: BTreeMap<Channel, EncodingSpec>,
    pub columns: Vec<Column>,
    pub actions: Vec<Action>,
    /// True if the figure is the source of a coordination schema.
    pub linked: bool,
}

impl FigureBrief {
    pub fn of(fig: &FigureState, linked: bool) -> Self {
        Self {
            figure_id: fig.figure_id.clone(),
            table: fig.data.lineage.sources.first().cloned().unwrap_or_default(),
            chart_type: fig.visualization.chart_type,
            encodings: fig.visualization.encodings.clone(),
            columns: fig.data.schema.columns.clone(),
            actions: fig.actions(),
            linked,
        }
    }
}

/// One step of loop history, pointing at a record in the trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextRecord {
    /// Trace entry and action index of the record this summarizes.
    pub trace_entry: usize,
    pub action_index: usize,
    pub objective: String,
    pub status: StepStatus,
    pub result_summary: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    pub rationale: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remaining: Option<String>,
    /// Higher survives eviction longer.
    pub salience: u8,
}

/// Bounded working memory handed to the backend on every call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataContext {
    pub records: Vec<ContextRecord>,
    pub conversation_tail: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact_id: Option<String>,
    pub figures: Vec<FigureBrief>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active_figure: Option<String>,
    /// Loop round the backend is being asked about.
    pub round: usize,
    pub capacity: usize,
}

pub const DEFAULT_CONTEXT_CAPACITY: usize = 32;
const TAIL: usize = 6;

impl Default for DataContext {
    fn default() -> Self {
        Self {
            records: Vec::new(),
            conversation_tail: Vec::new(),
            artifact_id: None,
            figures: Vec::new(),
            active_figure: None,
            round: 0,
            capacity: DEFAULT_CONTEXT_CAPACITY,
        }
    }
}

impl DataContext {
    pub fn for_state(state: &ArtifactState, active: Option<&str>) -> Self {
        let figures = state
            .figure_ids
            .iter()
            .map(|id| FigureBrief::of(&state.figures[id], !state.schemas_from(id).is_empty()))
            .collect();
        Self {
            artifact_id: Some(state.artifact_id.clone()),
            figures,
            active_figure: active
                .map(str::to_string)
                .or_else(|| state.figure_ids.last().cloned()),
            ..Self::default()
        }
    }

    pub fn active(&self) -> Option<&FigureBrief> {
        let id = self.active_figure.as_deref()?;
        self.figures.iter().find(|f| f.figure_id == id)
    }

    pub fn figure(&self, id: &str) -> Option<&FigureBrief> {
        self.figures.iter().find(|f| f.figure_id == id)
    }

    pub fn push_turn(&mut self, line: impl Into<String>) {
        self.conversation_tail.push(line.into());
        if self.conversation_tail.len() > TAIL {
            let drop = self.conversation_tail.len() - TAIL;
            self.conversation_tail.drain(..drop);
        }
    }

    /// Adds a record, evicting the oldest lowest-salience record when full.
    pub fn push(&mut self, r: ContextRecord) {
        self.records.push(r);
        while self.records.len() > self.capacity.max(1) {
            let min = self.records.iter().map(|r| r.salience).min().unwrap_or(0);
            let i = self
                .records
                .iter()
                .position(|r| r.salience == min)
                .expect("non-empty");
            self.records.remove(i);
        }
    }

    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| r.status == StepStatus::Failed).count()
    }
}
