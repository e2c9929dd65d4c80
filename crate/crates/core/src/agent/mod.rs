//! Planning loop: triage, candidate proposal through an intent backend, beam search
//! over executed candidates and rubric evaluation.

mod context;
mod scripted;
mod search;
mod template;
#[cfg(feature = "llm")]
pub mod llm;

pub use context::{ContextRecord, DataContext, FigureBrief};
pub use scripted::{FaultMode, ScriptedBackend};
pub use search::{
    execute_candidate, run_loop, select_action, Budget, ExecutedCandidate, LoopConfig, LoopError, LoopEvent,
    LoopOutcome, SearchNode, SearchTree, Trace, TraceEntry,
};
pub use template::{Lexicon, ParsedIntent, TemplateBackend};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::Action;
use crate::catalog::CatalogSchema;
use crate::chart::ChartType;
use crate::figure::FigureState;
use crate::ledger::UserInputRecord;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryClass {
    HighLevel,
    LowLevel,
    RecommendationRequest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "route", content = "items", rename_all = "snake_case")]
pub enum Route {
    Decompose(Vec<String>),
    Recommend(Vec<String>),
    Execute,
}

/// What a candidate does to the artifact.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum PlanTarget {
    /// A new figure from scratch.
    Generate,
    /// Steps appended to an existing figure.
    Manipulate { figure_id: String },
    /// A new figure over the rows the input's gesture selects on `source`.
    Extend { source: String },
}

/// What the result should look like, for the rubric.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Expectation {
    /// Chart type the user asked for, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chart_type: Option<ChartType>,
    /// Columns the result must contain.
    #[serde(default)]
    pub fields: Vec<String>,
    /// True for filter-style questions, where an empty answer is a valid answer.
    #[serde(default)]
    pub allow_empty: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub target: PlanTarget,
    pub actions: Vec<Action>,
    pub rationale: String,
    #[serde(default)]
    pub expect: Expectation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub score: f64,
    pub rationale: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remaining_plan: Option<String>,
}

impl Evaluation {
    pub fn new(score: f64, rationale: impl Into<String>) -> Self {
        Self {
            score: if score.is_nan() { 0.0 } else { score.clamp(0.0, 1.0) },
            rationale: rationale.into(),
            remaining_plan: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend returned an unusable response: {0}")]
    BadResponse(String),
}

/// The seam between the loop and whatever maps user input to actions.
/// Implementations keep no state between calls.
pub trait IntentBackend: Send + Sync {
    fn name(&self) -> &str;

    fn classify(&self, input: &UserInputRecord) -> Result<QueryClass, BackendError>;

    /// Ranked candidates, best first.
    fn propose(
        &self,
        input: &UserInputRecord,
        ctx: &DataContext,
        schema: &CatalogSchema,
    ) -> Result<Vec<Candidate>, BackendError>;

    /// Ordered sub-questions for a high-level request.
    fn decompose(&self, input: &UserInputRecord) -> Vec<String> {
        split_clauses(input.raw_text.as_deref().unwrap_or(""))
    }

    /// Next-step suggestions given the conversation so far.
    fn recommend(&self, ctx: &DataContext, schema: &CatalogSchema) -> Vec<String> {
        default_recommendations(ctx, schema)
    }

    fn evaluate(&self, candidate: &Candidate, figure: &FigureState, _input: &UserInputRecord) -> Evaluation {
        rubric(&candidate.expect, figure)
    }
}

/// Rubric scoring: 0 when the result is empty (unless emptiness is a valid answer) or
/// lacks expected fields, 0.5 when the chart type differs from the one asked for, else 1.
pub fn rubric(expect: &Expectation, figure: &FigureState) -> Evaluation {
    if figure.data.rows.is_empty() && !expect.allow_empty {
        return Evaluation {
            remaining_plan: Some("relax the filters".into()),
            ..Evaluation::new(0.0, "the result is empty")
        };
    }
    let missing: Vec<&String> = expect
        .fields
        .iter()
        .filter(|f| figure.data.schema.index_of(f).is_none())
        .collect();
    if !missing.is_empty() {
        return Evaluation {
            remaining_plan: Some(format!("produce {}", expect.fields.join(", "))),
            ..Evaluation::new(0.0, format!("missing fields: {missing:?}"))
        };
    }
    match expect.chart_type {
        Some(t) if t != figure.visualization.chart_type => Evaluation {
            remaining_plan: Some(format!("switch to a {t} chart")),
            ..Evaluation::new(0.5, format!("fields present but chart is {}", figure.visualization.chart_type))
        },
        _ => Evaluation::new(1.0, "requested fields and chart type delivered"),
    }
}

/// Routes an input: high-level requests are decomposed, recommendation requests get
/// suggestions, everything else runs the loop. Gesture-only input always executes.
pub fn triage(
    input: &UserInputRecord,
    ctx: &DataContext,
    schema: &CatalogSchema,
    backend: &dyn IntentBackend,
) -> Result<Route, BackendError> {
    let text = input.raw_text.as_deref().unwrap_or("").trim();
    if text.is_empty() {
        return Ok(Route::Execute);
    }
    Ok(match backend.classify(input)? {
        QueryClass::LowLevel => Route::Execute,
        QueryClass::HighLevel => {
            let mut subs = backend.decompose(input);
            if subs.len() < 2 {
                subs = split_clauses(text);
            }
            Route::Decompose(subs)
        }
        QueryClass::RecommendationRequest => {
            let mut r = backend.recommend(ctx, schema);
            if r.is_empty() {
                r = default_recommendations(ctx, schema);
            }
            Route::Recommend(r)
        }
    })
}

/// Splits a compound request into at least two ordered sub-questions.
pub fn split_clauses(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    let mut parts: Vec<String> = lowered
        .split([',', ';'])
        .flat_map(|p| p.split(" and "))
        .map(|p| p.trim().trim_end_matches(['.', '?', '!']).trim().to_string())
        .filter(|p| !p.is_empty())
        .collect();
    if parts.is_empty() {
        parts.push("describe the available data".into());
    }
    if parts.len() < 2 {
        parts.push(format!("which columns measure {}?", parts[0]));
    }
    parts
        .into_iter()
        .map(|p| {
            let mut c = p.chars();
            match c.next() {
                Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
                None => p,
            }
        })
        .collect()
}

fn default_recommendations(ctx: &DataContext, schema: &CatalogSchema) -> Vec<String> {
    let mut out = Vec::new();
    if let Some(f) = ctx.active() {
        if let Some(x) = f.encodings.get(&crate::chart::Channel::X) {
            out.push(format!("filter to a subset of {}", x.field));
        }
        out.push("brush a range on the figure and ask a follow-up question".into());
    }
    for (t, s) in schema.tables.iter().take(2) {
        let q = s.columns.iter().find(|c| c.kind == crate::value::SemanticType::Quantitative);
        let d = s.columns.iter().find(|c| c.kind != crate::value::SemanticType::Quantitative);
        if let (Some(q), Some(d)) = (q, d) {
            out.push(format!("plot average {} by {} ({t})", q.name, d.name));
        }
    }
    if out.is_empty() {
        out.push("load a table to start exploring".into());
    }
    out
}

/// Literature search is not configured in this build; always returns the same notice.
pub fn literature_search(_query: &str) -> serde_json::Value {
    serde_json::json!({ "results": [], "note": "no corpus configured" })
}

/// Backend names accepted by sessions: `template`, `scripted` or
/// `scripted:<fault_mode>`, and `llm` when built with that feature.
pub fn backend_by_name(name: &str) -> Option<Box<dyn IntentBackend>> {
    match name.split_once(':') {
        None if name == "template" => Some(Box::new(TemplateBackend::default())),
        None if name == "scripted" => Some(Box::new(ScriptedBackend::new(FaultMode::Valid))),
        Some(("scripted", mode)) => {
            let mode: FaultMode = serde_json::from_value(serde_json::Value::String(mode.into())).ok()?;
            Some(Box::new(ScriptedBackend::new(mode)))
        }
        #[cfg(feature = "llm")]
        None if name == "llm" => llm::LlmBackend::from_env().ok().map(|b| Box::new(b) as Box<dyn IntentBackend>),
        _ => None,
    }
}
