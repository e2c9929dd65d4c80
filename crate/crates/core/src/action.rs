//! The action vocabulary, recorded programs and sequence validation.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::catalog::CatalogSchema;
use crate::chart::{Channel, ChartType, EncodingSpec, InteractionDecl, COUNT_FIELD};
use crate::compile::normalize_data_steps;
use crate::digest::Digest;
use crate::expr::Expr;
use crate::plan::{AggFunc, AggSpec, AnalyzeOp, SortKey};
use crate::predicate::Predicate;
use crate::value::SemanticType;

/// Longest action sequence the compiler accepts.
pub const MAX_PLAN_ACTIONS: usize = 64;

/// Columns a chart exposes. Empty means every column of the bound slice.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataBinding {
    #[serde(default)]
    pub fields: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    SelectTable {
        table: String,
    },
    SelectColumns {
        columns: Vec<String>,
    },
    FilterRows {
        predicate: Predicate,
    },
    JoinTables {
        table: String,
        left_key: String,
        right_key: String,
    },
    DeriveColumn {
        name: String,
        expr: Expr,
    },
    Aggregate {
        group_by: Vec<String>,
        aggs: Vec<AggSpec>,
    },
    SortLimit {
        keys: Vec<SortKey>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        limit: Option<usize>,
    },
    Analyze {
        op: AnalyzeOp,
    },
    AddChartType {
        chart_type: ChartType,
    },
    AddParams {
        param: InteractionDecl,
    },
    AddData {
        #[serde(default)]
        binding: DataBinding,
    },
    UpdateData {
        #[serde(default)]
        binding: DataBinding,
    },
    AddEncoding {
        channel: Channel,
        encoding: EncodingSpec,
    },
    UpdateEncoding {
        channel: Channel,
        encoding: EncodingSpec,
    },
}

impl Action {
    pub fn kind(&self) -> &'static str {
        match self {
            Action::SelectTable { .. } => "select_table",
            Action::SelectColumns { .. } => "select_columns",
            Action::FilterRows { .. } => "filter_rows",
            Action::JoinTables { .. } => "join_tables",
            Action::DeriveColumn { .. } => "derive_column",
            Action::Aggregate { .. } => "aggregate",
            Action::SortLimit { .. } => "sort_limit",
            Action::Analyze { .. } => "analyze",
            Action::AddChartType { .. } => "add_chart_type",
            Action::AddParams { .. } => "add_params",
            Action::AddData { .. } => "add_data",
            Action::UpdateData { .. } => "update_data",
            Action::AddEncoding { .. } => "add_encoding",
            Action::UpdateEncoding { .. } => "update_encoding",
        }
    }

    /// Steps that shape the data slice, as opposed to the chart document.
    pub fn is_data_step(&self) -> bool {
        matches!(
            self,
            Action::SelectTable { .. }
                | Action::SelectColumns { .. }
                | Action::FilterRows { .. }
                | Action::JoinTables { .. }
                | Action::DeriveColumn { .. }
                | Action::Aggregate { .. }
                | Action::SortLimit { .. }
                | Action::Analyze { .. }
        )
    }

    /// Kinds allowed when manipulating an existing figure.
    pub fn is_manipulation(&self) -> bool {
        matches!(
            self,
            Action::DeriveColumn { .. }
                | Action::FilterRows { .. }
                | Action::Analyze { .. }
                | Action::UpdateData { .. }
                | Action::UpdateEncoding { .. }
                | Action::AddParams { .. }
        )
    }

    pub fn is_nondeterministic(&self) -> bool {
        matches!(self, Action::Analyze { op } if op.is_nondeterministic())
    }

    /// One-line human description.
    pub fn describe(&self) -> String {
        match self {
            Action::SelectTable { table } => format!("select table {table}"),
            Action::SelectColumns { columns } => format!("select columns {}", columns.join(", ")),
            Action::FilterRows { predicate } => format!("filter rows where {predicate}"),
            Action::JoinTables { table, left_key, right_key } => {
                format!("join {table} on {left_key} = {right_key}")
            }
            Action::DeriveColumn { name, expr } => format!("derive {name} = {expr}"),
            Action::Aggregate { group_by, aggs } => {
                let a: Vec<String> = aggs.iter().map(AggSpec::output_name).collect();
                if group_by.is_empty() {
                    format!("aggregate {}", a.join(", "))
                } else {
                    format!("aggregate {} by {}", a.join(", "), group_by.join(", "))
                }
            }
            Action::SortLimit { keys, limit } => {
                let k: Vec<String> = keys
                    .iter()
                    .map(|k| format!("{}{}", k.column, if k.descending { " desc" } else { "" }))
                    .collect();
                match limit {
                    Some(n) => format!("sort by {} limit {n}", k.join(", ")),
                    None => format!("sort by {}", k.join(", ")),
                }
            }
            Action::Analyze { op } => format!("analyze {}", op.describe()),
            Action::AddChartType { chart_type } => format!("chart type {chart_type}"),
            Action::AddParams { param } => {
                let c: Vec<&str> = param.channels.iter().map(|c| c.as_str()).collect();
                format!("interaction {} on {}", param.kind.as_str(), c.join(", "))
            }
            Action::AddData { binding } | Action::UpdateData { binding } => {
                if binding.fields.is_empty() {
                    "bind all fields".into()
                } else {
                    format!("bind fields {}", binding.fields.join(", "))
                }
            }
            Action::AddEncoding { channel, encoding } | Action::UpdateEncoding { channel, encoding } => {
                let f = match encoding.aggregate {
                    Some(a) => format!("{}({})", a.name(), encoding.field),
                    None => encoding.field.clone(),
                };
                format!("encode {channel} = {f} ({:?} scale)", encoding.scale).to_lowercase()
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub index: usize,
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_query_text: Option<String>,
    pub status: StepStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result_digest: Option<Digest>,
    #[serde(default)]
    pub nondeterministic: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceProgram {
    pub steps: Vec<ActionRecord>,
}

impl ProvenanceProgram {
    pub fn actions(&self) -> Vec<Action> {
        self.steps.iter().map(|s| s.action.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn has_nondeterministic_step(&self) -> bool {
        self.steps.iter().any(|s| s.nondeterministic)
    }

    /// Checks the structural invariants: contiguous indices, one chart type,
    /// updates after adds.
    pub fn check_structure(&self) -> Result<(), String> {
        for (i, s) in self.steps.iter().enumerate() {
            if s.index != i {
                return Err(format!("step {i} has index {}", s.index));
            }
        }
        let report = structural_violations(&self.actions());
        match report.first() {
            Some(v) => Err(v.to_string()),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub index: usize,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "step {}: {}", self.index, self.message)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn messages(&self) -> Vec<String> {
        self.violations.iter().map(|v| v.message.clone()).collect()
    }
}

fn v(index: usize, message: impl Into<String>) -> Violation {
    Violation {
        index,
        message: message.into(),
    }
}

/// Ordering rules that need no schema.
fn structural_violations(steps: &[Action]) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut chart = false;
    let mut encoded: BTreeSet<Channel> = BTreeSet::new();
    let mut data_bound = false;
    for (i, a) in steps.iter().enumerate() {
        match a {
            Action::AddChartType { .. } => {
                if chart {
                    out.push(v(i, "duplicate chart type"));
                }
                chart = true;
            }
            Action::AddEncoding { channel, .. } => {
                if !chart {
                    out.push(v(i, "encoding precedes chart type"));
                }
                encoded.insert(*channel);
            }
            Action::UpdateEncoding { channel, .. } => {
                if !chart {
                    out.push(v(i, "encoding precedes chart type"));
                }
                if !encoded.contains(channel) {
                    out.push(v(i, format!("update without prior add: no `{channel}` encoding")));
                }
            }
            Action::AddParams { param } => {
                if !chart {
                    out.push(v(i, "params precede chart type"));
                }
                for ch in &param.channels {
                    if !encoded.contains(ch) {
                        out.push(v(i, format!("params bind unencoded channel `{ch}`")));
                    }
                }
            }
            Action::AddData { .. } => {
                if !chart {
                    out.push(v(i, "data binding precedes chart type"));
                }
                data_bound = true;
            }
            Action::UpdateData { .. } => {
                if !data_bound {
                    out.push(v(i, "update without prior add: no data binding"));
                }
            }
            _ => {}
        }
    }
    out
}

/// Lists every violation, in step order. An empty report means the sequence compiles.
pub fn validate_sequence(steps: &[Action], catalog: &CatalogSchema) -> ValidationReport {
    let mut violations = Vec::new();
    if steps.len() > MAX_PLAN_ACTIONS {
        violations.push(v(
            MAX_PLAN_ACTIONS,
            format!("plan too large: {} actions (max {MAX_PLAN_ACTIONS})", steps.len()),
        ));
        return ValidationReport { violations };
    }
    violations.extend(structural_violations(steps));

    // Data-facing prefix: compile incrementally, reporting the first failure.
    let data: Vec<(usize, Action)> = steps
        .iter()
        .enumerate()
        .filter(|(_, a)| a.is_data_step())
        .map(|(i, a)| (i, a.clone()))
        .collect();
    let schema = match normalize_data_steps(&data, catalog) {
        Ok(n) => Some(n.schema),
        Err(e) => {
            violations.push(v(e.index, e.reason));
            None
        }
    };

    let mut chart_type = None;
    let mut encodings = std::collections::BTreeMap::new();
    for (i, a) in steps.iter().enumerate() {
        match a {
            Action::AddChartType { chart_type: c } => chart_type = Some(*c),
            Action::AddEncoding { channel, encoding } | Action::UpdateEncoding { channel, encoding } => {
                encodings.insert(*channel, (i, encoding.clone()));
            }
            Action::AddData { binding } | Action::UpdateData { binding } => {
                if let Some(s) = &schema {
                    for f in &binding.fields {
                        if s.index_of(f).is_none() {
                            violations.push(v(i, format!("unknown column `{f}`")));
                        }
                    }
                }
            }
            _ => {}
        }
    }
    if let Some(s) = &schema {
        for (ch, (i, e)) in &encodings {
            if e.field == COUNT_FIELD {
                if e.aggregate != Some(AggFunc::Count) {
                    violations.push(v(*i, format!("`*` on `{ch}` needs a count aggregate")));
                }
                continue;
            }
            match s.column(&e.field) {
                None => violations.push(v(*i, format!("unknown column `{}`", e.field))),
                Some(c) => {
                    if e.scale == crate::chart::Scale::Log
                        && e.aggregate.is_none()
                        && c.kind != SemanticType::Quantitative
                    {
                        violations.push(v(*i, format!("log scale on non-quantitative field `{}`", e.field)));
                    }
                    if matches!(e.aggregate, Some(AggFunc::Sum | AggFunc::Mean)) && c.kind == SemanticType::Nominal {
                        violations.push(v(*i, format!("cannot aggregate nominal field `{}`", e.field)));
                    }
                }
            }
        }
    }
    if let Some(ct) = chart_type {
        for ch in ct.required_channels() {
            if !encodings.contains_key(ch) {
                violations.push(v(steps.len(), format!("{ct} chart requires a `{ch}` encoding")));
            }
        }
    }
    violations.sort_by_key(|x| x.index);
    ValidationReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::Scale;

    #[test]
    fn action_json_round_trip() {
        let a = Action::AddEncoding {
            channel: Channel::RowLabel,
            encoding: EncodingSpec::new("state", Scale::Ordinal),
        };
        let s = serde_json::to_string(&a).unwrap();
        assert_eq!(
            s,
            r#"{"kind":"add_encoding","channel":"row-label","encoding":{"field":"state","scale":"ordinal"}}"#
        );
        assert_eq!(serde_json::from_str::<Action>(&s).unwrap(), a);
    }

    #[test]
    fn encoding_before_chart_type() {
        let steps = vec![
            Action::AddEncoding {
                channel: Channel::X,
                encoding: EncodingSpec::new("a", Scale::Linear),
            },
            Action::AddChartType {
                chart_type: ChartType::Bar,
            },
        ];
        assert_eq!(structural_violations(&steps)[0].message, "encoding precedes chart type");
    }
}
