//! Action sequences to query plans and chart documents.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::action::{Action, MAX_PLAN_ACTIONS};
use crate::catalog::CatalogSchema;
use crate::chart::{materialize_marks, summarize_insight, ChartDoc, ChartError};
use crate::plan::{PlanError, PlanNode, QueryPlan};
use crate::predicate::PredicateError;
use crate::slice::DataSlice;
use crate::value::Schema;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("step {index}: {reason}")]
pub struct CompileError {
    pub index: usize,
    pub reason: String,
}

impl CompileError {
    fn new(index: usize, reason: impl Into<String>) -> Self {
        Self {
            index,
            reason: reason.into(),
        }
    }
}

fn reason(e: &PlanError) -> String {
    match e {
        PlanError::Predicate(PredicateError::EmptyMembership(c)) => format!("empty membership set on `{c}`"),
        PlanError::Predicate(PredicateError::UnknownColumn(c)) => format!("unknown column `{c}`"),
        PlanError::Expr(crate::expr::ExprError::UnknownColumn(c)) => format!("unknown column `{c}`"),
        PlanError::UnknownColumn { column, .. } => format!("unknown column `{column}`"),
        other => other.to_string(),
    }
}

/// Data steps in execution order, with the plan and output schema they produce.
pub(crate) struct Normalized {
    pub node: PlanNode,
    pub schema: Schema,
}

fn apply(node: PlanNode, action: &Action) -> PlanNode {
    match action {
        Action::SelectTable { table } => PlanNode::scan(table.clone()),
        Action::SelectColumns { columns } => node.project(columns.clone()),
        Action::FilterRows { predicate } => node.filter(predicate.clone()),
        Action::JoinTables {
            table,
            left_key,
            right_key,
        } => node.join(PlanNode::scan(table.clone()), left_key.clone(), right_key.clone()),
        Action::DeriveColumn { name, expr } => node.derive(name.clone(), expr.clone()),
        Action::Aggregate { group_by, aggs } => node.aggregate(group_by.clone(), aggs.clone()),
        Action::SortLimit { keys, limit } => node.sort_limit(keys.clone(), *limit),
        Action::Analyze { op } => node.analyze(op.clone()),
        _ => node,
    }
}

fn build(stages: &[(usize, Action)], catalog: &CatalogSchema) -> Result<(PlanNode, Vec<Schema>), CompileError> {
    let mut node = PlanNode::scan("");
    let mut schemas = Vec::with_capacity(stages.len());
    for (i, a) in stages {
        node = apply(node, a);
        let s = node.output_schema(catalog).map_err(|e| CompileError::new(*i, reason(&e)))?;
        schemas.push(s);
    }
    Ok((node, schemas))
}

/// Orders data steps for execution. A filter whose columns do not exist at its position
/// is moved down to just after the latest step whose output has them, so a filter on a
/// raw column added after an aggregate re-aggregates the filtered rows.
pub(crate) fn normalize_data_steps(
    data: &[(usize, Action)],
    catalog: &CatalogSchema,
) -> Result<Normalized, CompileError> {
    let Some((first, head)) = data.first() else {
        return Err(CompileError::new(0, "missing select_table"));
    };
    match head {
        Action::SelectTable { table } => {
            if catalog.table(table).is_none() {
                return Err(CompileError::new(*first, format!("unknown table `{table}`")));
            }
        }
        other => {
            return Err(CompileError::new(
                *first,
                format!("{} precedes select_table", other.kind()),
            ))
        }
    }
    let mut stages: Vec<(usize, Action)> = vec![data[0].clone()];
    let (_, mut schemas) = build(&stages, catalog)?;
    for (i, a) in &data[1..] {
        if matches!(a, Action::SelectTable { .. }) {
            return Err(CompileError::new(*i, "multiple select_table"));
        }
        let mut at = stages.len();
        if let Action::FilterRows { predicate } = a {
            let cols = predicate.columns();
            let fits = |s: &Schema| cols.iter().all(|c| s.resolves(c));
            if !fits(schemas.last().expect("nonempty")) {
                match schemas.iter().rposition(fits) {
                    Some(k) => at = k + 1,
                    None => {
                        let missing = cols
                            .iter()
                            .find(|c| !schemas.iter().any(|s| s.resolves(c)))
                            .cloned()
                            .unwrap_or_default();
                        return Err(CompileError::new(*i, format!("unknown column `{missing}`")));
                    }
                }
            }
        }
        stages.insert(at, (*i, a.clone()));
        schemas = build(&stages, catalog)?.1;
    }
    let (node, schemas) = build(&stages, catalog)?;
    Ok(Normalized {
        node,
        schema: schemas.last().cloned().expect("nonempty"),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompiledQuery {
    pub plan: QueryPlan,
    pub schema: Schema,
    /// SQL text of the plan prefix ending at each data step, by step index.
    pub step_queries: BTreeMap<usize, String>,
}

/// Compiles the data-facing steps of `steps` into one plan.
pub fn compile_to_query(steps: &[Action], catalog: &CatalogSchema) -> Result<CompiledQuery, CompileError> {
    if steps.len() > MAX_PLAN_ACTIONS {
        return Err(CompileError::new(
            MAX_PLAN_ACTIONS,
            format!("plan too large: {} actions (max {MAX_PLAN_ACTIONS})", steps.len()),
        ));
    }
    let data: Vec<(usize, Action)> = steps
        .iter()
        .enumerate()
        .filter(|(_, a)| a.is_data_step())
        .map(|(i, a)| (i, a.clone()))
        .collect();
    let full = normalize_data_steps(&data, catalog)?;
    let mut step_queries = BTreeMap::new();
    for k in 0..data.len() {
        let prefix = if k + 1 == data.len() {
            QueryPlan::new(full.node.clone())
        } else {
            QueryPlan::new(normalize_data_steps(&data[..=k], catalog)?.node)
        };
        step_queries.insert(data[k].0, prefix.to_sql());
    }
    Ok(CompiledQuery {
        plan: QueryPlan::new(full.node),
        schema: full.schema,
        step_queries,
    })
}

/// Applies the chart-facing steps in order and materializes marks over `data`.
pub fn compile_to_chart(steps: &[Action], data: &DataSlice) -> Result<ChartDoc, ChartError> {
    let mut doc: Option<ChartDoc> = None;
    let mut fields: Option<Vec<String>> = None;
    for a in steps {
        match a {
            Action::AddChartType { chart_type } => doc = Some(ChartDoc::new(*chart_type)),
            Action::AddEncoding { channel, encoding } | Action::UpdateEncoding { channel, encoding } => {
                let d = doc.as_mut().ok_or(ChartError::MissingChartType)?;
                d.encodings.insert(*channel, encoding.clone());
            }
            Action::AddParams { param } => {
                let d = doc.as_mut().ok_or(ChartError::MissingChartType)?;
                if !d.params.contains(param) {
                    d.params.push(param.clone());
                }
            }
            Action::AddData { binding } | Action::UpdateData { binding } => {
                fields = Some(binding.fields.clone());
            }
            _ => {}
        }
    }
    let mut doc = doc.ok_or(ChartError::MissingChartType)?;
    doc.data_fields = match fields {
        Some(f) if !f.is_empty() => {
            if let Some(bad) = f.iter().find(|c| data.schema.index_of(c).is_none()) {
                return Err(ChartError::UnknownColumn(bad.clone()));
            }
            f
        }
        _ => data.schema.names().map(str::to_string).collect(),
    };
    let (marks, _) = materialize_marks(&doc, data)?;
    doc.marks = marks;
    doc.insight_text = summarize_insight(&doc, data);
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::{AggFunc, AggSpec};
    use crate::predicate::{Atom, Predicate};
    use crate::value::{Column, SemanticType, Value};

    fn catalog() -> CatalogSchema {
        let mut c = CatalogSchema::default();
        c.insert(
            "temps",
            Schema::new(vec![
                Column::new("state", SemanticType::Nominal),
                Column::new("month", SemanticType::Temporal),
                Column::new("temp", SemanticType::Quantitative),
            ]),
        );
        c
    }

    #[test]
    fn late_filter_moves_below_aggregate() {
        let steps = vec![
            Action::SelectTable { table: "temps".into() },
            Action::Aggregate {
                group_by: vec!["state".into()],
                aggs: vec![AggSpec::new(AggFunc::Mean, "temp")],
            },
            Action::FilterRows {
                predicate: Predicate::new(vec![Atom::range("month", 6.0, 8.0)]),
            },
        ];
        let q = compile_to_query(&steps, &catalog()).unwrap();
        assert!(matches!(q.plan.root, PlanNode::Aggregate { .. }));
        assert_eq!(q.step_queries.len(), 3);
        assert!(q.step_queries[&2].contains("BETWEEN 6 AND 8"));
        assert!(!q.step_queries[&1].contains("BETWEEN"));
    }

    #[test]
    fn empty_membership_is_a_compile_error() {
        let steps = vec![
            Action::SelectTable { table: "temps".into() },
            Action::FilterRows {
                predicate: Predicate::new(vec![Atom::Membership {
                    column: "state".into(),
                    values: Vec::<Value>::new(),
                }]),
            },
        ];
        let e = compile_to_query(&steps, &catalog()).unwrap_err();
        assert_eq!(e.index, 1);
        assert!(e.reason.contains("empty membership"));
    }

    #[test]
    fn filter_on_unknown_column() {
        let steps = vec![
            Action::SelectTable { table: "temps".into() },
            Action::FilterRows {
                predicate: Predicate::new(vec![Atom::range("nope", 1.0, 2.0)]),
            },
        ];
        assert_eq!(compile_to_query(&steps, &catalog()).unwrap_err().reason, "unknown column `nope`");
    }
}
