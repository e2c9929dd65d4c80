//! Plan execution: hash joins, hash aggregation, stable sorts.

use std::cmp::Ordering;
use std::collections::HashMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::catalog::TableCatalog;
use crate::expr::{evaluate_expression, ExprError};
use crate::plan::{aggregate_schema, join_schema, AggFunc, AggSpec, AnalyzeOp, PlanError, PlanNode, QueryPlan, SortKey};
use crate::slice::{DataSlice, Lineage};
use crate::value::{Row, RowKey, Schema, Value};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error("missing source table `{0}`")]
    MissingSourceTable(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("{operator}: {cause}")]
    Expr { operator: &'static str, cause: ExprError },
    #[error("{operator}: {cause}")]
    Operator { operator: &'static str, cause: String },
}

impl ExecError {
    fn op(operator: &'static str, cause: impl Into<String>) -> Self {
        ExecError::Operator {
            operator,
            cause: cause.into(),
        }
    }
}

/// Executes `plan`, returning rows with derived keys and a populated lineage.
pub fn execute_plan(plan: &QueryPlan, catalog: &TableCatalog) -> Result<DataSlice, ExecError> {
    for t in plan.sources() {
        if catalog.table(&t).is_none() {
            return Err(ExecError::MissingSourceTable(t));
        }
    }
    plan.output_schema(&catalog.schema())?;
    catalog.note_query();
    let mut lineage = Lineage {
        sources: plan.sources(),
        predicate: String::new(),
        transforms: Vec::new(),
    };
    let mut predicates = Vec::new();
    let (schema, rows) = eval(&plan.root, catalog, &mut lineage.transforms, &mut predicates)?;
    lineage.predicate = if predicates.is_empty() {
        "TRUE".into()
    } else {
        predicates.join(" AND ")
    };
    Ok(DataSlice::new(schema, rows, lineage))
}

type Output = (Schema, Vec<Row>);

fn eval(
    node: &PlanNode,
    catalog: &TableCatalog,
    transforms: &mut Vec<String>,
    predicates: &mut Vec<String>,
) -> Result<Output, ExecError> {
    match node {
        PlanNode::Scan { table } => {
            let t = catalog
                .table(table)
                .ok_or_else(|| ExecError::MissingSourceTable(table.clone()))?;
            transforms.push(format!("scan({table})"));
            Ok((t.schema.clone(), t.rows.clone()))
        }
        PlanNode::Filter { input, predicate } => {
            let (schema, rows) = eval(input, catalog, transforms, predicates)?;
            let sql = predicate.to_sql();
            transforms.push(format!("filter({sql})"));
            predicates.push(sql);
            let rows = rows.into_iter().filter(|r| predicate.eval(&schema, r)).collect();
            Ok((schema, rows))
        }
        PlanNode::Project { input, columns } => {
            let (schema, rows) = eval(input, catalog, transforms, predicates)?;
            let idx: Vec<usize> = columns
                .iter()
                .map(|c| schema.index_of(c).ok_or_else(|| ExecError::op("project", format!("unknown column `{c}`"))))
                .collect::<Result<_, _>>()?;
            transforms.push(format!("project({})", columns.join(", ")));
            let out = Schema::new(idx.iter().map(|&i| schema.columns[i].clone()).collect());
            let rows = rows
                .into_iter()
                .map(|r| Row {
                    values: idx.iter().map(|&i| r.values[i].clone()).collect(),
                    key: r.key,
                })
                .collect();
            Ok((out, rows))
        }
        PlanNode::Derive { input, name, expr } => {
            let (mut schema, mut rows) = eval(input, catalog, transforms, predicates)?;
            for r in rows.iter_mut() {
                let v = evaluate_expression(expr, &schema, r).map_err(|cause| ExecError::Expr {
                    operator: "derive",
                    cause,
                })?;
                r.values.push(v);
            }
            transforms.push(format!("derive({name} = {})", expr.to_sql()));
            schema
                .columns
                .push(crate::value::Column::new(name.clone(), expr.output_type()));
            Ok((schema, rows))
        }
        PlanNode::Join {
            left,
            right,
            left_key,
            right_key,
        } => {
            let (ls, lrows) = eval(left, catalog, transforms, predicates)?;
            let (rs, rrows) = eval(right, catalog, transforms, predicates)?;
            let li = ls
                .index_of(left_key)
                .ok_or_else(|| ExecError::op("join", format!("unknown column `{left_key}`")))?;
            let ri = rs
                .index_of(right_key)
                .ok_or_else(|| ExecError::op("join", format!("unknown column `{right_key}`")))?;
            let mut index: HashMap<&Value, Vec<usize>> = HashMap::new();
            for (j, r) in rrows.iter().enumerate() {
                index.entry(&r.values[ri]).or_default().push(j);
            }
            let mut out = Vec::new();
            for l in &lrows {
                if let Some(matches) = index.get(&l.values[li]) {
                    for &j in matches {
                        let r = &rrows[j];
                        let mut values = l.values.clone();
                        values.extend(
                            r.values
                                .iter()
                                .enumerate()
                                .filter(|(k, _)| *k != ri)
                                .map(|(_, v)| v.clone()),
                        );
                        out.push(Row {
                            key: RowKey(format!("{}+{}", l.key, r.key)),
                            values,
                        });
                    }
                }
            }
            transforms.push(format!("join({left_key} = {right_key})"));
            Ok((join_schema(&ls, &rs, right_key), out))
        }
        PlanNode::Aggregate { input, group_by, aggs } => {
            let (schema, rows) = eval(input, catalog, transforms, predicates)?;
            transforms.push(describe_aggregate(group_by, aggs));
            aggregate(&schema, rows, group_by, aggs)
        }
        PlanNode::SortLimit { input, keys, limit } => {
            let (schema, mut rows) = eval(input, catalog, transforms, predicates)?;
            sort_rows(&schema, &mut rows, keys)?;
            if let Some(n) = limit {
                rows.truncate(*n);
            }
            let ks: Vec<String> = keys
                .iter()
                .map(|k| format!("{} {}", k.column, if k.descending { "desc" } else { "asc" }))
                .collect();
            transforms.push(match limit {
                Some(n) => format!("sort_limit({}; {n})", ks.join(", ")),
                None => format!("sort_limit({})", ks.join(", ")),
            });
            Ok((schema, rows))
        }
        PlanNode::Analyze { input, op } => {
            let (schema, rows) = eval(input, catalog, transforms, predicates)?;
            transforms.push(format!("analyze({})", op.describe()));
            analyze(schema, rows, op)
        }
    }
}

pub(crate) fn describe_aggregate(group_by: &[String], aggs: &[AggSpec]) -> String {
    let a: Vec<String> = aggs
        .iter()
        .map(|a| match &a.column {
            Some(c) => format!("{}({c})", a.func.name()),
            None => format!("{}(*)", a.func.name()),
        })
        .collect();
    format!("aggregate({} by {})", a.join(", "), group_by.join(", "))
}

fn numeric(v: &Value, operator: &'static str) -> Result<f64, ExecError> {
    v.as_f64()
        .ok_or_else(|| ExecError::op(operator, format!("non-numeric value `{v}`")))
}

fn aggregate(schema: &Schema, rows: Vec<Row>, group_by: &[String], aggs: &[AggSpec]) -> Result<Output, ExecError> {
    let gidx: Vec<usize> = group_by
        .iter()
        .map(|g| schema.index_of(g).ok_or_else(|| ExecError::op("aggregate", format!("unknown column `{g}`"))))
        .collect::<Result<_, _>>()?;
    let aidx: Vec<Option<usize>> = aggs
        .iter()
        .map(|a| a.column.as_deref().and_then(|c| schema.index_of(c)))
        .collect();
    let out_schema = aggregate_schema(schema, group_by, aggs);
    let mut groups: HashMap<Vec<Value>, Vec<usize>> = HashMap::new();
    for (i, r) in rows.iter().enumerate() {
        let key: Vec<Value> = gidx.iter().map(|&j| r.values[j].clone()).collect();
        groups.entry(key).or_default().push(i);
    }
    let mut keys: Vec<Vec<Value>> = groups.keys().cloned().collect();
    keys.sort();
    let mut out = Vec::with_capacity(keys.len());
    for key in keys {
        let members = &groups[&key];
        let mut values = key.clone();
        for (a, idx) in aggs.iter().zip(&aidx) {
            let v = match (a.func, idx) {
                (AggFunc::Count, _) => Value::num(members.len() as f64),
                (func, Some(j)) => {
                    let col = members.iter().map(|&m| &rows[m].values[*j]);
                    match func {
                        AggFunc::Sum | AggFunc::Mean => {
                            let mut s = 0.0;
                            for v in col {
                                s += numeric(v, "aggregate")?;
                            }
                            if func == AggFunc::Mean {
                                s /= members.len() as f64;
                            }
                            Value::num(s)
                        }
                        AggFunc::Min => col.min().cloned().expect("nonempty group"),
                        AggFunc::Max => col.max().cloned().expect("nonempty group"),
                        AggFunc::Count => unreachable!(),
                    }
                }
                (_, None) => return Err(ExecError::op("aggregate", "missing aggregate column")),
            };
            values.push(v);
        }
        out.push(Row {
            key: group_key(&key),
            values,
        });
    }
    Ok((out_schema, out))
}

/// Row key of an aggregate group: `g:` followed by the group values joined by `|`.
pub fn group_key(values: &[Value]) -> RowKey {
    let parts: Vec<String> = values.iter().map(Value::to_string).collect();
    RowKey(format!("g:{}", parts.join("|")))
}

fn sort_rows(schema: &Schema, rows: &mut [Row], keys: &[SortKey]) -> Result<(), ExecError> {
    let idx: Vec<(usize, bool)> = keys
        .iter()
        .map(|k| {
            schema
                .index_of(&k.column)
                .map(|i| (i, k.descending))
                .ok_or_else(|| ExecError::op("sort_limit", format!("unknown column `{}`", k.column)))
        })
        .collect::<Result<_, _>>()?;
    rows.sort_by(|a, b| {
        for &(i, desc) in &idx {
            let o = a.values[i].cmp(&b.values[i]);
            let o = if desc { o.reverse() } else { o };
            if o != Ordering::Equal {
                return o;
            }
        }
        a.key.cmp(&b.key)
    });
    Ok(())
}

fn column_numbers(schema: &Schema, rows: &[Row], column: &str) -> Result<(usize, Vec<f64>), ExecError> {
    let i = schema
        .index_of(column)
        .ok_or_else(|| ExecError::op("analyze", format!("unknown column `{column}`")))?;
    let xs = rows
        .iter()
        .map(|r| numeric(&r.values[i], "analyze"))
        .collect::<Result<_, _>>()?;
    Ok((i, xs))
}

fn analyze(mut schema: Schema, mut rows: Vec<Row>, op: &AnalyzeOp) -> Result<Output, ExecError> {
    match op {
        AnalyzeOp::Topk { column, k, descending } => {
            let key = SortKey {
                column: column.clone(),
                descending: *descending,
            };
            sort_rows(&schema, &mut rows, &[key])?;
            rows.truncate(*k);
        }
        AnalyzeOp::PercentageOfTotal { column } => {
            let (_, xs) = column_numbers(&schema, &rows, column)?;
            let total: f64 = xs.iter().sum();
            if !rows.is_empty() && total == 0.0 {
                return Err(ExecError::Expr {
                    operator: "analyze",
                    cause: ExprError::DivisionByZero,
                });
            }
            for (r, x) in rows.iter_mut().zip(xs) {
                r.values.push(Value::num(100.0 * x / total));
            }
        }
        AnalyzeOp::Binning { column, width } => {
            let (_, xs) = column_numbers(&schema, &rows, column)?;
            for (r, x) in rows.iter_mut().zip(xs) {
                r.values.push(Value::num((x / width).floor() * width));
            }
        }
        AnalyzeOp::Zscore { column } => {
            let (_, xs) = column_numbers(&schema, &rows, column)?;
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let sd = var.sqrt();
            if !rows.is_empty() && sd == 0.0 {
                return Err(ExecError::Expr {
                    operator: "analyze",
                    cause: ExprError::DivisionByZero,
                });
            }
            for (r, x) in rows.iter_mut().zip(xs) {
                r.values.push(Value::num((x - mean) / sd));
            }
        }
        AnalyzeOp::Sample { n, seed } => {
            rows = sample_rows(rows, *n, *seed);
        }
    }
    if let Some(added) = op.added_column() {
        schema
            .columns
            .push(crate::value::Column::new(added, crate::value::SemanticType::Quantitative));
    }
    Ok((schema, rows))
}

/// Uniform sample without replacement, keeping input order. Seeded samples are reproducible.
pub(crate) fn sample_rows(rows: Vec<Row>, n: usize, seed: Option<u64>) -> Vec<Row> {
    if n >= rows.len() {
        return rows;
    }
    let mut picked = match seed {
        Some(s) => index::sample(&mut ChaCha8Rng::seed_from_u64(s), rows.len(), n).into_vec(),
        None => index::sample(&mut rand::rng(), rows.len(), n).into_vec(),
    };
    picked.sort_unstable();
    let mut rows: Vec<Option<Row>> = rows.into_iter().map(Some).collect();
    picked.into_iter().map(|i| rows[i].take().expect("distinct")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use crate::predicate::{Atom, Predicate};
    use crate::value::{Column, SemanticType};

    fn catalog() -> TableCatalog {
        let mut c = TableCatalog::new();
        let schema = Schema::new(vec![
            Column::new("state", SemanticType::Nominal),
            Column::new("month", SemanticType::Temporal),
            Column::new("temp", SemanticType::Quantitative),
        ]);
        let mut rows = Vec::new();
        for (s, base) in [("FL", 70.0), ("ME", 40.0), ("TX", 65.0)] {
            for m in 1..=12 {
                for y in 0..2 {
                    let t = base + m as f64 + y as f64 * 0.5;
                    rows.push(Row::new(
                        format!("t:{}", rows.len()),
                        vec![Value::text(s), Value::num(m as f64), Value::num(t)],
                    ));
                }
            }
        }
        c.register_table("temps", schema, rows).unwrap();
        c
    }

    #[test]
    fn florida_monthly_means() {
        let c = catalog();
        let plan = QueryPlan::new(
            PlanNode::scan("temps")
                .filter(Predicate::new(vec![Atom::membership("state", [Value::text("FL")])]))
                .aggregate(vec!["month".into()], vec![AggSpec::new(AggFunc::Mean, "temp")]),
        );
        let out = execute_plan(&plan, &c).unwrap();
        assert_eq!(out.len(), 12);
        assert_eq!(out.rows[0].values, vec![Value::num(1.0), Value::num(71.25)]);
        assert_eq!(out.rows[0].key.as_str(), "g:1");
        assert_eq!(out.lineage.sources, vec!["temps".to_string()]);
        assert_eq!(out.lineage.predicate, "\"state\" IN ('FL')");
    }

    #[test]
    fn unsatisfiable_filter_keeps_schema() {
        let c = catalog();
        let plan = QueryPlan::new(
            PlanNode::scan("temps").filter(Predicate::new(vec![Atom::range("month", 13.0, 14.0)])),
        );
        let out = execute_plan(&plan, &c).unwrap();
        assert!(out.is_empty());
        assert_eq!(out.schema.len(), 3);
    }

    #[test]
    fn global_aggregate_of_empty_input_has_no_rows() {
        let c = catalog();
        let plan = QueryPlan::new(
            PlanNode::scan("temps")
                .filter(Predicate::new(vec![Atom::range("month", 13.0, 14.0)]))
                .aggregate(vec![], vec![AggSpec::count()]),
        );
        assert!(execute_plan(&plan, &c).unwrap().is_empty());
    }

    #[test]
    fn division_by_zero_is_an_error() {
        let c = catalog();
        let plan = QueryPlan::new(PlanNode::scan("temps").derive(
            "bad",
            Expr::Div {
                left: Box::new(Expr::col("temp")),
                right: Box::new(Expr::lit(0.0)),
            },
        ));
        assert!(matches!(
            execute_plan(&plan, &c),
            Err(ExecError::Expr {
                cause: ExprError::DivisionByZero,
                ..
            })
        ));
    }

    #[test]
    fn zscore_matches_hand_computation() {
        let mut c = TableCatalog::new();
        let schema = Schema::new(vec![Column::new("x", SemanticType::Quantitative)]);
        let rows = [2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]
            .iter()
            .enumerate()
            .map(|(i, x)| Row::new(format!("z:{i}"), vec![Value::num(*x)]))
            .collect();
        c.register_table("z", schema, rows).unwrap();
        let plan = QueryPlan::new(PlanNode::scan("z").analyze(AnalyzeOp::Zscore { column: "x".into() }));
        let out = execute_plan(&plan, &c).unwrap();
        // mean 5, population sd 2
        let z: Vec<f64> = out.column_values("x_z").unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        assert_eq!(z, vec![-1.5, -0.5, -0.5, -0.5, 0.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn sort_ties_break_on_row_key() {
        let c = catalog();
        let plan = QueryPlan::new(
            PlanNode::scan("temps").sort_limit(vec![SortKey::desc("month")], Some(3)),
        );
        let out = execute_plan(&plan, &c).unwrap();
        let keys: Vec<&str> = out.rows.iter().map(|r| r.key.as_str()).collect();
        assert_eq!(keys, ["t:22", "t:23", "t:46"]);
    }

    #[test]
    fn seeded_sample_is_reproducible() {
        let c = catalog();
        let plan = QueryPlan::new(PlanNode::scan("temps").analyze(AnalyzeOp::Sample { n: 5, seed: Some(9) }));
        let a = execute_plan(&plan, &c).unwrap();
        let b = execute_plan(&plan, &c).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(a.row_keys(), b.row_keys());
    }

    #[test]
    fn missing_table_reported() {
        let c = catalog();
        let plan = QueryPlan::new(PlanNode::scan("nope"));
        assert_eq!(
            execute_plan(&plan, &c),
            Err(ExecError::MissingSourceTable("nope".into()))
        );
    }
}
