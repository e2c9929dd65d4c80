//! Query plans: operator trees over catalog tables, with schema inference and SQL text.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::CatalogSchema;
use crate::expr::{Expr, ExprError};
use crate::predicate::{Predicate, PredicateError};
use crate::value::{Column, Schema, SemanticType};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggFunc {
    Sum,
    Mean,
    Count,
    Min,
    Max,
}

impl AggFunc {
    pub fn name(self) -> &'static str {
        match self {
            AggFunc::Sum => "sum",
            AggFunc::Mean => "mean",
            AggFunc::Count => "count",
            AggFunc::Min => "min",
            AggFunc::Max => "max",
        }
    }

    fn sql(self) -> &'static str {
        match self {
            AggFunc::Sum => "SUM",
            AggFunc::Mean => "AVG",
            AggFunc::Count => "COUNT",
            AggFunc::Min => "MIN",
            AggFunc::Max => "MAX",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AggSpec {
    pub func: AggFunc,
    /// Input column; `None` only for `count`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alias: Option<String>,
}

impl AggSpec {
    pub fn new(func: AggFunc, column: impl Into<String>) -> Self {
        Self {
            func,
            column: Some(column.into()),
            alias: None,
        }
    }

    pub fn count() -> Self {
        Self {
            func: AggFunc::Count,
            column: None,
            alias: None,
        }
    }

    /// `count` for counts, otherwise `<func>_<column>`, unless aliased.
    pub fn output_name(&self) -> String {
        if let Some(a) = &self.alias {
            return a.clone();
        }
        match (&self.func, &self.column) {
            (AggFunc::Count, _) | (_, None) => "count".into(),
            (f, Some(c)) => format!("{}_{c}", f.name()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SortKey {
    pub column: String,
    #[serde(default)]
    pub descending: bool,
}

impl SortKey {
    pub fn asc(column: impl Into<String>) -> Self {
        Self {
            column: column.into(),
            descending: false,
        }
    }

    pub fn desc(column: impl Into<String>) -> Self {
        Self {
            column: column.into(),
            descending: true,
        }
    }
}

/// Row-level analytic operators standing in for modeling steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum AnalyzeOp {
    /// Keep the `k` rows with the largest (or smallest) `column`; ties by row key.
    Topk {
        column: String,
        k: usize,
        #[serde(default = "default_true")]
        descending: bool,
    },
    /// Adds `<column>_pct` = 100 * value / column total.
    PercentageOfTotal { column: String },
    /// Adds `<column>_bin` = floor(value / width) * width.
    Binning { column: String, width: f64 },
    /// Adds `<column>_z` using the population standard deviation.
    Zscore { column: String },
    /// Uniform sample of `n` rows. Without a seed the step is nondeterministic.
    Sample {
        n: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

fn default_true() -> bool {
    true
}

impl AnalyzeOp {
    pub fn is_nondeterministic(&self) -> bool {
        matches!(self, AnalyzeOp::Sample { seed: None, .. })
    }

    pub fn input_columns(&self) -> Vec<&str> {
        match self {
            AnalyzeOp::Topk { column, .. }
            | AnalyzeOp::PercentageOfTotal { column }
            | AnalyzeOp::Binning { column, .. }
            | AnalyzeOp::Zscore { column } => vec![column.as_str()],
            AnalyzeOp::Sample { .. } => vec![],
        }
    }

    /// Name of the column this operator appends, if any.
    pub fn added_column(&self) -> Option<String> {
        match self {
            AnalyzeOp::PercentageOfTotal { column } => Some(format!("{column}_pct")),
            AnalyzeOp::Binning { column, .. } => Some(format!("{column}_bin")),
            AnalyzeOp::Zscore { column } => Some(format!("{column}_z")),
            AnalyzeOp::Topk { .. } | AnalyzeOp::Sample { .. } => None,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            AnalyzeOp::Topk { column, k, descending } => {
                format!("topk({column}, {k}, {})", if *descending { "desc" } else { "asc" })
            }
            AnalyzeOp::PercentageOfTotal { column } => format!("percentage_of_total({column})"),
            AnalyzeOp::Binning { column, width } => format!("binning({column}, {width})"),
            AnalyzeOp::Zscore { column } => format!("zscore({column})"),
            AnalyzeOp::Sample { n, seed } => match seed {
                Some(s) => format!("sample({n}, seed={s})"),
                None => format!("sample({n})"),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum PlanNode {
    Scan {
        table: String,
    },
    Filter {
        input: Box<PlanNode>,
        predicate: Predicate,
    },
    Project {
        input: Box<PlanNode>,
        columns: Vec<String>,
    },
    Derive {
        input: Box<PlanNode>,
        name: String,
        expr: Expr,
    },
    Join {
        left: Box<PlanNode>,
        right: Box<PlanNode>,
        left_key: String,
        right_key: String,
    },
    Aggregate {
        input: Box<PlanNode>,
        group_by: Vec<String>,
        aggs: Vec<AggSpec>,
    },
    SortLimit {
        input: Box<PlanNode>,
        keys: Vec<SortKey>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        limit: Option<usize>,
    },
    Analyze {
        input: Box<PlanNode>,
        op: AnalyzeOp,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("unknown column `{column}` in {operator}")]
    UnknownColumn { operator: &'static str, column: String },
    #[error("column `{0}` already exists")]
    DuplicateColumn(String),
    #[error("{operator}: column `{column}` is not quantitative")]
    NotQuantitative { operator: &'static str, column: String },
    #[error("invalid predicate: {0}")]
    Predicate(#[from] PredicateError),
    #[error("invalid expression: {0}")]
    Expr(#[from] ExprError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryPlan {
    pub root: PlanNode,
}

impl QueryPlan {
    pub fn new(root: PlanNode) -> Self {
        Self { root }
    }

    pub fn output_schema(&self, catalog: &CatalogSchema) -> Result<Schema, PlanError> {
        self.root.output_schema(catalog)
    }

    /// Every table the plan scans, sorted.
    pub fn sources(&self) -> Vec<String> {
        let mut out = BTreeSet::new();
        self.root.collect_sources(&mut out);
        out.into_iter().collect()
    }

    pub fn has_nondeterministic_step(&self) -> bool {
        self.root.any(&|n| matches!(n, PlanNode::Analyze { op, .. } if op.is_nondeterministic()))
    }

    /// SQL text in the documented dialect, as a chain of common table expressions.
    pub fn to_sql(&self) -> String {
        let mut ctes = Vec::new();
        let last = self.root.render(&mut ctes);
        let mut s = String::from("WITH ");
        s.push_str(
            &ctes
                .iter()
                .map(|(n, q)| format!("{n} AS ({q})"))
                .collect::<Vec<_>>()
                .join(",\n     "),
        );
        s.push_str(&format!("\nSELECT * FROM {last}"));
        s
    }
}

impl fmt::Display for QueryPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_sql())
    }
}

fn require(schema: &Schema, operator: &'static str, column: &str) -> Result<(), PlanError> {
    if schema.index_of(column).is_some() {
        Ok(())
    } else {
        Err(PlanError::UnknownColumn {
            operator,
            column: column.to_string(),
        })
    }
}

fn require_quantitative(schema: &Schema, operator: &'static str, column: &str) -> Result<(), PlanError> {
    require(schema, operator, column)?;
    match schema.column(column).map(|c| c.kind) {
        Some(SemanticType::Quantitative) | Some(SemanticType::Temporal) | Some(SemanticType::Ordinal) => Ok(()),
        _ => Err(PlanError::NotQuantitative {
            operator,
            column: column.to_string(),
        }),
    }
}

/// Output schema of a join: left columns, then right columns minus the right key.
/// Right-side names that collide with left ones get an `r_` prefix.
pub fn join_schema(left: &Schema, right: &Schema, right_key: &str) -> Schema {
    let mut cols = left.columns.clone();
    for c in &right.columns {
        if c.name == right_key {
            continue;
        }
        let name = if left.index_of(&c.name).is_some() {
            format!("r_{}", c.name)
        } else {
            c.name.clone()
        };
        cols.push(Column::new(name, c.kind));
    }
    Schema::new(cols)
}

pub fn aggregate_schema(input: &Schema, group_by: &[String], aggs: &[AggSpec]) -> Schema {
    let mut cols: Vec<Column> = group_by
        .iter()
        .filter_map(|g| input.column(g).cloned())
        .collect();
    for a in aggs {
        let kind = match (a.func, a.column.as_deref().and_then(|c| input.column(c))) {
            (AggFunc::Min | AggFunc::Max, Some(c)) => c.kind,
            _ => SemanticType::Quantitative,
        };
        cols.push(Column::new(a.output_name(), kind));
    }
    Schema::new(cols)
}

impl PlanNode {
    pub fn scan(table: impl Into<String>) -> Self {
        PlanNode::Scan { table: table.into() }
    }

    pub fn filter(self, predicate: Predicate) -> Self {
        PlanNode::Filter {
            input: Box::new(self),
            predicate,
        }
    }

    pub fn project(self, columns: Vec<String>) -> Self {
        PlanNode::Project {
            input: Box::new(self),
            columns,
        }
    }

    pub fn derive(self, name: impl Into<String>, expr: Expr) -> Self {
        PlanNode::Derive {
            input: Box::new(self),
            name: name.into(),
            expr,
        }
    }

    pub fn join(self, right: PlanNode, left_key: impl Into<String>, right_key: impl Into<String>) -> Self {
        PlanNode::Join {
            left: Box::new(self),
            right: Box::new(right),
            left_key: left_key.into(),
            right_key: right_key.into(),
        }
    }

    pub fn aggregate(self, group_by: Vec<String>, aggs: Vec<AggSpec>) -> Self {
        PlanNode::Aggregate {
            input: Box::new(self),
            group_by,
            aggs,
        }
    }

    pub fn sort_limit(self, keys: Vec<SortKey>, limit: Option<usize>) -> Self {
        PlanNode::SortLimit {
            input: Box::new(self),
            keys,
            limit,
        }
    }

    pub fn analyze(self, op: AnalyzeOp) -> Self {
        PlanNode::Analyze {
            input: Box::new(self),
            op,
        }
    }

    fn any(&self, f: &dyn Fn(&PlanNode) -> bool) -> bool {
        if f(self) {
            return true;
        }
        match self {
            PlanNode::Scan { .. } => false,
            PlanNode::Join { left, right, .. } => left.any(f) || right.any(f),
            PlanNode::Filter { input, .. }
            | PlanNode::Project { input, .. }
            | PlanNode::Derive { input, .. }
            | PlanNode::Aggregate { input, .. }
            | PlanNode::SortLimit { input, .. }
            | PlanNode::Analyze { input, .. } => input.any(f),
        }
    }

    fn collect_sources(&self, out: &mut BTreeSet<String>) {
        match self {
            PlanNode::Scan { table } => {
                out.insert(table.clone());
            }
            PlanNode::Join { left, right, .. } => {
                left.collect_sources(out);
                right.collect_sources(out);
            }
            PlanNode::Filter { input, .. }
            | PlanNode::Project { input, .. }
            | PlanNode::Derive { input, .. }
            | PlanNode::Aggregate { input, .. }
            | PlanNode::SortLimit { input, .. }
            | PlanNode::Analyze { input, .. } => input.collect_sources(out),
        }
    }

    pub fn output_schema(&self, catalog: &CatalogSchema) -> Result<Schema, PlanError> {
        match self {
            PlanNode::Scan { table } => catalog
                .table(table)
                .cloned()
                .ok_or_else(|| PlanError::UnknownTable(table.clone())),
            PlanNode::Filter { input, predicate } => {
                let s = input.output_schema(catalog)?;
                predicate.validate(&s)?;
                Ok(s)
            }
            PlanNode::Project { input, columns } => {
                let s = input.output_schema(catalog)?;
                let mut cols = Vec::new();
                let mut seen = BTreeSet::new();
                for c in columns {
                    require(&s, "project", c)?;
                    if !seen.insert(c) {
                        return Err(PlanError::DuplicateColumn(c.clone()));
                    }
                    cols.push(s.column(c).cloned().expect("checked"));
                }
                if cols.is_empty() {
                    return Err(PlanError::InvalidArgument("empty projection".into()));
                }
                Ok(Schema::new(cols))
            }
            PlanNode::Derive { input, name, expr } => {
                let mut s = input.output_schema(catalog)?;
                expr.check(&s)?;
                if s.index_of(name).is_some() {
                    return Err(PlanError::DuplicateColumn(name.clone()));
                }
                s.columns.push(Column::new(name.clone(), expr.output_type()));
                Ok(s)
            }
            PlanNode::Join {
                left,
                right,
                left_key,
                right_key,
            } => {
                let l = left.output_schema(catalog)?;
                let r = right.output_schema(catalog)?;
                require(&l, "join", left_key)?;
                require(&r, "join", right_key)?;
                Ok(join_schema(&l, &r, right_key))
            }
            PlanNode::Aggregate { input, group_by, aggs } => {
                let s = input.output_schema(catalog)?;
                if aggs.is_empty() && group_by.is_empty() {
                    return Err(PlanError::InvalidArgument("aggregate without groups or aggregates".into()));
                }
                let mut names = BTreeSet::new();
                for g in group_by {
                    require(&s, "aggregate", g)?;
                    if !names.insert(g.clone()) {
                        return Err(PlanError::DuplicateColumn(g.clone()));
                    }
                }
                for a in aggs {
                    match (&a.func, &a.column) {
                        (AggFunc::Count, Some(c)) => require(&s, "aggregate", c)?,
                        (AggFunc::Count, None) => {}
                        (AggFunc::Min | AggFunc::Max, Some(c)) => require(&s, "aggregate", c)?,
                        (_, Some(c)) => require_quantitative(&s, "aggregate", c)?,
                        (_, None) => {
                            return Err(PlanError::InvalidArgument(format!(
                                "{} needs a column",
                                a.func.name()
                            )))
                        }
                    }
                    if !names.insert(a.output_name()) {
                        return Err(PlanError::DuplicateColumn(a.output_name()));
                    }
                }
                Ok(aggregate_schema(&s, group_by, aggs))
            }
            PlanNode::SortLimit { input, keys, .. } => {
                let s = input.output_schema(catalog)?;
                for k in keys {
                    require(&s, "sort_limit", &k.column)?;
                }
                Ok(s)
            }
            PlanNode::Analyze { input, op } => {
                let mut s = input.output_schema(catalog)?;
                match op {
                    AnalyzeOp::Topk { column, k, .. } => {
                        require(&s, "analyze", column)?;
                        if *k == 0 {
                            return Err(PlanError::InvalidArgument("topk with k = 0".into()));
                        }
                    }
                    AnalyzeOp::Binning { column, width } => {
                        require_quantitative(&s, "analyze", column)?;
                        if !(*width > 0.0 && width.is_finite()) {
                            return Err(PlanError::InvalidArgument("bin width must be positive".into()));
                        }
                    }
                    AnalyzeOp::PercentageOfTotal { column } | AnalyzeOp::Zscore { column } => {
                        require_quantitative(&s, "analyze", column)?
                    }
                    AnalyzeOp::Sample { .. } => {}
                }
                if let Some(added) = op.added_column() {
                    if s.index_of(&added).is_some() {
                        return Err(PlanError::DuplicateColumn(added));
                    }
                    s.columns.push(Column::new(added, SemanticType::Quantitative));
                }
                Ok(s)
            }
        }
    }

    /// Appends CTEs for this subtree and returns the name holding its output.
    fn render(&self, ctes: &mut Vec<(String, String)>) -> String {
        let body = match self {
            PlanNode::Scan { table } => format!("SELECT * FROM \"{table}\""),
            PlanNode::Filter { input, predicate } => {
                let i = input.render(ctes);
                format!("SELECT * FROM {i} WHERE {}", predicate.to_sql())
            }
            PlanNode::Project { input, columns } => {
                let i = input.render(ctes);
                let cs: Vec<String> = columns.iter().map(|c| format!("\"{c}\"")).collect();
                format!("SELECT {} FROM {i}", cs.join(", "))
            }
            PlanNode::Derive { input, name, expr } => {
                let i = input.render(ctes);
                format!("SELECT *, {} AS \"{name}\" FROM {i}", expr.to_sql())
            }
            PlanNode::Join {
                left,
                right,
                left_key,
                right_key,
            } => {
                let l = left.render(ctes);
                let r = right.render(ctes);
                format!("SELECT * FROM {l} JOIN {r} ON {l}.\"{left_key}\" = {r}.\"{right_key}\"")
            }
            PlanNode::Aggregate { input, group_by, aggs } => {
                let i = input.render(ctes);
                let mut items: Vec<String> = group_by.iter().map(|g| format!("\"{g}\"")).collect();
                for a in aggs {
                    let arg = match &a.column {
                        Some(c) if a.func != AggFunc::Count => format!("\"{c}\""),
                        _ => "*".into(),
                    };
                    items.push(format!("{}({arg}) AS \"{}\"", a.func.sql(), a.output_name()));
                }
                let mut q = format!("SELECT {} FROM {i}", items.join(", "));
                if !group_by.is_empty() {
                    let gs: Vec<String> = group_by.iter().map(|g| format!("\"{g}\"")).collect();
                    q.push_str(&format!(" GROUP BY {}", gs.join(", ")));
                }
                q
            }
            PlanNode::SortLimit { input, keys, limit } => {
                let i = input.render(ctes);
                let mut order: Vec<String> = keys
                    .iter()
                    .map(|k| format!("\"{}\" {}", k.column, if k.descending { "DESC" } else { "ASC" }))
                    .collect();
                order.push("__row_key ASC".into());
                let mut q = format!("SELECT * FROM {i} ORDER BY {}", order.join(", "));
                if let Some(n) = limit {
                    q.push_str(&format!(" LIMIT {n}"));
                }
                q
            }
            PlanNode::Analyze { input, op } => {
                let i = input.render(ctes);
                match op {
                    AnalyzeOp::Topk { column, k, descending } => format!(
                        "SELECT * FROM {i} ORDER BY \"{column}\" {}, __row_key ASC LIMIT {k}",
                        if *descending { "DESC" } else { "ASC" }
                    ),
                    AnalyzeOp::PercentageOfTotal { column } => format!(
                        "SELECT *, 100.0 * \"{column}\" / (SELECT SUM(\"{column}\") FROM {i}) AS \"{column}_pct\" FROM {i}"
                    ),
                    AnalyzeOp::Binning { column, width } => format!(
                        "SELECT *, FLOOR(\"{column}\" / {width}) * {width} AS \"{column}_bin\" FROM {i}"
                    ),
                    AnalyzeOp::Zscore { column } => format!(
                        "SELECT *, (\"{column}\" - (SELECT AVG(\"{column}\") FROM {i})) / (SELECT STDDEV_POP(\"{column}\") FROM {i}) AS \"{column}_z\" FROM {i}"
                    ),
                    AnalyzeOp::Sample { n, seed } => match seed {
                        Some(s) => format!("SELECT * FROM {i} ORDER BY RANDOM({s}) LIMIT {n}"),
                        None => format!("SELECT * FROM {i} ORDER BY RANDOM() LIMIT {n}"),
                    },
                }
            }
        };
        let name = format!("s{}", ctes.len());
        ctes.push((name.clone(), body));
        name
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predicate::Atom;
    use crate::value::Value;

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
    fn aggregate_schema_names() {
        let plan = QueryPlan::new(
            PlanNode::scan("temps").aggregate(
                vec!["month".into()],
                vec![AggSpec::new(AggFunc::Mean, "temp"), AggSpec::count()],
            ),
        );
        let s = plan.output_schema(&catalog()).unwrap();
        assert_eq!(s.names().collect::<Vec<_>>(), ["month", "mean_temp", "count"]);
    }

    #[test]
    fn mean_of_nominal_rejected() {
        let plan = QueryPlan::new(
            PlanNode::scan("temps").aggregate(vec![], vec![AggSpec::new(AggFunc::Mean, "state")]),
        );
        assert!(matches!(
            plan.output_schema(&catalog()),
            Err(PlanError::NotQuantitative { .. })
        ));
    }

    #[test]
    fn sql_is_deterministic_cte_chain() {
        let plan = QueryPlan::new(
            PlanNode::scan("temps")
                .filter(Predicate::new(vec![Atom::membership("state", [Value::text("Florida")])]))
                .aggregate(vec!["month".into()], vec![AggSpec::new(AggFunc::Mean, "temp")]),
        );
        let sql = plan.to_sql();
        assert_eq!(
            sql,
            "WITH s0 AS (SELECT * FROM \"temps\"),\n     \
             s1 AS (SELECT * FROM s0 WHERE \"state\" IN ('Florida')),\n     \
             s2 AS (SELECT \"month\", AVG(\"temp\") AS \"mean_temp\" FROM s1 GROUP BY \"month\")\n\
             SELECT * FROM s2"
        );
        assert_eq!(sql, plan.clone().to_sql());
    }
}
