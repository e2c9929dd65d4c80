//! The closed derivation-expression grammar.
//!
//! Arithmetic, `ln(x + c)`, `exp`, `abs` and conditional bucketing. Anything outside
//! this grammar cannot be expressed, which keeps every derived column replayable.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::value::{Row, Schema, SemanticType, Value};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Expr {
    Col { name: String },
    Lit { value: f64 },
    Add { left: Box<Expr>, right: Box<Expr> },
    Sub { left: Box<Expr>, right: Box<Expr> },
    Mul { left: Box<Expr>, right: Box<Expr> },
    Div { left: Box<Expr>, right: Box<Expr> },
    /// Natural log of `arg + offset`.
    Log { arg: Box<Expr>, offset: f64 },
    Exp { arg: Box<Expr> },
    Abs { arg: Box<Expr> },
    /// `labels[i]` for the first `i` with `arg < thresholds[i]`, else the last label.
    Bucket {
        arg: Box<Expr>,
        thresholds: Vec<f64>,
        labels: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("log domain error: {value} + {offset} <= 0")]
    Domain { value: f64, offset: f64 },
    #[error("division by zero")]
    DivisionByZero,
    #[error("type error: {0}")]
    Type(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("non-finite result")]
    NonFinite,
    #[error("malformed expression: {0}")]
    Malformed(String),
}

impl Expr {
    pub fn col(name: impl Into<String>) -> Self {
        Expr::Col { name: name.into() }
    }

    pub fn lit(value: f64) -> Self {
        Expr::Lit { value }
    }

    /// `ln(x + 1)`, the usual zero-safe log transform.
    pub fn log1p(name: impl Into<String>) -> Self {
        Expr::Log {
            arg: Box::new(Expr::col(name)),
            offset: 1.0,
        }
    }

    pub fn columns(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_columns(&mut out);
        out
    }

    fn collect_columns(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Col { name } => {
                out.insert(name.clone());
            }
            Expr::Lit { .. } => {}
            Expr::Add { left, right }
            | Expr::Sub { left, right }
            | Expr::Mul { left, right }
            | Expr::Div { left, right } => {
                left.collect_columns(out);
                right.collect_columns(out);
            }
            Expr::Log { arg, .. } | Expr::Exp { arg } | Expr::Abs { arg } | Expr::Bucket { arg, .. } => {
                arg.collect_columns(out)
            }
        }
    }

    /// Semantic type of the derived column.
    pub fn output_type(&self) -> SemanticType {
        match self {
            Expr::Bucket { .. } => SemanticType::Ordinal,
            _ => SemanticType::Quantitative,
        }
    }

    pub fn check(&self, schema: &Schema) -> Result<(), ExprError> {
        for c in self.columns() {
            if schema.index_of(&c).is_none() {
                return Err(ExprError::UnknownColumn(c));
            }
        }
        self.check_shape()
    }

    fn check_shape(&self) -> Result<(), ExprError> {
        match self {
            Expr::Bucket {
                arg,
                thresholds,
                labels,
            } => {
                if labels.len() != thresholds.len() + 1 {
                    return Err(ExprError::Malformed(
                        "bucket needs one more label than thresholds".into(),
                    ));
                }
                if thresholds.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(ExprError::Malformed("bucket thresholds must increase".into()));
                }
                if matches!(**arg, Expr::Bucket { .. }) {
                    return Err(ExprError::Malformed("bucket of bucket".into()));
                }
                arg.check_shape()
            }
            Expr::Add { left, right }
            | Expr::Sub { left, right }
            | Expr::Mul { left, right }
            | Expr::Div { left, right } => {
                for side in [left, right] {
                    if matches!(**side, Expr::Bucket { .. }) {
                        return Err(ExprError::Malformed("arithmetic over bucket labels".into()));
                    }
                    side.check_shape()?;
                }
                Ok(())
            }
            Expr::Log { arg, .. } | Expr::Exp { arg } | Expr::Abs { arg } => {
                if matches!(**arg, Expr::Bucket { .. }) {
                    return Err(ExprError::Malformed("function over bucket labels".into()));
                }
                arg.check_shape()
            }
            Expr::Col { .. } | Expr::Lit { .. } => Ok(()),
        }
    }

    /// SQL rendering in the documented dialect.
    pub fn to_sql(&self) -> String {
        match self {
            Expr::Col { name } => format!("\"{name}\""),
            Expr::Lit { value } => format!("{value}"),
            Expr::Add { left, right } => format!("({} + {})", left.to_sql(), right.to_sql()),
            Expr::Sub { left, right } => format!("({} - {})", left.to_sql(), right.to_sql()),
            Expr::Mul { left, right } => format!("({} * {})", left.to_sql(), right.to_sql()),
            Expr::Div { left, right } => format!("({} / {})", left.to_sql(), right.to_sql()),
            Expr::Log { arg, offset } => format!("LN({} + {offset})", arg.to_sql()),
            Expr::Exp { arg } => format!("EXP({})", arg.to_sql()),
            Expr::Abs { arg } => format!("ABS({})", arg.to_sql()),
            Expr::Bucket {
                arg,
                thresholds,
                labels,
            } => {
                let a = arg.to_sql();
                let mut s = String::from("CASE");
                for (t, l) in thresholds.iter().zip(labels) {
                    s.push_str(&format!(" WHEN {a} < {t} THEN {}", Value::text(l.as_str()).sql_literal()));
                }
                s.push_str(&format!(
                    " ELSE {} END",
                    Value::text(labels.last().map(String::as_str).unwrap_or("")).sql_literal()
                ));
                s
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_sql())
    }
}

/// Evaluates `expr` against one row.
pub fn evaluate_expression(expr: &Expr, schema: &Schema, row: &Row) -> Result<Value, ExprError> {
    match expr {
        Expr::Bucket {
            arg,
            thresholds,
            labels,
        } => {
            let x = eval_num(arg, schema, row)?;
            let i = thresholds.iter().position(|t| x < *t).unwrap_or(thresholds.len());
            labels
                .get(i)
                .map(|l| Value::text(l.as_str()))
                .ok_or_else(|| ExprError::Malformed("bucket labels".into()))
        }
        _ => eval_num(expr, schema, row).map(Value::num),
    }
}

fn eval_num(expr: &Expr, schema: &Schema, row: &Row) -> Result<f64, ExprError> {
    let v = match expr {
        Expr::Col { name } => {
            let i = schema
                .index_of(name)
                .ok_or_else(|| ExprError::UnknownColumn(name.clone()))?;
            row.values[i]
                .as_f64()
                .ok_or_else(|| ExprError::Type(format!("column `{name}` is not numeric")))?
        }
        Expr::Lit { value } => *value,
        Expr::Add { left, right } => eval_num(left, schema, row)? + eval_num(right, schema, row)?,
        Expr::Sub { left, right } => eval_num(left, schema, row)? - eval_num(right, schema, row)?,
        Expr::Mul { left, right } => eval_num(left, schema, row)? * eval_num(right, schema, row)?,
        Expr::Div { left, right } => {
            let d = eval_num(right, schema, row)?;
            if d == 0.0 {
                return Err(ExprError::DivisionByZero);
            }
            eval_num(left, schema, row)? / d
        }
        Expr::Log { arg, offset } => {
            let x = eval_num(arg, schema, row)?;
            if x + offset <= 0.0 {
                return Err(ExprError::Domain { value: x, offset: *offset });
            }
            (x + offset).ln()
        }
        Expr::Exp { arg } => eval_num(arg, schema, row)?.exp(),
        Expr::Abs { arg } => eval_num(arg, schema, row)?.abs(),
        Expr::Bucket { .. } => return Err(ExprError::Type("bucket yields a label".into())),
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ExprError::NonFinite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::Column;

    fn one(x: f64) -> (Schema, Row) {
        (
            Schema::new(vec![Column::new("x", SemanticType::Quantitative)]),
            Row::new("k", vec![Value::num(x)]),
        )
    }

    #[test]
    fn log1p_of_zero_is_zero() {
        let (s, r) = one(0.0);
        assert_eq!(evaluate_expression(&Expr::log1p("x"), &s, &r).unwrap(), Value::num(0.0));
    }

    #[test]
    fn log1p_of_e_minus_one_is_one() {
        let (s, r) = one(std::f64::consts::E - 1.0);
        let v = evaluate_expression(&Expr::log1p("x"), &s, &r).unwrap().as_f64().unwrap();
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn log_below_offset_is_a_domain_error() {
        let (s, r) = one(-1.0);
        assert!(matches!(
            evaluate_expression(&Expr::log1p("x"), &s, &r),
            Err(ExprError::Domain { .. })
        ));
    }

    #[test]
    fn division_by_zero_surfaces() {
        let (s, r) = one(0.0);
        let e = Expr::Div {
            left: Box::new(Expr::lit(1.0)),
            right: Box::new(Expr::col("x")),
        };
        assert_eq!(evaluate_expression(&e, &s, &r), Err(ExprError::DivisionByZero));
    }

    #[test]
    fn bucket_picks_first_threshold_above() {
        let e = Expr::Bucket {
            arg: Box::new(Expr::col("x")),
            thresholds: vec![1.0, 10.0],
            labels: vec!["low".into(), "mid".into(), "high".into()],
        };
        for (x, want) in [(0.0, "low"), (1.0, "mid"), (9.9, "mid"), (10.0, "high")] {
            let (s, r) = one(x);
            assert_eq!(evaluate_expression(&e, &s, &r).unwrap(), Value::text(want));
        }
    }

    #[test]
    fn sql_rendering() {
        assert_eq!(Expr::log1p("papers").to_sql(), "LN(\"papers\" + 1)");
    }
}
