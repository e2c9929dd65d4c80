//! Conjunctive row predicates: membership, inclusive ranges and comparisons.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::value::{Row, Schema, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "!=")]
    Ne,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "=",
            CmpOp::Ge => ">=",
            CmpOp::Gt => ">",
            CmpOp::Ne => "<>",
        }
    }

    pub fn holds(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            CmpOp::Lt => ord == Less,
            CmpOp::Le => ord != Greater,
            CmpOp::Eq => ord == Equal,
            CmpOp::Ge => ord != Less,
            CmpOp::Gt => ord == Greater,
            CmpOp::Ne => ord != Equal,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "atom", rename_all = "snake_case")]
pub enum Atom {
    /// `column IN (values)`; values are kept sorted and deduplicated.
    Membership { column: String, values: Vec<Value> },
    /// `column BETWEEN lo AND hi`, both ends inclusive.
    Range { column: String, lo: Value, hi: Value },
    Comparison { column: String, op: CmpOp, value: Value },
}

impl Atom {
    pub fn membership(column: impl Into<String>, values: impl IntoIterator<Item = Value>) -> Self {
        let set: BTreeSet<Value> = values.into_iter().collect();
        Atom::Membership {
            column: column.into(),
            values: set.into_iter().collect(),
        }
    }

    pub fn range(column: impl Into<String>, lo: impl Into<Value>, hi: impl Into<Value>) -> Self {
        Atom::Range {
            column: column.into(),
            lo: lo.into(),
            hi: hi.into(),
        }
    }

    pub fn cmp(column: impl Into<String>, op: CmpOp, value: impl Into<Value>) -> Self {
        Atom::Comparison {
            column: column.into(),
            op,
            value: value.into(),
        }
    }

    pub fn column(&self) -> &str {
        match self {
            Atom::Membership { column, .. }
            | Atom::Range { column, .. }
            | Atom::Comparison { column, .. } => column,
        }
    }

    pub fn is_membership(&self) -> bool {
        matches!(self, Atom::Membership { .. })
    }

    pub fn is_range(&self) -> bool {
        matches!(self, Atom::Range { .. })
    }

    pub fn matches(&self, v: &Value) -> bool {
        match self {
            Atom::Membership { values, .. } => values.binary_search(v).is_ok(),
            Atom::Range { lo, hi, .. } => lo <= v && v <= hi,
            Atom::Comparison { op, value, .. } => op.holds(v.cmp(value)),
        }
    }

    pub fn to_sql(&self) -> String {
        match self {
            Atom::Membership { column, values } => {
                let vs: Vec<String> = values.iter().map(Value::sql_literal).collect();
                format!("\"{column}\" IN ({})", vs.join(", "))
            }
            Atom::Range { column, lo, hi } => format!(
                "\"{column}\" BETWEEN {} AND {}",
                lo.sql_literal(),
                hi.sql_literal()
            ),
            Atom::Comparison { column, op, value } => {
                format!("\"{column}\" {} {}", op.symbol(), value.sql_literal())
            }
        }
    }
}

/// A conjunction of atoms. The empty conjunction is true.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Predicate {
    pub atoms: Vec<Atom>,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum PredicateError {
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("empty membership set on `{0}`")]
    EmptyMembership(String),
    #[error("range on `{0}` has lo > hi")]
    InvertedRange(String),
}

impl Predicate {
    pub fn new(atoms: Vec<Atom>) -> Self {
        Self { atoms }
    }

    pub fn and(mut self, atom: Atom) -> Self {
        self.atoms.push(atom);
        self
    }

    pub fn columns(&self) -> BTreeSet<String> {
        self.atoms.iter().map(|a| a.column().to_string()).collect()
    }

    pub fn validate(&self, schema: &Schema) -> Result<(), PredicateError> {
        for a in &self.atoms {
            if !schema.resolves(a.column()) {
                return Err(PredicateError::UnknownColumn(a.column().to_string()));
            }
            match a {
                Atom::Membership { column, values } if values.is_empty() => {
                    return Err(PredicateError::EmptyMembership(column.clone()))
                }
                Atom::Range { column, lo, hi } if lo > hi => {
                    return Err(PredicateError::InvertedRange(column.clone()))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Evaluates against a row. Columns must already be validated.
    pub fn eval(&self, schema: &Schema, row: &Row) -> bool {
        self.atoms.iter().all(|a| match row.get(schema, a.column()) {
            Some(v) => a.matches(&v),
            None => false,
        })
    }

    pub fn to_sql(&self) -> String {
        if self.atoms.is_empty() {
            return "TRUE".into();
        }
        self.atoms
            .iter()
            .map(Atom::to_sql)
            .collect::<Vec<_>>()
            .join(" AND ")
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_sql())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::{Column, SemanticType};

    #[test]
    fn range_is_inclusive() {
        let a = Atom::range("m", 6.0, 8.0);
        assert!(a.matches(&Value::num(6.0)));
        assert!(a.matches(&Value::num(8.0)));
        assert!(!a.matches(&Value::num(8.5)));
    }

    #[test]
    fn empty_membership_rejected() {
        let s = Schema::new(vec![Column::new("state", SemanticType::Nominal)]);
        let p = Predicate::new(vec![Atom::Membership {
            column: "state".into(),
            values: vec![],
        }]);
        assert_eq!(p.validate(&s), Err(PredicateError::EmptyMembership("state".into())));
    }

    #[test]
    fn sql_uses_between_and_in() {
        let p = Predicate::new(vec![
            Atom::membership("state", [Value::text("Florida")]),
            Atom::range("year", 2014.0, 2024.0),
        ]);
        assert_eq!(
            p.to_sql(),
            "\"state\" IN ('Florida') AND \"year\" BETWEEN 2014 AND 2024"
        );
    }

    #[test]
    fn row_key_pseudo_column_resolves() {
        let s = Schema::new(vec![Column::new("x", SemanticType::Quantitative)]);
        let p = Predicate::new(vec![Atom::membership("__row_key", [Value::text("t:3")])]);
        assert!(p.validate(&s).is_ok());
        assert!(p.eval(&s, &Row::new("t:3", vec![Value::num(1.0)])));
        assert!(!p.eval(&s, &Row::new("t:4", vec![Value::num(1.0)])));
    }
}
