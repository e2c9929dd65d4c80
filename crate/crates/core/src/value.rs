//! Scalar values, column schemas and keyed rows.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

/// Name of the pseudo-column that exposes a row's key to predicates.
pub const ROW_KEY_COLUMN: &str = "__row_key";

/// A single cell. Nulls are not representable.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Num(f64),
    Text(String),
}

impl Value {
    /// Builds a numeric value, folding `-0.0` into `0.0`.
    pub fn num(v: f64) -> Self {
        if v == 0.0 {
            Value::Num(0.0)
        } else {
            Value::Num(v)
        }
    }

    pub fn text(s: impl Into<String>) -> Self {
        Value::Text(s.into())
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Num(v) => Some(*v),
            Value::Text(_) => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            Value::Num(_) => None,
        }
    }

    pub fn is_num(&self) -> bool {
        matches!(self, Value::Num(_))
    }

    /// Total order: numbers (IEEE total order) sort before text (byte order).
    pub fn total_cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Value::Num(a), Value::Num(b)) => a.total_cmp(b),
            (Value::Num(_), Value::Text(_)) => Ordering::Less,
            (Value::Text(_), Value::Num(_)) => Ordering::Greater,
            (Value::Text(a), Value::Text(b)) => a.cmp(b),
        }
    }

    /// Canonical byte encoding used by digests. Numbers use their exact bit pattern.
    pub fn canonical(&self, out: &mut Vec<u8>) {
        match self {
            Value::Num(v) => {
                out.push(b'n');
                out.extend_from_slice(&v.to_bits().to_be_bytes());
            }
            Value::Text(s) => {
                out.push(b's');
                out.extend_from_slice(&(s.len() as u64).to_be_bytes());
                out.extend_from_slice(s.as_bytes());
            }
        }
    }

    /// SQL literal form.
    pub fn sql_literal(&self) -> String {
        match self {
            Value::Num(v) => format!("{v}"),
            Value::Text(s) => format!("'{}'", s.replace('\'', "''")),
        }
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.total_cmp(other) == Ordering::Equal
    }
}

impl Eq for Value {}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        self.total_cmp(other)
    }
}

impl Hash for Value {
    fn hash<H: Hasher>(&self, state: &mut H) {
        match self {
            Value::Num(v) => {
                0u8.hash(state);
                v.to_bits().hash(state);
            }
            Value::Text(s) => {
                1u8.hash(state);
                s.hash(state);
            }
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Num(v) => write!(f, "{v}"),
            Value::Text(s) => f.write_str(s),
        }
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::num(v)
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::num(v as f64)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_string())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Text(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticType {
    Quantitative,
    Nominal,
    Ordinal,
    Temporal,
}

impl SemanticType {
    pub fn as_str(self) -> &'static str {
        match self {
            SemanticType::Quantitative => "quantitative",
            SemanticType::Nominal => "nominal",
            SemanticType::Ordinal => "ordinal",
            SemanticType::Temporal => "temporal",
        }
    }

    /// Nominal data has no order an interval gesture could follow.
    pub fn is_ordered(self) -> bool {
        !matches!(self, SemanticType::Nominal)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: SemanticType,
}

impl Column {
    pub fn new(name: impl Into<String>, kind: SemanticType) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }
}

/// Ordered list of columns.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schema {
    pub columns: Vec<Column>,
}

impl Schema {
    pub fn new(columns: Vec<Column>) -> Self {
        Self { columns }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    /// True when `name` resolves, counting the row-key pseudo-column.
    pub fn resolves(&self, name: &str) -> bool {
        name == ROW_KEY_COLUMN || self.index_of(name).is_some()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn canonical(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.columns.len() as u64).to_be_bytes());
        for c in &self.columns {
            out.extend_from_slice(&(c.name.len() as u64).to_be_bytes());
            out.extend_from_slice(c.name.as_bytes());
            out.extend_from_slice(c.kind.as_str().as_bytes());
            out.push(0);
        }
    }
}

/// Stable identity of a row. Derived deterministically from source keys and group keys.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RowKey(pub String);

impl RowKey {
    pub fn new(s: impl Into<String>) -> Self {
        RowKey(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Row {
    pub key: RowKey,
    pub values: Vec<Value>,
}

impl Row {
    pub fn new(key: impl Into<String>, values: Vec<Value>) -> Self {
        Self {
            key: RowKey(key.into()),
            values,
        }
    }

    /// Looks a column up by schema position, resolving the row-key pseudo-column.
    pub fn get(&self, schema: &Schema, column: &str) -> Option<Value> {
        if column == ROW_KEY_COLUMN {
            return Some(Value::Text(self.key.0.clone()));
        }
        schema.index_of(column).map(|i| self.values[i].clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_sort_before_text() {
        assert!(Value::num(1e9) < Value::text("a"));
        assert!(Value::num(-1.0) < Value::num(0.0));
    }

    #[test]
    fn negative_zero_is_folded() {
        assert_eq!(Value::num(-0.0).as_f64().unwrap().to_bits(), 0.0f64.to_bits());
    }

    #[test]
    fn sql_literal_escapes_quotes() {
        assert_eq!(Value::text("O'Hare").sql_literal(), "'O''Hare'");
        assert_eq!(Value::num(6.0).sql_literal(), "6");
    }
}
