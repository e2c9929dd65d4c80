//! Data slices: the rows a figure binds, with lineage and a content digest.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::digest::{Digest, DigestBuilder};
use crate::value::{Row, RowKey, Schema, SemanticType, Value, ROW_KEY_COLUMN};

/// Where a slice came from.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lineage {
    pub sources: Vec<String>,
    pub predicate: String,
    pub transforms: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSlice {
    pub schema: Schema,
    pub rows: Vec<Row>,
    pub lineage: Lineage,
    pub digest: Digest,
}

impl DataSlice {
    pub fn new(schema: Schema, rows: Vec<Row>, lineage: Lineage) -> Self {
        let digest = compute_digest_parts(&schema, &rows, |v| v.clone());
        Self {
            schema,
            rows,
            lineage,
            digest,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row_keys(&self) -> BTreeSet<RowKey> {
        self.rows.iter().map(|r| r.key.clone()).collect()
    }

    pub fn column_values(&self, column: &str) -> Option<Vec<Value>> {
        if column == ROW_KEY_COLUMN {
            return Some(self.rows.iter().map(|r| Value::Text(r.key.0.clone())).collect());
        }
        let i = self.schema.index_of(column)?;
        Some(self.rows.iter().map(|r| r.values[i].clone()).collect())
    }

    pub fn column_type(&self, column: &str) -> Option<SemanticType> {
        if column == ROW_KEY_COLUMN {
            return Some(SemanticType::Nominal);
        }
        self.schema.column(column).map(|c| c.kind)
    }

    /// Recomputes the digest from schema and rows.
    pub fn recompute_digest(&self) -> Digest {
        compute_digest(self)
    }

    /// CSV with a header row and a leading `__row_key` column.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        let mut header = vec![ROW_KEY_COLUMN.to_string()];
        header.extend(self.schema.names().map(str::to_string));
        w.write_record(&header).expect("write to vec");
        for row in &self.rows {
            let mut rec = vec![row.key.0.clone()];
            rec.extend(row.values.iter().map(|v| v.to_string()));
            w.write_record(&rec).expect("write to vec");
        }
        String::from_utf8(w.into_inner().expect("flush vec")).expect("utf8 csv")
    }

    /// Parses CSV written by [`DataSlice::to_csv`] against a known schema.
    pub fn from_csv(schema: Schema, lineage: Lineage, text: &str) -> Result<Self, String> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text.as_bytes());
        let header = r.headers().map_err(|e| e.to_string())?.clone();
        let expected: Vec<&str> = std::iter::once(ROW_KEY_COLUMN).chain(schema.names()).collect();
        if header.iter().collect::<Vec<_>>() != expected {
            return Err(format!("csv header mismatch: {:?}", header));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| e.to_string())?;
            let key = rec.get(0).unwrap_or_default().to_string();
            let mut values = Vec::with_capacity(schema.len());
            for (i, col) in schema.columns.iter().enumerate() {
                let cell = rec.get(i + 1).ok_or("short csv row")?;
                values.push(parse_cell(cell, col.kind));
            }
            rows.push(Row::new(key, values));
        }
        Ok(Self::new(schema, rows, lineage))
    }
}

/// Parses a CSV cell: numbers become `Num` unless the column is nominal text.
pub(crate) fn parse_cell(cell: &str, kind: SemanticType) -> Value {
    match kind {
        SemanticType::Nominal => Value::text(cell),
        _ => match cell.parse::<f64>() {
            Ok(v) if v.is_finite() => Value::num(v),
            _ => Value::text(cell),
        },
    }
}

/// Canonical content digest: schema, then rows sorted by full-tuple order.
/// Row keys and lineage are excluded, so the digest is a multiset fingerprint of values.
pub fn compute_digest(data: &DataSlice) -> Digest {
    compute_digest_parts(&data.schema, &data.rows, |v| v.clone())
}

/// Digest after rounding every number to 9 significant digits; used to compare
/// results that may differ only in floating-point summation order.
pub fn rounded_digest(data: &DataSlice) -> Digest {
    compute_digest_parts(&data.schema, &data.rows, round_value)
}

pub(crate) fn round_value(v: &Value) -> Value {
    match v {
        Value::Num(x) => Value::num(round_sig(*x, 9)),
        other => other.clone(),
    }
}

pub fn round_sig(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let s = format!("{:.*e}", (digits - 1) as usize, x);
    s.parse().unwrap_or(x)
}

fn compute_digest_parts(schema: &Schema, rows: &[Row], map: impl Fn(&Value) -> Value) -> Digest {
    let mut tuples: Vec<Vec<Value>> = rows
        .iter()
        .map(|r| r.values.iter().map(&map).collect())
        .collect();
    tuples.sort();
    let mut head = Vec::new();
    schema.canonical(&mut head);
    let mut b = DigestBuilder::new().part(b"provfig.slice.v1").part(&head);
    let mut buf = Vec::new();
    for t in &tuples {
        buf.clear();
        for v in t {
            v.canonical(&mut buf);
        }
        b = b.part(&buf);
    }
    b.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::Column;

    fn slice(rows: Vec<(&str, f64)>) -> DataSlice {
        let schema = Schema::new(vec![
            Column::new("state", SemanticType::Nominal),
            Column::new("temp", SemanticType::Quantitative),
        ]);
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(i, (s, t))| Row::new(format!("r{i}"), vec![Value::text(s), Value::num(t)]))
            .collect();
        DataSlice::new(schema, rows, Lineage::default())
    }

    #[test]
    fn digest_ignores_row_order() {
        let a = slice(vec![("FL", 80.0), ("ME", 40.0), ("TX", 75.5)]);
        let b = slice(vec![("TX", 75.5), ("FL", 80.0), ("ME", 40.0)]);
        assert_eq!(a.digest, b.digest);
    }

    #[test]
    fn digest_sees_single_unit_change() {
        let a = slice(vec![("FL", 80.0), ("ME", 40.0)]);
        let b = slice(vec![("FL", 81.0), ("ME", 40.0)]);
        assert_ne!(a.digest, b.digest);
    }

    #[test]
    fn rounding_absorbs_summation_order() {
        let xs = [0.1, 0.2, 0.3, 1e-3, 7.7, 1e5];
        let fwd: f64 = xs.iter().sum::<f64>() / xs.len() as f64;
        let rev: f64 = xs.iter().rev().sum::<f64>() / xs.len() as f64;
        let a = slice(vec![("FL", fwd)]);
        let b = slice(vec![("FL", rev)]);
        assert_eq!(rounded_digest(&a), rounded_digest(&b));
        assert_eq!(round_sig(123.456789012345, 9), 123.456789);
    }

    #[test]
    fn csv_round_trip_keeps_keys_and_digest() {
        let a = slice(vec![("FL", 80.25), ("Rhode, Island", 40.0)]);
        let csv = a.to_csv();
        assert!(csv.starts_with("__row_key,state,temp\n"));
        let b = DataSlice::from_csv(a.schema.clone(), Lineage::default(), &csv).unwrap();
        assert_eq!(a.digest, b.digest);
        assert_eq!(a.row_keys(), b.row_keys());
    }
}
