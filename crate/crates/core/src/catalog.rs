//! Table catalog: registration, CSV ingest and the manifest that names source digests.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::Digest;
use crate::slice::{parse_cell, DataSlice, Lineage};
use crate::value::{Column, Row, Schema, SemanticType, Value, ROW_KEY_COLUMN};

/// Nominal columns with at most this many distinct values get a value dictionary.
const DICTIONARY_LIMIT: usize = 512;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CatalogError {
    #[error("table `{0}` already registered")]
    DuplicateTable(String),
    #[error("row {row} does not conform to the schema: {reason}")]
    SchemaMismatch { row: usize, reason: String },
    #[error("csv: {0}")]
    Csv(String),
    #[error("empty schema for `{0}`")]
    EmptySchema(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub id: String,
    pub schema: Schema,
    pub rows: Vec<Row>,
}

impl Table {
    /// The table as a slice (CSV export, digests).
    pub fn to_slice(&self) -> DataSlice {
        DataSlice::new(
            self.schema.clone(),
            self.rows.clone(),
            Lineage {
                sources: vec![self.id.clone()],
                predicate: "TRUE".into(),
                transforms: vec![],
            },
        )
    }

    pub fn to_csv(&self) -> String {
        self.to_slice().to_csv()
    }

    /// Digest of the canonical CSV export, as listed in the manifest.
    pub fn source_digest(&self) -> Digest {
        Digest::of(self.to_csv().as_bytes())
    }
}

/// Table schemas plus small value dictionaries for nominal columns.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CatalogSchema {
    pub tables: BTreeMap<String, Schema>,
    /// `(table, column)` → sorted distinct text values.
    #[serde(default)]
    pub dictionaries: BTreeMap<String, BTreeMap<String, Vec<String>>>,
}

impl CatalogSchema {
    pub fn insert(&mut self, id: impl Into<String>, schema: Schema) {
        self.tables.insert(id.into(), schema);
    }

    pub fn table(&self, id: &str) -> Option<&Schema> {
        self.tables.get(id)
    }

    pub fn values(&self, table: &str, column: &str) -> &[String] {
        self.dictionaries
            .get(table)
            .and_then(|t| t.get(column))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub schema: Schema,
    pub rows: usize,
    pub digest: Digest,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogManifest {
    pub generation: u64,
    pub tables: Vec<ManifestEntry>,
}

/// Immutable tables keyed by id. Cloning is cheap; clones share the query counter.
#[derive(Clone, Debug, Default)]
pub struct TableCatalog {
    tables: BTreeMap<String, Arc<Table>>,
    generation: u64,
    queries: Arc<AtomicU64>,
}

impl TableCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn register_table(
        &mut self,
        id: impl Into<String>,
        schema: Schema,
        rows: Vec<Row>,
    ) -> Result<u64, CatalogError> {
        let id = id.into();
        if self.tables.contains_key(&id) {
            return Err(CatalogError::DuplicateTable(id));
        }
        if schema.is_empty() {
            return Err(CatalogError::EmptySchema(id));
        }
        let mut keys = BTreeSet::new();
        for (i, row) in rows.iter().enumerate() {
            conform(&schema, row).map_err(|reason| CatalogError::SchemaMismatch { row: i, reason })?;
            if !keys.insert(&row.key) {
                return Err(CatalogError::SchemaMismatch {
                    row: i,
                    reason: format!("duplicate row key `{}`", row.key),
                });
            }
        }
        self.tables.insert(id.clone(), Arc::new(Table { id, schema, rows }));
        self.generation += 1;
        Ok(self.generation)
    }

    /// Ingests CSV text: header row, no missing cells. Types are inferred per column
    /// unless `hints` names them. ISO dates (`YYYY-MM-DD`) become temporal text columns
    /// with numeric `year`/`month` companions. A `__row_key` column, if present, supplies keys.
    pub fn ingest_csv(
        &mut self,
        id: impl Into<String>,
        text: &str,
        hints: &BTreeMap<String, SemanticType>,
    ) -> Result<u64, CatalogError> {
        let id = id.into();
        let (schema, rows) = parse_csv_table(&id, text, hints)?;
        self.register_table(id, schema, rows)
    }

    pub fn table(&self, id: &str) -> Option<&Table> {
        self.tables.get(id).map(Arc::as_ref)
    }

    pub fn table_ids(&self) -> impl Iterator<Item = &str> {
        self.tables.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn schema(&self) -> CatalogSchema {
        let mut out = CatalogSchema::default();
        for (id, t) in &self.tables {
            out.insert(id.clone(), t.schema.clone());
            for (ci, c) in t.schema.columns.iter().enumerate() {
                if c.kind != SemanticType::Nominal {
                    continue;
                }
                let set: BTreeSet<&str> = t.rows.iter().filter_map(|r| r.values[ci].as_str()).collect();
                if set.len() <= DICTIONARY_LIMIT {
                    out.dictionaries
                        .entry(id.clone())
                        .or_default()
                        .insert(c.name.clone(), set.into_iter().map(str::to_string).collect());
                }
            }
        }
        out
    }

    pub fn manifest(&self) -> CatalogManifest {
        CatalogManifest {
            generation: self.generation,
            tables: self
                .tables
                .values()
                .map(|t| ManifestEntry {
                    id: t.id.clone(),
                    schema: t.schema.clone(),
                    rows: t.rows.len(),
                    digest: t.source_digest(),
                })
                .collect(),
        }
    }

    /// Counts one executed query; used to audit that every query shows up in a trace.
    pub fn note_query(&self) {
        self.queries.fetch_add(1, Ordering::Relaxed);
    }

    pub fn queries_executed(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }
}

fn conform(schema: &Schema, row: &Row) -> Result<(), String> {
    if row.values.len() != schema.len() {
        return Err(format!("expected {} cells, found {}", schema.len(), row.values.len()));
    }
    for (c, v) in schema.columns.iter().zip(&row.values) {
        match (c.kind, v) {
            (SemanticType::Quantitative, Value::Num(x)) if x.is_finite() => {}
            (SemanticType::Quantitative, _) => return Err(format!("`{}` needs a finite number", c.name)),
            (SemanticType::Nominal, Value::Text(_)) => {}
            (SemanticType::Nominal, _) => return Err(format!("`{}` needs text", c.name)),
            (_, Value::Num(x)) if !x.is_finite() => return Err(format!("`{}` is not finite", c.name)),
            _ => {}
        }
    }
    Ok(())
}

fn is_iso_date(s: &str) -> bool {
    let b = s.as_bytes();
    b.len() == 10
        && b[4] == b'-'
        && b[7] == b'-'
        && b.iter().enumerate().all(|(i, c)| i == 4 || i == 7 || c.is_ascii_digit())
}

fn infer_type(cells: &[&str]) -> SemanticType {
    if !cells.is_empty() && cells.iter().all(|c| is_iso_date(c)) {
        SemanticType::Temporal
    } else if !cells.is_empty() && cells.iter().all(|c| c.parse::<f64>().is_ok_and(f64::is_finite)) {
        SemanticType::Quantitative
    } else {
        SemanticType::Nominal
    }
}

pub(crate) fn parse_csv_table(
    id: &str,
    text: &str,
    hints: &BTreeMap<String, SemanticType>,
) -> Result<(Schema, Vec<Row>), CatalogError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| CatalogError::Csv(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut records = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CatalogError::Csv(e.to_string()))?;
        if rec.len() != header.len() {
            return Err(CatalogError::SchemaMismatch {
                row: i,
                reason: format!("expected {} cells, found {}", header.len(), rec.len()),
            });
        }
        if let Some(j) = rec.iter().position(str::is_empty) {
            return Err(CatalogError::SchemaMismatch {
                row: i,
                reason: format!("missing value for `{}`", header[j]),
            });
        }
        records.push(rec);
    }
    let key_col = header.iter().position(|h| h == ROW_KEY_COLUMN);
    let data_cols: Vec<usize> = (0..header.len()).filter(|&j| Some(j) != key_col).collect();

    let mut columns = Vec::new();
    let mut dates = Vec::new();
    for &j in &data_cols {
        let name = &header[j];
        let kind = hints.get(name).copied().unwrap_or_else(|| {
            let cells: Vec<&str> = records.iter().map(|r| &r[j]).collect();
            infer_type(&cells)
        });
        if kind == SemanticType::Temporal && records.iter().all(|r| is_iso_date(&r[j])) {
            dates.push(j);
        }
        columns.push(Column::new(name.clone(), kind));
    }
    // Numeric companions for ISO date columns.
    let mut derived = Vec::new();
    for &j in &dates {
        let base = &header[j];
        for part in ["year", "month"] {
            let name = if base == "date" {
                part.to_string()
            } else {
                format!("{base}_{part}")
            };
            if header.contains(&name) {
                continue;
            }
            columns.push(Column::new(name, SemanticType::Temporal));
            derived.push((j, part));
        }
    }
    let schema = Schema::new(columns);

    let mut rows = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let key = match key_col {
            Some(k) => rec[k].to_string(),
            None => format!("{id}:{i}"),
        };
        let mut values: Vec<Value> = data_cols
            .iter()
            .zip(&schema.columns)
            .map(|(&j, c)| parse_cell(&rec[j], c.kind))
            .collect();
        for &(j, part) in &derived {
            let d = &rec[j];
            let n: f64 = match part {
                "year" => d[0..4].parse().unwrap_or(0.0),
                _ => d[5..7].parse().unwrap_or(0.0),
            };
            values.push(Value::num(n));
        }
        rows.push(Row::new(key, values));
    }
    Ok((schema, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn climate_fixture() -> (Schema, Vec<Row>) {
        let schema = Schema::new(vec![
            Column::new("state", SemanticType::Nominal),
            Column::new("month", SemanticType::Temporal),
            Column::new("temp", SemanticType::Quantitative),
        ]);
        let mut rows = Vec::new();
        for s in 0..10 {
            for m in 1..=12 {
                rows.push(Row::new(
                    format!("c:{}", rows.len()),
                    vec![Value::text(format!("S{s}")), Value::num(m as f64), Value::num((s * m) as f64)],
                ));
            }
        }
        (schema, rows)
    }

    #[test]
    fn register_and_duplicate() {
        let mut c = TableCatalog::new();
        let (s, r) = climate_fixture();
        assert_eq!(c.register_table("climate", s.clone(), r.clone()), Ok(1));
        assert_eq!(c.table("climate").unwrap().rows.len(), 120);
        assert_eq!(
            c.register_table("climate", s, r),
            Err(CatalogError::DuplicateTable("climate".into()))
        );
        assert_eq!(c.generation(), 1);
    }

    #[test]
    fn schema_mismatch_names_row() {
        let mut c = TableCatalog::new();
        let (s, mut r) = climate_fixture();
        r[7].values[2] = Value::text("hot");
        assert!(matches!(
            c.register_table("climate", s, r),
            Err(CatalogError::SchemaMismatch { row: 7, .. })
        ));
    }

    #[test]
    fn csv_ingest_counts_lines_and_derives_dates() {
        let text = "state,date,temp\nFlorida,2014-01-15,61.5\nFlorida,2014-07-15,83.0\n\"Rhode, Island\",2015-12-15,30.25\n";
        let mut c = TableCatalog::new();
        c.ingest_csv("t", text, &BTreeMap::new()).unwrap();
        let t = c.table("t").unwrap();
        assert_eq!(t.rows.len(), text.lines().count() - 1);
        assert_eq!(
            t.schema.names().collect::<Vec<_>>(),
            ["state", "date", "temp", "year", "month"]
        );
        assert_eq!(t.rows[1].get(&t.schema, "month"), Some(Value::num(7.0)));
        assert_eq!(t.rows[2].get(&t.schema, "state"), Some(Value::text("Rhode, Island")));
        assert_eq!(t.rows[2].key.as_str(), "t:2");
    }

    #[test]
    fn csv_missing_cell_rejected() {
        let mut c = TableCatalog::new();
        let err = c.ingest_csv("t", "a,b\n1,\n", &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, CatalogError::SchemaMismatch { row: 0, .. }));
    }

    #[test]
    fn export_reingest_keeps_keys_and_digest() {
        let mut c = TableCatalog::new();
        let (s, r) = climate_fixture();
        c.register_table("climate", s.clone(), r).unwrap();
        let csv = c.table("climate").unwrap().to_csv();
        let hints = s.columns.iter().map(|c| (c.name.clone(), c.kind)).collect();
        let mut d = TableCatalog::new();
        d.ingest_csv("climate", &csv, &hints).unwrap();
        assert_eq!(c.table("climate"), d.table("climate"));
        assert_eq!(c.manifest(), d.manifest());
    }
}
