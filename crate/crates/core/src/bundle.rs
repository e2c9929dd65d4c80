//! Self-contained artifact bundles: a zip holding the ledger subset, the source tables
//! and per-figure files. Verification replays every figure against the bundled tables.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Cursor, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, ZipArchive, ZipWriter};

use crate::action::ProvenanceProgram;
use crate::catalog::{CatalogManifest, ManifestEntry, TableCatalog};
use crate::chart::ChartDoc;
use crate::digest::Digest;
use crate::figure::{replay_figure, FigureState, ReplayError};
use crate::slice::{DataSlice, Lineage};
use crate::store::{History, Tables, TABLE_NAMES};

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleHeader {
    pub format_version: u32,
    pub artifact_id: String,
    pub head_version: String,
    pub figures: Vec<String>,
    pub tables: Vec<String>,
}

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("malformed bundle: {0}")]
    Malformed(String),
    #[error("unknown artifact `{0}`")]
    UnknownArtifact(String),
    #[error("source table `{0}` is not in the catalog")]
    MissingSourceTable(String),
    #[error("import conflict: {0}")]
    Conflict(String),
}

fn malformed(e: impl std::fmt::Display) -> BundleError {
    BundleError::Malformed(e.to_string())
}

/// The files served for one figure: chart, Vega-Lite export, query text, data, program, meta.
pub fn figure_files(fig: &FigureState) -> BTreeMap<&'static str, String> {
    let query = fig
        .code
        .steps
        .iter()
        .rev()
        .find_map(|s| s.generated_query_text.clone())
        .unwrap_or_default();
    let meta = serde_json::json!({
        "figure_id": fig.figure_id,
        "meta": fig.meta,
        "schema": fig.data.schema,
        "lineage": fig.data.lineage,
        "digest": fig.data.digest,
        "rows": fig.data.len(),
    });
    BTreeMap::from([
        ("chart.json", pretty(&fig.visualization)),
        ("vega_lite.json", pretty(&fig.visualization.to_vega_lite(&fig.data))),
        ("query.sql", query + "\n"),
        ("data.csv", fig.data.to_csv()),
        ("program.json", pretty(&fig.code)),
        ("meta.json", pretty(&meta)),
    ])
}

fn pretty<T: Serialize + ?Sized>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("json") + "\n"
}

/// The conversation rows, versions and figures of one artifact.
pub fn history_subset(h: &History, artifact_id: &str) -> Result<History, BundleError> {
    let entry = h
        .ledger
        .artifacts
        .get(artifact_id)
        .ok_or_else(|| BundleError::UnknownArtifact(artifact_id.to_string()))?;
    let mut out = History::new();
    out.ledger.artifacts.insert(artifact_id.to_string(), entry.clone());
    for v in h.ledger.versions.values().filter(|v| v.artifact_id == artifact_id) {
        out.ledger.versions.insert(v.version_id.clone(), v.clone());
    }
    out.ledger.edges = h
        .ledger
        .edges
        .iter()
        .filter(|e| out.ledger.versions.contains_key(&e.child))
        .cloned()
        .collect();
    for c in h.conversations.values().filter(|c| c.artifact_id.as_deref() == Some(artifact_id)) {
        out.conversations.insert(c.conversation_id.clone(), c.clone());
        out.messages
            .extend(h.messages.iter().filter(|m| m.conversation_id == c.conversation_id).cloned());
    }
    let kept: BTreeSet<&str> = out.messages.iter().map(|m| m.message_id.as_str()).collect();
    out.message_artifact = h
        .message_artifact
        .iter()
        .filter(|m| m.artifact_id == artifact_id && kept.contains(m.message_id.as_str()))
        .cloned()
        .collect();
    Ok(out)
}

fn write_zip(files: &BTreeMap<String, Vec<u8>>) -> Vec<u8> {
    let mut z = ZipWriter::new(Cursor::new(Vec::new()));
    let opts = SimpleFileOptions::default()
        .compression_method(CompressionMethod::Deflated)
        .last_modified_time(zip::DateTime::default());
    for (name, body) in files {
        z.start_file(name.as_str(), opts).expect("zip entry");
        z.write_all(body).expect("zip write");
    }
    z.finish().expect("zip finish").into_inner()
}

fn read_zip(bytes: &[u8]) -> Result<BTreeMap<String, Result<Vec<u8>, String>>, BundleError> {
    let mut z = ZipArchive::new(Cursor::new(bytes)).map_err(malformed)?;
    let mut out = BTreeMap::new();
    for i in 0..z.len() {
        let mut f = z.by_index(i).map_err(malformed)?;
        let name = f.name().to_string();
        let mut buf = Vec::new();
        let body = f.read_to_end(&mut buf).map(|_| buf).map_err(|e| e.to_string());
        out.insert(name, body);
    }
    Ok(out)
}

/// Zip bytes of an artifact bundle. Identical inputs give identical bytes.
pub fn export_artifact(h: &History, artifact_id: &str, catalog: &TableCatalog) -> Result<Vec<u8>, BundleError> {
    let sub = history_subset(h, artifact_id)?;
    let head_id = sub.ledger.artifacts[artifact_id].head_version.clone();
    let head = &sub.ledger.versions[&head_id].state;
    let mut tables: BTreeSet<String> = BTreeSet::new();
    for v in sub.ledger.versions.values() {
        for f in v.state.figures.values() {
            tables.extend(f.data.lineage.sources.iter().cloned());
        }
    }
    let mut files: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    let mut manifest = CatalogManifest {
        generation: catalog.generation(),
        tables: Vec::new(),
    };
    for t in &tables {
        let table = catalog.table(t).ok_or_else(|| BundleError::MissingSourceTable(t.clone()))?;
        let csv = table.to_csv();
        manifest.tables.push(ManifestEntry {
            id: t.clone(),
            schema: table.schema.clone(),
            rows: table.rows.len(),
            digest: Digest::of(csv.as_bytes()),
        });
        files.insert(format!("catalog/{t}.csv"), csv.into_bytes());
    }
    files.insert("catalog/manifest.json".into(), pretty(&manifest).into_bytes());
    let header = BundleHeader {
        format_version: BUNDLE_FORMAT_VERSION,
        artifact_id: artifact_id.to_string(),
        head_version: head_id.clone(),
        figures: head.figure_ids.clone(),
        tables: tables.into_iter().collect(),
    };
    files.insert("bundle.json".into(), pretty(&header).into_bytes());
    let tables_doc: BTreeMap<&str, String> = sub.to_tables().to_jsonl().into_iter().collect();
    files.insert("ledger.json".into(), pretty(&tables_doc).into_bytes());
    for id in &head.figure_ids {
        for (name, body) in figure_files(&head.figures[id]) {
            files.insert(format!("figures/{id}/{name}"), body.into_bytes());
        }
    }
    Ok(write_zip(&files))
}

/// A parsed bundle: the history subset and the rebuilt source catalog.
#[derive(Debug)]
pub struct ImportedBundle {
    pub header: BundleHeader,
    pub history: History,
    pub manifest: CatalogManifest,
    pub catalog: TableCatalog,
    /// Tables whose CSV did not parse or did not match its manifest digest.
    pub table_errors: BTreeMap<String, String>,
    files: BTreeMap<String, Result<Vec<u8>, String>>,
}

fn required<'a>(files: &'a BTreeMap<String, Result<Vec<u8>, String>>, name: &str) -> Result<&'a [u8], BundleError> {
    match files.get(name) {
        Some(Ok(b)) => Ok(b),
        Some(Err(e)) => Err(BundleError::Malformed(format!("{name}: {e}"))),
        None => Err(BundleError::Malformed(format!("missing {name}"))),
    }
}

pub fn read_bundle(bytes: &[u8]) -> Result<ImportedBundle, BundleError> {
    let files = read_zip(bytes)?;
    let header: BundleHeader = serde_json::from_slice(required(&files, "bundle.json")?).map_err(malformed)?;
    if header.format_version != BUNDLE_FORMAT_VERSION {
        return Err(BundleError::Malformed(format!(
            "unsupported format_version {}",
            header.format_version
        )));
    }
    let docs: BTreeMap<String, String> = serde_json::from_slice(required(&files, "ledger.json")?).map_err(malformed)?;
    if let Some(extra) = docs.keys().find(|k| !TABLE_NAMES.contains(&k.as_str())) {
        return Err(BundleError::Malformed(format!("unknown ledger table `{extra}`")));
    }
    let tables = Tables::from_jsonl(|n| docs.get(n).cloned()).map_err(malformed)?;
    let history = History::from_tables(tables).map_err(malformed)?;
    let head = history
        .ledger
        .head(&header.artifact_id)
        .ok_or_else(|| BundleError::Malformed(format!("ledger lacks artifact {}", header.artifact_id)))?;
    if head != header.head_version {
        return Err(BundleError::Malformed("bundle head disagrees with ledger".into()));
    }
    let manifest: CatalogManifest =
        serde_json::from_slice(required(&files, "catalog/manifest.json")?).map_err(malformed)?;
    let mut catalog = TableCatalog::new();
    let mut table_errors = BTreeMap::new();
    for e in &manifest.tables {
        let name = format!("catalog/{}.csv", e.id);
        let loaded = match files.get(&name) {
            None => return Err(BundleError::Malformed(format!("missing {name}"))),
            Some(Err(err)) => Err(err.clone()),
            Some(Ok(b)) => load_table(&mut catalog, e, b),
        };
        if let Err(err) = loaded {
            table_errors.insert(e.id.clone(), err);
        }
    }
    Ok(ImportedBundle {
        header,
        history,
        manifest,
        catalog,
        table_errors,
        files,
    })
}

fn load_table(catalog: &mut TableCatalog, e: &ManifestEntry, bytes: &[u8]) -> Result<(), String> {
    let actual = Digest::of(bytes);
    if actual != e.digest {
        return Err(format!("digest {} != manifest {}", actual.short(12), e.digest.short(12)));
    }
    let text = std::str::from_utf8(bytes).map_err(|e| e.to_string())?;
    let slice = DataSlice::from_csv(e.schema.clone(), Lineage::default(), text)?;
    catalog
        .register_table(e.id.clone(), slice.schema, slice.rows)
        .map_err(|e| e.to_string())?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FigureCheck {
    pub figure_id: String,
    pub version_id: String,
    pub expected: Digest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replayed: Option<Digest>,
    pub matched: bool,
    pub nondeterministic: bool,
    #[serde(default)]
    pub problems: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub artifact_id: String,
    pub head_version: String,
    pub figures: Vec<FigureCheck>,
    pub table_errors: BTreeMap<String, String>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.table_errors.is_empty() && self.figures.iter().all(|f| f.matched || f.nondeterministic)
    }

    /// Exit status: 0 when everything matches, 2 on any digest mismatch.
    pub fn exit_code(&self) -> i32 {
        if self.ok() {
            0
        } else {
            2
        }
    }

    pub fn mismatched(&self) -> Vec<&str> {
        self.figures
            .iter()
            .filter(|f| !f.matched && !f.nondeterministic)
            .map(|f| f.figure_id.as_str())
            .collect()
    }

    pub fn table(&self) -> String {
        let mut s = format!(
            "artifact {} @ {}\n{:<24} {:<30} {:<14} {:<14} status\n",
            self.artifact_id, self.head_version, "figure", "version", "expected", "replayed"
        );
        for f in &self.figures {
            let status = if f.matched {
                "match".to_string()
            } else if f.nondeterministic {
                "nondeterministic".to_string()
            } else {
                format!("MISMATCH {}", f.problems.join("; "))
            };
            s.push_str(&format!(
                "{:<24} {:<30} {:<14} {:<14} {}\n",
                f.figure_id,
                f.version_id,
                f.expected.short(12),
                f.replayed.map(|d| d.short(12)).unwrap_or_else(|| "-".into()),
                status
            ));
        }
        for (t, e) in &self.table_errors {
            s.push_str(&format!("table {t}: {e}\n"));
        }
        s
    }
}

impl ImportedBundle {
    fn file(&self, name: &str) -> Result<&[u8], String> {
        match self.files.get(name) {
            Some(Ok(b)) => Ok(b),
            Some(Err(e)) => Err(e.clone()),
            None => Err("missing".into()),
        }
    }

    /// Checks one head figure's attached files against its ledger state.
    fn file_problems(&self, fig: &FigureState) -> Vec<String> {
        let dir = format!("figures/{}", fig.figure_id);
        let mut out = Vec::new();
        match self.file(&format!("{dir}/data.csv")).and_then(|b| {
            let text = std::str::from_utf8(b).map_err(|e| e.to_string())?;
            DataSlice::from_csv(fig.data.schema.clone(), fig.data.lineage.clone(), text)
        }) {
            Ok(s) if s.digest == fig.data.digest => {}
            Ok(s) => out.push(format!(
                "data.csv digest {} != {}",
                s.digest.short(12),
                fig.data.digest.short(12)
            )),
            Err(e) => out.push(format!("data.csv: {e}")),
        }
        match self
            .file(&format!("{dir}/chart.json"))
            .and_then(|b| serde_json::from_slice::<ChartDoc>(b).map_err(|e| e.to_string()))
        {
            Ok(c) if c == fig.visualization => {}
            Ok(_) => out.push("chart.json differs from ledger".into()),
            Err(e) => out.push(format!("chart.json: {e}")),
        }
        match self
            .file(&format!("{dir}/program.json"))
            .and_then(|b| serde_json::from_slice::<ProvenanceProgram>(b).map_err(|e| e.to_string()))
        {
            Ok(p) if p == fig.code => {}
            Ok(_) => out.push("program.json differs from ledger".into()),
            Err(e) => out.push(format!("program.json: {e}")),
        }
        out
    }

    /// Replays every figure of every version in the bundle against the bundled tables.
    pub fn verify(&self) -> VerifyReport {
        let head = &self.history.ledger.versions[&self.header.head_version].state;
        let mut figures = Vec::new();
        let mut seen = BTreeSet::new();
        let mut versions: Vec<_> = self.history.ledger.versions.values().collect();
        versions.sort_by_key(|v| v.version_id != self.header.head_version);
        for v in versions {
            for id in &v.state.figure_ids {
                let f = &v.state.figures[id];
                if !seen.insert(f.meta.version_id.clone()) {
                    continue;
                }
                let mut problems = Vec::new();
                if head.figures.get(id).is_some_and(|h| h.meta.version_id == f.meta.version_id) {
                    problems.extend(self.file_problems(f));
                }
                let nondeterministic = f.code.has_nondeterministic_step();
                let replayed = match replay_figure(f, &self.catalog) {
                    Ok(o) => {
                        if !o.data_match {
                            problems.push("replayed data digest differs".into());
                        }
                        if !o.chart_match {
                            problems.push("replayed chart differs".into());
                        }
                        Some(o.figure.data.digest)
                    }
                    Err(ReplayError::MissingSourceTable(t)) => {
                        problems.push(match self.table_errors.get(&t) {
                            Some(e) => format!("source table {t}: {e}"),
                            None => format!("missing source table {t}"),
                        });
                        None
                    }
                    Err(e) => {
                        problems.push(e.to_string());
                        None
                    }
                };
                figures.push(FigureCheck {
                    figure_id: id.clone(),
                    version_id: f.meta.version_id.clone(),
                    expected: f.data.digest,
                    replayed,
                    matched: problems.is_empty(),
                    nondeterministic,
                    problems,
                });
            }
        }
        VerifyReport {
            artifact_id: self.header.artifact_id.clone(),
            head_version: self.header.head_version.clone(),
            figures,
            table_errors: self.table_errors.clone(),
        }
    }
}

/// Reads and verifies a bundle. Errors mean the bundle is malformed.
pub fn verify_bundle(bytes: &[u8]) -> Result<VerifyReport, BundleError> {
    Ok(read_bundle(bytes)?.verify())
}

/// Rewrites one entry of a bundle; used to build tampered fixtures.
pub fn rewrite_entry(bytes: &[u8], name: &str, f: impl FnOnce(&mut Vec<u8>)) -> Result<Vec<u8>, BundleError> {
    let files = read_zip(bytes)?;
    let mut plain: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    for (k, v) in files {
        plain.insert(k, v.map_err(BundleError::Malformed)?);
    }
    let entry = plain
        .get_mut(name)
        .ok_or_else(|| BundleError::Malformed(format!("missing {name}")))?;
    f(entry);
    Ok(write_zip(&plain))
}

/// Writes every catalog table as CSV plus a manifest, in the bundle's layout.
pub fn save_catalog(catalog: &TableCatalog, dir: &std::path::Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = CatalogManifest {
        generation: catalog.generation(),
        tables: Vec::new(),
    };
    for id in catalog.table_ids() {
        let table = catalog.table(id).expect("listed");
        let csv = table.to_csv();
        manifest.tables.push(ManifestEntry {
            id: id.to_string(),
            schema: table.schema.clone(),
            rows: table.rows.len(),
            digest: Digest::of(csv.as_bytes()),
        });
        std::fs::write(dir.join(format!("{id}.csv")), csv)?;
    }
    std::fs::write(dir.join("manifest.json"), pretty(&manifest))
}

/// Reads what `save_catalog` wrote, checking each table against its manifest digest.
pub fn load_catalog(dir: &std::path::Path) -> Result<TableCatalog, BundleError> {
    let text = std::fs::read(dir.join("manifest.json")).map_err(malformed)?;
    let manifest: CatalogManifest = serde_json::from_slice(&text).map_err(malformed)?;
    let mut catalog = TableCatalog::new();
    for e in &manifest.tables {
        let bytes = std::fs::read(dir.join(format!("{}.csv", e.id))).map_err(malformed)?;
        load_table(&mut catalog, e, &bytes).map_err(|err| BundleError::Malformed(format!("table {}: {err}", e.id)))?;
    }
    Ok(catalog)
}
