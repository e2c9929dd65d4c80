//! Rule-grammar intent backend: normalized tokens, a synonym lexicon and fuzzy
//! column/value matching (case-insensitive, edit distance at most one).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{BackendError, Candidate, DataContext, Expectation, FigureBrief, IntentBackend, PlanTarget, QueryClass};
use crate::action::Action;
use crate::catalog::CatalogSchema;
use crate::chart::{Channel, ChartType, EncodingSpec, InteractionDecl, InteractionKind, Scale};
use crate::expr::Expr;
use crate::ledger::UserInputRecord;
use crate::plan::{AggFunc, AggSpec, AnalyzeOp, SortKey};
use crate::predicate::{Atom, CmpOp, Predicate};
use crate::value::{Schema, SemanticType, Value};

/// Synonym tables for the template grammar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    /// Multi-word rewrites applied before matching, longest first.
    pub phrases: Vec<(String, String)>,
    pub aggregates: BTreeMap<String, Vec<String>>,
    pub charts: BTreeMap<String, Vec<String>>,
    pub columns: BTreeMap<String, Vec<String>>,
    /// Words that name a grouping column ("monthly" groups by month).
    pub dimension_adverbs: BTreeMap<String, String>,
    pub values: BTreeMap<String, Vec<String>>,
    pub high_level: Vec<String>,
    pub recommend: Vec<String>,
}

impl Lexicon {
    pub fn bundled() -> Self {
        serde_json::from_str(include_str!("../../assets/lexicon.json")).expect("bundled lexicon parses")
    }
}

impl Default for Lexicon {
    fn default() -> Self {
        Self::bundled()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntentVerb {
    #[default]
    Unknown,
    Plot,
    Rank,
    Filter,
    LogScale,
    Distribution,
    Percentage,
}

/// Slots filled from one utterance.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParsedIntent {
    pub verb: IntentVerb,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agg: Option<AggFunc>,
    pub measures: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chart: Option<ChartType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descending: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
    pub atoms: Vec<Atom>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_channel: Option<Channel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bin_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
    /// `(table, key)` joined onto `table`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub join: Option<(String, String)>,
}

#[derive(Clone, Debug)]
struct Tok {
    norm: String,
    orig: String,
}

#[derive(Clone, Debug, PartialEq)]
enum M {
    Agg(AggFunc),
    Chart(ChartType),
    Order(bool),
    By,
    Each,
    Vs,
    Rank,
    Top(bool),
    Log,
    Axis(Channel),
    Distribution,
    Percentage,
    Filter,
    Op(CmpOp),
    Between,
    To,
    Bins,
    Num(f64),
    Table(String),
    Column { name: String, adverb: bool },
    Value { column: String, value: String },
}

const FILTER_WORDS: [&str; 5] = ["filter", "only", "keep", "restrict", "limit"];

fn agg_of(name: &str) -> Option<AggFunc> {
    Some(match name {
        "mean" => AggFunc::Mean,
        "sum" => AggFunc::Sum,
        "count" => AggFunc::Count,
        "max" => AggFunc::Max,
        "min" => AggFunc::Min,
        _ => return None,
    })
}

fn tokenize(text: &str) -> Vec<Tok> {
    let mut out = Vec::new();
    for raw in text.split_whitespace() {
        let t = raw.trim_matches(|c: char| "()[]{},?!;:\"'.".contains(c));
        // Keep the final dot of abbreviations like "u.s.".
        let abbrev;
        let t = if t.contains('.') && t.chars().all(|c| c.is_alphabetic() || c == '.') && raw.contains(&format!("{t}.")) {
            abbrev = format!("{t}.");
            abbrev.as_str()
        } else {
            t
        };
        if t.is_empty() {
            continue;
        }
        // Year spans like 2014-2024.
        if let Some((a, b)) = t.split_once('-') {
            if a.len() == 4 && b.len() == 4 && a.parse::<u32>().is_ok() && b.parse::<u32>().is_ok() {
                for p in [a, "to", b] {
                    out.push(Tok {
                        norm: p.to_string(),
                        orig: p.to_string(),
                    });
                }
                continue;
            }
        }
        out.push(Tok {
            norm: t.to_lowercase(),
            orig: t.to_string(),
        });
    }
    out
}

fn rewrite(lex: &Lexicon, toks: Vec<Tok>) -> Vec<Tok> {
    let mut phrases: Vec<(Vec<&str>, &str)> = lex
        .phrases
        .iter()
        .map(|(p, r)| (p.split_whitespace().collect(), r.as_str()))
        .collect();
    phrases.sort_by(|a, b| b.0.len().cmp(&a.0.len()));
    let mut out = Vec::new();
    let mut i = 0;
    'outer: while i < toks.len() {
        for (p, r) in &phrases {
            let n = p.len();
            if i + n <= toks.len() && toks[i..i + n].iter().zip(p).all(|(t, w)| t.norm == *w) {
                let orig = toks[i..i + n].iter().map(|t| t.orig.as_str()).collect::<Vec<_>>().join(" ");
                for w in r.split_whitespace() {
                    out.push(Tok {
                        norm: w.to_string(),
                        orig: orig.clone(),
                    });
                }
                i += n;
                continue 'outer;
            }
        }
        out.push(toks[i].clone());
        i += 1;
    }
    out
}

fn close(a: &str, b: &str) -> bool {
    a == b || (a.chars().count() >= 5 && b.chars().count() >= 5 && strsim::levenshtein(a, b) <= 1)
}

fn singular(w: &str) -> &str {
    w.strip_suffix('s').filter(|s| s.len() >= 3).unwrap_or(w)
}

/// The template backend. Holds only its lexicon.
#[derive(Clone, Debug, Default)]
pub struct TemplateBackend {
    pub lexicon: Lexicon,
}

impl TemplateBackend {
    pub fn new(lexicon: Lexicon) -> Self {
        Self { lexicon }
    }

    fn mentions(&self, text: &str, schema: &CatalogSchema) -> Vec<M> {
        let lex = &self.lexicon;
        let toks = rewrite(lex, tokenize(text));
        let all_columns: BTreeSet<&str> = schema
            .tables
            .values()
            .flat_map(|s| s.columns.iter().map(|c| c.name.as_str()))
            .collect();
        let mut out: Vec<M> = Vec::new();
        let mut i = 0;
        while i < toks.len() {
            let mut matched = None;
            for n in (1..=4.min(toks.len() - i)).rev() {
                let window = &toks[i..i + n];
                let phrase = window.iter().map(|t| t.norm.as_str()).collect::<Vec<_>>().join(" ");
                let orig = window.iter().map(|t| t.orig.as_str()).collect::<Vec<_>>().join(" ");
                if let Some(m) = self.match_phrase(&phrase, &orig, n, &out, schema, &all_columns) {
                    matched = Some((m, n));
                    break;
                }
            }
            match matched {
                Some((m, n)) => {
                    out.push(m);
                    i += n;
                }
                None => i += 1,
            }
        }
        let _ = lex;
        out
    }

    fn match_phrase(
        &self,
        phrase: &str,
        orig: &str,
        n: usize,
        prev: &[M],
        schema: &CatalogSchema,
        columns: &BTreeSet<&str>,
    ) -> Option<M> {
        let lex = &self.lexicon;
        // Values first: dictionary entries and value synonyms.
        for (table, cols) in &schema.dictionaries {
            let _ = table;
            for (col, values) in cols {
                for v in values {
                    let short = v.chars().count() <= 2;
                    let hit = if short {
                        orig == v
                    } else {
                        close(&v.to_lowercase(), phrase)
                    };
                    if hit {
                        return Some(M::Value {
                            column: col.clone(),
                            value: v.clone(),
                        });
                    }
                }
            }
        }
        for (value, syns) in &lex.values {
            if syns.iter().any(|s| s == phrase) {
                for cols in schema.dictionaries.values() {
                    for (col, values) in cols {
                        if values.contains(value) {
                            return Some(M::Value {
                                column: col.clone(),
                                value: value.clone(),
                            });
                        }
                    }
                }
            }
        }
        if n == 1 {
            let w = phrase;
            let after_by = matches!(prev.last(), Some(M::By | M::Each));
            match w {
                "by" => return Some(M::By),
                "each" | "every" => return Some(M::Each),
                "vs" => return Some(M::Vs),
                "desc" => return Some(M::Order(true)),
                "asc" => return Some(M::Order(false)),
                "rank" | "ranks" if !after_by && !matches!(prev.last(), Some(M::Column { .. })) => {
                    if columns.contains("rank") && matches!(prev.last(), Some(M::Agg(_))) {
                        // "count rank" style: the column.
                    } else {
                        return Some(M::Rank);
                    }
                }
                "ranking" | "sort" | "sorted" | "order" | "ordered" => return Some(M::Rank),
                "top" => return Some(M::Top(true)),
                "bottom" => return Some(M::Top(false)),
                "log" => return Some(M::Log),
                "x" | "x-axis" => return Some(M::Axis(Channel::X)),
                "y" | "y-axis" => return Some(M::Axis(Channel::Y)),
                "distribution" => return Some(M::Distribution),
                "percentage" => return Some(M::Percentage),
                "between" => return Some(M::Between),
                "to" | "through" | "and" if matches!(prev.last(), Some(M::Num(_))) => return Some(M::To),
                "bins" | "bin" | "width" => return Some(M::Bins),
                ">" => return Some(M::Op(CmpOp::Gt)),
                ">=" => return Some(M::Op(CmpOp::Ge)),
                "<" => return Some(M::Op(CmpOp::Lt)),
                "<=" => return Some(M::Op(CmpOp::Le)),
                "=" => return Some(M::Op(CmpOp::Eq)),
                _ => {}
            }
            if prev.is_empty() && FILTER_WORDS.contains(&w) {
                return Some(M::Filter);
            }
            if let Ok(x) = w.parse::<f64>() {
                if x.is_finite() {
                    return Some(M::Num(x));
                }
            }
            for (name, syns) in &lex.aggregates {
                if syns.iter().any(|s| s == w) {
                    return agg_of(name).map(M::Agg);
                }
            }
            for (name, syns) in &lex.charts {
                if syns.iter().any(|s| s == w) {
                    return ChartType::parse(name).map(M::Chart);
                }
            }
        }
        // Columns: exact name, lexicon synonym (when the column exists) or near match.
        let joined = phrase.replace([' ', '-'], "_");
        if let Some(adv) = lex.dimension_adverbs.get(phrase) {
            if columns.contains(adv.as_str()) {
                return Some(M::Column {
                    name: adv.clone(),
                    adverb: true,
                });
            }
        }
        for (name, syns) in &lex.columns {
            if columns.contains(name.as_str()) && syns.iter().any(|s| s == phrase) {
                return Some(M::Column {
                    name: name.clone(),
                    adverb: false,
                });
            }
        }
        for c in columns {
            if close(c, &joined) || close(c, singular(&joined)) {
                return Some(M::Column {
                    name: c.to_string(),
                    adverb: false,
                });
            }
        }
        for t in schema.tables.keys() {
            if close(t, phrase) || close(singular(t), singular(phrase)) {
                return Some(M::Table(t.clone()));
            }
        }
        None
    }

    /// Fills intent slots from text. Tables are resolved against `schema`, preferring
    /// `preferred` when it can answer the question.
    pub fn parse(&self, text: &str, schema: &CatalogSchema, preferred: Option<&str>) -> ParsedIntent {
        let ms = self.mentions(text, schema);
        let mut p = ParsedIntent::default();
        let mut used = vec![false; ms.len()];
        let mut rank = false;
        let mut filter = false;
        let mut tables_named = Vec::new();

        // Comparisons and ranges attached to a column.
        let mut i = 0;
        while i < ms.len() {
            if let M::Column { name, .. } = &ms[i] {
                match (ms.get(i + 1), ms.get(i + 2), ms.get(i + 3), ms.get(i + 4)) {
                    (Some(M::Op(op)), Some(M::Num(x)), ..) => {
                        p.atoms.push(Atom::cmp(name.clone(), *op, Value::num(*x)));
                        used[i..i + 3].iter_mut().for_each(|u| *u = true);
                        i += 3;
                        continue;
                    }
                    (Some(M::Between), Some(M::Num(a)), Some(M::To), Some(M::Num(b))) => {
                        p.atoms.push(Atom::range(name.clone(), Value::num(a.min(*b)), Value::num(a.max(*b))));
                        used[i..i + 5].iter_mut().for_each(|u| *u = true);
                        i += 5;
                        continue;
                    }
                    (Some(M::Num(a)), Some(M::To), Some(M::Num(b)), _) => {
                        p.atoms.push(Atom::range(name.clone(), Value::num(a.min(*b)), Value::num(a.max(*b))));
                        used[i..i + 4].iter_mut().for_each(|u| *u = true);
                        i += 4;
                        continue;
                    }
                    _ => {}
                }
            }
            i += 1;
        }

        let mut values: BTreeMap<String, BTreeSet<Value>> = BTreeMap::new();
        let mut years: Vec<(f64, f64)> = Vec::new();
        let mut last_column: Option<usize> = None;
        for (k, m) in ms.iter().enumerate() {
            if used[k] {
                continue;
            }
            match m {
                M::Agg(f) => p.agg = p.agg.or(Some(*f)),
                M::Chart(c) => p.chart = p.chart.or(Some(*c)),
                M::Order(d) => p.descending = Some(*d),
                M::Rank => rank = true,
                M::Log => p.verb = IntentVerb::LogScale,
                M::Axis(c) => p.log_channel = Some(*c),
                M::Distribution => p.verb = IntentVerb::Distribution,
                M::Percentage => p.verb = IntentVerb::Percentage,
                M::Filter => filter = true,
                M::Table(t) => tables_named.push(t.clone()),
                M::Top(d) => {
                    if let Some(M::Num(n)) = ms.get(k + 1) {
                        if *n >= 1.0 {
                            p.limit = Some(*n as usize);
                            p.descending = Some(*d);
                            used[k + 1] = true;
                        }
                    }
                }
                M::Bins => {
                    if let Some(M::Num(w)) = ms.get(k + 1) {
                        if *w > 0.0 {
                            p.bin_width = Some(*w);
                            used[k + 1] = true;
                        }
                    }
                }
                M::Num(a) if is_year(*a) => match (ms.get(k + 1), ms.get(k + 2)) {
                    (Some(M::To), Some(M::Num(b))) if is_year(*b) => {
                        years.push((a.min(*b), a.max(*b)));
                        used[k + 1] = true;
                        used[k + 2] = true;
                    }
                    _ => {
                        let op = match k.checked_sub(1).map(|j| &ms[j]) {
                            Some(M::Op(op)) => Some(*op),
                            _ => None,
                        };
                        match op {
                            Some(op) => p.atoms.push(Atom::cmp("year", op, Value::num(*a))),
                            None => years.push((*a, *a)),
                        }
                    }
                },
                M::Value { column, value } => {
                    values.entry(column.clone()).or_default().insert(Value::text(value.clone()));
                }
                M::Column { name, adverb } => {
                    let prev = k.checked_sub(1).map(|j| &ms[j]);
                    let is_dim = *adverb
                        || matches!(prev, Some(M::By | M::Each))
                        || (matches!(prev, Some(M::Rank)) && rank && p.dimension.is_none());
                    if is_dim && p.dimension.is_none() {
                        p.dimension = Some(name.clone());
                    } else if !p.measures.contains(name) && p.dimension.as_deref() != Some(name) {
                        p.measures.push(name.clone());
                    }
                    last_column = Some(k);
                }
                _ => {}
            }
        }
        let _ = last_column;
        for (col, vals) in values {
            p.atoms.push(Atom::membership(col, vals));
        }

        // Table resolution.
        let mut needed: BTreeSet<String> = p.measures.iter().cloned().collect();
        needed.extend(p.dimension.clone());
        let filter_cols: BTreeSet<String> = p.atoms.iter().map(|a| a.column().to_string()).collect();
        needed.extend(filter_cols.iter().filter(|c| *c != "year").cloned());
        let order: Vec<String> = tables_named
            .iter()
            .map(String::as_str)
            .chain(preferred)
            .map(str::to_string)
            .chain(schema.tables.keys().cloned())
            .collect();
        let mut best: Option<(String, Option<(String, String)>, usize)> = None;
        let mut best_rank = (0, false);
        for t in &order {
            let Some(s) = schema.table(t) else { continue };
            let have = needed.iter().filter(|c| s.index_of(c).is_some()).count();
            if have == needed.len() {
                best = Some((t.clone(), None, have));
                break;
            }
            let holds_measure = p.measures.first().is_some_and(|m| s.index_of(m).is_some());
            if best.is_none() || (have, holds_measure) > best_rank {
                best = Some((t.clone(), None, have));
                best_rank = (have, holds_measure);
            }
        }
        if let Some((t, _, have)) = best.clone() {
            if have < needed.len() {
                // Try one join on a shared column name.
                let base = schema.table(&t).expect("known");
                'join: for (u, other) in &schema.tables {
                    if *u == t {
                        continue;
                    }
                    for c in &base.columns {
                        if other.index_of(&c.name).is_none() {
                            continue;
                        }
                        let covered = needed
                            .iter()
                            .all(|n| base.index_of(n).is_some() || other.index_of(n).is_some());
                        if covered {
                            best = Some((t.clone(), Some((u.clone(), c.name.clone())), needed.len()));
                            break 'join;
                        }
                    }
                }
            }
        }
        if let Some((t, join, _)) = best {
            p.table = Some(t);
            p.join = join;
        }
        // Year constraints bind to a year column of the chosen tables.
        if let Some(yc) = p.table.as_deref().and_then(|t| year_column(schema, t, p.join.as_ref())) {
            for (a, b) in years {
                p.atoms.push(if a == b {
                    Atom::membership(yc.clone(), [Value::num(a)])
                } else {
                    Atom::range(yc.clone(), Value::num(a), Value::num(b))
                });
            }
            for a in &mut p.atoms {
                if let Atom::Comparison { column, .. } = a {
                    if column == "year" {
                        *column = yc.clone();
                    }
                }
            }
        } else {
            p.atoms.retain(|a| a.column() != "year");
        }

        if p.verb == IntentVerb::Unknown {
            p.verb = if filter {
                IntentVerb::Filter
            } else if rank {
                IntentVerb::Rank
            } else if !p.measures.is_empty() || p.dimension.is_some() || p.agg.is_some() || !p.atoms.is_empty() {
                IntentVerb::Plot
            } else {
                IntentVerb::Unknown
            };
        }
        if p.verb == IntentVerb::Rank && p.descending.is_none() {
            p.descending = Some(true);
        }
        if p.verb == IntentVerb::LogScale && p.log_channel.is_none() {
            p.log_channel = Some(Channel::Y);
        }
        p
    }
}

fn is_year(x: f64) -> bool {
    x.fract() == 0.0 && (1900.0..=2100.0).contains(&x)
}

fn year_column(schema: &CatalogSchema, table: &str, join: Option<&(String, String)>) -> Option<String> {
    let mut names: Vec<String> = schema.table(table)?.names().map(str::to_string).collect();
    if let Some((u, _)) = join {
        if let Some(s) = schema.table(u) {
            names.extend(s.names().map(str::to_string));
        }
    }
    if names.iter().any(|n| n == "year") {
        return Some("year".into());
    }
    names.into_iter().find(|n| n.ends_with("_year"))
}

fn column_type(schema: &CatalogSchema, p: &ParsedIntent, col: &str) -> Option<SemanticType> {
    let t = p.table.as_deref()?;
    if let Some(c) = schema.table(t).and_then(|s| s.column(col)) {
        return Some(c.kind);
    }
    let (u, _) = p.join.as_ref()?;
    schema.table(u).and_then(|s| s.column(col)).map(|c| c.kind)
}

fn default_param(chart: ChartType, x_type: Option<SemanticType>) -> InteractionDecl {
    let (kind, channels) = match chart {
        ChartType::Scatter => (InteractionKind::Interval2d, vec![Channel::X, Channel::Y]),
        ChartType::Pie => (InteractionKind::SingleSelect, vec![Channel::Color]),
        ChartType::Table => (InteractionKind::SingleSelect, vec![Channel::RowLabel]),
        _ if x_type == Some(SemanticType::Nominal) => (InteractionKind::SingleSelect, vec![Channel::X]),
        _ => (InteractionKind::Interval1d, vec![Channel::X]),
    };
    InteractionDecl { kind, channels }
}

/// Data and chart steps for a generated figure, plus what the rubric should expect.
fn build_figure(p: &ParsedIntent, schema: &CatalogSchema, chart_override: Option<ChartType>) -> Option<(Vec<Action>, Expectation)> {
    let table = p.table.clone()?;
    let mut steps = vec![Action::SelectTable { table }];
    if let Some((u, key)) = &p.join {
        steps.push(Action::JoinTables {
            table: u.clone(),
            left_key: key.clone(),
            right_key: key.clone(),
        });
    }
    if !p.atoms.is_empty() {
        steps.push(Action::FilterRows {
            predicate: Predicate::new(p.atoms.clone()),
        });
    }
    let ty = |c: &str| column_type(schema, p, c);
    let mut expect = Expectation {
        chart_type: p.chart,
        ..Expectation::default()
    };
    let chart;
    let mut enc: Vec<(Channel, EncodingSpec)> = Vec::new();
    match p.verb {
        IntentVerb::Distribution => {
            let m = p.measures.first()?.clone();
            if ty(&m) != Some(SemanticType::Quantitative) {
                return None;
            }
            let bin = format!("{m}_bin");
            steps.push(Action::Analyze {
                op: AnalyzeOp::Binning {
                    column: m,
                    width: p.bin_width.unwrap_or(10.0),
                },
            });
            steps.push(Action::Aggregate {
                group_by: vec![bin.clone()],
                aggs: vec![AggSpec::count()],
            });
            steps.push(Action::SortLimit {
                keys: vec![SortKey::asc(bin.clone())],
                limit: None,
            });
            chart = chart_override.or(p.chart).unwrap_or(ChartType::Bar);
            match chart {
                ChartType::Table => enc.push((Channel::RowLabel, EncodingSpec::new(bin.clone(), Scale::Linear))),
                ChartType::Pie => {
                    enc.push((Channel::Theta, EncodingSpec::new("count", Scale::Linear)));
                    enc.push((Channel::Color, EncodingSpec::new(bin.clone(), Scale::Ordinal)));
                }
                _ => {
                    enc.push((Channel::X, EncodingSpec::new(bin.clone(), Scale::Linear)));
                    enc.push((Channel::Y, EncodingSpec::new("count", Scale::Linear)));
                }
            }
            expect.fields = vec![bin, "count".into()];
        }
        IntentVerb::Percentage => {
            let d = p.dimension.clone().or_else(|| {
                p.measures
                    .iter()
                    .find(|m| ty(m) != Some(SemanticType::Quantitative))
                    .cloned()
            })?;
            let measure = p.measures.iter().find(|m| **m != d && ty(m) == Some(SemanticType::Quantitative));
            let agg = match measure {
                Some(m) => AggSpec::new(p.agg.filter(|f| *f != AggFunc::Count).unwrap_or(AggFunc::Sum), m.clone()),
                None => AggSpec::count(),
            };
            let out = agg.output_name();
            let pct = format!("{out}_pct");
            steps.push(Action::Aggregate {
                group_by: vec![d.clone()],
                aggs: vec![agg],
            });
            steps.push(Action::Analyze {
                op: AnalyzeOp::PercentageOfTotal { column: out },
            });
            chart = chart_override.or(p.chart).unwrap_or(ChartType::Pie);
            if chart == ChartType::Pie {
                enc.push((Channel::Theta, EncodingSpec::new(pct.clone(), Scale::Linear)));
                enc.push((Channel::Color, EncodingSpec::new(d.clone(), Scale::Ordinal)));
            } else {
                enc.push((Channel::X, EncodingSpec::new(d.clone(), Scale::for_type(ty(&d)?))));
                enc.push((Channel::Y, EncodingSpec::new(pct.clone(), Scale::Linear)));
            }
            expect.fields = vec![d, pct];
        }
        _ => {
            let quant: Vec<&String> = p
                .measures
                .iter()
                .filter(|m| ty(m) == Some(SemanticType::Quantitative))
                .collect();
            let dim = p.dimension.clone().or_else(|| {
                p.measures
                    .iter()
                    .find(|m| ty(m).is_some_and(|t| t != SemanticType::Quantitative))
                    .cloned()
            });
            match (&dim, quant.as_slice(), p.agg) {
                (Some(d), ms, agg) if !ms.is_empty() || agg == Some(AggFunc::Count) => {
                    let aggs: Vec<AggSpec> = if ms.is_empty() {
                        vec![AggSpec::count()]
                    } else {
                        let f = agg.filter(|f| *f != AggFunc::Count).unwrap_or(AggFunc::Mean);
                        ms.iter().take(2).map(|m| AggSpec::new(f, (*m).clone())).collect()
                    };
                    let outs: Vec<String> = aggs.iter().map(AggSpec::output_name).collect();
                    steps.push(Action::Aggregate {
                        group_by: vec![d.clone()],
                        aggs,
                    });
                    let dty = ty(d)?;
                    let default_chart = if outs.len() == 2 {
                        ChartType::Scatter
                    } else if dty == SemanticType::Nominal {
                        ChartType::Bar
                    } else {
                        ChartType::Line
                    };
                    chart = chart_override.or(p.chart).unwrap_or(default_chart);
                    let sort = match p.descending {
                        Some(desc) => Some(if desc {
                            SortKey::desc(outs[0].clone())
                        } else {
                            SortKey::asc(outs[0].clone())
                        }),
                        None if matches!(chart, ChartType::Line | ChartType::Area) => Some(SortKey::asc(d.clone())),
                        None => None,
                    };
                    if let Some(k) = sort {
                        steps.push(Action::SortLimit {
                            keys: vec![k],
                            limit: p.limit,
                        });
                    }
                    match chart {
                        ChartType::Scatter if outs.len() == 2 => {
                            enc.push((Channel::X, EncodingSpec::new(outs[0].clone(), Scale::Linear)));
                            enc.push((Channel::Y, EncodingSpec::new(outs[1].clone(), Scale::Linear)));
                            enc.push((Channel::Color, EncodingSpec::new(d.clone(), Scale::Ordinal)));
                        }
                        ChartType::Pie => {
                            enc.push((Channel::Theta, EncodingSpec::new(outs[0].clone(), Scale::Linear)));
                            enc.push((Channel::Color, EncodingSpec::new(d.clone(), Scale::Ordinal)));
                        }
                        ChartType::Table => {
                            enc.push((Channel::RowLabel, EncodingSpec::new(d.clone(), Scale::for_type(dty))));
                        }
                        _ => {
                            enc.push((Channel::X, EncodingSpec::new(d.clone(), Scale::for_type(dty))));
                            enc.push((Channel::Y, EncodingSpec::new(outs[0].clone(), Scale::Linear)));
                        }
                    }
                    expect.fields = std::iter::once(d.clone()).chain(outs).collect();
                }
                (_, [a, b, ..], None) => {
                    chart = chart_override.or(p.chart).unwrap_or(ChartType::Scatter);
                    if let Some(limit) = p.limit {
                        steps.push(Action::SortLimit {
                            keys: vec![SortKey::desc((*b).clone())],
                            limit: Some(limit),
                        });
                    }
                    match chart {
                        ChartType::Table => {
                            enc.push((Channel::RowLabel, EncodingSpec::new((*a).clone(), Scale::Linear)));
                        }
                        ChartType::Pie => {
                            enc.push((Channel::Theta, EncodingSpec::new((*b).clone(), Scale::Linear)));
                            enc.push((Channel::Color, EncodingSpec::new((*a).clone(), Scale::Ordinal)));
                        }
                        _ => {
                            enc.push((Channel::X, EncodingSpec::new((*a).clone(), Scale::Linear)));
                            enc.push((Channel::Y, EncodingSpec::new((*b).clone(), Scale::Linear)));
                        }
                    }
                    if let Some(d) = &dim {
                        if chart == ChartType::Scatter {
                            enc.push((Channel::Color, EncodingSpec::new(d.clone(), Scale::for_type(ty(d)?))));
                        }
                    }
                    expect.fields = vec![(*a).clone(), (*b).clone()];
                }
                _ => {
                    // Plain rows: a table of what was filtered.
                    chart = chart_override.or(p.chart).unwrap_or(ChartType::Table);
                    if chart != ChartType::Table {
                        return None;
                    }
                    let label = dim.clone().or_else(|| p.measures.first().cloned()).or_else(|| {
                        p.table
                            .as_deref()
                            .and_then(|t| schema.table(t))
                            .and_then(|s| s.columns.first())
                            .map(|c| c.name.clone())
                    })?;
                    let lt = ty(&label)?;
                    if let Some(limit) = p.limit {
                        steps.push(Action::SortLimit {
                            keys: vec![SortKey::asc(label.clone())],
                            limit: Some(limit),
                        });
                    }
                    enc.push((Channel::RowLabel, EncodingSpec::new(label.clone(), Scale::for_type(lt))));
                    expect.fields = vec![label];
                    expect.allow_empty = true;
                }
            }
        }
    }
    let x_type = enc
        .iter()
        .find(|(c, _)| *c == Channel::X)
        .and_then(|(_, e)| ty(&e.field).or(Some(SemanticType::Quantitative)));
    steps.push(Action::AddChartType { chart_type: chart });
    for (c, e) in enc {
        steps.push(Action::AddEncoding {
            channel: c,
            encoding: e,
        });
    }
    steps.push(Action::AddParams {
        param: default_param(chart, x_type),
    });
    Some((steps, expect))
}

/// Tables the figure's leading select and join steps read.
fn backbone_tables(fig: &FigureBrief) -> Vec<String> {
    fig.actions
        .iter()
        .map_while(|a| match a {
            Action::SelectTable { table } | Action::JoinTables { table, .. } => Some(table.clone()),
            _ => None,
        })
        .collect()
}

fn describe_table_fields(schema: &Schema) -> String {
    schema.names().take(4).collect::<Vec<_>>().join(", ")
}

impl TemplateBackend {
    fn manipulations(&self, p: &ParsedIntent, fig: &FigureBrief) -> Vec<Candidate> {
        let target = PlanTarget::Manipulate {
            figure_id: fig.figure_id.clone(),
        };
        match p.verb {
            IntentVerb::Filter if !p.atoms.is_empty() => vec![Candidate {
                target,
                actions: vec![Action::FilterRows {
                    predicate: Predicate::new(p.atoms.clone()),
                }],
                rationale: "filter the figure's rows".into(),
                expect: Expectation {
                    allow_empty: true,
                    ..Expectation::default()
                },
            }],
            IntentVerb::LogScale => {
                let ch = p.log_channel.unwrap_or(Channel::Y);
                let Some(spec) = fig.encodings.get(&ch) else { return vec![] };
                let log = EncodingSpec {
                    scale: Scale::Log,
                    ..spec.clone()
                };
                let mut out = vec![Candidate {
                    target: target.clone(),
                    actions: vec![Action::UpdateEncoding {
                        channel: ch,
                        encoding: log,
                    }],
                    rationale: format!("log scale on {ch}"),
                    expect: Expectation::default(),
                }];
                if spec.aggregate.is_none() {
                    // Zero-safe alternative for data with non-positive values.
                    let name = format!("log1p_{}", spec.field);
                    out.push(Candidate {
                        target,
                        actions: vec![
                            Action::DeriveColumn {
                                name: name.clone(),
                                expr: Expr::log1p(spec.field.clone()),
                            },
                            Action::UpdateEncoding {
                                channel: ch,
                                encoding: EncodingSpec::new(name.clone(), Scale::Linear),
                            },
                        ],
                        rationale: format!("ln(1 + {}) on {ch}", spec.field),
                        expect: Expectation {
                            fields: vec![name],
                            ..Expectation::default()
                        },
                    });
                }
                out
            }
            _ => vec![],
        }
    }

    /// Default follow-up for a gesture with no text: the selected rows as a table.
    fn gesture_only(&self, source: &FigureBrief, schema: &CatalogSchema) -> Vec<Candidate> {
        let Some(s) = schema.table(&source.table) else { return vec![] };
        let raw: Vec<&crate::value::Column> = backbone_tables(source)
            .iter()
            .filter_map(|t| schema.table(t))
            .flat_map(|t| t.columns.iter())
            .collect();
        let in_figure = |f: &str| source.columns.iter().any(|c| c.name == f);
        let fields: Vec<&str> = [Channel::X, Channel::Color, Channel::RowLabel, Channel::Y, Channel::Theta]
            .iter()
            .filter_map(|c| source.encodings.get(c))
            .map(|e| e.field.as_str())
            .collect();
        // A field both the raw rows and the figure's rows carry labels either kind of selection.
        let label = fields
            .iter()
            .find(|f| in_figure(f) && raw.iter().any(|c| c.name == **f))
            .or_else(|| fields.iter().find(|f| in_figure(f)))
            .map(|f| f.to_string())
            .or_else(|| s.columns.first().map(|c| c.name.clone()));
        let Some(label) = label else { return vec![] };
        let kind = source
            .columns
            .iter()
            .chain(raw.iter().copied())
            .find(|c| c.name == label)
            .map(|c| c.kind)
            .unwrap_or(SemanticType::Nominal);
        let scale = Scale::for_type(kind);
        vec![Candidate {
            target: PlanTarget::Extend {
                source: source.figure_id.clone(),
            },
            actions: vec![
                Action::AddChartType {
                    chart_type: ChartType::Table,
                },
                Action::AddEncoding {
                    channel: Channel::RowLabel,
                    encoding: EncodingSpec::new(label.clone(), scale),
                },
                Action::AddParams {
                    param: default_param(ChartType::Table, None),
                },
            ],
            rationale: format!("selected rows of {} ({})", source.table, describe_table_fields(s)),
            expect: Expectation {
                fields: vec![label],
                allow_empty: true,
                ..Expectation::default()
            },
        }]
    }
}

impl IntentBackend for TemplateBackend {
    fn name(&self) -> &str {
        "template"
    }

    fn classify(&self, input: &UserInputRecord) -> Result<QueryClass, BackendError> {
        let text = input.raw_text.as_deref().unwrap_or("").to_lowercase();
        let words: BTreeSet<&str> = text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .collect();
        if self.lexicon.recommend.iter().any(|r| text.contains(r.as_str())) {
            return Ok(QueryClass::RecommendationRequest);
        }
        if self.lexicon.high_level.iter().any(|w| words.contains(w.as_str())) {
            return Ok(QueryClass::HighLevel);
        }
        Ok(QueryClass::LowLevel)
    }

    fn propose(
        &self,
        input: &UserInputRecord,
        ctx: &DataContext,
        schema: &CatalogSchema,
    ) -> Result<Vec<Candidate>, BackendError> {
        let text = input.raw_text.as_deref().unwrap_or("").trim();
        let source = input
            .interaction
            .as_ref()
            .and_then(|ev| ctx.figure(&ev.figure_id));
        if let Some(src) = source {
            if text.is_empty() {
                return Ok(self.gesture_only(src, schema));
            }
        }
        let preferred = source.or(ctx.active()).map(|f| f.table.as_str());
        let p = self.parse(text, schema, preferred);
        if let (None, Some(fig), IntentVerb::Filter | IntentVerb::LogScale) = (source, ctx.active(), p.verb) {
            return Ok(self.manipulations(&p, fig));
        }
        let target = match source {
            Some(src) => PlanTarget::Extend {
                source: src.figure_id.clone(),
            },
            None => PlanTarget::Generate,
        };
        if let Some(src) = source {
            if p.measures.is_empty() && p.dimension.is_none() && p.agg.is_none() && matches!(p.verb, IntentVerb::Unknown | IntentVerb::Plot) {
                return Ok(self.gesture_only(src, schema));
            }
            let tables = backbone_tables(src);
            let needed = p.table.iter().chain(p.join.as_ref().map(|(u, _)| u));
            if needed.into_iter().any(|t| !tables.contains(t)) {
                return Ok(vec![]);
            }
        }
        let strip = |actions: Vec<Action>| match source {
            Some(src) => {
                let tables = backbone_tables(src);
                actions
                    .into_iter()
                    .filter(|a| match a {
                        Action::SelectTable { table } | Action::JoinTables { table, .. } => !tables.contains(table),
                        _ => true,
                    })
                    .collect()
            }
            None => actions,
        };
        let mut out = Vec::new();
        if let Some((actions, expect)) = build_figure(&p, schema, None) {
            let actions: Vec<Action> = strip(actions);
            let chosen = actions.iter().find_map(|a| match a {
                Action::AddChartType { chart_type } => Some(*chart_type),
                _ => None,
            });
            out.push(Candidate {
                target: target.clone(),
                actions,
                rationale: format!("{:?} intent over {}", p.verb, p.table.clone().unwrap_or_default()),
                expect: expect.clone(),
            });
            // When no chart type was asked for, also try the other common form.
            if p.chart.is_none() {
                let alt = match chosen {
                    Some(ChartType::Line) => Some(ChartType::Bar),
                    Some(ChartType::Bar) if p.dimension.as_deref().and_then(|d| column_type(schema, &p, d)) != Some(SemanticType::Nominal) => {
                        Some(ChartType::Line)
                    }
                    _ => None,
                };
                if let Some((actions, expect)) = alt.and_then(|c| build_figure(&p, schema, Some(c))) {
                    out.push(Candidate {
                        target,
                        actions: strip(actions),
                        rationale: "alternative chart form".into(),
                        expect,
                    });
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demo::{demo_catalog, DemoSeeds};

    fn schema() -> CatalogSchema {
        demo_catalog(DemoSeeds::default()).unwrap().schema()
    }

    #[test]
    fn florida_monthly_question() {
        let b = TemplateBackend::default();
        let p = b.parse(
            "Plot the average monthly temperature in Florida over the past ten years (2014 to 2024).",
            &schema(),
            None,
        );
        assert_eq!(p.verb, IntentVerb::Plot);
        assert_eq!(p.agg, Some(AggFunc::Mean));
        assert_eq!(p.dimension.as_deref(), Some("month"));
        assert_eq!(p.measures, vec!["temp".to_string()]);
        assert_eq!(p.table.as_deref(), Some("temps"));
        assert!(p.atoms.contains(&Atom::membership("state", [Value::text("FL")])));
        assert!(p.atoms.contains(&Atom::range("year", 2014.0, 2024.0)));
    }

    #[test]
    fn state_ranking_question() {
        let b = TemplateBackend::default();
        let p = b.parse(
            "Show me the average temperature of each U.S. state in the past 10 years (2014-2024), and rank them from hottest to coolest.",
            &schema(),
            Some("temps"),
        );
        assert_eq!(p.verb, IntentVerb::Rank);
        assert_eq!(p.dimension.as_deref(), Some("state"));
        assert_eq!(p.measures, vec!["temp".to_string()]);
        assert_eq!(p.descending, Some(true));
        // "me" is not Maine.
        assert!(!p.atoms.iter().any(|a| a.column() == "state"));
    }

    #[test]
    fn fuzzy_columns_and_values() {
        let b = TemplateBackend::default();
        let p = b.parse("total disclosures per departmnt for computer sciense", &schema(), None);
        assert_eq!(p.dimension.as_deref(), Some("department"));
        assert_eq!(p.agg, Some(AggFunc::Sum));
        assert!(p
            .atoms
            .contains(&Atom::membership("department", [Value::text("Computer Science")])));
    }

    #[test]
    fn join_for_college() {
        let b = TemplateBackend::default();
        let p = b.parse("plot total disclosures by college", &schema(), None);
        assert_eq!(p.table.as_deref(), Some("faculty"));
        assert_eq!(p.join, Some(("departments".into(), "department".into())));
    }

    #[test]
    fn rank_dimension_by_measure() {
        let b = TemplateBackend::default();
        let p = b.parse("rank departments by average papers", &schema(), None);
        assert_eq!(p.verb, IntentVerb::Rank);
        assert_eq!(p.dimension.as_deref(), Some("department"));
        assert_eq!(p.measures, vec!["papers".to_string()]);
    }

    #[test]
    fn percentage_and_distribution() {
        let b = TemplateBackend::default();
        let p = b.parse("percentage of faculty by rank using a pie chart", &schema(), None);
        assert_eq!(p.verb, IntentVerb::Percentage);
        assert_eq!(p.dimension.as_deref(), Some("rank"));
        assert_eq!(p.table.as_deref(), Some("faculty"));
        let d = b.parse("show temp distribution in bins of 5", &schema(), None);
        assert_eq!(d.verb, IntentVerb::Distribution);
        assert_eq!(d.bin_width, Some(5.0));
    }

    #[test]
    fn comparisons() {
        let b = TemplateBackend::default();
        let p = b.parse("filter to papers above 40", &schema(), Some("faculty"));
        assert_eq!(p.verb, IntentVerb::Filter);
        assert_eq!(p.atoms, vec![Atom::cmp("papers", CmpOp::Gt, 40.0)]);
        let q = b.parse("only years 2016 to 2018", &schema(), Some("temps"));
        assert_eq!(q.atoms, vec![Atom::range("year", 2016.0, 2018.0)]);
    }

    #[test]
    fn classification() {
        let b = TemplateBackend::default();
        let c = |t: &str| b.classify(&UserInputRecord::text(t)).unwrap();
        assert_eq!(
            c("compare innovation across all departments over time and explain drivers"),
            QueryClass::HighLevel
        );
        assert_eq!(c("show mean temp by month for Florida"), QueryClass::LowLevel);
        assert_eq!(c("what should I look at next?"), QueryClass::RecommendationRequest);
    }
}
