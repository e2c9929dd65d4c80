//! Paired question and gesture test cases, scored against the reference evaluator.
//!
//! A case asks for a figure, gestures on it, asks a follow-up over the selection and
//! optionally gestures again to check coordinated updates. Every expected result is a
//! plan over the base tables run by [`reference_execute`]; the engine is only ever the
//! thing being measured.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::TAU;

use chrono::{DateTime, TimeZone, Utc};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{IntentBackend, Lexicon};
use crate::catalog::TableCatalog;
use crate::chart::{Channel, ChartType};
use crate::figure::FigureState;
use crate::interaction::{Gesture, InteractionEvent};
use crate::plan::{AggFunc, AggSpec, AnalyzeOp, PlanNode, QueryPlan, SortKey};
use crate::predicate::{Atom, Predicate};
use crate::reference::reference_execute;
use crate::session::{run_turn_with, Emitter, MessageRequest, SessionConfig, UpdateStatus, Workspace};
use crate::slice::{round_sig, rounded_digest, DataSlice};
use crate::value::{Row, SemanticType, Value, ROW_KEY_COLUMN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionType {
    SingleMark,
    Interval1d,
    Interval2d,
}

impl InteractionType {
    pub const ALL: [InteractionType; 3] = [Self::SingleMark, Self::Interval1d, Self::Interval2d];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::SingleMark => "single_mark",
            Self::Interval1d => "interval_1d",
            Self::Interval2d => "interval_2d",
        }
    }
}

/// A gesture in data terms, resolved against the live figure at run time.
///
/// `Brush2d` bounds are axis values for cartesian charts, unit-square coordinates for
/// pies and row-band coordinates (`[0, 1]` by row index) for tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GestureSpec {
    Click { channel: Channel, values: Vec<Value> },
    Brush1d { channel: Channel, lo: f64, hi: f64 },
    Brush2d { x_lo: f64, x_hi: f64, y_lo: f64, y_hi: f64 },
}

/// Which rows a follow-up reads: the source's base tables, or the source figure's rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionScope {
    Backbone,
    Figure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialStep {
    pub question: String,
    pub oracle_plan: QueryPlan,
    pub oracle_sql: String,
    pub oracle_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FollowupStep {
    pub gesture: GestureSpec,
    pub question: String,
    pub scope: SelectionScope,
    pub oracle_predicate: Predicate,
    pub oracle_plan: QueryPlan,
    pub oracle_sql: String,
    pub oracle_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordinationStep {
    pub gesture: GestureSpec,
    pub oracle_predicate: Predicate,
    pub oracle_plan: QueryPlan,
    pub oracle_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub case_id: String,
    pub tier: u8,
    pub figure_type: ChartType,
    pub interaction_type: InteractionType,
    pub initial: InitialStep,
    pub followup: FollowupStep,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coordination: Option<CoordinationStep>,
}

/// Grid to generate: every figure type × interaction type × tier, `reps` times each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteSpec {
    pub figure_types: Vec<ChartType>,
    pub interaction_types: Vec<InteractionType>,
    pub tiers: Vec<u8>,
    pub reps: usize,
    pub coordination: bool,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        Self {
            figure_types: FIGURE_TYPES.to_vec(),
            interaction_types: InteractionType::ALL.to_vec(),
            tiers: vec![1, 2],
            reps: 2,
            coordination: true,
        }
    }
}

pub const FIGURE_TYPES: [ChartType; 5] = [
    ChartType::Bar,
    ChartType::Line,
    ChartType::Scatter,
    ChartType::Pie,
    ChartType::Table,
];

pub const DEFAULT_SUITE_SEED: u64 = 3_003;

/// The suite shipped with the crate: `generate_suite(demo catalog, SuiteSpec::default(), DEFAULT_SUITE_SEED)`.
pub const BUNDLED_SUITE: &str = include_str!("../assets/suite.jsonl");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("catalog cannot support the suite: {0}")]
    InsufficientCatalog(String),
    #[error("unsupported stratum: {0}")]
    Unsupported(String),
    #[error("reference evaluation failed: {0}")]
    Oracle(String),
    #[error("could not build a non-empty gesture for {0}")]
    NoGesture(String),
    #[error("bad suite line {line}: {message}")]
    BadSuite { line: usize, message: String },
}

// ---------------------------------------------------------------------------
// Sources: what each stratum asks for first.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Domain {
    Temps,
    Faculty,
}

struct Source {
    question: String,
    plan: PlanNode,
    backbone: PlanNode,
    domain: Domain,
    channels: BTreeMap<Channel, String>,
    aggregated: bool,
}

const REQUIRED: [(&str, &[&str]); 3] = [
    ("temps", &["state", "temp", "year", "month"]),
    (
        "faculty",
        &["department", "rank", "papers", "patent_cited_papers", "disclosures", "hire_year"],
    ),
    ("departments", &["department", "college"]),
];

fn check_catalog(catalog: &TableCatalog) -> Result<(), EvalError> {
    let mut missing = Vec::new();
    for (t, cols) in REQUIRED {
        match catalog.table(t) {
            None => missing.push(t.to_string()),
            Some(tab) => missing.extend(
                cols.iter()
                    .filter(|c| tab.schema.index_of(c).is_none())
                    .map(|c| format!("{t}.{c}")),
            ),
        }
    }
    if missing.is_empty() {
        Ok(())
    } else {
        Err(EvalError::InsufficientCatalog(format!("missing {}", missing.join(", "))))
    }
}

fn distinct_text(catalog: &TableCatalog, table: &str, column: &str) -> Vec<String> {
    let Some(t) = catalog.table(table) else { return vec![] };
    let Some(i) = t.schema.index_of(column) else { return vec![] };
    let set: BTreeSet<String> = t.rows.iter().filter_map(|r| r.values[i].as_str().map(str::to_string)).collect();
    set.into_iter().collect()
}

fn title_case(s: &str) -> String {
    s.split(' ')
        .map(|w| {
            let mut c = w.chars();
            match c.next() {
                Some(f) => f.to_uppercase().chain(c).collect(),
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Values a question can name unambiguously.
struct Names {
    /// (code, spoken name)
    states: Vec<(String, String)>,
    departments: Vec<String>,
    colleges: Vec<String>,
    ranks: Vec<String>,
}

impl Names {
    fn of(catalog: &TableCatalog) -> Result<Self, EvalError> {
        let lex = Lexicon::bundled();
        let states = distinct_text(catalog, "temps", "state")
            .into_iter()
            .filter_map(|code| {
                let name = lex.values.get(&code)?.first()?;
                Some((code, title_case(name)))
            })
            .collect::<Vec<_>>();
        let colleges = distinct_text(catalog, "departments", "college");
        // A department named like a college would read as the college.
        let departments: Vec<String> = distinct_text(catalog, "faculty", "department")
            .into_iter()
            .filter(|d| !colleges.iter().any(|c| c.eq_ignore_ascii_case(d)))
            .collect();
        let ranks = distinct_text(catalog, "faculty", "rank");
        if states.is_empty() || departments.is_empty() || colleges.is_empty() || ranks.is_empty() {
            return Err(EvalError::InsufficientCatalog("no nameable values".into()));
        }
        Ok(Self {
            states,
            departments,
            colleges,
            ranks,
        })
    }
}

fn is_in(column: &str, v: &str) -> Predicate {
    Predicate::new(vec![Atom::membership(column, [Value::text(v)])])
}

fn faculty_joined() -> PlanNode {
    PlanNode::scan("faculty").join(PlanNode::scan("departments"), "department", "department")
}

fn source(tier: u8, fig: ChartType, names: &Names, rng: &mut ChaCha8Rng) -> Result<Source, EvalError> {
    use Channel::*;
    let pick = |v: &Vec<String>, rng: &mut ChaCha8Rng| v.choose(rng).cloned().expect("non-empty");
    let ch = |pairs: &[(Channel, &str)]| pairs.iter().map(|(c, f)| (*c, f.to_string())).collect();
    let mean = |c: &str| AggSpec::new(AggFunc::Mean, c);
    let s = match (tier, fig) {
        (1, ChartType::Bar | ChartType::Line) => {
            let (code, name) = names.states.choose(rng).cloned().expect("non-empty");
            let (dim, chart) = if fig == ChartType::Bar { ("year", "bar") } else { ("month", "line") };
            let mut plan = PlanNode::scan("temps")
                .filter(is_in("state", &code))
                .aggregate(vec![dim.into()], vec![mean("temp")]);
            if fig == ChartType::Line {
                plan = plan.sort_limit(vec![SortKey::asc(dim)], None);
            }
            Source {
                question: format!("plot average temp by {dim} for {name} as a {chart} chart"),
                plan,
                backbone: PlanNode::scan("temps"),
                domain: Domain::Temps,
                channels: ch(&[(X, dim), (Y, "mean_temp")]),
                aggregated: true,
            }
        }
        (1, ChartType::Scatter) => {
            let d = pick(&names.departments, rng);
            Source {
                question: format!("plot papers vs patent cited papers for {d}"),
                plan: PlanNode::scan("faculty").filter(is_in("department", &d)),
                backbone: PlanNode::scan("faculty"),
                domain: Domain::Faculty,
                channels: ch(&[(X, "papers"), (Y, "patent_cited_papers")]),
                aggregated: false,
            }
        }
        (1, ChartType::Pie) => {
            let d = pick(&names.departments, rng);
            Source {
                question: format!("percentage of faculty in {d} by rank using a pie chart"),
                plan: PlanNode::scan("faculty")
                    .filter(is_in("department", &d))
                    .aggregate(vec!["rank".into()], vec![AggSpec::count()])
                    .analyze(AnalyzeOp::PercentageOfTotal { column: "count".into() }),
                backbone: PlanNode::scan("faculty"),
                domain: Domain::Faculty,
                channels: ch(&[(Theta, "count_pct"), (Color, "rank")]),
                aggregated: true,
            }
        }
        (1, ChartType::Table) => {
            let d = pick(&names.departments, rng);
            Source {
                question: format!("list papers and disclosures for {d} as a table"),
                plan: PlanNode::scan("faculty").filter(is_in("department", &d)),
                backbone: PlanNode::scan("faculty"),
                domain: Domain::Faculty,
                channels: ch(&[(RowLabel, "papers")]),
                aggregated: false,
            }
        }
        (2, ChartType::Bar | ChartType::Line) => {
            let c = pick(&names.colleges, rng);
            let (agg, word, chart) = if fig == ChartType::Bar {
                (AggSpec::new(AggFunc::Sum, "disclosures"), "total disclosures", "bar")
            } else {
                (mean("papers"), "average papers", "line")
            };
            let y = agg.output_name();
            let mut plan = faculty_joined()
                .filter(is_in("college", &c))
                .aggregate(vec!["hire_year".into()], vec![agg]);
            if fig == ChartType::Line {
                plan = plan.sort_limit(vec![SortKey::asc("hire_year")], None);
            }
            Source {
                question: format!("plot {word} by hire year for {c} faculty as a {chart} chart"),
                plan,
                backbone: faculty_joined(),
                domain: Domain::Faculty,
                channels: ch(&[(X, "hire_year"), (Y, &y)]),
                aggregated: true,
            }
        }
        (2, ChartType::Scatter) => {
            let r = pick(&names.ranks, rng);
            Source {
                question: format!("plot average papers vs average patent cited papers by college for {r} faculty"),
                plan: faculty_joined()
                    .filter(is_in("rank", &r))
                    .aggregate(vec!["college".into()], vec![mean("papers"), mean("patent_cited_papers")]),
                backbone: faculty_joined(),
                domain: Domain::Faculty,
                channels: ch(&[(X, "mean_papers"), (Y, "mean_patent_cited_papers"), (Color, "college")]),
                aggregated: true,
            }
        }
        (2, ChartType::Pie) => {
            let r = pick(&names.ranks, rng);
            Source {
                question: format!("percentage of disclosures by college for {r} faculty using a pie chart"),
                plan: faculty_joined()
                    .filter(is_in("rank", &r))
                    .aggregate(vec!["college".into()], vec![AggSpec::new(AggFunc::Sum, "disclosures")])
                    .analyze(AnalyzeOp::PercentageOfTotal {
                        column: "sum_disclosures".into(),
                    }),
                backbone: faculty_joined(),
                domain: Domain::Faculty,
                channels: ch(&[(Theta, "sum_disclosures_pct"), (Color, "college")]),
                aggregated: true,
            }
        }
        (2, ChartType::Table) => {
            let c = pick(&names.colleges, rng);
            let w = *[2u32, 3, 5].choose(rng).expect("non-empty");
            Source {
                question: format!("show patent cited papers distribution in bins of {w} for {c} faculty as a table"),
                plan: faculty_joined()
                    .filter(is_in("college", &c))
                    .analyze(AnalyzeOp::Binning {
                        column: "patent_cited_papers".into(),
                        width: f64::from(w),
                    })
                    .aggregate(vec!["patent_cited_papers_bin".into()], vec![AggSpec::count()])
                    .sort_limit(vec![SortKey::asc("patent_cited_papers_bin")], None),
                backbone: faculty_joined(),
                domain: Domain::Faculty,
                channels: ch(&[(RowLabel, "patent_cited_papers_bin")]),
                aggregated: true,
            }
        }
        _ => return Err(EvalError::Unsupported(format!("tier {tier} {fig:?}"))),
    };
    Ok(s)
}

/// Follow-up question and the steps it adds on top of the selected rows.
fn followup(domain: Domain, scope: SelectionScope, rng: &mut ChaCha8Rng) -> (String, fn(PlanNode) -> PlanNode) {
    if scope == SelectionScope::Figure {
        return ("show the selected rows as a table".into(), |p| p);
    }
    let options: [(&str, fn(PlanNode) -> PlanNode); 2] = match domain {
        Domain::Temps => [
            ("rank states by average temp", |p| {
                p.aggregate(vec!["state".into()], vec![AggSpec::new(AggFunc::Mean, "temp")])
                    .sort_limit(vec![SortKey::desc("mean_temp")], None)
            }),
            ("plot maximum temp by state", |p| {
                p.aggregate(vec!["state".into()], vec![AggSpec::new(AggFunc::Max, "temp")])
            }),
        ],
        Domain::Faculty => [
            ("plot average papers by rank", |p| {
                p.aggregate(vec!["rank".into()], vec![AggSpec::new(AggFunc::Mean, "papers")])
            }),
            ("plot total disclosures by department", |p| {
                p.aggregate(vec!["department".into()], vec![AggSpec::new(AggFunc::Sum, "disclosures")])
            }),
        ],
    };
    let (q, f) = options[rng.random_range(0..options.len())];
    (q.to_string(), f)
}

// ---------------------------------------------------------------------------
// Oracle side: selections computed from reference rows.

fn run_ref(plan: &PlanNode, catalog: &TableCatalog) -> Result<DataSlice, EvalError> {
    reference_execute(&QueryPlan::new(plan.clone()), catalog).map_err(EvalError::Oracle)
}

fn same(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Num(x), Value::Num(y)) => round_sig(*x, 9) == round_sig(*y, 9),
        _ => a.cmp(b) == Ordering::Equal,
    }
}

fn cell(s: &DataSlice, row: &Row, field: &str) -> Option<Value> {
    s.schema.index_of(field).map(|i| row.values[i].clone())
}

fn num(s: &DataSlice, row: &Row, field: &str) -> Option<f64> {
    cell(s, row, field).and_then(|v| v.as_f64())
}

/// Pie slice centroids in row order; same layout the chart draws.
fn slice_centroids(s: &DataSlice, theta: &str) -> Vec<(f64, f64)> {
    let vals: Vec<f64> = s.rows.iter().map(|r| num(s, r, theta).unwrap_or(0.0).max(0.0)).collect();
    let total: f64 = vals.iter().sum();
    let mut start = 0.0;
    vals.iter()
        .map(|v| {
            let frac = if total > 0.0 { v / total } else { 0.0 };
            let a = (start + frac / 2.0) * TAU;
            start += frac;
            (0.5 + 0.25 * a.sin(), 0.5 + 0.25 * a.cos())
        })
        .collect()
}

fn within(v: f64, lo: f64, hi: f64) -> bool {
    lo <= v && v <= hi
}

/// Row indices of `s` the gesture covers.
fn covered(src: &Source, fig: ChartType, s: &DataSlice, g: &GestureSpec) -> Vec<usize> {
    let field = |c: Channel| src.channels.get(&c).cloned().unwrap_or_default();
    let rows = s.rows.iter().enumerate();
    match g {
        GestureSpec::Click { channel, values } => {
            let f = field(*channel);
            rows.filter(|(_, r)| cell(s, r, &f).is_some_and(|v| values.iter().any(|x| same(x, &v))))
                .map(|(i, _)| i)
                .collect()
        }
        GestureSpec::Brush1d { channel, lo, hi } => {
            let f = field(*channel);
            rows.filter(|(_, r)| num(s, r, &f).is_some_and(|v| within(v, *lo, *hi)))
                .map(|(i, _)| i)
                .collect()
        }
        GestureSpec::Brush2d { x_lo, x_hi, y_lo, y_hi } => {
            let inside = |x: f64, y: f64| within(x, *x_lo, *x_hi) && within(y, *y_lo, *y_hi);
            match fig {
                ChartType::Pie => slice_centroids(s, &field(Channel::Theta))
                    .into_iter()
                    .enumerate()
                    .filter(|(_, (x, y))| inside(*x, *y))
                    .map(|(i, _)| i)
                    .collect(),
                ChartType::Table => (0..s.rows.len()).filter(|i| inside(0.5, *i as f64 + 0.5)).collect(),
                _ => {
                    let (fx, fy) = (field(Channel::X), field(Channel::Y));
                    rows.filter(|(_, r)| match (num(s, r, &fx), num(s, r, &fy)) {
                        (Some(x), Some(y)) => inside(x, y),
                        _ => false,
                    })
                    .map(|(i, _)| i)
                    .collect()
                }
            }
        }
    }
}

fn holds(s: &DataSlice, row: &Row, atom: &Atom) -> bool {
    let v = if atom.column() == ROW_KEY_COLUMN {
        Some(Value::text(row.key.as_str()))
    } else {
        cell(s, row, atom.column())
    };
    let Some(v) = v else { return false };
    match atom {
        Atom::Membership { values, .. } => values.iter().any(|x| x.cmp(&v) == Ordering::Equal),
        Atom::Range { lo, hi, .. } => v.cmp(lo) != Ordering::Less && v.cmp(hi) != Ordering::Greater,
        Atom::Comparison { .. } => false,
    }
}

/// Range over the values of `field` among rows whose value lies in `[lo, hi]`.
fn snapped(s: &DataSlice, field: &str, lo: f64, hi: f64) -> Option<Atom> {
    let inside: Vec<Value> = s
        .rows
        .iter()
        .filter_map(|r| cell(s, r, field))
        .filter(|v| v.as_f64().is_some_and(|x| within(x, lo, hi)))
        .collect();
    let a = inside.iter().min()?.clone();
    let b = inside.iter().max()?.clone();
    Some(Atom::range(field, a, b))
}

/// The predicate a gesture covering rows `sel` of `s` turns into.
fn derive(src: &Source, fig: ChartType, s: &DataSlice, g: &GestureSpec, sel: &[usize]) -> Predicate {
    let atoms = match g {
        GestureSpec::Brush1d { channel, lo, hi } => {
            let f = &src.channels[channel];
            snapped(s, f, *lo, *hi).into_iter().collect()
        }
        GestureSpec::Brush2d { x_lo, x_hi, y_lo, y_hi } if !matches!(fig, ChartType::Pie | ChartType::Table) => {
            let fx = &src.channels[&Channel::X];
            let fy = &src.channels[&Channel::Y];
            snapped(s, fx, *x_lo, *x_hi).into_iter().chain(snapped(s, fy, *y_lo, *y_hi)).collect()
        }
        _ => mark_atoms(src, s, sel),
    };
    Predicate::new(atoms)
}

/// Membership over the first discrete channel that reproduces the selection, else row keys.
fn mark_atoms(src: &Source, s: &DataSlice, sel: &[usize]) -> Vec<Atom> {
    let target: BTreeSet<usize> = sel.iter().copied().collect();
    let order = [
        Channel::X,
        Channel::Color,
        Channel::RowLabel,
        Channel::Y,
        Channel::Theta,
        Channel::Size,
        Channel::Tooltip,
    ];
    for c in order {
        let Some(f) = src.channels.get(&c) else { continue };
        let discrete = s
            .schema
            .column(f)
            .is_some_and(|col| matches!(col.kind, SemanticType::Nominal | SemanticType::Ordinal | SemanticType::Temporal));
        if !discrete {
            continue;
        }
        let values: BTreeSet<Value> = sel.iter().filter_map(|i| cell(s, &s.rows[*i], f)).collect();
        let atom = Atom::membership(f.clone(), values);
        let hit: BTreeSet<usize> = (0..s.rows.len()).filter(|i| holds(s, &s.rows[*i], &atom)).collect();
        if hit == target {
            return vec![atom];
        }
    }
    vec![Atom::membership(
        ROW_KEY_COLUMN,
        sel.iter().map(|i| Value::text(s.rows[*i].key.as_str())),
    )]
}

fn scope_of(src: &Source, p: &Predicate, backbone: &BTreeSet<String>) -> SelectionScope {
    let fits = p.atoms.iter().all(|a| {
        if a.column() == ROW_KEY_COLUMN {
            !src.aggregated
        } else {
            backbone.contains(a.column())
        }
    });
    if fits {
        SelectionScope::Backbone
    } else {
        SelectionScope::Figure
    }
}

// ---------------------------------------------------------------------------
// Gesture generation.

/// Bounds halfway to the neighbouring distinct values, so float noise cannot move an edge.
fn padded(d: &[f64], i: usize, j: usize) -> (f64, f64) {
    let lo = if i == 0 { d[0] - 1.0 } else { (d[i - 1] + d[i]) / 2.0 };
    let hi = if j + 1 >= d.len() { d[d.len() - 1] + 1.0 } else { (d[j] + d[j + 1]) / 2.0 };
    (lo, hi)
}

fn distinct_nums(s: &DataSlice, field: &str) -> Vec<f64> {
    let mut v: Vec<f64> = s.rows.iter().filter_map(|r| num(s, r, field)).collect();
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| round_sig(*a, 9) == round_sig(*b, 9));
    v
}

fn index_of(d: &[f64], x: f64) -> usize {
    d.iter().position(|v| round_sig(*v, 9) == round_sig(x, 9)).unwrap_or(0)
}

fn gesture(src: &Source, fig: ChartType, kind: InteractionType, s: &DataSlice, rng: &mut ChaCha8Rng) -> Option<GestureSpec> {
    if s.rows.is_empty() {
        return None;
    }
    let click_channel = match fig {
        ChartType::Pie => Channel::Color,
        ChartType::Table => Channel::RowLabel,
        ChartType::Scatter if src.channels.contains_key(&Channel::Color) => Channel::Color,
        _ => Channel::X,
    };
    let brush_channel = match fig {
        ChartType::Pie => Channel::Theta,
        ChartType::Table => Channel::RowLabel,
        _ => Channel::X,
    };
    match kind {
        InteractionType::SingleMark => {
            let f = &src.channels[&click_channel];
            let mut pool: Vec<Value> = s.rows.iter().filter_map(|r| cell(s, r, f)).collect();
            pool.sort();
            pool.dedup();
            let n = rng.random_range(1..=2.min(pool.len()));
            let mut values: Vec<Value> = pool.choose_multiple(rng, n).cloned().collect();
            values.sort();
            Some(GestureSpec::Click {
                channel: click_channel,
                values,
            })
        }
        InteractionType::Interval1d => {
            let d = distinct_nums(s, &src.channels[&brush_channel]);
            if d.is_empty() {
                return None;
            }
            let i = rng.random_range(0..d.len());
            let j = (i + rng.random_range(0..=3)).min(d.len() - 1);
            let (lo, hi) = padded(&d, i, j);
            Some(GestureSpec::Brush1d {
                channel: brush_channel,
                lo,
                hi,
            })
        }
        InteractionType::Interval2d => match fig {
            ChartType::Pie => {
                let cs = slice_centroids(s, &src.channels[&Channel::Theta]);
                let clear = |v: f64| (v - 0.5).abs() > 1e-6;
                let left = rng.random_bool(0.5);
                let halves = [(left, true), (!left, true), (left, false), (!left, false)];
                halves.into_iter().find_map(|(low, vertical)| {
                    let pos = |c: &(f64, f64)| if vertical { c.0 } else { c.1 };
                    if !cs.iter().all(|c| clear(pos(c))) || !cs.iter().any(|c| (pos(c) < 0.5) == low) {
                        return None;
                    }
                    let (a, b) = if low { (0.0, 0.5) } else { (0.5, 1.0) };
                    Some(if vertical {
                        GestureSpec::Brush2d {
                            x_lo: a,
                            x_hi: b,
                            y_lo: 0.0,
                            y_hi: 1.0,
                        }
                    } else {
                        GestureSpec::Brush2d {
                            x_lo: 0.0,
                            x_hi: 1.0,
                            y_lo: a,
                            y_hi: b,
                        }
                    })
                })
            }
            ChartType::Table => {
                let n = s.rows.len();
                let first = rng.random_range(0..n);
                let last = (first + rng.random_range(0..=3)).min(n - 1);
                Some(GestureSpec::Brush2d {
                    x_lo: 0.0,
                    x_hi: 1.0,
                    y_lo: first as f64 + 0.25,
                    y_hi: last as f64 + 0.75,
                })
            }
            _ => {
                let (fx, fy) = (&src.channels[&Channel::X], &src.channels[&Channel::Y]);
                let (dx, dy) = (distinct_nums(s, fx), distinct_nums(s, fy));
                let r = s.rows.choose(rng)?;
                let (ix, iy) = (index_of(&dx, num(s, r, fx)?), index_of(&dy, num(s, r, fy)?));
                let span = |i: usize, len: usize, rng: &mut ChaCha8Rng| {
                    let a = i.saturating_sub(rng.random_range(0..=2));
                    let b = (i + rng.random_range(0..=2)).min(len - 1);
                    (a, b)
                };
                let (xa, xb) = span(ix, dx.len(), rng);
                let (ya, yb) = span(iy, dy.len(), rng);
                let (x_lo, x_hi) = padded(&dx, xa, xb);
                let (y_lo, y_hi) = padded(&dy, ya, yb);
                Some(GestureSpec::Brush2d { x_lo, x_hi, y_lo, y_hi })
            }
        },
    }
}

// ---------------------------------------------------------------------------
// Generation.

fn digest_hex(s: &DataSlice) -> String {
    rounded_digest(s).to_hex()
}

/// Oracle for one gesture: predicate, scope and the composed plan over base tables.
fn oracle_for(
    src: &Source,
    fig: ChartType,
    s: &DataSlice,
    g: &GestureSpec,
    backbone: &BTreeSet<String>,
) -> Option<(Predicate, SelectionScope)> {
    let sel = covered(src, fig, s, g);
    if sel.is_empty() {
        return None;
    }
    let p = derive(src, fig, s, g, &sel);
    if p.atoms.is_empty() {
        return None;
    }
    let scope = scope_of(src, &p, backbone);
    Some((p, scope))
}

/// Filter for the oracle plan. Over the figure's own computed columns, ranges use the
/// gesture's padded bounds so summation noise cannot move a boundary row.
fn plan_filter(src: &Source, g: &GestureSpec, p: &Predicate, scope: SelectionScope) -> Predicate {
    if scope == SelectionScope::Backbone {
        return p.clone();
    }
    let bounds: BTreeMap<&str, (f64, f64)> = match g {
        GestureSpec::Brush1d { channel, lo, hi } => BTreeMap::from([(src.channels[channel].as_str(), (*lo, *hi))]),
        GestureSpec::Brush2d { x_lo, x_hi, y_lo, y_hi } => match (src.channels.get(&Channel::X), src.channels.get(&Channel::Y)) {
            (Some(x), Some(y)) => BTreeMap::from([(x.as_str(), (*x_lo, *x_hi)), (y.as_str(), (*y_lo, *y_hi))]),
            _ => BTreeMap::new(),
        },
        GestureSpec::Click { .. } => BTreeMap::new(),
    };
    let atoms = p
        .atoms
        .iter()
        .map(|a| match (a, bounds.get(a.column())) {
            (Atom::Range { column, .. }, Some((lo, hi))) => Atom::range(column.clone(), Value::num(*lo), Value::num(*hi)),
            _ => a.clone(),
        })
        .collect();
    Predicate::new(atoms)
}

fn case_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn generate_case(
    catalog: &TableCatalog,
    names: &Names,
    tier: u8,
    fig: ChartType,
    kind: InteractionType,
    rep: usize,
    index: usize,
    seed: u64,
    coordination: bool,
) -> Result<TestCase, EvalError> {
    let case_id = format!("t{tier}-{}-{}-{rep}", format!("{fig:?}").to_lowercase(), kind.as_str());
    let mut rng = case_rng(seed, index);
    // A few draws in case a value choice leaves nothing to select.
    for _ in 0..16 {
        let src = source(tier, fig, names, &mut rng)?;
        let s = run_ref(&src.plan, catalog)?;
        if s.rows.is_empty() {
            continue;
        }
        let bb = run_ref(&src.backbone, catalog)?;
        let backbone: BTreeSet<String> = bb.schema.names().map(str::to_string).collect();
        let Some(g) = gesture(&src, fig, kind, &s, &mut rng) else { continue };
        let Some((p, scope)) = oracle_for(&src, fig, &s, &g, &backbone) else { continue };
        let (question, ops) = followup(src.domain, scope, &mut rng);
        let base = match scope {
            SelectionScope::Backbone => src.backbone.clone(),
            SelectionScope::Figure => src.plan.clone(),
        };
        let f_plan = QueryPlan::new(ops(base.clone().filter(plan_filter(&src, &g, &p, scope))));
        let f_result = run_ref(&f_plan.root, catalog)?;
        if f_result.rows.is_empty() {
            continue;
        }
        let coord = if coordination {
            let mut second = None;
            for _ in 0..8 {
                let Some(g2) = gesture(&src, fig, kind, &s, &mut rng) else { continue };
                let Some((p2, scope2)) = oracle_for(&src, fig, &s, &g2, &backbone) else { continue };
                // The edge re-runs the stored program, so the selection must land in the same place.
                if scope2 != scope || p2.columns() != p.columns() {
                    continue;
                }
                let plan = QueryPlan::new(ops(base.clone().filter(plan_filter(&src, &g2, &p2, scope))));
                let r = run_ref(&plan.root, catalog)?;
                if r.rows.is_empty() {
                    continue;
                }
                second = Some(CoordinationStep {
                    gesture: g2,
                    oracle_predicate: p2,
                    oracle_digest: digest_hex(&r),
                    oracle_plan: plan,
                });
                if second.as_ref().is_some_and(|c| c.gesture != g) {
                    break;
                }
            }
            second
        } else {
            None
        };
        let i_plan = QueryPlan::new(src.plan.clone());
        return Ok(TestCase {
            case_id,
            tier,
            figure_type: fig,
            interaction_type: kind,
            initial: InitialStep {
                question: src.question.clone(),
                oracle_sql: i_plan.to_sql(),
                oracle_digest: digest_hex(&s),
                oracle_plan: i_plan,
            },
            followup: FollowupStep {
                gesture: g,
                question,
                scope,
                oracle_predicate: p,
                oracle_sql: f_plan.to_sql(),
                oracle_digest: digest_hex(&f_result),
                oracle_plan: f_plan,
            },
            coordination: coord,
        });
    }
    Err(EvalError::NoGesture(case_id))
}

/// Seeded cases covering every cell of the grid in `spec`.
pub fn generate_suite(catalog: &TableCatalog, spec: &SuiteSpec, seed: u64) -> Result<Vec<TestCase>, EvalError> {
    check_catalog(catalog)?;
    let names = Names::of(catalog)?;
    let mut out = Vec::new();
    let mut index = 0;
    for &tier in &spec.tiers {
        for &fig in &spec.figure_types {
            for &kind in &spec.interaction_types {
                for rep in 0..spec.reps {
                    out.push(generate_case(catalog, &names, tier, fig, kind, rep, index, seed, spec.coordination)?);
                    index += 1;
                }
            }
        }
    }
    Ok(out)
}

pub fn suite_to_jsonl(cases: &[TestCase]) -> String {
    let mut s = String::new();
    for c in cases {
        s.push_str(&serde_json::to_string(c).expect("cases serialize"));
        s.push('\n');
    }
    s
}

pub fn parse_suite(text: &str) -> Result<Vec<TestCase>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let c: TestCase = serde_json::from_str(line).map_err(|e| EvalError::BadSuite {
            line: i + 1,
            message: e.to_string(),
        })?;
        validate_case(&c).map_err(|message| EvalError::BadSuite { line: i + 1, message })?;
        out.push(c);
    }
    Ok(out)
}

pub fn validate_case(c: &TestCase) -> Result<(), String> {
    if !matches!(c.tier, 1 | 2) {
        return Err(format!("{}: tier must be 1 or 2", c.case_id));
    }
    if c.initial.question.trim().is_empty() || c.followup.question.trim().is_empty() {
        return Err(format!("{}: empty question", c.case_id));
    }
    let digests = [Some(&c.initial.oracle_digest), Some(&c.followup.oracle_digest), c.coordination.as_ref().map(|k| &k.oracle_digest)];
    for d in digests.into_iter().flatten() {
        if crate::digest::Digest::from_hex(d).is_none() {
            return Err(format!("{}: bad digest `{d}`", c.case_id));
        }
    }
    Ok(())
}

/// Same tables with every table's rows reversed; keys are kept.
fn reversed_catalog(catalog: &TableCatalog) -> Result<TableCatalog, EvalError> {
    let mut out = TableCatalog::new();
    for id in catalog.table_ids() {
        let t = catalog.table(id).expect("listed");
        let rows: Vec<Row> = t.rows.iter().rev().cloned().collect();
        out.register_table(id, t.schema.clone(), rows)
            .map_err(|e| EvalError::Oracle(e.to_string()))?;
    }
    Ok(out)
}

/// Re-evaluates every stored oracle plan over a row-reversed copy of the catalog.
/// Returns how many digests agreed, or the ids of steps that did not.
pub fn recheck_oracles(cases: &[TestCase], catalog: &TableCatalog) -> Result<usize, Vec<String>> {
    let rev = reversed_catalog(catalog).map_err(|e| vec![e.to_string()])?;
    let mut ok = 0;
    let mut bad = Vec::new();
    for c in cases {
        let mut steps = vec![
            ("initial", &c.initial.oracle_plan, &c.initial.oracle_digest),
            ("followup", &c.followup.oracle_plan, &c.followup.oracle_digest),
        ];
        if let Some(k) = &c.coordination {
            steps.push(("coordination", &k.oracle_plan, &k.oracle_digest));
        }
        for (name, plan, digest) in steps {
            match reference_execute(plan, &rev) {
                Ok(s) if digest_hex(&s) == *digest => ok += 1,
                _ => bad.push(format!("{}/{name}", c.case_id)),
            }
        }
    }
    if bad.is_empty() {
        Ok(ok)
    } else {
        Err(bad)
    }
}

// ---------------------------------------------------------------------------
// Running.

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub matches: bool,
    pub produced_digest: String,
}

/// Multiset comparison of `produced` with an oracle digest, numbers rounded to 9 significant digits.
pub fn compare_results(produced: &DataSlice, oracle_digest: &str) -> Verdict {
    let d = digest_hex(produced);
    Verdict {
        matches: d == oracle_digest,
        produced_digest: d,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub success: bool,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub figure_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub produced_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl StepRecord {
    fn failed(e: impl Into<String>) -> Self {
        Self {
            error: Some(e.into()),
            ..Self::default()
        }
    }

    fn scored(fig: &FigureState, digest: &str) -> Self {
        let v = compare_results(&fig.data, digest);
        Self {
            success: true,
            correct: v.matches,
            figure_id: Some(fig.figure_id.clone()),
            produced_digest: Some(v.produced_digest),
            error: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub tier: u8,
    pub figure_type: ChartType,
    pub interaction_type: InteractionType,
    pub initial: StepRecord,
    pub followup: StepRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coordination: Option<StepRecord>,
}

/// Resolves a data-space gesture against the figure as drawn.
pub fn resolve_gesture(spec: &GestureSpec, fig: &FigureState) -> Result<Gesture, String> {
    match spec {
        GestureSpec::Click { channel, values } => {
            let mark_ids: Vec<String> = fig
                .visualization
                .marks
                .iter()
                .filter(|m| m.channel_values.get(channel).is_some_and(|v| values.iter().any(|x| same(x, v))))
                .map(|m| m.mark_id.clone())
                .collect();
            if mark_ids.is_empty() {
                return Err(format!("no mark carries {values:?} on {channel:?}"));
            }
            Ok(Gesture::Click { mark_ids })
        }
        GestureSpec::Brush1d { channel, lo, hi } => Ok(Gesture::Brush1d {
            channel: *channel,
            lo: *lo,
            hi: *hi,
        }),
        GestureSpec::Brush2d { x_lo, x_hi, y_lo, y_hi } => Ok(Gesture::Brush2d {
            x_lo: *x_lo,
            x_hi: *x_hi,
            y_lo: *y_lo,
            y_hi: *y_hi,
        }),
    }
}

fn clock() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).single().expect("valid time")
}

/// One text turn (with an optional gesture); returns the figure it produced.
fn ask(
    ws: &mut Workspace,
    session: &str,
    backend: &dyn IntentBackend,
    text: &str,
    interaction: Option<InteractionEvent>,
) -> Result<FigureState, String> {
    let req = MessageRequest {
        text: Some(text.to_string()),
        interaction,
        target_figure: None,
    };
    let turn = ws.prepare_message(session, req).map_err(|e| e.to_string())?;
    let artifact = turn.state.artifact_id.clone();
    let mut sink = |_| {};
    let mut em = Emitter::new(&mut sink);
    let result = run_turn_with(&turn, backend, &mut em);
    let reply = ws.finish_message(turn, result, &mut em).map_err(|e| e.to_string())?;
    if let Some(e) = reply.error {
        return Err(e);
    }
    let fid = reply.figure_ids.first().ok_or("no figure")?;
    let state = ws.head_state(&artifact).map_err(|e| e.to_string())?;
    state.figures.get(fid).cloned().ok_or_else(|| "figure missing from head".into())
}

/// Runs one case in a fresh workspace.
pub fn run_case(case: &TestCase, backend: &dyn IntentBackend, catalog: &TableCatalog) -> CaseRecord {
    let mut rec = CaseRecord {
        case_id: case.case_id.clone(),
        tier: case.tier,
        figure_type: case.figure_type,
        interaction_type: case.interaction_type,
        initial: StepRecord::default(),
        followup: StepRecord::failed("initial step failed"),
        coordination: case.coordination.as_ref().map(|_| StepRecord::failed("follow-up failed")),
    };
    let mut ws = Workspace::new(catalog.clone());
    ws.fixed_clock = Some(clock());
    let session = match ws.create_session(SessionConfig::default()) {
        Ok(s) => s,
        Err(e) => {
            rec.initial = StepRecord::failed(e.to_string());
            return rec;
        }
    };
    let source = match ask(&mut ws, &session, backend, &case.initial.question, None) {
        Ok(f) => f,
        Err(e) => {
            rec.initial = StepRecord::failed(e);
            return rec;
        }
    };
    rec.initial = StepRecord::scored(&source, &case.initial.oracle_digest);

    let event = |spec: &GestureSpec| {
        resolve_gesture(spec, &source).map(|g| InteractionEvent {
            figure_id: source.figure_id.clone(),
            gesture: g,
            at: clock(),
        })
    };
    let target = match event(&case.followup.gesture)
        .and_then(|ev| ask(&mut ws, &session, backend, &case.followup.question, Some(ev)))
    {
        Ok(f) if f.figure_id != source.figure_id => f,
        Ok(_) => {
            rec.followup = StepRecord::failed("follow-up changed the source figure instead of extending it");
            return rec;
        }
        Err(e) => {
            rec.followup = StepRecord::failed(e);
            return rec;
        }
    };
    rec.followup = StepRecord::scored(&target, &case.followup.oracle_digest);

    if let Some(k) = &case.coordination {
        let step = event(&k.gesture).and_then(|ev| {
            let reply = ws.post_gesture(ev).map_err(|e| e.to_string())?;
            let u = reply
                .updates
                .iter()
                .find(|u| u.figure_id == target.figure_id)
                .ok_or("no coordinated update reached the follow-up figure")?;
            if !matches!(u.status, UpdateStatus::Updated | UpdateStatus::Unchanged) {
                return Err(format!("update {:?}: {}", u.status, u.detail.clone().unwrap_or_default()));
            }
            let state = ws.locate_figure(&target.figure_id).ok_or("figure vanished")?;
            Ok(StepRecord::scored(&state.figures[&target.figure_id], &k.oracle_digest))
        });
        rec.coordination = Some(step.unwrap_or_else(StepRecord::failed));
    }
    rec
}

// ---------------------------------------------------------------------------
// Metrics.

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub attempts: usize,
    pub succeeded: usize,
    pub correct: usize,
    pub execution_success_rate: f64,
    /// Correct among succeeded; absent when nothing succeeded.
    pub conditional_accuracy: Option<f64>,
    pub end_to_end_accuracy: f64,
}

impl Rate {
    fn add(&mut self, s: &StepRecord) {
        self.attempts += 1;
        self.succeeded += usize::from(s.success);
        self.correct += usize::from(s.success && s.correct);
    }

    fn finish(&mut self) {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        self.execution_success_rate = ratio(self.succeeded, self.attempts);
        self.conditional_accuracy = (self.succeeded > 0).then(|| ratio(self.correct, self.succeeded));
        self.end_to_end_accuracy = ratio(self.correct, self.attempts);
    }

    fn fmt_pct(x: Option<f64>) -> String {
        x.map_or("n/a".into(), |v| format!("{:.1}%", 100.0 * v))
    }
}

/// Rates per step and over all steps pooled.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRates {
    pub all: Rate,
    pub initial: Rate,
    pub followup: Rate,
    pub coordination: Rate,
}

impl StageRates {
    fn add(&mut self, r: &CaseRecord) {
        self.initial.add(&r.initial);
        self.followup.add(&r.followup);
        self.all.add(&r.initial);
        self.all.add(&r.followup);
        if let Some(c) = &r.coordination {
            self.coordination.add(c);
            self.all.add(c);
        }
    }

    fn finish(&mut self) {
        for r in [&mut self.all, &mut self.initial, &mut self.followup, &mut self.coordination] {
            r.finish();
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteMetrics {
    pub overall: StageRates,
    pub by_tier: BTreeMap<String, StageRates>,
    pub by_figure_type: BTreeMap<String, StageRates>,
    pub by_interaction_type: BTreeMap<String, StageRates>,
}

impl SuiteMetrics {
    pub fn from_records(records: &[CaseRecord]) -> Self {
        let mut m = Self::default();
        for r in records {
            m.overall.add(r);
            m.by_tier.entry(format!("tier_{}", r.tier)).or_default().add(r);
            m.by_figure_type
                .entry(format!("{:?}", r.figure_type).to_lowercase())
                .or_default()
                .add(r);
            m.by_interaction_type
                .entry(r.interaction_type.as_str().to_string())
                .or_default()
                .add(r);
        }
        m.overall.finish();
        for s in m.by_tier.values_mut().chain(m.by_figure_type.values_mut()).chain(m.by_interaction_type.values_mut()) {
            s.finish();
        }
        m
    }

    /// Plain-text table: one row per stratum, pooled over steps, then the overall steps.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<22} {:>6} {:>9} {:>12} {:>11}\n", "stratum", "steps", "success", "conditional", "end-to-end");
        let mut line = |name: &str, r: &Rate| {
            out.push_str(&format!(
                "{:<22} {:>6} {:>9} {:>12} {:>11}\n",
                name,
                r.attempts,
                Rate::fmt_pct((r.attempts > 0).then_some(r.execution_success_rate)),
                Rate::fmt_pct(r.conditional_accuracy),
                Rate::fmt_pct((r.attempts > 0).then_some(r.end_to_end_accuracy)),
            ));
        };
        line("overall", &self.overall.all);
        line("  initial", &self.overall.initial);
        line("  follow-up", &self.overall.followup);
        line("  coordination", &self.overall.coordination);
        for (k, v) in self.by_tier.iter().chain(&self.by_figure_type).chain(&self.by_interaction_type) {
            line(k, &v.all);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub metrics: SuiteMetrics,
    pub cases: Vec<CaseRecord>,
}

pub fn run_suite(cases: &[TestCase], backend: &dyn IntentBackend, catalog: &TableCatalog) -> SuiteReport {
    let records: Vec<CaseRecord> = cases.iter().map(|c| run_case(c, backend, catalog)).collect();
    SuiteReport {
        metrics: SuiteMetrics::from_records(&records),
        cases: records,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demo::{demo_catalog, DemoSeeds};
    use crate::value::{Column, Schema};

    fn slice(rows: &[(&str, f64)]) -> DataSlice {
        let schema = Schema::new(vec![
            Column::new("k", SemanticType::Nominal),
            Column::new("v", SemanticType::Quantitative),
        ]);
        let rows = rows
            .iter()
            .enumerate()
            .map(|(i, (k, v))| Row::new(format!("r{i}"), vec![Value::text(*k), Value::num(*v)]))
            .collect();
        DataSlice::new(schema, rows, Default::default())
    }

    #[test]
    fn compare_ignores_order_and_summation_noise() {
        let a = slice(&[("a", 1.0), ("b", 2.0)]);
        let b = slice(&[("b", 2.0), ("a", 1.0)]);
        assert!(compare_results(&b, &digest_hex(&a)).matches);
        let c = slice(&[("a", 1.0), ("b", 2.0), ("c", 3.0)]);
        assert!(!compare_results(&c, &digest_hex(&a)).matches);
        // Same mean summed in two orders.
        let xs = [0.1, 0.7, 0.2, 1e-3, 3.3, 0.3];
        let fwd: f64 = xs.iter().sum::<f64>() / 6.0;
        let rev: f64 = xs.iter().rev().sum::<f64>() / 6.0;
        let d = slice(&[("m", fwd)]);
        assert_ne!(fwd.to_bits(), rev.to_bits());
        let e = slice(&[("m", rev)]);
        assert!(compare_results(&e, &digest_hex(&d)).matches);
    }

    #[test]
    fn padded_bounds_sit_between_values() {
        let d = [1.0, 2.0, 4.0];
        assert_eq!(padded(&d, 1, 1), (1.5, 3.0));
        assert_eq!(padded(&d, 0, 2), (0.0, 5.0));
    }

    #[test]
    fn rates_and_na() {
        let fail = CaseRecord {
            case_id: "x".into(),
            tier: 1,
            figure_type: ChartType::Bar,
            interaction_type: InteractionType::SingleMark,
            initial: StepRecord::failed("no"),
            followup: StepRecord::failed("no"),
            coordination: None,
        };
        let m = SuiteMetrics::from_records(&[fail]);
        assert_eq!(m.overall.all.execution_success_rate, 0.0);
        assert_eq!(m.overall.all.conditional_accuracy, None);
        assert!(m.to_table().contains("n/a"));
    }

    #[test]
    fn missing_tables_are_reported() {
        let mut c = TableCatalog::new();
        c.ingest_csv("temps", "state,date,temp\nFL,2020-01-15,60\n", &BTreeMap::new()).unwrap();
        assert!(matches!(
            generate_suite(&c, &SuiteSpec::default(), 1),
            Err(EvalError::InsufficientCatalog(_))
        ));
    }

    #[test]
    fn small_grid_generates() {
        let cat = demo_catalog(DemoSeeds::default()).unwrap();
        let spec = SuiteSpec {
            reps: 1,
            ..SuiteSpec::default()
        };
        let cases = generate_suite(&cat, &spec, 9).unwrap();
        assert_eq!(cases.len(), 30);
        assert!(cases.iter().all(|c| c.coordination.is_some()));
    }
}
