//! Seeded generators and brute-force oracles for property tests, the acceptance run
//! and the benchmarks. The oracles here recompute selections from mark geometry and
//! predicates row by row without calling into the interaction module.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, NaiveDate, TimeZone, Utc};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::action::{Action, DataBinding};
use crate::catalog::TableCatalog;
use crate::chart::{Channel, ChartDoc, ChartType, EncodingSpec, InteractionKind, Scale};
use crate::eval::{generate_suite, resolve_gesture, InteractionType, SuiteSpec, FIGURE_TYPES};
use crate::expr::Expr;
use crate::figure::{assemble_figure, execute_actions, FigureState, Operation, VersionInfo};
use crate::interaction::Gesture;
use crate::plan::{AggFunc, AggSpec, AnalyzeOp, PlanNode, QueryPlan, SortKey};
use crate::predicate::{Atom, CmpOp, Predicate};
use crate::session::{MessageRequest, SessionConfig, UpdateStatus, Workspace};
use crate::slice::DataSlice;
use crate::value::{Column, Row, RowKey, Schema, SemanticType, Value, ROW_KEY_COLUMN};

pub const GESTURE_KINDS: [InteractionKind; 3] = [
    InteractionKind::SingleSelect,
    InteractionKind::Interval1d,
    InteractionKind::Interval2d,
];

const CATS: [&str; 5] = ["amber", "birch", "cedar", "delta", "ember"];
const GRADES: [&str; 4] = ["g1", "g2", "g3", "g4"];
const GROUPS: usize = 6;

pub fn fixed_time() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).single().expect("valid time")
}

/// Two tables: `obs` with `rows` rows of mixed types, and `grp` keyed by `grp`.
/// One group key in `obs` has no partner in `grp`.
pub fn random_catalog(rng: &mut impl Rng, rows: usize) -> TableCatalog {
    let obs = Schema::new(vec![
        Column::new("cat", SemanticType::Nominal),
        Column::new("grade", SemanticType::Ordinal),
        Column::new("day", SemanticType::Temporal),
        Column::new("year", SemanticType::Temporal),
        Column::new("n", SemanticType::Quantitative),
        Column::new("v", SemanticType::Quantitative),
        Column::new("w", SemanticType::Quantitative),
        Column::new("grp", SemanticType::Nominal),
    ]);
    let start = NaiveDate::from_ymd_opt(2020, 1, 1).expect("date");
    let ncat = rng.random_range(2..=CATS.len());
    let data = (0..rows)
        .map(|i| {
            let day = start + chrono::Days::new(rng.random_range(0..60));
            Row::new(
                format!("obs:{i}"),
                vec![
                    Value::text(CATS[rng.random_range(0..ncat)]),
                    Value::text(*GRADES.choose(rng).expect("grades")),
                    Value::text(day.format("%Y-%m-%d").to_string()),
                    Value::num(f64::from(rng.random_range(2015..2025))),
                    Value::num(f64::from(rng.random_range(0..25))),
                    Value::num((rng.random_range(0.1..500.0f64) * 100.0).round() / 100.0),
                    Value::num((rng.random_range(-50.0..50.0f64) * 10.0).round() / 10.0),
                    Value::text(format!("k{}", rng.random_range(0..=GROUPS))),
                ],
            )
        })
        .collect();
    let grp = Schema::new(vec![
        Column::new("grp", SemanticType::Nominal),
        Column::new("region", SemanticType::Nominal),
        Column::new("weight", SemanticType::Quantitative),
    ]);
    let groups = (0..GROUPS)
        .map(|g| {
            Row::new(
                format!("grp:{g}"),
                vec![
                    Value::text(format!("k{g}")),
                    Value::text(format!("r{}", g % 3)),
                    Value::num(f64::from(rng.random_range(1..10))),
                ],
            )
        })
        .collect();
    let mut c = TableCatalog::new();
    c.register_table("obs", obs, data).expect("obs");
    c.register_table("grp", grp, groups).expect("grp");
    c
}

fn discrete(kind: SemanticType) -> bool {
    kind != SemanticType::Quantitative
}

fn pick<'a, T>(rng: &mut impl Rng, xs: &'a [T]) -> Option<&'a T> {
    xs.choose(rng)
}

/// Data steps over `obs` ahead of the chart: an optional join, filter, analytic step
/// or data-level aggregation.
fn random_data_steps(rng: &mut impl Rng) -> Vec<Action> {
    let mut steps = vec![Action::SelectTable { table: "obs".into() }];
    if rng.random_bool(0.3) {
        steps.push(Action::JoinTables {
            table: "grp".into(),
            left_key: "grp".into(),
            right_key: "grp".into(),
        });
    }
    if rng.random_bool(0.3) {
        let lo = rng.random_range(0..15);
        steps.push(Action::FilterRows {
            predicate: Predicate::new(vec![Atom::range("n", f64::from(lo), f64::from(lo + rng.random_range(3..15)))]),
        });
    }
    match rng.random_range(0..10) {
        0 => steps.push(Action::Analyze {
            op: AnalyzeOp::Binning {
                column: "v".into(),
                width: *pick(rng, &[10.0, 50.0, 100.0]).expect("widths"),
            },
        }),
        1 => steps.push(Action::Analyze {
            op: AnalyzeOp::PercentageOfTotal { column: "v".into() },
        }),
        2 => steps.push(Action::SortLimit {
            keys: vec![SortKey::desc("v")],
            limit: Some(rng.random_range(5..60)),
        }),
        3 | 4 => {
            let by: &[&str] = pick(rng, &[&["cat"][..], &["grade"], &["cat", "year"], &["year"], &["n"]]).expect("keys");
            steps.push(Action::Aggregate {
                group_by: by.iter().map(|s| s.to_string()).collect(),
                aggs: vec![AggSpec::new(AggFunc::Mean, "v"), AggSpec::count(), AggSpec::new(AggFunc::Sum, "w")],
            });
        }
        _ => {}
    }
    steps
}

fn plain(col: &Column, data: &DataSlice, rng: &mut impl Rng) -> EncodingSpec {
    let mut scale = Scale::for_type(col.kind);
    if col.kind == SemanticType::Quantitative && rng.random_bool(0.2) {
        let positive = data
            .column_values(&col.name)
            .is_some_and(|vs| vs.iter().all(|v| v.as_f64().is_some_and(|x| x > 0.0)));
        if positive {
            scale = Scale::Log;
        }
    }
    EncodingSpec::new(col.name.clone(), scale)
}

fn aggregated(rng: &mut impl Rng, quant: &[&Column]) -> EncodingSpec {
    match pick(rng, quant) {
        Some(c) if rng.random_bool(0.7) => {
            let f = *pick(rng, &[AggFunc::Mean, AggFunc::Sum, AggFunc::Min, AggFunc::Max]).expect("funcs");
            EncodingSpec::aggregated(c.name.clone(), f)
        }
        _ => EncodingSpec::count(),
    }
}

/// Chart steps for `chart` over the columns of `data`, or `None` if the columns do not fit.
fn random_chart_steps(rng: &mut impl Rng, chart: ChartType, data: &DataSlice) -> Option<Vec<Action>> {
    let cols = &data.schema.columns;
    let disc: Vec<&Column> = cols.iter().filter(|c| discrete(c.kind)).collect();
    let quant: Vec<&Column> = cols.iter().filter(|c| !discrete(c.kind)).collect();
    let any: Vec<&Column> = cols.iter().collect();
    let agg = rng.random_bool(0.35);
    let mut enc: Vec<(Channel, EncodingSpec)> = Vec::new();
    match chart {
        ChartType::Bar | ChartType::Line | ChartType::Area | ChartType::Scatter => {
            let x = if chart == ChartType::Scatter && !quant.is_empty() && rng.random_bool(0.7) {
                *pick(rng, &quant)?
            } else {
                *pick(rng, &any)?
            };
            enc.push((Channel::X, plain(x, data, rng)));
            let y = if agg {
                aggregated(rng, &quant)
            } else {
                plain(*pick(rng, &quant)?, data, rng)
            };
            enc.push((Channel::Y, y));
            if rng.random_bool(0.3) {
                if let Some(c) = pick(rng, &disc) {
                    enc.push((Channel::Color, plain(c, data, rng)));
                }
            }
            if chart == ChartType::Scatter && !agg && rng.random_bool(0.3) {
                if let Some(c) = pick(rng, &quant) {
                    enc.push((Channel::Size, EncodingSpec::new(c.name.clone(), Scale::Linear)));
                }
            }
        }
        ChartType::Pie => {
            let label = if rng.random_bool(0.8) { *pick(rng, &disc)? } else { *pick(rng, &any)? };
            enc.push((Channel::Color, plain(label, data, rng)));
            let theta = if agg {
                aggregated(rng, &quant)
            } else {
                EncodingSpec::new(pick(rng, &quant)?.name.clone(), Scale::Linear)
            };
            enc.push((Channel::Theta, theta));
        }
        ChartType::Table => {
            enc.push((Channel::RowLabel, plain(*pick(rng, &any)?, data, rng)));
            if agg {
                enc.push((Channel::Y, aggregated(rng, &quant)));
            } else if rng.random_bool(0.5) {
                enc.push((Channel::Tooltip, plain(*pick(rng, &quant)?, data, rng)));
            }
        }
    }
    let mut steps = vec![Action::AddChartType { chart_type: chart }];
    steps.extend(enc.into_iter().map(|(channel, encoding)| Action::AddEncoding { channel, encoding }));
    steps.push(Action::AddData {
        binding: DataBinding::default(),
    });
    Some(steps)
}

/// A random figure of type `chart` over `catalog` (tables from `random_catalog`).
/// Retries until a program executes; `None` after many failures.
pub fn random_figure(rng: &mut impl Rng, catalog: &TableCatalog, chart: ChartType, figure_id: &str) -> Option<FigureState> {
    for _ in 0..50 {
        let data_steps = random_data_steps(rng);
        let Ok(q) = crate::compile::compile_to_query(&data_steps, &catalog.schema()) else { continue };
        let Ok(data) = crate::engine::execute_plan(&q.plan, catalog) else { continue };
        if data.is_empty() {
            continue;
        }
        let Some(chart_steps) = random_chart_steps(rng, chart, &data) else { continue };
        let actions = [data_steps, chart_steps].concat();
        let Ok(exec) = execute_actions(&actions, catalog) else { continue };
        return Some(assemble_figure(
            exec,
            VersionInfo {
                figure_id: figure_id.to_string(),
                artifact_id: "art-test".into(),
                parent_version: None,
                operation: Operation::Generate,
                description: "random figure".into(),
                created_at: fixed_time(),
            },
        ));
    }
    None
}

// ---------------------------------------------------------------------------
// Geometry, recomputed independently.

fn epoch_days(s: &str) -> Option<f64> {
    let d = NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()?;
    Some(d.signed_duration_since(NaiveDate::from_ymd_opt(1970, 1, 1)?).num_days() as f64)
}

/// Positions of every mark's value on `channel`, in mark order; `None` for marks off-axis.
pub fn positions(chart: &ChartDoc, channel: Channel) -> Vec<Option<f64>> {
    let Some(spec) = chart.encodings.get(&channel) else {
        return vec![None; chart.marks.len()];
    };
    let vals: Vec<Option<&Value>> = chart.marks.iter().map(|m| m.channel_values.get(&channel)).collect();
    let mut domain: Vec<&Value> = vals.iter().flatten().copied().collect();
    domain.sort();
    domain.dedup();
    let rank = |v: &Value| domain.iter().position(|d| *d == v).map(|i| i as f64);
    vals.iter()
        .map(|v| {
            let v = (*v)?;
            match (spec.scale, v) {
                (Scale::Linear, Value::Num(x)) => Some(*x),
                (Scale::Log, Value::Num(x)) => (*x > 0.0).then(|| x.log10()),
                (Scale::Temporal, Value::Num(x)) => Some(*x),
                (Scale::Temporal, Value::Text(s)) => epoch_days(s).or_else(|| rank(v)),
                (Scale::Ordinal, _) => rank(v),
                _ => None,
            }
        })
        .collect()
}

/// Slice centres of a pie drawn clockwise from 12 o'clock, radius 0.5 around (0.5, 0.5),
/// centroids taken at half the radius.
fn pie_points(chart: &ChartDoc) -> Vec<(f64, f64)> {
    let w: Vec<f64> = chart
        .marks
        .iter()
        .map(|m| m.channel_values.get(&Channel::Theta).and_then(Value::as_f64).map_or(0.0, |x| x.max(0.0)))
        .collect();
    let total: f64 = w.iter().sum();
    let mut acc = 0.0;
    w.iter()
        .map(|x| {
            let share = if total > 0.0 { x / total } else { 0.0 };
            let angle = std::f64::consts::TAU * (acc + share / 2.0);
            acc += share;
            (0.5 + 0.25 * angle.sin(), 0.5 + 0.25 * angle.cos())
        })
        .collect()
}

fn brushable(chart: &ChartDoc, data: &DataSlice, ch: Channel) -> bool {
    chart.encodings.get(&ch).is_some_and(|e| {
        e.aggregate.is_none() && data.schema.column(&e.field).is_some_and(|c| c.kind != SemanticType::Nominal)
    })
}

/// Indices of the marks a gesture covers, from mark geometry alone.
pub fn covered_marks(fig: &FigureState, g: &Gesture) -> Vec<usize> {
    let chart = &fig.visualization;
    let inside = |p: Option<f64>, lo: f64, hi: f64| p.is_some_and(|p| lo <= p && p <= hi);
    match g {
        Gesture::Click { mark_ids } => (0..chart.marks.len()).filter(|&i| mark_ids.contains(&chart.marks[i].mark_id)).collect(),
        Gesture::Hover { mark_id } => (0..chart.marks.len()).filter(|&i| chart.marks[i].mark_id == *mark_id).collect(),
        Gesture::Brush1d { channel, lo, hi } => positions(chart, *channel)
            .into_iter()
            .enumerate()
            .filter(|(_, p)| inside(*p, *lo, *hi))
            .map(|(i, _)| i)
            .collect(),
        Gesture::Brush2d { x_lo, x_hi, y_lo, y_hi } => {
            let pts: Vec<(Option<f64>, Option<f64>)> = match chart.chart_type {
                ChartType::Pie => pie_points(chart).into_iter().map(|(x, y)| (Some(x), Some(y))).collect(),
                ChartType::Table => (0..chart.marks.len()).map(|i| (Some(0.5), Some(i as f64 + 0.5))).collect(),
                _ => positions(chart, Channel::X).into_iter().zip(positions(chart, Channel::Y)).collect(),
            };
            pts.into_iter()
                .enumerate()
                .filter(|(_, (x, y))| inside(*x, *x_lo, *x_hi) && inside(*y, *y_lo, *y_hi))
                .map(|(i, _)| i)
                .collect()
        }
    }
}

/// Row keys behind the marks a gesture covers.
pub fn geometric_selection(fig: &FigureState, g: &Gesture) -> BTreeSet<RowKey> {
    covered_marks(fig, g)
        .into_iter()
        .flat_map(|i| fig.visualization.marks[i].row_keys.iter().cloned())
        .collect()
}

fn atom_true(schema: &Schema, row: &Row, a: &Atom) -> bool {
    let v = if a.column() == ROW_KEY_COLUMN {
        Value::text(row.key.0.clone())
    } else {
        match schema.index_of(a.column()) {
            Some(i) => row.values[i].clone(),
            None => return false,
        }
    };
    match a {
        Atom::Membership { values, .. } => values.contains(&v),
        Atom::Range { lo, hi, .. } => *lo <= v && v <= *hi,
        Atom::Comparison { op, value, .. } => match op {
            CmpOp::Lt => v < *value,
            CmpOp::Le => v <= *value,
            CmpOp::Eq => v == *value,
            CmpOp::Ge => v >= *value,
            CmpOp::Gt => v > *value,
            CmpOp::Ne => v != *value,
        },
    }
}

/// Row keys of `data` satisfying every atom of `p`.
pub fn rows_satisfying(data: &DataSlice, p: &Predicate) -> BTreeSet<RowKey> {
    data.rows
        .iter()
        .filter(|r| p.atoms.iter().all(|a| atom_true(&data.schema, r, a)))
        .map(|r| r.key.clone())
        .collect()
}

/// Expected mark partition of the rows: one group per row, or per distinct tuple of
/// unaggregated encoded values when any encoding aggregates.
pub fn expected_mark_rows(chart: &ChartDoc, data: &DataSlice) -> BTreeSet<BTreeSet<RowKey>> {
    let aggregated = chart.encodings.values().any(|e| e.aggregate.is_some());
    if !aggregated {
        return data.rows.iter().map(|r| BTreeSet::from([r.key.clone()])).collect();
    }
    let idx: Vec<usize> = chart
        .encodings
        .values()
        .filter(|e| e.aggregate.is_none())
        .filter_map(|e| data.schema.index_of(&e.field))
        .collect();
    let mut groups: BTreeMap<Vec<Value>, BTreeSet<RowKey>> = BTreeMap::new();
    for r in &data.rows {
        groups
            .entry(idx.iter().map(|&i| r.values[i].clone()).collect())
            .or_default()
            .insert(r.key.clone());
    }
    groups.into_values().collect()
}

/// Bounds around a random run of sorted positions, padded to the midpoints of
/// neighbouring values; occasionally a span covering nothing.
fn span(rng: &mut impl Rng, ps: &[f64]) -> Option<(f64, f64)> {
    let mut d: Vec<f64> = ps.to_vec();
    d.sort_by(f64::total_cmp);
    d.dedup();
    if d.is_empty() {
        return None;
    }
    if rng.random_bool(0.08) {
        let hi = d[d.len() - 1];
        return Some((hi + 1.0, hi + 2.0));
    }
    let i = rng.random_range(0..d.len());
    let j = rng.random_range(i..d.len().min(i + 1 + d.len() / 2 + 1));
    let lo = if i == 0 { d[0] - 0.5 } else { (d[i - 1] + d[i]) / 2.0 };
    let hi = if j + 1 == d.len() { d[j] + 0.5 } else { (d[j] + d[j + 1]) / 2.0 };
    if rng.random_bool(0.2) {
        // Bounds exactly on data positions.
        return Some((d[i], d[j]));
    }
    Some((lo, hi))
}

/// A gesture of `kind` that `fig` supports, or `None` when it supports none.
pub fn random_gesture(rng: &mut impl Rng, fig: &FigureState, kind: InteractionKind) -> Option<Gesture> {
    let chart = &fig.visualization;
    if chart.marks.is_empty() {
        return None;
    }
    match kind {
        InteractionKind::SingleSelect | InteractionKind::Hover => {
            let k = rng.random_range(1..=3.min(chart.marks.len()));
            let mark_ids: Vec<String> = chart.marks.choose_multiple(rng, k).map(|m| m.mark_id.clone()).collect();
            Some(Gesture::Click { mark_ids })
        }
        InteractionKind::Interval1d => {
            let chans: Vec<Channel> = chart
                .encodings
                .keys()
                .copied()
                .filter(|c| brushable(chart, &fig.data, *c))
                .collect();
            let ch = *pick(rng, &chans)?;
            let ps: Vec<f64> = positions(chart, ch).into_iter().flatten().collect();
            let (lo, hi) = span(rng, &ps)?;
            Some(Gesture::Brush1d { channel: ch, lo, hi })
        }
        InteractionKind::Interval2d => match chart.chart_type {
            ChartType::Pie => {
                let a: f64 = rng.random_range(-0.1..1.0);
                let b: f64 = rng.random_range(-0.1..1.0);
                let w: f64 = rng.random_range(0.05..1.1);
                let h: f64 = rng.random_range(0.05..1.1);
                Some(Gesture::Brush2d {
                    x_lo: a,
                    x_hi: a + w,
                    y_lo: b,
                    y_hi: b + h,
                })
            }
            ChartType::Table => {
                let n = chart.marks.len() as f64;
                let a = rng.random_range(0.0..n);
                let b = rng.random_range(a..=n);
                let (x_lo, x_hi) = if rng.random_bool(0.9) { (0.0, 1.0) } else { (0.6, 1.0) };
                Some(Gesture::Brush2d {
                    x_lo,
                    x_hi,
                    y_lo: a,
                    y_hi: b,
                })
            }
            _ => {
                if !brushable(chart, &fig.data, Channel::X) || !brushable(chart, &fig.data, Channel::Y) {
                    return None;
                }
                let xs: Vec<f64> = positions(chart, Channel::X).into_iter().flatten().collect();
                let ys: Vec<f64> = positions(chart, Channel::Y).into_iter().flatten().collect();
                let (x_lo, x_hi) = span(rng, &xs)?;
                let (y_lo, y_hi) = span(rng, &ys)?;
                Some(Gesture::Brush2d { x_lo, x_hi, y_lo, y_hi })
            }
        },
    }
}

/// A random figure of `chart` that supports a gesture of `kind`, with that gesture.
pub fn figure_with_gesture(
    rng: &mut impl Rng,
    catalog: &TableCatalog,
    chart: ChartType,
    kind: InteractionKind,
    figure_id: &str,
) -> Option<(FigureState, Gesture)> {
    for _ in 0..200 {
        let Some(fig) = random_figure(rng, catalog, chart, figure_id) else { continue };
        if let Some(g) = random_gesture(rng, &fig, kind) {
            return Some((fig, g));
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Query plans.

fn random_atom(rng: &mut impl Rng, schema: &Schema, data: Option<&DataSlice>) -> Option<Atom> {
    let col = pick(rng, &schema.columns)?;
    let sample = |rng: &mut dyn rand::RngCore| -> Option<Value> {
        let vals = data?.column_values(&col.name)?;
        vals.choose(rng).cloned()
    };
    let v1 = sample(rng).unwrap_or_else(|| {
        if col.kind == SemanticType::Quantitative {
            Value::num(f64::from(rng.random_range(0..100)))
        } else {
            Value::text(CATS[rng.random_range(0..CATS.len())])
        }
    });
    let v2 = sample(rng).unwrap_or_else(|| v1.clone());
    Some(match rng.random_range(0..3) {
        0 => Atom::membership(col.name.clone(), [v1, v2]),
        1 => Atom::range(col.name.clone(), v1.clone().min(v2.clone()), v1.max(v2)),
        _ => Atom::cmp(
            col.name.clone(),
            *pick(rng, &[CmpOp::Lt, CmpOp::Le, CmpOp::Eq, CmpOp::Ge, CmpOp::Gt, CmpOp::Ne]).expect("ops"),
            v1,
        ),
    })
}

fn random_expr(rng: &mut impl Rng, quant: &[&Column]) -> Option<Expr> {
    let a = Expr::col(pick(rng, quant)?.name.clone());
    let b = Expr::col(pick(rng, quant)?.name.clone());
    let bx = Box::new;
    Some(match rng.random_range(0..6) {
        0 => Expr::Add { left: bx(a), right: bx(b) },
        1 => Expr::Mul {
            left: bx(a),
            right: bx(Expr::lit(f64::from(rng.random_range(-3..4)))),
        },
        2 => Expr::Abs { arg: bx(Expr::Sub { left: bx(a), right: bx(b) }) },
        3 => Expr::Log {
            arg: bx(Expr::Abs { arg: bx(a) }),
            offset: 1.0,
        },
        4 => Expr::Div {
            left: bx(a),
            right: bx(Expr::Add {
                left: bx(Expr::Abs { arg: bx(b) }),
                right: bx(Expr::lit(1.0)),
            }),
        },
        _ => Expr::Bucket {
            arg: bx(a),
            thresholds: vec![0.0, 10.0, 100.0],
            labels: vec!["neg".into(), "low".into(), "mid".into(), "high".into()],
        },
    })
}

/// A random plan over `random_catalog` tables: a scan, maybe a join, then up to five
/// operators chosen to fit the running schema.
pub fn random_plan(rng: &mut impl Rng, catalog: &TableCatalog) -> QueryPlan {
    let cs = catalog.schema();
    let sample = catalog.table("obs").map(|t| t.to_slice());
    let mut node = PlanNode::scan("obs");
    if rng.random_bool(0.3) {
        node = node.join(PlanNode::scan("grp"), "grp", "grp");
    }
    let mut derived = 0;
    for _ in 0..rng.random_range(0..=5) {
        let Ok(schema) = QueryPlan::new(node.clone()).output_schema(&cs) else { break };
        let quant: Vec<&Column> = schema.columns.iter().filter(|c| !discrete(c.kind)).collect();
        let disc: Vec<&Column> = schema.columns.iter().filter(|c| discrete(c.kind)).collect();
        node = match rng.random_range(0..8) {
            0 | 1 => match random_atom(rng, &schema, sample.as_ref()) {
                Some(a) => node.filter(Predicate::new(vec![a])),
                None => node,
            },
            2 => match random_expr(rng, &quant) {
                Some(e) => {
                    derived += 1;
                    node.derive(format!("d{derived}"), e)
                }
                None => node,
            },
            3 => {
                let mut cols: Vec<String> = schema.names().map(str::to_string).collect();
                cols.shuffle(rng);
                cols.truncate(rng.random_range(1..=cols.len()));
                node.project(cols)
            }
            4 => {
                let k = rng.random_range(0..=2.min(disc.len()));
                let by: Vec<String> = disc.choose_multiple(rng, k).map(|c| c.name.clone()).collect();
                let mut aggs = vec![AggSpec::count()];
                for c in quant.choose_multiple(rng, 2) {
                    let f = *pick(rng, &[AggFunc::Sum, AggFunc::Mean, AggFunc::Min, AggFunc::Max]).expect("funcs");
                    aggs.push(AggSpec::new(f, c.name.clone()));
                }
                aggs.dedup_by(|a, b| a.output_name() == b.output_name());
                node.aggregate(by, aggs)
            }
            5 => {
                let nkeys = rng.random_range(1..=2);
                let keys: Vec<SortKey> = schema
                    .columns
                    .choose_multiple(rng, nkeys)
                    .map(|c| if rng.random_bool(0.5) { SortKey::asc(c.name.clone()) } else { SortKey::desc(c.name.clone()) })
                    .collect();
                let limit = rng.random_bool(0.6).then(|| rng.random_range(0..40));
                node.sort_limit(keys, limit)
            }
            _ => {
                let Some(c) = pick(rng, &quant).map(|c| c.name.clone()) else { continue };
                let op = match rng.random_range(0..5) {
                    0 => AnalyzeOp::Topk {
                        column: c,
                        k: rng.random_range(1..20),
                        descending: rng.random_bool(0.5),
                    },
                    1 => AnalyzeOp::PercentageOfTotal { column: c },
                    2 => AnalyzeOp::Binning {
                        column: c,
                        width: f64::from(rng.random_range(1..30)),
                    },
                    3 => AnalyzeOp::Zscore { column: c },
                    _ => AnalyzeOp::Sample {
                        n: rng.random_range(1..30),
                        seed: Some(rng.random()),
                    },
                };
                if schema.index_of(op.added_column().as_deref().unwrap_or("")).is_some() {
                    continue;
                }
                node.analyze(op)
            }
        };
    }
    QueryPlan::new(node)
}

// ---------------------------------------------------------------------------
// Scripted explorations through the workspace.

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Exploration {
    pub session_id: String,
    pub artifact_id: String,
    /// Figure versions committed, by operation.
    pub operations: BTreeMap<Operation, usize>,
}

/// Drives one session with the workspace's default backend: a generated figure, a
/// selection-based follow-up, a manipulation of the follow-up and one or two coordinated
/// re-selections on the source. The script comes from a one-case suite drawn with `seed`.
pub fn run_exploration(ws: &mut Workspace, seed: u64) -> Result<Exploration, String> {
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let spec = SuiteSpec {
        figure_types: vec![*pick(&mut rng, &FIGURE_TYPES).expect("types")],
        interaction_types: vec![*pick(&mut rng, &InteractionType::ALL).expect("kinds")],
        tiers: vec![rng.random_range(1..=2)],
        reps: 1,
        coordination: true,
    };
    let case = generate_suite(&ws.catalog, &spec, seed)
        .map_err(|e| e.to_string())?
        .pop()
        .ok_or("empty suite")?;
    let sid = ws.create_session(SessionConfig::default()).map_err(|e| e.to_string())?;
    let artifact_id = ws.session_info(&sid).map_err(|e| e.to_string())?.artifact_id;
    let mut ops: BTreeMap<Operation, usize> = BTreeMap::new();

    let mut say = |ws: &mut Workspace, req: MessageRequest| -> Result<FigureState, String> {
        let reply = ws.post_message(&sid, req, &mut |_| {}).map_err(|e| e.to_string())?;
        if let Some(e) = reply.error {
            return Err(e);
        }
        let fid = reply.figure_ids.first().ok_or("no figure")?;
        let head = ws.head_state(&artifact_id).map_err(|e| e.to_string())?;
        let fig = head.figures.get(fid).cloned().ok_or("figure missing")?;
        *ops.entry(fig.meta.operation).or_default() += 1;
        Ok(fig)
    };
    let source = say(
        ws,
        MessageRequest {
            text: Some(case.initial.question.clone()),
            ..Default::default()
        },
    )?;
    let event = |spec| {
        resolve_gesture(spec, &source).map(|gesture| crate::interaction::InteractionEvent {
            figure_id: source.figure_id.clone(),
            gesture,
            at: ws_time(),
        })
    };
    let target = say(
        ws,
        MessageRequest {
            text: Some(case.followup.question.clone()),
            interaction: Some(event(&case.followup.gesture)?),
            target_figure: None,
        },
    )?;
    let mut log_scaled = false;
    if rng.random_bool(0.5) {
        let text = *pick(&mut rng, &["use a log scale", "show it on a log scale"]).expect("texts");
        // Manipulations may legitimately fail (e.g. no y channel); failures commit nothing.
        log_scaled = say(
            ws,
            MessageRequest {
                text: Some(text.into()),
                interaction: None,
                target_figure: Some(target.figure_id.clone()),
            },
        )
        .is_ok();
    }
    let k = case.coordination.as_ref().ok_or("no coordination step")?;
    let mut gestures = vec![&k.gesture];
    if rng.random_bool(0.5) {
        gestures.push(&case.followup.gesture);
    }
    for g in gestures {
        let reply = ws.post_gesture(event(g)?).map_err(|e| e.to_string())?;
        for u in &reply.updates {
            match u.status {
                UpdateStatus::Updated => *ops.entry(Operation::CoordinateUpdate).or_default() += 1,
                UpdateStatus::Unchanged => {}
                // A slice with non-positive values cannot be drawn on a log axis.
                UpdateStatus::Failed if log_scaled => {}
                _ => return Err(format!("coordination {:?}: {}", u.status, u.detail.clone().unwrap_or_default())),
            }
        }
    }
    Ok(Exploration {
        session_id: sid,
        artifact_id,
        operations: ops,
    })
}

fn ws_time() -> DateTime<Utc> {
    fixed_time()
}

// ---------------------------------------------------------------------------
// Coordination trials.

/// A source figure, a target extended from a selection on it, the schema linking
/// them and the downstream steps the target applies.
#[derive(Clone, Debug)]
pub struct CoordinationTrial {
    pub source: FigureState,
    pub target: FigureState,
    pub schema: crate::coordination::CoordinationSchema,
    pub steps: Vec<Action>,
}

/// Downstream analysis over a selection whose rows have `schema`.
fn random_downstream(rng: &mut impl Rng, schema: &Schema) -> Option<Vec<Action>> {
    let disc: Vec<&Column> = schema.columns.iter().filter(|c| discrete(c.kind)).collect();
    let quant: Vec<&Column> = schema.columns.iter().filter(|c| !discrete(c.kind)).collect();
    let enc = |ch, e| Action::AddEncoding { channel: ch, encoding: e };
    Some(match rng.random_range(0..4) {
        0 | 1 => {
            let by = pick(rng, &disc)?.name.clone();
            let agg = match pick(rng, &quant) {
                Some(c) if rng.random_bool(0.6) => AggSpec::new(AggFunc::Mean, c.name.clone()),
                _ => AggSpec::count(),
            };
            let out = agg.output_name();
            vec![
                Action::Aggregate {
                    group_by: vec![by.clone()],
                    aggs: vec![agg],
                },
                Action::SortLimit {
                    keys: vec![SortKey::desc(out.clone())],
                    limit: None,
                },
                Action::AddChartType { chart_type: ChartType::Bar },
                enc(Channel::X, EncodingSpec::new(by, Scale::Ordinal)),
                enc(Channel::Y, EncodingSpec::new(out, Scale::Linear)),
            ]
        }
        2 => {
            let x = pick(rng, &quant)?.name.clone();
            let y = pick(rng, &quant)?.name.clone();
            vec![
                Action::AddChartType {
                    chart_type: ChartType::Scatter,
                },
                enc(Channel::X, EncodingSpec::new(x, Scale::Linear)),
                enc(Channel::Y, EncodingSpec::new(y, Scale::Linear)),
            ]
        }
        _ => {
            let c = pick(rng, &schema.columns)?;
            vec![
                Action::AddChartType { chart_type: ChartType::Table },
                enc(Channel::RowLabel, EncodingSpec::new(c.name.clone(), Scale::for_type(c.kind))),
            ]
        }
    })
}

/// A linked pair built from a random figure, gesture and downstream analysis.
pub fn coordination_trial(rng: &mut impl Rng, catalog: &TableCatalog) -> Option<CoordinationTrial> {
    use crate::explore::{extend_from_selection, extension_program, selection_prefix};
    for _ in 0..100 {
        let chart = *pick(rng, &ChartType::ALL)?;
        let kind = *pick(rng, &GESTURE_KINDS)?;
        let Some((source, g)) = figure_with_gesture(rng, catalog, chart, kind, "src") else { continue };
        let Ok(map) = source.mark_map() else { continue };
        let Ok(p) = crate::interaction::gesture_to_predicate(&g, &map, &source.visualization, &source.data) else { continue };
        let prefix = selection_prefix(&source, &p, &catalog.schema());
        let (program, _) = extension_program(prefix, &p, &[]);
        let Ok(q) = crate::compile::compile_to_query(&program, &catalog.schema()) else { continue };
        let Ok(schema) = q.plan.output_schema(&catalog.schema()) else { continue };
        let Some(steps) = random_downstream(rng, &schema) else { continue };
        let ev = crate::interaction::InteractionEvent {
            figure_id: source.figure_id.clone(),
            gesture: g,
            at: fixed_time(),
        };
        let Ok(ext) = extend_from_selection(&source, &ev, &steps, catalog, "dst") else { continue };
        let Ok(schema) = crate::coordination::record_schema(&source, &ext.figure, &ext, catalog) else { continue };
        return Some(CoordinationTrial {
            source,
            target: ext.figure,
            schema,
            steps,
        });
    }
    None
}

/// A gesture on the trial's source that the schema accepts: a compatible kind binding
/// the same columns and selecting at least one row.
pub fn propagating_gesture(rng: &mut impl Rng, t: &CoordinationTrial) -> Option<Gesture> {
    let kinds: Vec<InteractionKind> = GESTURE_KINDS
        .into_iter()
        .filter(|k| crate::coordination::trigger_compatible(t.schema.trigger, *k))
        .collect();
    let map = t.source.mark_map().ok()?;
    for _ in 0..40 {
        let kind = *pick(rng, &kinds)?;
        let Some(g) = random_gesture(rng, &t.source, kind) else { continue };
        let Ok(p) = crate::interaction::gesture_to_predicate(&g, &map, &t.source.visualization, &t.source.data) else { continue };
        if p.columns() == t.schema.hole_binding.columns && !rows_satisfying(&t.source.data, &p).is_empty() {
            return Some(g);
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Ledger workouts.

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LedgerStats {
    pub operations: usize,
    pub commits: usize,
    pub branches: usize,
    pub noops: usize,
    pub merges: usize,
    pub cycles_rejected: usize,
    pub checkouts: usize,
}

/// Random commit, branch, checkout and re-commit operations over a few artifacts, with
/// conversations and messages pointing at the versions made. After every `check_every`
/// operations the DAG is checked and every earlier snapshot hash is compared with its
/// value when first seen. Returns the history for persistence checks.
pub fn ledger_workout(
    rng: &mut impl Rng,
    ops: usize,
    check_every: usize,
) -> Result<(crate::store::History, LedgerStats), String> {
    use crate::ledger::{ArtifactState, UserInputRecord};
    use crate::store::{Conversation, History, Message, MessageArtifact, Role};

    let catalog = random_catalog(rng, 40);
    let pool: Vec<FigureState> = (0..6)
        .filter_map(|i| random_figure(rng, &catalog, ChartType::ALL[i % 6], "pool"))
        .collect();
    if pool.is_empty() {
        return Err("no figures".into());
    }
    let mut h = History::new();
    let mut stats = LedgerStats::default();
    let mut seen: BTreeMap<String, crate::digest::Digest> = BTreeMap::new();
    let mut artifacts: Vec<String> = Vec::new();
    let mut stamp = 0u64;
    let t0 = fixed_time();

    for op in 0..ops {
        stats.operations += 1;
        stamp += 1;
        let at = t0 + chrono::Duration::seconds(stamp as i64);
        let input = UserInputRecord::new(Some(format!("op {op}")), None, at);
        let variant = |state: &mut ArtifactState, rng: &mut dyn rand::RngCore| {
            let mut f = pool[rng.random_range(0..pool.len())].clone();
            let fid = if state.figure_ids.is_empty() || rng.random_bool(0.3) {
                state.next_figure_id()
            } else {
                state.figure_ids[rng.random_range(0..state.figure_ids.len())].clone()
            };
            f.figure_id = fid.clone();
            f.meta.artifact_id = state.artifact_id.clone();
            f.meta.version_id = format!("fv-{fid}-{stamp}");
            f.meta.operation_description = format!("variant {stamp}");
            state.put_figure(f);
        };
        let choice = if artifacts.is_empty() { 0 } else { rng.random_range(0..20) };
        let art = if artifacts.is_empty() { String::new() } else { artifacts[rng.random_range(0..artifacts.len())].clone() };
        let outcome = match choice {
            0 => {
                let id = format!("art-{}", artifacts.len());
                let mut s = ArtifactState::new(id.clone());
                variant(&mut s, rng);
                artifacts.push(id.clone());
                h.conversations.insert(
                    format!("conv-{id}"),
                    Conversation {
                        conversation_id: format!("conv-{id}"),
                        created_at: at,
                        backend: "template".into(),
                        artifact_id: Some(id),
                    },
                );
                Some(h.ledger.commit(&s, input.clone()).map_err(|e| e.to_string())?)
            }
            1..=9 => {
                let mut s = h.ledger.checkout_head(&art).map_err(|e| e.to_string())?;
                variant(&mut s, rng);
                stats.commits += 1;
                Some(h.ledger.commit(&s, input.clone()).map_err(|e| e.to_string())?)
            }
            10..=13 => {
                let vs: Vec<String> = h.ledger.versions_of(&art).iter().map(|v| v.version_id.clone()).collect();
                let base = &vs[rng.random_range(0..vs.len())];
                let mut s = h.ledger.checkout(base).map_err(|e| e.to_string())?;
                variant(&mut s, rng);
                stats.branches += 1;
                Some(h.ledger.commit(&s, input.clone()).map_err(|e| e.to_string())?)
            }
            14..=16 => {
                let vs: Vec<String> = h.ledger.versions_of(&art).iter().map(|v| v.version_id.clone()).collect();
                let v = &vs[rng.random_range(0..vs.len())];
                let s = h.ledger.checkout(v).map_err(|e| e.to_string())?;
                if s.base_version.as_deref() != Some(v.as_str()) || s.content_id() != *v {
                    return Err(format!("checkout of {v} does not reproduce it"));
                }
                stats.checkouts += 1;
                let out = h.ledger.commit(&s, input.clone()).map_err(|e| e.to_string())?;
                if out.created {
                    return Err("unchanged checkout created a version".into());
                }
                stats.noops += 1;
                None
            }
            _ => {
                // Another version's content committed on top of a random base.
                let vs: Vec<String> = h.ledger.versions_of(&art).iter().map(|v| v.version_id.clone()).collect();
                let base = vs[rng.random_range(0..vs.len())].clone();
                let other = vs[rng.random_range(0..vs.len())].clone();
                let mut s = h.ledger.checkout(&other).map_err(|e| e.to_string())?;
                s.base_version = Some(base.clone());
                let before = (h.ledger.versions.len(), h.ledger.edges.len(), h.ledger.head(&art).map(str::to_string));
                match h.ledger.commit(&s, input.clone()) {
                    Ok(out) => {
                        if out.created && base != other {
                            stats.merges += 1;
                        }
                        Some(out)
                    }
                    Err(crate::ledger::LedgerError::CycleRejected(_)) => {
                        if (h.ledger.versions.len(), h.ledger.edges.len(), h.ledger.head(&art).map(str::to_string)) != before {
                            return Err("rejected commit mutated the ledger".into());
                        }
                        stats.cycles_rejected += 1;
                        None
                    }
                    Err(e) => return Err(e.to_string()),
                }
            }
        };
        if let Some(out) = outcome.filter(|o| o.created) {
            let a = h.ledger.version(&out.version_id).map_err(|e| e.to_string())?.artifact_id.clone();
            let conv = format!("conv-{a}");
            let mid = h.push_message(Message {
                message_id: String::new(),
                conversation_id: conv,
                seq: 0,
                role: Role::User,
                text: input.raw_text.clone(),
                interaction: None,
                user_input_id: Some(input.id.clone()),
                figure_ids: Vec::new(),
                created_at: at,
            });
            h.message_artifact.insert(MessageArtifact {
                message_id: mid,
                artifact_id: a,
                version_id: out.version_id,
            });
        }
        if (op + 1) % check_every.max(1) == 0 || op + 1 == ops {
            h.ledger.check_dag()?;
            let now = h.ledger.snapshot_hashes();
            for (id, d) in &seen {
                if now.get(id) != Some(d) {
                    return Err(format!("snapshot {id} changed after op {op}"));
                }
            }
            seen = now;
        }
    }
    Ok((h, stats))
}

// ---------------------------------------------------------------------------
// Loop robustness trials.

#[derive(Clone, Debug, PartialEq)]
pub struct LoopTrial {
    pub mode: crate::agent::FaultMode,
    pub units: u64,
    /// Lower bound on units the loop consumed, counted from its trace.
    pub used: u64,
    pub committed: bool,
}

/// One message turn through the workspace with a fault-injecting backend and a random
/// loop configuration. Fails if the loop overspends, the stream is malformed, a failed
/// turn touches the ledger, or a successful one commits anything but one replayable
/// version on top of the previous head.
pub fn loop_trial(rng: &mut impl Rng, modes: &[crate::agent::FaultMode]) -> Result<LoopTrial, String> {
    use crate::agent::{Budget, LoopConfig, LoopError, ScriptedBackend};
    use crate::session::{run_turn_with, Emitter, StreamEvent};

    let mode = *modes.choose(rng).ok_or("no modes")?;
    let rows = rng.random_range(5..60);
    let mut ws = Workspace::new(random_catalog(rng, rows));
    ws.fixed_clock = Some(fixed_time());
    let cfg = LoopConfig {
        threshold: 0.7,
        max_retries: rng.random_range(0..4),
        max_depth: rng.random_range(1..9),
        beam: rng.random_range(1..4),
        budget: Budget {
            units: rng.random_range(0..24),
        },
    };
    let sid = ws
        .create_session(SessionConfig {
            backend: "scripted".into(),
            loop_config: cfg.clone(),
        })
        .map_err(|e| e.to_string())?;
    let aid = ws.session_info(&sid).map_err(|e| e.to_string())?.artifact_id;
    // Half the trials start from a committed figure so a failure has a head to keep.
    if rng.random_bool(0.5) {
        let mut c = ws.configs[&sid].clone();
        c.loop_config = LoopConfig::default();
        ws.configs.insert(sid.clone(), c);
        let r = ws
            .post_message(&sid, MessageRequest { text: Some("mean by category".into()), ..Default::default() }, &mut |_| {})
            .map_err(|e| e.to_string())?;
        if r.version_id.is_none() {
            return Err(format!("seed turn failed: {:?}", r.error));
        }
        ws.configs.get_mut(&sid).expect("session").loop_config = cfg.clone();
    }
    let before_head = ws.history.ledger.head(&aid).map(str::to_string);
    let before_hashes = ws.history.ledger.snapshot_hashes();
    let before_links = ws.history.message_artifact.len();

    let turn = ws
        .prepare_message(&sid, MessageRequest { text: Some("show the mean by category".into()), ..Default::default() })
        .map_err(|e| e.to_string())?;
    let backend = ScriptedBackend::new(mode);
    let mut events: Vec<StreamEvent> = Vec::new();
    let mut sink = |e: StreamEvent| events.push(e);
    let mut em = Emitter::new(&mut sink);
    let result = run_turn_with(&turn, &backend, &mut em);
    let trace = match &result.outcome {
        Some(Ok(o)) => {
            if o.spent > cfg.budget.units {
                return Err(format!("spent {} of {}", o.spent, cfg.budget.units));
            }
            Some(&o.trace)
        }
        Some(Err(e)) => e.trace(),
        None => None,
    };
    let used = trace.map_or(0, |t| {
        let rounds: BTreeSet<usize> = t.entries.iter().map(|e| e.round).collect();
        (t.entries.len() + rounds.len() + t.backend_errors.len()) as u64
    });
    if used > cfg.budget.units {
        return Err(format!("trace shows {used} units against a budget of {}", cfg.budget.units));
    }
    if cfg.budget.units == 0 && result.outcome.is_some() && !matches!(result.outcome, Some(Err(LoopError::BudgetExhausted { .. }))) {
        return Err("zero budget did not exhaust".into());
    }
    let loop_ok = matches!(result.outcome, Some(Ok(_)));
    if !mode.recoverable() && loop_ok {
        return Err(format!("{mode:?} produced a figure"));
    }
    if mode.recoverable() && cfg.budget.units >= 4 && cfg.max_depth >= 2 && !loop_ok {
        return Err(format!("{mode:?} did not recover with {cfg:?}"));
    }
    let reply = ws.finish_message(turn, result, &mut em).map_err(|e| e.to_string())?;

    let seqs: Vec<u64> = events.iter().map(|e| e.seq).collect();
    if seqs != (0..events.len() as u64).collect::<Vec<_>>() {
        return Err(format!("sequence numbers {seqs:?}"));
    }
    let terminals = events.iter().filter(|e| e.kind.is_terminal()).count();
    if terminals != 1 || !events.last().is_some_and(|e| e.kind.is_terminal()) {
        return Err("stream must end in exactly one terminal event".into());
    }

    let ledger = &ws.history.ledger;
    let after_hashes = ledger.snapshot_hashes();
    for (id, h) in &before_hashes {
        if after_hashes.get(id) != Some(h) {
            return Err(format!("version {id} changed"));
        }
    }
    match &reply.version_id {
        None => {
            if after_hashes.len() != before_hashes.len()
                || ledger.head(&aid).map(str::to_string) != before_head
                || ws.history.message_artifact.len() != before_links
            {
                return Err(format!("failed turn ({:?}) mutated the ledger", reply.error));
            }
        }
        Some(v) => {
            if !loop_ok {
                return Err("commit without a loop outcome".into());
            }
            if after_hashes.len() != before_hashes.len() + 1 || ledger.head(&aid) != Some(v.as_str()) {
                return Err("success must add exactly one version at the head".into());
            }
            let ver = ledger.version(v).map_err(|e| e.to_string())?;
            if ver.parents.first().cloned() != before_head {
                return Err("new version does not descend from the old head".into());
            }
            ledger.check_dag()?;
            let rep = ledger.replay_artifact(v, &ws.catalog).map_err(|e| e.to_string())?;
            if !rep.all_matched() {
                return Err(format!("committed version {v} does not replay"));
            }
        }
    }
    Ok(LoopTrial {
        mode,
        units: cfg.budget.units,
        used,
        committed: reply.version_id.is_some(),
    })
}

// ---------------------------------------------------------------------------
// Climate walkthrough.

/// Mean temperature per state over `months`, hottest first, straight from the
/// generator's CSV.
pub fn climate_ranking(months: &[u32]) -> Vec<String> {
    let text = crate::demo::temps_csv(crate::demo::DemoSeeds::default().temps);
    let mut acc: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let month: u32 = f[1][5..7].parse().expect("month");
        if months.contains(&month) {
            let e = acc.entry(f[0].to_string()).or_default();
            e.0 += f[2].parse::<f64>().expect("temp");
            e.1 += 1.0;
        }
    }
    let mut v: Vec<(String, f64)> = acc.into_iter().map(|(s, (sum, n))| (s, sum / n)).collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.into_iter().map(|(s, _)| s).collect()
}

fn x_labels(chart: &ChartDoc) -> Vec<String> {
    chart
        .marks
        .iter()
        .filter_map(|m| m.channel_values.get(&Channel::X).and_then(|v| v.as_str()).map(str::to_string))
        .collect()
}

/// The Florida line, a summer brush extended into a state ranking, then a winter
/// click that updates the ranking. Fails with a description of the first check that
/// does not hold.
pub fn climate_scenario() -> Result<(), String> {
    use crate::interaction::InteractionEvent;
    let e = |x: crate::session::SessionError| x.to_string();
    let mut ws = Workspace::new(crate::demo::demo_catalog(crate::demo::DemoSeeds::default()).map_err(|x| x.to_string())?);
    ws.fixed_clock = Some(fixed_time());
    let sid = ws.create_session(SessionConfig::default()).map_err(e)?;
    let aid = ws.session_info(&sid).map_err(e)?.artifact_id;
    let r1 = ws
        .post_message(
            &sid,
            MessageRequest {
                text: Some(crate::demo::walkthrough()[0].clone()),
                ..Default::default()
            },
            &mut |_| {},
        )
        .map_err(e)?;
    let line_id = r1.figure_ids.first().ok_or(format!("no line figure: {:?}", r1.error))?.clone();
    let head = ws.head_state(&aid).map_err(e)?;
    let line = head.figure(&line_id).ok_or("line missing")?.clone();
    if line.visualization.chart_type != ChartType::Line || line.visualization.marks.len() != 12 {
        return Err(format!(
            "(a) expected a 12-vertex line, got {:?} with {} marks",
            line.visualization.chart_type,
            line.visualization.marks.len()
        ));
    }
    let brush = InteractionEvent {
        figure_id: line_id.clone(),
        gesture: Gesture::Brush1d {
            channel: Channel::X,
            lo: 6.0,
            hi: 8.0,
        },
        at: fixed_time(),
    };
    let text = "Show me the average temperature of each U.S. state in the past 10 years (2014-2024), and rank them from hottest to coolest.";
    let r2 = ws
        .post_message(
            &sid,
            MessageRequest {
                text: Some(text.into()),
                interaction: Some(brush),
                target_figure: None,
            },
            &mut |_| {},
        )
        .map_err(e)?;
    let bar_id = r2.figure_ids.first().ok_or(format!("no ranking: {:?}", r2.error))?.clone();
    let head = ws.head_state(&aid).map_err(e)?;
    let bars = head.figure(&bar_id).ok_or("ranking missing")?;
    if bars.visualization.chart_type != ChartType::Bar || bars.visualization.marks.len() != 50 {
        return Err(format!("(b) expected 50 bars, got {}", bars.visualization.marks.len()));
    }
    if x_labels(&bars.visualization) != climate_ranking(&[6, 7, 8]) {
        return Err("(b) summer ranking differs from the oracle".into());
    }
    if head.schemas.len() != 1 || bars.meta.operation != Operation::Extend {
        return Err("(b) no coordination schema recorded".into());
    }
    let winter: Vec<String> = line
        .visualization
        .marks
        .iter()
        .filter(|m| {
            m.channel_values
                .get(&Channel::X)
                .and_then(|v| v.as_f64())
                .is_some_and(|x| [12, 1, 2].contains(&(x as u32)))
        })
        .map(|m| m.mark_id.clone())
        .collect();
    let g = ws
        .post_gesture(InteractionEvent {
            figure_id: line_id,
            gesture: Gesture::Click { mark_ids: winter },
            at: fixed_time(),
        })
        .map_err(e)?;
    if g.updates.len() != 1 || g.updates[0].status != UpdateStatus::Updated {
        return Err(format!("(c) expected one update, got {:?}", g.updates));
    }
    let head = ws.head_state(&aid).map_err(e)?;
    let bars = head.figure(&bar_id).ok_or("ranking missing after update")?;
    if bars.meta.operation != Operation::CoordinateUpdate {
        return Err(format!("(c) ranking version is {:?}", bars.meta.operation));
    }
    if x_labels(&bars.visualization) != climate_ranking(&[12, 1, 2]) {
        return Err("(c) winter ranking differs from the oracle".into());
    }
    Ok(())
}
