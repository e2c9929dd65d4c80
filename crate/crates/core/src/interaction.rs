//! Gestures on marks and their translation into row predicates.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chart::{Channel, ChartDoc, ChartType, InteractionKind, MarkMap, MarkRecord, Scale};
use crate::predicate::{Atom, CmpOp, Predicate};
use crate::slice::DataSlice;
use crate::value::{RowKey, SemanticType, Value, ROW_KEY_COLUMN};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Gesture {
    Click {
        mark_ids: Vec<String>,
    },
    Brush1d {
        channel: Channel,
        lo: f64,
        hi: f64,
    },
    Brush2d {
        x_lo: f64,
        x_hi: f64,
        y_lo: f64,
        y_hi: f64,
    },
    Hover {
        mark_id: String,
    },
}

impl Gesture {
    pub fn interaction_kind(&self) -> InteractionKind {
        match self {
            Gesture::Click { .. } => InteractionKind::SingleSelect,
            Gesture::Brush1d { .. } => InteractionKind::Interval1d,
            Gesture::Brush2d { .. } => InteractionKind::Interval2d,
            Gesture::Hover { .. } => InteractionKind::Hover,
        }
    }

    /// Bounds are finite and ordered.
    pub fn check_bounds(&self) -> Result<(), InteractionError> {
        let ok = |lo: f64, hi: f64| lo.is_finite() && hi.is_finite() && lo <= hi;
        let valid = match self {
            Gesture::Brush1d { lo, hi, .. } => ok(*lo, *hi),
            Gesture::Brush2d { x_lo, x_hi, y_lo, y_hi } => ok(*x_lo, *x_hi) && ok(*y_lo, *y_hi),
            Gesture::Click { mark_ids } => !mark_ids.is_empty(),
            Gesture::Hover { .. } => true,
        };
        if valid {
            Ok(())
        } else {
            Err(InteractionError::InvalidBounds)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub figure_id: String,
    #[serde(flatten)]
    pub gesture: Gesture,
    pub at: DateTime<Utc>,
}

impl InteractionEvent {
    pub fn new(figure_id: impl Into<String>, gesture: Gesture) -> Self {
        Self {
            figure_id: figure_id.into(),
            gesture,
            at: Utc::now(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InteractionError {
    #[error("gesture targets figure `{event}` but the mark map belongs to `{map}`")]
    FigureMismatch { event: String, map: String },
    #[error("channel `{0}` has no encoding")]
    UnboundChannel(Channel),
    #[error("interval brush on nominal field `{0}`; use click selection")]
    NominalBrush(String),
    #[error("interval brush on aggregated channel `{0}` has no row-level predicate")]
    AggregatedBrush(Channel),
    #[error("unknown mark `{0}`")]
    UnknownMark(String),
    #[error("brush bounds must be finite with lo <= hi")]
    InvalidBounds,
}

/// Days since 1970-01-01 for an ISO date, used as the temporal axis position of text dates.
pub fn days_since_epoch(s: &str) -> Option<f64> {
    let d = NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()?;
    let epoch = NaiveDate::from_ymd_opt(1970, 1, 1)?;
    Some((d - epoch).num_days() as f64)
}

/// Maps channel values of marks to axis positions.
#[derive(Clone, Debug)]
pub struct Axis {
    pub scale: Scale,
    /// Sorted distinct values, for ordinal positions.
    pub domain: Vec<Value>,
}

impl Axis {
    pub fn for_channel(chart: &ChartDoc, channel: Channel) -> Option<Self> {
        let spec = chart.encodings.get(&channel)?;
        let domain: BTreeSet<Value> = chart
            .marks
            .iter()
            .filter_map(|m| m.channel_values.get(&channel).cloned())
            .collect();
        Some(Self {
            scale: spec.scale,
            domain: domain.into_iter().collect(),
        })
    }

    /// Position of a value on this axis. Text under a linear or log scale has none.
    pub fn position(&self, v: &Value) -> Option<f64> {
        match (self.scale, v) {
            (Scale::Linear, Value::Num(x)) => Some(*x),
            (Scale::Log, Value::Num(x)) if *x > 0.0 => Some(x.log10()),
            (Scale::Temporal, Value::Num(x)) => Some(*x),
            (Scale::Temporal, Value::Text(s)) => {
                days_since_epoch(s).or_else(|| self.domain.binary_search(v).ok().map(|i| i as f64))
            }
            (Scale::Ordinal, _) => self.domain.binary_search(v).ok().map(|i| i as f64),
            _ => None,
        }
    }
}

/// Pie layout: slices in mark order, clockwise from 12 o'clock, in the unit square with the
/// centre at (0.5, 0.5). Returns each slice's centroid at half the radius.
pub fn pie_centroids(chart: &ChartDoc) -> Vec<(String, f64, f64)> {
    let vals: Vec<f64> = chart
        .marks
        .iter()
        .map(|m| {
            m.channel_values
                .get(&Channel::Theta)
                .and_then(Value::as_f64)
                .unwrap_or(0.0)
                .max(0.0)
        })
        .collect();
    let total: f64 = vals.iter().sum();
    let mut out = Vec::with_capacity(vals.len());
    let mut start = 0.0;
    for (m, v) in chart.marks.iter().zip(vals) {
        let frac = if total > 0.0 { v / total } else { 0.0 };
        let mid = (start + frac / 2.0) * std::f64::consts::TAU;
        out.push((m.mark_id.clone(), 0.5 + 0.25 * mid.sin(), 0.5 + 0.25 * mid.cos()));
        start += frac;
    }
    out
}

/// Table layout: one row per mark in mark order, row `i` spanning `[i, i+1)` vertically
/// and `[0, 1]` horizontally. Returns each row's centre.
pub fn table_cells(chart: &ChartDoc) -> Vec<(String, f64, f64)> {
    chart
        .marks
        .iter()
        .enumerate()
        .map(|(i, m)| (m.mark_id.clone(), 0.5, i as f64 + 0.5))
        .collect()
}

fn column_of<'a>(map: &'a MarkMap, ch: Channel) -> Result<&'a crate::chart::ChannelBinding, InteractionError> {
    map.bindings.get(&ch).ok_or(InteractionError::UnboundChannel(ch))
}

/// Marks geometrically inside `gesture`, in chart order.
pub fn gesture_marks(
    chart: &ChartDoc,
    map: &MarkMap,
    data: &DataSlice,
    gesture: &Gesture,
) -> Result<Vec<String>, InteractionError> {
    gesture.check_bounds()?;
    match gesture {
        Gesture::Click { mark_ids } => {
            for id in mark_ids {
                if !map.entries.contains_key(id) {
                    return Err(InteractionError::UnknownMark(id.clone()));
                }
            }
            let set: BTreeSet<&String> = mark_ids.iter().collect();
            Ok(chart.marks.iter().filter(|m| set.contains(&m.mark_id)).map(|m| m.mark_id.clone()).collect())
        }
        Gesture::Hover { mark_id } => {
            if !map.entries.contains_key(mark_id) {
                return Err(InteractionError::UnknownMark(mark_id.clone()));
            }
            Ok(vec![mark_id.clone()])
        }
        Gesture::Brush1d { channel, lo, hi } => {
            let axis = brushable_axis(chart, map, data, *channel)?;
            Ok(inside(chart, *channel, &axis, *lo, *hi).into_iter().map(|m| m.mark_id.clone()).collect())
        }
        Gesture::Brush2d { x_lo, x_hi, y_lo, y_hi } => {
            let centroids = match chart.chart_type {
                ChartType::Pie => Some(pie_centroids(chart)),
                ChartType::Table => Some(table_cells(chart)),
                _ => None,
            };
            if let Some(c) = centroids {
                return Ok(c
                    .into_iter()
                    .filter(|(_, x, y)| x_lo <= x && x <= x_hi && y_lo <= y && y <= y_hi)
                    .map(|(id, _, _)| id)
                    .collect());
            }
            let ax = brushable_axis(chart, map, data, Channel::X)?;
            let ay = brushable_axis(chart, map, data, Channel::Y)?;
            let xs: BTreeSet<&String> = inside(chart, Channel::X, &ax, *x_lo, *x_hi).into_iter().map(|m| &m.mark_id).collect();
            Ok(inside(chart, Channel::Y, &ay, *y_lo, *y_hi)
                .into_iter()
                .filter(|m| xs.contains(&m.mark_id))
                .map(|m| m.mark_id.clone())
                .collect())
        }
    }
}

fn brushable_axis(chart: &ChartDoc, map: &MarkMap, data: &DataSlice, ch: Channel) -> Result<Axis, InteractionError> {
    let b = column_of(map, ch)?;
    if b.aggregate.is_some() {
        return Err(InteractionError::AggregatedBrush(ch));
    }
    if data.column_type(&b.column) == Some(SemanticType::Nominal) {
        return Err(InteractionError::NominalBrush(b.column.clone()));
    }
    Axis::for_channel(chart, ch).ok_or(InteractionError::UnboundChannel(ch))
}

fn inside<'a>(chart: &'a ChartDoc, ch: Channel, axis: &Axis, lo: f64, hi: f64) -> Vec<&'a MarkRecord> {
    chart
        .marks
        .iter()
        .filter(|m| {
            m.channel_values
                .get(&ch)
                .and_then(|v| axis.position(v))
                .is_some_and(|p| lo <= p && p <= hi)
        })
        .collect()
}

/// Range atom over the values inside `[lo, hi]`, snapped to the extreme data values
/// inside. With nothing inside, comparison atoms that fall in the gap.
fn interval_atoms(chart: &ChartDoc, column: &str, ch: Channel, axis: &Axis, lo: f64, hi: f64) -> Vec<Atom> {
    let mut below: Option<&Value> = None;
    let mut above: Option<&Value> = None;
    let mut lo_in: Option<&Value> = None;
    let mut hi_in: Option<&Value> = None;
    for m in &chart.marks {
        let Some(v) = m.channel_values.get(&ch) else { continue };
        let Some(p) = axis.position(v) else { continue };
        if p < lo {
            below = below.max(Some(v));
        } else if p > hi {
            above = Some(above.map_or(v, |a| a.min(v)));
        } else {
            lo_in = Some(lo_in.map_or(v, |a| a.min(v)));
            hi_in = hi_in.max(Some(v));
        }
    }
    match (lo_in, hi_in) {
        (Some(a), Some(b)) => vec![Atom::range(column, a.clone(), b.clone())],
        _ => {
            let mut atoms = Vec::new();
            if let Some(b) = below {
                atoms.push(Atom::cmp(column, CmpOp::Gt, b.clone()));
            }
            if let Some(a) = above {
                atoms.push(Atom::cmp(column, CmpOp::Lt, a.clone()));
            }
            if atoms.is_empty() {
                // No positioned marks at all; row keys are text, so nothing sorts below "".
                atoms.push(Atom::cmp(ROW_KEY_COLUMN, CmpOp::Lt, Value::text("")));
            }
            atoms
        }
    }
}

fn rows_matching(data: &DataSlice, p: &Predicate) -> BTreeSet<RowKey> {
    data.rows
        .iter()
        .filter(|r| p.eval(&data.schema, r))
        .map(|r| r.key.clone())
        .collect()
}

/// Predicate selecting exactly the rows of `marks`, preferring membership over a discrete
/// channel column, then (for one aggregated mark) its group values, then row keys.
pub fn marks_to_predicate(chart: &ChartDoc, map: &MarkMap, data: &DataSlice, marks: &[String]) -> Predicate {
    let selected: Vec<&MarkRecord> = chart.marks.iter().filter(|m| marks.contains(&m.mark_id)).collect();
    let target: BTreeSet<RowKey> = selected.iter().flat_map(|m| m.row_keys.iter().cloned()).collect();
    let order = [
        Channel::X,
        Channel::Color,
        Channel::RowLabel,
        Channel::Y,
        Channel::Theta,
        Channel::Size,
        Channel::Tooltip,
    ];
    let discrete: Vec<(Channel, &str)> = order
        .iter()
        .filter_map(|ch| map.bindings.get(ch).map(|b| (*ch, b)))
        .filter(|(_, b)| b.aggregate.is_none())
        .filter(|(_, b)| {
            matches!(
                data.column_type(&b.column),
                Some(SemanticType::Nominal | SemanticType::Ordinal | SemanticType::Temporal)
            )
        })
        .map(|(ch, b)| (ch, b.column.as_str()))
        .collect();

    if selected.is_empty() {
        // Nothing selected: a comparison below the smallest value matches no row.
        let (col, min) = match discrete.first() {
            Some((_, c)) => (c.to_string(), data.column_values(c).and_then(|v| v.into_iter().min())),
            None => (ROW_KEY_COLUMN.to_string(), data.column_values(ROW_KEY_COLUMN).and_then(|v| v.into_iter().min())),
        };
        let min = min.unwrap_or(Value::text(""));
        return Predicate::new(vec![Atom::cmp(col, CmpOp::Lt, min)]);
    }

    for (ch, col) in &discrete {
        let values: BTreeSet<Value> = selected.iter().filter_map(|m| m.channel_values.get(ch).cloned()).collect();
        let p = Predicate::new(vec![Atom::membership(*col, values)]);
        if rows_matching(data, &p) == target {
            return p;
        }
    }
    if chart.is_aggregated() && selected.len() == 1 {
        let m = selected[0];
        let atoms: Vec<Atom> = map
            .bindings
            .iter()
            .filter(|(_, b)| b.aggregate.is_none())
            .filter_map(|(ch, b)| m.channel_values.get(ch).map(|v| Atom::membership(b.column.clone(), [v.clone()])))
            .collect();
        let p = Predicate::new(atoms);
        if !p.atoms.is_empty() && rows_matching(data, &p) == target {
            return p;
        }
    }
    Predicate::new(vec![Atom::membership(
        ROW_KEY_COLUMN,
        target.into_iter().map(|k| Value::Text(k.0)),
    )])
}

/// Translates a gesture into a predicate over the figure's data slice.
pub fn interaction_to_predicate(
    ev: &InteractionEvent,
    map: &MarkMap,
    chart: &ChartDoc,
    data: &DataSlice,
) -> Result<Predicate, InteractionError> {
    if !map.figure_id.is_empty() && ev.figure_id != map.figure_id {
        return Err(InteractionError::FigureMismatch {
            event: ev.figure_id.clone(),
            map: map.figure_id.clone(),
        });
    }
    gesture_to_predicate(&ev.gesture, map, chart, data)
}

pub fn gesture_to_predicate(
    gesture: &Gesture,
    map: &MarkMap,
    chart: &ChartDoc,
    data: &DataSlice,
) -> Result<Predicate, InteractionError> {
    gesture.check_bounds()?;
    match gesture {
        Gesture::Click { .. } | Gesture::Hover { .. } => {
            let marks = gesture_marks(chart, map, data, gesture)?;
            Ok(marks_to_predicate(chart, map, data, &marks))
        }
        Gesture::Brush1d { channel, lo, hi } => {
            let axis = brushable_axis(chart, map, data, *channel)?;
            let col = column_of(map, *channel)?.column.clone();
            Ok(Predicate::new(interval_atoms(chart, &col, *channel, &axis, *lo, *hi)))
        }
        Gesture::Brush2d { x_lo, x_hi, y_lo, y_hi } => {
            if matches!(chart.chart_type, ChartType::Pie | ChartType::Table) {
                let marks = gesture_marks(chart, map, data, gesture)?;
                return Ok(marks_to_predicate(chart, map, data, &marks));
            }
            let ax = brushable_axis(chart, map, data, Channel::X)?;
            let ay = brushable_axis(chart, map, data, Channel::Y)?;
            let cx = column_of(map, Channel::X)?.column.clone();
            let cy = column_of(map, Channel::Y)?.column.clone();
            let mut atoms = interval_atoms(chart, &cx, Channel::X, &ax, *x_lo, *x_hi);
            atoms.extend(interval_atoms(chart, &cy, Channel::Y, &ay, *y_lo, *y_hi));
            Ok(Predicate::new(atoms))
        }
    }
}

/// Row keys of the slice that satisfy `p`.
pub fn selected_rows(data: &DataSlice, p: &Predicate) -> BTreeSet<RowKey> {
    rows_matching(data, p)
}

/// Row keys covered by the given marks.
pub fn mark_rows(map: &MarkMap, marks: &[String]) -> BTreeSet<RowKey> {
    marks
        .iter()
        .filter_map(|m| map.entries.get(m))
        .flat_map(|s| s.iter().cloned())
        .collect()
}

/// Channel values of a hovered mark, for tooltips. Hover is never recorded.
pub fn hover_values(chart: &ChartDoc, mark_id: &str) -> Option<BTreeMap<Channel, Value>> {
    chart.mark(mark_id).map(|m| m.channel_values.clone())
}
