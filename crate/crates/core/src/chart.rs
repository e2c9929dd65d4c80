//! Chart documents and the deterministic mapping from data rows to marks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::digest::DigestBuilder;
use crate::plan::AggFunc;
use crate::slice::DataSlice;
use crate::value::{RowKey, Schema, SemanticType, Value};

/// Field name accepted by a `count` encoding that counts rows rather than a column.
pub const COUNT_FIELD: &str = "*";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChartType {
    Bar,
    Line,
    Scatter,
    Pie,
    Area,
    Table,
}

impl ChartType {
    pub const ALL: [ChartType; 6] = [
        ChartType::Bar,
        ChartType::Line,
        ChartType::Scatter,
        ChartType::Pie,
        ChartType::Area,
        ChartType::Table,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ChartType::Bar => "bar",
            ChartType::Line => "line",
            ChartType::Scatter => "scatter",
            ChartType::Pie => "pie",
            ChartType::Area => "area",
            ChartType::Table => "table",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }

    pub fn required_channels(self) -> &'static [Channel] {
        match self {
            ChartType::Bar | ChartType::Line | ChartType::Scatter | ChartType::Area => &[Channel::X, Channel::Y],
            ChartType::Pie => &[Channel::Theta, Channel::Color],
            ChartType::Table => &[Channel::RowLabel],
        }
    }
}

impl fmt::Display for ChartType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Channel {
    X,
    Y,
    Color,
    Size,
    Theta,
    Tooltip,
    RowLabel,
}

impl Channel {
    pub fn as_str(self) -> &'static str {
        match self {
            Channel::X => "x",
            Channel::Y => "y",
            Channel::Color => "color",
            Channel::Size => "size",
            Channel::Theta => "theta",
            Channel::Tooltip => "tooltip",
            Channel::RowLabel => "row-label",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Linear,
    Log,
    Ordinal,
    Temporal,
}

impl Scale {
    /// Default scale for a column type.
    pub fn for_type(kind: SemanticType) -> Self {
        match kind {
            SemanticType::Quantitative => Scale::Linear,
            SemanticType::Temporal => Scale::Temporal,
            SemanticType::Ordinal | SemanticType::Nominal => Scale::Ordinal,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncodingSpec {
    pub field: String,
    pub scale: Scale,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<AggFunc>,
}

impl EncodingSpec {
    pub fn new(field: impl Into<String>, scale: Scale) -> Self {
        Self {
            field: field.into(),
            scale,
            aggregate: None,
        }
    }

    pub fn aggregated(field: impl Into<String>, func: AggFunc) -> Self {
        Self {
            field: field.into(),
            scale: Scale::Linear,
            aggregate: Some(func),
        }
    }

    /// Row count encoding (`count(*)`).
    pub fn count() -> Self {
        Self::aggregated(COUNT_FIELD, AggFunc::Count)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionKind {
    SingleSelect,
    Interval1d,
    Interval2d,
    Hover,
}

impl InteractionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InteractionKind::SingleSelect => "single_select",
            InteractionKind::Interval1d => "interval_1d",
            InteractionKind::Interval2d => "interval_2d",
            InteractionKind::Hover => "hover",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InteractionDecl {
    pub kind: InteractionKind,
    #[serde(default)]
    pub channels: Vec<Channel>,
}

impl InteractionDecl {
    pub fn new(kind: InteractionKind, channels: Vec<Channel>) -> Self {
        Self { kind, channels }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkRecord {
    pub mark_id: String,
    pub channel_values: BTreeMap<Channel, Value>,
    pub row_keys: BTreeSet<RowKey>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartDoc {
    pub chart_type: ChartType,
    pub encodings: BTreeMap<Channel, EncodingSpec>,
    #[serde(default)]
    pub params: Vec<InteractionDecl>,
    /// Columns the chart exposes (tooltips, table cells); set by data bindings.
    #[serde(default)]
    pub data_fields: Vec<String>,
    #[serde(default)]
    pub marks: Vec<MarkRecord>,
    #[serde(default)]
    pub insight_text: String,
}

impl ChartDoc {
    pub fn new(chart_type: ChartType) -> Self {
        Self {
            chart_type,
            encodings: BTreeMap::new(),
            params: Vec::new(),
            data_fields: Vec::new(),
            marks: Vec::new(),
            insight_text: String::new(),
        }
    }

    pub fn encode(mut self, channel: Channel, spec: EncodingSpec) -> Self {
        self.encodings.insert(channel, spec);
        self
    }

    pub fn is_aggregated(&self) -> bool {
        self.encodings.values().any(|e| e.aggregate.is_some())
    }

    pub fn mark(&self, id: &str) -> Option<&MarkRecord> {
        self.marks.iter().find(|m| m.mark_id == id)
    }

    /// Vega-Lite subset export with inline data values.
    pub fn to_vega_lite(&self, data: &DataSlice) -> serde_json::Value {
        let mark = match self.chart_type {
            ChartType::Bar => "bar",
            ChartType::Line => "line",
            ChartType::Scatter => "point",
            ChartType::Pie => "arc",
            ChartType::Area => "area",
            ChartType::Table => "text",
        };
        let mut enc = serde_json::Map::new();
        for (ch, spec) in &self.encodings {
            let kind = data
                .column_type(&spec.field)
                .map(SemanticType::as_str)
                .unwrap_or("quantitative");
            let mut e = serde_json::Map::new();
            if spec.field != COUNT_FIELD {
                e.insert("field".into(), json!(spec.field));
            }
            e.insert(
                "type".into(),
                json!(if spec.aggregate.is_some() { "quantitative" } else { kind }),
            );
            if let Some(a) = spec.aggregate {
                e.insert("aggregate".into(), json!(vega_aggregate(a)));
            }
            if spec.scale == Scale::Log {
                e.insert("scale".into(), json!({"type": "log"}));
            }
            let name = match ch {
                Channel::RowLabel => "y",
                Channel::Tooltip => "tooltip",
                other => other.as_str(),
            };
            enc.insert(name.into(), serde_json::Value::Object(e));
        }
        if self.chart_type == ChartType::Table {
            let fields: Vec<&String> = self.data_fields.iter().collect();
            enc.insert("text".into(), json!({"field": fields.first().map(|s| s.as_str()).unwrap_or("")}));
        }
        let params: Vec<serde_json::Value> = self
            .params
            .iter()
            .enumerate()
            .filter(|(_, p)| p.kind != InteractionKind::Hover)
            .map(|(i, p)| {
                let ty = match p.kind {
                    InteractionKind::SingleSelect => "point",
                    _ => "interval",
                };
                let chans: Vec<&str> = p.channels.iter().map(|c| c.as_str()).collect();
                json!({"name": format!("sel{i}"), "select": {"type": ty, "encodings": chans}})
            })
            .collect();
        let values: Vec<serde_json::Value> = data
            .rows
            .iter()
            .map(|r| {
                let mut o = serde_json::Map::new();
                for (c, v) in data.schema.columns.iter().zip(&r.values) {
                    o.insert(c.name.clone(), serde_json::to_value(v).expect("value json"));
                }
                serde_json::Value::Object(o)
            })
            .collect();
        let mut spec = json!({
            "$schema": "https://vega.github.io/schema/vega-lite/v5.json",
            "mark": {"type": mark, "tooltip": true},
            "encoding": enc,
            "data": {"values": values},
        });
        if !params.is_empty() {
            spec["params"] = json!(params);
        }
        if !self.insight_text.is_empty() {
            spec["description"] = json!(self.insight_text);
        }
        spec
    }
}

fn vega_aggregate(a: AggFunc) -> &'static str {
    match a {
        AggFunc::Sum => "sum",
        AggFunc::Mean => "mean",
        AggFunc::Count => "count",
        AggFunc::Min => "min",
        AggFunc::Max => "max",
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChartError {
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("log scale on `{field}` requires values > 0, found {value}")]
    LogScaleDomain { field: String, value: f64 },
    #[error("log scale on non-quantitative field `{0}`")]
    LogScaleType(String),
    #[error("no rows to render")]
    EmptyData,
    #[error("{chart} chart requires a `{channel}` encoding")]
    MissingChannel { chart: ChartType, channel: Channel },
    #[error("no chart type")]
    MissingChartType,
    #[error("invalid encoding on `{channel}`: {reason}")]
    InvalidEncoding { channel: Channel, reason: String },
    #[error("interaction {kind} binds `{channel}`, which has no encoding")]
    UnboundParam { kind: &'static str, channel: Channel },
}

/// How a channel reads the data: column, scale and optional aggregation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelBinding {
    pub column: String,
    pub scale: Scale,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<AggFunc>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkMap {
    pub figure_id: String,
    pub entries: BTreeMap<String, BTreeSet<RowKey>>,
    pub bindings: BTreeMap<Channel, ChannelBinding>,
}

impl MarkMap {
    pub fn rows_of(&self, mark_id: &str) -> Option<&BTreeSet<RowKey>> {
        self.entries.get(mark_id)
    }
}

/// Checks encodings and params against the chart type and data schema.
pub fn check_chart(chart: &ChartDoc, schema: &Schema) -> Result<(), ChartError> {
    for &ch in chart.chart_type.required_channels() {
        if !chart.encodings.contains_key(&ch) {
            return Err(ChartError::MissingChannel {
                chart: chart.chart_type,
                channel: ch,
            });
        }
    }
    for (&ch, spec) in &chart.encodings {
        if spec.field == COUNT_FIELD {
            if spec.aggregate != Some(AggFunc::Count) {
                return Err(ChartError::InvalidEncoding {
                    channel: ch,
                    reason: "`*` is only valid with count".into(),
                });
            }
            continue;
        }
        let col = schema
            .column(&spec.field)
            .ok_or_else(|| ChartError::UnknownColumn(spec.field.clone()))?;
        if spec.scale == Scale::Log && col.kind != SemanticType::Quantitative && spec.aggregate.is_none() {
            return Err(ChartError::LogScaleType(spec.field.clone()));
        }
        if matches!(spec.aggregate, Some(AggFunc::Sum | AggFunc::Mean)) && col.kind == SemanticType::Nominal {
            return Err(ChartError::InvalidEncoding {
                channel: ch,
                reason: format!("cannot average or sum nominal `{}`", spec.field),
            });
        }
    }
    for p in &chart.params {
        for ch in &p.channels {
            if !chart.encodings.contains_key(ch) {
                return Err(ChartError::UnboundParam {
                    kind: p.kind.as_str(),
                    channel: *ch,
                });
            }
        }
    }
    Ok(())
}

/// Computes marks for `chart` over `data`. With aggregated encodings the rows are grouped
/// by every non-aggregated encoded field; otherwise each row is one mark.
pub fn materialize_marks(chart: &ChartDoc, data: &DataSlice) -> Result<(Vec<MarkRecord>, MarkMap), ChartError> {
    check_chart(chart, &data.schema)?;
    if data.is_empty() && chart.chart_type != ChartType::Table {
        return Err(ChartError::EmptyData);
    }
    let bindings: BTreeMap<Channel, ChannelBinding> = chart
        .encodings
        .iter()
        .map(|(ch, e)| {
            (
                *ch,
                ChannelBinding {
                    column: e.field.clone(),
                    scale: e.scale,
                    aggregate: e.aggregate,
                },
            )
        })
        .collect();
    let idx = |field: &str| data.schema.index_of(field);

    let mut marks = Vec::new();
    if chart.is_aggregated() {
        let group_fields: Vec<(Channel, usize)> = chart
            .encodings
            .iter()
            .filter(|(_, e)| e.aggregate.is_none())
            .map(|(ch, e)| (*ch, idx(&e.field).expect("checked")))
            .collect();
        let mut groups: BTreeMap<Vec<Value>, Vec<usize>> = BTreeMap::new();
        for (i, r) in data.rows.iter().enumerate() {
            let key = group_fields.iter().map(|(_, j)| r.values[*j].clone()).collect();
            groups.entry(key).or_default().push(i);
        }
        for (key, members) in groups {
            let mut values = BTreeMap::new();
            for ((ch, _), v) in group_fields.iter().zip(key) {
                values.insert(*ch, v);
            }
            for (ch, e) in chart.encodings.iter().filter(|(_, e)| e.aggregate.is_some()) {
                let func = e.aggregate.expect("filtered");
                let v = if func == AggFunc::Count {
                    Value::num(members.len() as f64)
                } else {
                    let j = idx(&e.field).expect("checked");
                    let col = members.iter().map(|&m| &data.rows[m].values[j]);
                    match func {
                        AggFunc::Min => col.min().cloned().expect("nonempty"),
                        AggFunc::Max => col.max().cloned().expect("nonempty"),
                        _ => {
                            let mut s = 0.0;
                            for v in col {
                                s += v.as_f64().ok_or_else(|| ChartError::InvalidEncoding {
                                    channel: *ch,
                                    reason: format!("non-numeric `{v}`"),
                                })?;
                            }
                            if func == AggFunc::Mean {
                                s /= members.len() as f64;
                            }
                            Value::num(s)
                        }
                    }
                };
                values.insert(*ch, v);
            }
            let keys = members.iter().map(|&m| data.rows[m].key.clone()).collect();
            marks.push(MarkRecord {
                mark_id: mark_id(&values, None),
                channel_values: values,
                row_keys: keys,
            });
        }
    } else {
        let fields: Vec<(Channel, usize)> = chart
            .encodings
            .iter()
            .map(|(ch, e)| (*ch, idx(&e.field).expect("checked")))
            .collect();
        for r in &data.rows {
            let values: BTreeMap<Channel, Value> =
                fields.iter().map(|(ch, j)| (*ch, r.values[*j].clone())).collect();
            marks.push(MarkRecord {
                mark_id: mark_id(&values, Some(&r.key)),
                channel_values: values,
                row_keys: BTreeSet::from([r.key.clone()]),
            });
        }
    }
    for m in &marks {
        for (ch, v) in &m.channel_values {
            if chart.encodings[ch].scale == Scale::Log {
                match v.as_f64() {
                    Some(x) if x > 0.0 => {}
                    Some(x) => {
                        return Err(ChartError::LogScaleDomain {
                            field: chart.encodings[ch].field.clone(),
                            value: x,
                        })
                    }
                    None => return Err(ChartError::LogScaleType(chart.encodings[ch].field.clone())),
                }
            }
        }
    }
    let map = MarkMap {
        figure_id: String::new(),
        entries: marks.iter().map(|m| (m.mark_id.clone(), m.row_keys.clone())).collect(),
        bindings,
    };
    Ok((marks, map))
}

fn mark_id(values: &BTreeMap<Channel, Value>, row: Option<&RowKey>) -> String {
    let mut b = DigestBuilder::new().part(b"mark");
    let mut buf = Vec::new();
    for (ch, v) in values {
        buf.clear();
        buf.extend_from_slice(ch.as_str().as_bytes());
        buf.push(0);
        v.canonical(&mut buf);
        b = b.part(&buf);
    }
    if let Some(k) = row {
        b = b.part(k.as_str());
    }
    format!("m-{}", b.finish().short(16))
}

fn measure_channel(chart: &ChartDoc) -> Option<Channel> {
    let pick = match chart.chart_type {
        ChartType::Pie => Channel::Theta,
        ChartType::Table => {
            return chart
                .encodings
                .iter()
                .find(|(ch, e)| **ch != Channel::RowLabel && (e.aggregate.is_some() || e.scale == Scale::Linear || e.scale == Scale::Log))
                .map(|(ch, _)| *ch)
        }
        _ => Channel::Y,
    };
    Some(pick)
}

fn label_channel(chart: &ChartDoc) -> Option<Channel> {
    match chart.chart_type {
        ChartType::Pie => Some(Channel::Color),
        ChartType::Table => Some(Channel::RowLabel),
        ChartType::Scatter => None,
        _ => Some(Channel::X),
    }
}

fn field_label(spec: &EncodingSpec) -> String {
    match spec.aggregate {
        Some(AggFunc::Count) => "count".into(),
        Some(f) => format!("{} {}", f.name(), spec.field),
        None => spec.field.clone(),
    }
}

fn fmt_value(v: &Value) -> String {
    match v {
        Value::Num(x) if x.fract() == 0.0 && x.abs() < 1e15 => format!("{x}"),
        Value::Num(x) => format!("{x:.2}"),
        Value::Text(s) => s.clone(),
    }
}

/// Deterministic one-paragraph summary: chart type, fields, extremes and row count.
pub fn summarize_insight(chart: &ChartDoc, data: &DataSlice) -> String {
    if data.is_empty() {
        return format!("{} chart: no rows matched the current filters.", capitalize(chart.chart_type.as_str()));
    }
    let fields: Vec<String> = chart
        .encodings
        .iter()
        .map(|(ch, e)| format!("{}={}", ch, field_label(e)))
        .collect();
    let mut s = format!(
        "{} chart of {} rows ({}).",
        capitalize(chart.chart_type.as_str()),
        data.len(),
        fields.join(", ")
    );
    let measure = measure_channel(chart).filter(|m| chart.encodings.contains_key(m));
    if let Some(m) = measure {
        let scored: Vec<(&crate::chart::MarkRecord, f64)> = chart
            .marks
            .iter()
            .filter_map(|mk| mk.channel_values.get(&m).and_then(Value::as_f64).map(|x| (mk, x)))
            .collect();
        if !scored.is_empty() {
            let mut hi = scored[0];
            let mut lo = scored[0];
            for &(mk, x) in &scored[1..] {
                if x > hi.1 {
                    hi = (mk, x);
                }
                if x < lo.1 {
                    lo = (mk, x);
                }
            }
            let name = field_label(&chart.encodings[&m]);
            let label = |mk: &MarkRecord| -> String {
                match label_channel(chart).and_then(|c| mk.channel_values.get(&c)) {
                    Some(v) => fmt_value(v),
                    None => {
                        let x = mk.channel_values.get(&Channel::X).map(fmt_value).unwrap_or_default();
                        format!("the point at {x}")
                    }
                }
            };
            s.push_str(&format!(
                " Highest {name}: {} ({}). Lowest {name}: {} ({}).",
                label(hi.0),
                fmt_value(&Value::num(hi.1)),
                label(lo.0),
                fmt_value(&Value::num(lo.1))
            ));
        }
    }
    s
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slice::Lineage;
    use crate::value::{Column, Row};

    fn temps() -> DataSlice {
        let schema = Schema::new(vec![
            Column::new("state", SemanticType::Nominal),
            Column::new("temp", SemanticType::Quantitative),
        ]);
        let rows = [("FL", 80.0), ("FL", 82.0), ("ME", 40.0), ("TX", 70.0), ("TX", 74.0)]
            .iter()
            .enumerate()
            .map(|(i, (s, t))| Row::new(format!("t:{i}"), vec![Value::text(*s), Value::num(*t)]))
            .collect();
        DataSlice::new(schema, rows, Lineage::default())
    }

    fn bar() -> ChartDoc {
        ChartDoc::new(ChartType::Bar)
            .encode(Channel::X, EncodingSpec::new("state", Scale::Ordinal))
            .encode(Channel::Y, EncodingSpec::aggregated("temp", AggFunc::Mean))
    }

    #[test]
    fn aggregated_bar_has_one_mark_per_group() {
        let (marks, map) = materialize_marks(&bar(), &temps()).unwrap();
        assert_eq!(marks.len(), 3);
        assert_eq!(marks[0].channel_values[&Channel::Y], Value::num(81.0));
        assert_eq!(marks[0].row_keys.len(), 2);
        assert_eq!(map.entries.len(), 3);
    }

    #[test]
    fn mark_ids_are_stable_and_unique() {
        let (a, _) = materialize_marks(&bar(), &temps()).unwrap();
        let (b, _) = materialize_marks(&bar(), &temps()).unwrap();
        assert_eq!(a, b);
        let ids: BTreeSet<_> = a.iter().map(|m| &m.mark_id).collect();
        assert_eq!(ids.len(), a.len());
    }

    #[test]
    fn log_scale_rejects_nonpositive() {
        let mut d = temps();
        d.rows[2].values[1] = Value::num(0.0);
        let c = ChartDoc::new(ChartType::Scatter)
            .encode(Channel::X, EncodingSpec::new("temp", Scale::Log))
            .encode(Channel::Y, EncodingSpec::new("temp", Scale::Linear));
        assert!(matches!(materialize_marks(&c, &d), Err(ChartError::LogScaleDomain { .. })));
    }

    #[test]
    fn empty_data_only_legal_for_tables() {
        let mut d = temps();
        d.rows.clear();
        assert_eq!(materialize_marks(&bar(), &d).unwrap_err(), ChartError::EmptyData);
        let t = ChartDoc::new(ChartType::Table).encode(Channel::RowLabel, EncodingSpec::new("state", Scale::Ordinal));
        assert!(materialize_marks(&t, &d).unwrap().0.is_empty());
    }

    #[test]
    fn pie_requires_theta_and_color() {
        let c = ChartDoc::new(ChartType::Pie).encode(Channel::Color, EncodingSpec::new("state", Scale::Ordinal));
        assert!(matches!(
            materialize_marks(&c, &temps()),
            Err(ChartError::MissingChannel { channel: Channel::Theta, .. })
        ));
    }

    #[test]
    fn insight_names_extremes() {
        let mut c = bar();
        c.marks = materialize_marks(&c, &temps()).unwrap().0;
        let s = summarize_insight(&c, &temps());
        assert!(s.contains("Highest mean temp: FL (81)"), "{s}");
        assert!(s.contains("Lowest mean temp: ME (40)"), "{s}");
    }
}
