//! Naive row-at-a-time plan evaluator used as a test oracle.
//!
//! Shares only the data model with the engine: predicates, expressions, joins and
//! grouping are all re-implemented here (nested loops, sort-based grouping).

use std::cmp::Ordering;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::catalog::TableCatalog;
use crate::expr::Expr;
use crate::plan::{AggFunc, AnalyzeOp, PlanNode, QueryPlan};
use crate::predicate::{Atom, CmpOp};
use crate::slice::{DataSlice, Lineage};
use crate::value::{Column, Row, RowKey, Schema, SemanticType, Value, ROW_KEY_COLUMN};

/// Evaluates `plan` with no shortcuts. Returns `Err` with a description on any failure.
pub fn reference_execute(plan: &QueryPlan, catalog: &TableCatalog) -> Result<DataSlice, String> {
    let (cols, rows) = run(&plan.root, catalog)?;
    let schema = Schema::new(cols);
    let rows = rows.into_iter().map(|(k, v)| Row { key: RowKey(k), values: v }).collect();
    Ok(DataSlice::new(schema, rows, Lineage::default()))
}

type Tuple = (String, Vec<Value>);

fn pos(cols: &[Column], name: &str) -> Result<usize, String> {
    for (i, c) in cols.iter().enumerate() {
        if c.name == name {
            return Ok(i);
        }
    }
    Err(format!("no column {name}"))
}

fn cell(cols: &[Column], t: &Tuple, name: &str) -> Result<Value, String> {
    if name == ROW_KEY_COLUMN {
        return Ok(Value::Text(t.0.clone()));
    }
    Ok(t.1[pos(cols, name)?].clone())
}

fn atom_holds(cols: &[Column], t: &Tuple, atom: &Atom) -> Result<bool, String> {
    Ok(match atom {
        Atom::Membership { column, values } => {
            let v = cell(cols, t, column)?;
            values.iter().any(|x| x.cmp(&v) == Ordering::Equal)
        }
        Atom::Range { column, lo, hi } => {
            let v = cell(cols, t, column)?;
            v.cmp(lo) != Ordering::Less && v.cmp(hi) != Ordering::Greater
        }
        Atom::Comparison { column, op, value } => {
            let o = cell(cols, t, column)?.cmp(value);
            match op {
                CmpOp::Lt => o == Ordering::Less,
                CmpOp::Le => o != Ordering::Greater,
                CmpOp::Eq => o == Ordering::Equal,
                CmpOp::Ge => o != Ordering::Less,
                CmpOp::Gt => o == Ordering::Greater,
                CmpOp::Ne => o != Ordering::Equal,
            }
        }
    })
}

fn num(cols: &[Column], t: &Tuple, e: &Expr) -> Result<f64, String> {
    let x = match e {
        Expr::Col { name } => match &t.1[pos(cols, name)?] {
            Value::Num(x) => *x,
            Value::Text(_) => return Err("text in arithmetic".into()),
        },
        Expr::Lit { value } => *value,
        Expr::Add { left, right } => num(cols, t, left)? + num(cols, t, right)?,
        Expr::Sub { left, right } => num(cols, t, left)? - num(cols, t, right)?,
        Expr::Mul { left, right } => num(cols, t, left)? * num(cols, t, right)?,
        Expr::Div { left, right } => {
            let d = num(cols, t, right)?;
            if d == 0.0 {
                return Err("division by zero".into());
            }
            num(cols, t, left)? / d
        }
        Expr::Log { arg, offset } => {
            let a = num(cols, t, arg)? + offset;
            if a <= 0.0 {
                return Err("log domain".into());
            }
            a.ln()
        }
        Expr::Exp { arg } => num(cols, t, arg)?.exp(),
        Expr::Abs { arg } => num(cols, t, arg)?.abs(),
        Expr::Bucket { .. } => return Err("bucket in arithmetic".into()),
    };
    if !x.is_finite() {
        return Err("non-finite".into());
    }
    Ok(x)
}

fn expr_value(cols: &[Column], t: &Tuple, e: &Expr) -> Result<Value, String> {
    if let Expr::Bucket { arg, thresholds, labels } = e {
        let x = num(cols, t, arg)?;
        let mut i = 0;
        while i < thresholds.len() && x >= thresholds[i] {
            i += 1;
        }
        return labels.get(i).map(|l| Value::Text(l.clone())).ok_or("bucket labels".to_string());
    }
    Ok(Value::num(num(cols, t, e)?))
}

fn expr_kind(e: &Expr) -> SemanticType {
    match e {
        Expr::Bucket { .. } => SemanticType::Ordinal,
        _ => SemanticType::Quantitative,
    }
}

/// Orders by `keys` (column index, descending), then by row key.
fn ordered(rows: &mut [Tuple], keys: &[(usize, bool)]) {
    rows.sort_by(|a, b| {
        if before(a, b, keys) {
            Ordering::Less
        } else if before(b, a, keys) {
            Ordering::Greater
        } else {
            Ordering::Equal
        }
    });
}

fn before(a: &Tuple, b: &Tuple, keys: &[(usize, bool)]) -> bool {
    for &(i, desc) in keys {
        let mut o = a.1[i].cmp(&b.1[i]);
        if desc {
            o = o.reverse();
        }
        match o {
            Ordering::Less => return true,
            Ordering::Greater => return false,
            Ordering::Equal => {}
        }
    }
    a.0 < b.0
}

fn run(node: &PlanNode, catalog: &TableCatalog) -> Result<(Vec<Column>, Vec<Tuple>), String> {
    match node {
        PlanNode::Scan { table } => {
            let t = catalog.table(table).ok_or(format!("no table {table}"))?;
            let rows = t.rows.iter().map(|r| (r.key.0.clone(), r.values.clone())).collect();
            Ok((t.schema.columns.clone(), rows))
        }
        PlanNode::Filter { input, predicate } => {
            let (cols, rows) = run(input, catalog)?;
            let mut out = Vec::new();
            for t in rows {
                let mut keep = true;
                for a in &predicate.atoms {
                    if !atom_holds(&cols, &t, a)? {
                        keep = false;
                    }
                }
                if keep {
                    out.push(t);
                }
            }
            Ok((cols, out))
        }
        PlanNode::Project { input, columns } => {
            let (cols, rows) = run(input, catalog)?;
            let mut ncols = Vec::new();
            let mut idx = Vec::new();
            for c in columns {
                let i = pos(&cols, c)?;
                idx.push(i);
                ncols.push(cols[i].clone());
            }
            let rows = rows
                .into_iter()
                .map(|(k, v)| (k, idx.iter().map(|&i| v[i].clone()).collect()))
                .collect();
            Ok((ncols, rows))
        }
        PlanNode::Derive { input, name, expr } => {
            let (mut cols, rows) = run(input, catalog)?;
            let mut out = Vec::new();
            for t in rows {
                let v = expr_value(&cols, &t, expr)?;
                let (k, mut vals) = t;
                vals.push(v);
                out.push((k, vals));
            }
            cols.push(Column::new(name.clone(), expr_kind(expr)));
            Ok((cols, out))
        }
        PlanNode::Join {
            left,
            right,
            left_key,
            right_key,
        } => {
            let (lc, lrows) = run(left, catalog)?;
            let (rc, rrows) = run(right, catalog)?;
            let li = pos(&lc, left_key)?;
            let ri = pos(&rc, right_key)?;
            let mut cols = lc.clone();
            for (i, c) in rc.iter().enumerate() {
                if i == ri {
                    continue;
                }
                let taken = lc.iter().any(|l| l.name == c.name);
                let name = if taken { format!("r_{}", c.name) } else { c.name.clone() };
                cols.push(Column::new(name, c.kind));
            }
            let mut out = Vec::new();
            for l in &lrows {
                for r in &rrows {
                    if l.1[li] == r.1[ri] {
                        let mut v = l.1.clone();
                        for (i, x) in r.1.iter().enumerate() {
                            if i != ri {
                                v.push(x.clone());
                            }
                        }
                        out.push((format!("{}+{}", l.0, r.0), v));
                    }
                }
            }
            Ok((cols, out))
        }
        PlanNode::Aggregate { input, group_by, aggs } => {
            let (cols, rows) = run(input, catalog)?;
            let gi: Vec<usize> = group_by.iter().map(|g| pos(&cols, g)).collect::<Result<_, _>>()?;
            let mut sorted = rows.clone();
            // Sort by group values only; ties keep input order.
            let keys: Vec<(usize, bool)> = gi.iter().map(|&i| (i, false)).collect();
            sorted.sort_by(|a, b| {
                if group_less(a, b, &keys) {
                    Ordering::Less
                } else if group_less(b, a, &keys) {
                    Ordering::Greater
                } else {
                    Ordering::Equal
                }
            });
            let mut out_cols: Vec<Column> = gi.iter().map(|&i| cols[i].clone()).collect();
            for a in aggs {
                let kind = match (a.func, &a.column) {
                    (AggFunc::Min | AggFunc::Max, Some(c)) => cols[pos(&cols, c)?].kind,
                    _ => SemanticType::Quantitative,
                };
                let name = match (&a.alias, a.func, &a.column) {
                    (Some(al), _, _) => al.clone(),
                    (None, AggFunc::Count, _) | (None, _, None) => "count".to_string(),
                    (None, f, Some(c)) => format!("{}_{}", f.name(), c),
                };
                out_cols.push(Column::new(name, kind));
            }
            let mut out = Vec::new();
            let mut start = 0;
            while start < sorted.len() {
                let gv: Vec<Value> = gi.iter().map(|&i| sorted[start].1[i].clone()).collect();
                let mut end = start;
                while end < sorted.len() && gi.iter().map(|&i| &sorted[end].1[i]).eq(gv.iter()) {
                    end += 1;
                }
                let group = &sorted[start..end];
                let mut vals = gv.clone();
                for a in aggs {
                    let ci = match &a.column {
                        Some(c) => Some(pos(&cols, c)?),
                        None => None,
                    };
                    let v = match (a.func, ci) {
                        (AggFunc::Count, _) => Value::num(group.len() as f64),
                        (AggFunc::Sum, Some(c)) | (AggFunc::Mean, Some(c)) => {
                            let mut s = 0.0;
                            for t in group {
                                s += t.1[c].as_f64().ok_or("text in sum")?;
                            }
                            if a.func == AggFunc::Mean {
                                s /= group.len() as f64;
                            }
                            Value::num(s)
                        }
                        (AggFunc::Min, Some(c)) => {
                            let mut m = group[0].1[c].clone();
                            for t in group {
                                if t.1[c] < m {
                                    m = t.1[c].clone();
                                }
                            }
                            m
                        }
                        (AggFunc::Max, Some(c)) => {
                            let mut m = group[0].1[c].clone();
                            for t in group {
                                if t.1[c] > m {
                                    m = t.1[c].clone();
                                }
                            }
                            m
                        }
                        _ => return Err("aggregate without column".into()),
                    };
                    vals.push(v);
                }
                let label: Vec<String> = gv.iter().map(|v| v.to_string()).collect();
                out.push((format!("g:{}", label.join("|")), vals));
                start = end;
            }
            Ok((out_cols, out))
        }
        PlanNode::SortLimit { input, keys, limit } => {
            let (cols, mut rows) = run(input, catalog)?;
            let ks: Vec<(usize, bool)> = keys
                .iter()
                .map(|k| pos(&cols, &k.column).map(|i| (i, k.descending)))
                .collect::<Result<_, _>>()?;
            ordered(&mut rows, &ks);
            if let Some(n) = limit {
                rows.truncate(*n);
            }
            Ok((cols, rows))
        }
        PlanNode::Analyze { input, op } => {
            let (mut cols, mut rows) = run(input, catalog)?;
            let nums = |cols: &[Column], rows: &[Tuple], c: &str| -> Result<Vec<f64>, String> {
                let i = pos(cols, c)?;
                rows.iter().map(|t| t.1[i].as_f64().ok_or("text".to_string())).collect()
            };
            match op {
                AnalyzeOp::Topk { column, k, descending } => {
                    let i = pos(&cols, column)?;
                    ordered(&mut rows, &[(i, *descending)]);
                    rows.truncate(*k);
                }
                AnalyzeOp::PercentageOfTotal { column } => {
                    let xs = nums(&cols, &rows, column)?;
                    let mut total = 0.0;
                    for x in &xs {
                        total += x;
                    }
                    if !rows.is_empty() && total == 0.0 {
                        return Err("division by zero".into());
                    }
                    for (t, x) in rows.iter_mut().zip(xs) {
                        t.1.push(Value::num(100.0 * x / total));
                    }
                    cols.push(Column::new(format!("{column}_pct"), SemanticType::Quantitative));
                }
                AnalyzeOp::Binning { column, width } => {
                    let xs = nums(&cols, &rows, column)?;
                    for (t, x) in rows.iter_mut().zip(xs) {
                        t.1.push(Value::num((x / width).floor() * width));
                    }
                    cols.push(Column::new(format!("{column}_bin"), SemanticType::Quantitative));
                }
                AnalyzeOp::Zscore { column } => {
                    let xs = nums(&cols, &rows, column)?;
                    let n = xs.len() as f64;
                    let mut mean = 0.0;
                    for x in &xs {
                        mean += x;
                    }
                    mean /= n;
                    let mut ss = 0.0;
                    for x in &xs {
                        ss += (x - mean) * (x - mean);
                    }
                    let sd = (ss / n).sqrt();
                    if !rows.is_empty() && sd == 0.0 {
                        return Err("division by zero".into());
                    }
                    for (t, x) in rows.iter_mut().zip(xs) {
                        t.1.push(Value::num((x - mean) / sd));
                    }
                    cols.push(Column::new(format!("{column}_z"), SemanticType::Quantitative));
                }
                AnalyzeOp::Sample { n, seed } => {
                    // Only seeded samples have a defined answer.
                    let seed = seed.ok_or("unseeded sample has no reference result")?;
                    if *n < rows.len() {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        let mut picked = index::sample(&mut rng, rows.len(), *n).into_vec();
                        picked.sort_unstable();
                        rows = picked.into_iter().map(|i| rows[i].clone()).collect();
                    }
                }
            }
            Ok((cols, rows))
        }
    }
}

fn group_less(a: &Tuple, b: &Tuple, keys: &[(usize, bool)]) -> bool {
    for &(i, _) in keys {
        match a.1[i].cmp(&b.1[i]) {
            Ordering::Less => return true,
            Ordering::Greater => return false,
            Ordering::Equal => {}
        }
    }
    false
}
