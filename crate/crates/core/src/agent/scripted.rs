//! Deterministic backend for tests and robustness trials. Its answer depends only
//! on the fault mode and the loop round.

use serde::{Deserialize, Serialize};

use super::{BackendError, Candidate, DataContext, Expectation, IntentBackend, PlanTarget, QueryClass};
use crate::action::{Action, MAX_PLAN_ACTIONS};
use crate::catalog::CatalogSchema;
use crate::chart::{Channel, ChartType, EncodingSpec, InteractionDecl, InteractionKind, Scale};
use crate::ledger::UserInputRecord;
use crate::plan::{AggFunc, AggSpec};
use crate::predicate::{Atom, CmpOp, Predicate};
use crate::value::{SemanticType, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultMode {
    /// A valid plan every round.
    Valid,
    /// First round names a column that does not exist; later rounds are valid.
    InvalidColumnFirst,
    /// First round exceeds the action limit; later rounds are valid.
    OversizedPlan,
    /// First round filters everything out; later rounds are valid.
    EmptyResultFirst,
    /// First round draws the wrong chart type; later rounds are valid.
    WrongChartFirst,
    /// Every round proposes the same invalid plan.
    AlwaysFail,
    /// Every call errors.
    Unavailable,
}

impl FaultMode {
    pub const ALL: [FaultMode; 7] = [
        FaultMode::Valid,
        FaultMode::InvalidColumnFirst,
        FaultMode::OversizedPlan,
        FaultMode::EmptyResultFirst,
        FaultMode::WrongChartFirst,
        FaultMode::AlwaysFail,
        FaultMode::Unavailable,
    ];

    /// True if a loop with enough budget should end with a figure.
    pub fn recoverable(self) -> bool {
        !matches!(self, FaultMode::AlwaysFail | FaultMode::Unavailable)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScriptedBackend {
    pub mode: FaultMode,
    /// Fixed per-round proposals. When non-empty it replaces the fault script;
    /// rounds past the end reuse the last entry.
    pub rounds: Vec<Vec<Candidate>>,
}

impl ScriptedBackend {
    pub fn new(mode: FaultMode) -> Self {
        Self { mode, rounds: Vec::new() }
    }

    pub fn with_rounds(rounds: Vec<Vec<Candidate>>) -> Self {
        Self {
            mode: FaultMode::Valid,
            rounds,
        }
    }
}

/// A bar chart of the mean of the first quantitative column by the first nominal
/// column of the first table that has both.
fn baseline(schema: &CatalogSchema) -> Option<(String, String, String)> {
    schema.tables.iter().find_map(|(t, s)| {
        let d = s.columns.iter().find(|c| c.kind == SemanticType::Nominal)?;
        let m = s.columns.iter().find(|c| c.kind == SemanticType::Quantitative)?;
        Some((t.clone(), d.name.clone(), m.name.clone()))
    })
}

fn bar(table: &str, dim: &str, measure: &str, chart: ChartType, filter: Option<Predicate>) -> Vec<Action> {
    let agg = AggSpec::new(AggFunc::Mean, measure);
    let out = agg.output_name();
    let mut steps = vec![Action::SelectTable { table: table.into() }];
    if let Some(p) = filter {
        steps.push(Action::FilterRows { predicate: p });
    }
    steps.push(Action::Aggregate {
        group_by: vec![dim.into()],
        aggs: vec![agg],
    });
    steps.push(Action::AddChartType { chart_type: chart });
    let (a, b) = if chart == ChartType::Pie {
        (Channel::Color, Channel::Theta)
    } else {
        (Channel::X, Channel::Y)
    };
    steps.push(Action::AddEncoding {
        channel: a,
        encoding: EncodingSpec::new(dim, Scale::Ordinal),
    });
    steps.push(Action::AddEncoding {
        channel: b,
        encoding: EncodingSpec::new(out, Scale::Linear),
    });
    steps.push(Action::AddParams {
        param: InteractionDecl::new(InteractionKind::SingleSelect, vec![a]),
    });
    steps
}

impl IntentBackend for ScriptedBackend {
    fn name(&self) -> &str {
        "scripted"
    }

    fn classify(&self, _input: &UserInputRecord) -> Result<QueryClass, BackendError> {
        match self.mode {
            FaultMode::Unavailable => Err(BackendError::Unavailable("scripted outage".into())),
            _ => Ok(QueryClass::LowLevel),
        }
    }

    fn propose(
        &self,
        _input: &UserInputRecord,
        ctx: &DataContext,
        schema: &CatalogSchema,
    ) -> Result<Vec<Candidate>, BackendError> {
        if !self.rounds.is_empty() {
            let i = ctx.round.min(self.rounds.len() - 1);
            return Ok(self.rounds[i].clone());
        }
        if self.mode == FaultMode::Unavailable {
            return Err(BackendError::Unavailable("scripted outage".into()));
        }
        let Some((t, d, m)) = baseline(schema) else {
            return Ok(vec![]);
        };
        let expect = Expectation {
            chart_type: Some(ChartType::Bar),
            fields: vec![d.clone(), format!("mean_{m}")],
            allow_empty: false,
        };
        let cand = |actions, why: &str| Candidate {
            target: PlanTarget::Generate,
            actions,
            rationale: why.into(),
            expect: expect.clone(),
        };
        let valid = cand(bar(&t, &d, &m, ChartType::Bar, None), "mean by category");
        let first = ctx.round == 0;
        let out = match self.mode {
            FaultMode::Valid => valid,
            FaultMode::InvalidColumnFirst if first => cand(bar(&t, &d, "no_such_column", ChartType::Bar, None), "typo"),
            FaultMode::OversizedPlan if first => {
                let mut steps = vec![Action::SelectTable { table: t.clone() }];
                steps.extend((0..MAX_PLAN_ACTIONS).map(|_| Action::SelectColumns {
                    columns: vec![d.clone(), m.clone()],
                }));
                cand(steps, "oversized")
            }
            FaultMode::EmptyResultFirst if first => {
                let p = Predicate::new(vec![Atom::cmp(m.clone(), CmpOp::Gt, Value::num(f64::MAX))]);
                cand(bar(&t, &d, &m, ChartType::Bar, Some(p)), "over-filtered")
            }
            FaultMode::WrongChartFirst if first => cand(bar(&t, &d, &m, ChartType::Pie, None), "wrong chart"),
            FaultMode::AlwaysFail => cand(bar(&t, &d, "no_such_column", ChartType::Bar, None), "typo"),
            _ => valid,
        };
        Ok(vec![out])
    }
}
