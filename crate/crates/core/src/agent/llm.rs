//! Chat-completions backend. Configured from the environment:
//! `PROVFIG_LLM_URL` (an OpenAI-compatible `/v1/chat/completions` endpoint),
//! `PROVFIG_LLM_MODEL` and, optionally, `PROVFIG_LLM_KEY`.

use std::time::Duration;

use serde_json::{json, Value as Json};

use super::{BackendError, Candidate, DataContext, Expectation, IntentBackend, PlanTarget, QueryClass};
use crate::action::Action;
use crate::catalog::CatalogSchema;
use crate::chart::{Channel, ChartType, EncodingSpec, InteractionDecl, InteractionKind, Scale};
use crate::ledger::UserInputRecord;
use crate::plan::{AggFunc, AggSpec};

const CLASSIFY: &str = include_str!("../../assets/prompts/classify.txt");
const PROPOSE: &str = include_str!("../../assets/prompts/propose.txt");

#[derive(Clone, Debug)]
pub struct LlmBackend {
    url: String,
    model: String,
    key: Option<String>,
    client: reqwest::blocking::Client,
}

impl LlmBackend {
    pub fn from_env() -> Result<Self, BackendError> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        let url = var("PROVFIG_LLM_URL").ok_or_else(|| BackendError::Unavailable("PROVFIG_LLM_URL is not set".into()))?;
        let model = var("PROVFIG_LLM_MODEL").ok_or_else(|| BackendError::Unavailable("PROVFIG_LLM_MODEL is not set".into()))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        Ok(Self {
            url,
            model,
            key: var("PROVFIG_LLM_KEY"),
            client,
        })
    }

    fn chat(&self, system: &str, user: &str) -> Result<String, BackendError> {
        let body = json!({
            "model": self.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        });
        let mut req = self.client.post(&self.url).json(&body);
        if let Some(k) = &self.key {
            req = req.bearer_auth(k);
        }
        let resp = req.send().map_err(|e| BackendError::Unavailable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(BackendError::Unavailable(format!("HTTP {}", resp.status())));
        }
        let v: Json = resp.json().map_err(|e| BackendError::BadResponse(e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(Json::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::BadResponse("no message content".into()))
    }
}

fn example_candidate() -> Candidate {
    Candidate {
        target: PlanTarget::Generate,
        actions: vec![
            Action::SelectTable { table: "temps".into() },
            Action::Aggregate {
                group_by: vec!["month".into()],
                aggs: vec![AggSpec::new(AggFunc::Mean, "temp")],
            },
            Action::AddChartType {
                chart_type: ChartType::Line,
            },
            Action::AddEncoding {
                channel: Channel::X,
                encoding: EncodingSpec::new("month", Scale::Temporal),
            },
            Action::AddEncoding {
                channel: Channel::Y,
                encoding: EncodingSpec::new("mean_temp", Scale::Linear),
            },
            Action::AddParams {
                param: InteractionDecl {
                    kind: InteractionKind::Interval1d,
                    channels: vec![Channel::X],
                },
            },
        ],
        rationale: "mean temperature per month".into(),
        expect: Expectation {
            chart_type: Some(ChartType::Line),
            fields: vec!["month".into(), "mean_temp".into()],
            allow_empty: false,
        },
    }
}

fn describe_tables(schema: &CatalogSchema) -> String {
    schema
        .tables
        .iter()
        .map(|(t, s)| {
            let cols: Vec<String> = s.columns.iter().map(|c| format!("{} ({})", c.name, c.kind.as_str())).collect();
            format!("- {t}: {}", cols.join(", "))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub(crate) fn propose_prompt(ctx: &DataContext, schema: &CatalogSchema) -> String {
    let figures = serde_json::to_string(&ctx.figures).unwrap_or_default();
    let records = serde_json::to_string(&ctx.records).unwrap_or_default();
    PROPOSE
        .replace("{tables}", &describe_tables(schema))
        .replace("{figures}", &figures)
        .replace("{records}", &records)
        .replace("{example}", &serde_json::to_string(&[example_candidate()]).unwrap_or_default())
}

/// First JSON array in `text`, parsed as candidates. Tolerates code fences and prose.
pub(crate) fn parse_candidates(text: &str) -> Result<Vec<Candidate>, BackendError> {
    let start = text.find('[').ok_or_else(|| BackendError::BadResponse("no JSON array".into()))?;
    let end = text.rfind(']').ok_or_else(|| BackendError::BadResponse("no JSON array".into()))?;
    if end < start {
        return Err(BackendError::BadResponse("no JSON array".into()));
    }
    serde_json::from_str(&text[start..=end]).map_err(|e| BackendError::BadResponse(e.to_string()))
}

pub(crate) fn parse_class(text: &str) -> QueryClass {
    let t = text.to_lowercase();
    if t.contains("recommend") {
        QueryClass::RecommendationRequest
    } else if t.contains("high") {
        QueryClass::HighLevel
    } else {
        QueryClass::LowLevel
    }
}

impl IntentBackend for LlmBackend {
    fn name(&self) -> &str {
        "llm"
    }

    fn classify(&self, input: &UserInputRecord) -> Result<QueryClass, BackendError> {
        let text = input.raw_text.as_deref().unwrap_or("");
        Ok(parse_class(&self.chat(CLASSIFY, text)?))
    }

    fn propose(&self, input: &UserInputRecord, ctx: &DataContext, schema: &CatalogSchema) -> Result<Vec<Candidate>, BackendError> {
        let mut user = input.raw_text.clone().unwrap_or_default();
        if let Some(ev) = &input.interaction {
            user.push_str(&format!("\n\nGesture: {}", serde_json::to_string(ev).unwrap_or_default()));
        }
        parse_candidates(&self.chat(&propose_prompt(ctx, schema), &user)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_round_trips_through_the_parser() {
        let text = format!("```json\n{}\n```", serde_json::to_string(&[example_candidate()]).unwrap());
        assert_eq!(parse_candidates(&text).unwrap(), vec![example_candidate()]);
        assert!(parse_candidates("no idea").is_err());
        assert_eq!(parse_class("high_level"), QueryClass::HighLevel);
        assert_eq!(parse_class("recommendation"), QueryClass::RecommendationRequest);
        assert_eq!(parse_class("low_level"), QueryClass::LowLevel);
    }

    #[test]
    fn prompt_names_every_table() {
        let schema = crate::demo::demo_catalog(Default::default()).unwrap().schema();
        let p = propose_prompt(&DataContext::default(), &schema);
        for t in schema.tables.keys() {
            assert!(p.contains(t.as_str()));
        }
        assert!(!p.contains("{tables}"));
    }
}
