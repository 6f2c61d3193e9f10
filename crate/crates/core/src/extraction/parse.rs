//! Strict parsing of the model's JSON answer into an [`ExtractionRecord`].

use std::sync::OnceLock;

use chrono::NaiveDate;
use regex::Regex;
use serde_json::{Map, Value};
use thiserror::Error;

use super::record::{DegreeOfInjury, ExtractionRecord, Sex};
use crate::taxonomy::{Taxonomy, TaxonomyError};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("answer is not JSON: {0}")]
    NotJson(String),
    #[error("field `{field}`: {reason}")]
    SchemaViolation { field: String, reason: String },
    #[error("unknown category id {0}")]
    UnknownCategory(i64),
}

impl From<TaxonomyError> for ParseError {
    fn from(e: TaxonomyError) -> Self {
        match e {
            TaxonomyError::UnknownCategory(id) => ParseError::UnknownCategory(id),
            other => ParseError::SchemaViolation {
                field: "scenario".into(),
                reason: other.to_string(),
            },
        }
    }
}

fn violation(field: &str, reason: impl Into<String>) -> ParseError {
    ParseError::SchemaViolation {
        field: field.to_string(),
        reason: reason.into(),
    }
}

const KNOWN_KEYS: &[&str] = &[
    "report_id",
    "event_date",
    "site_address",
    "naics_code",
    "age",
    "sex",
    "occupation",
    "degree_of_injury",
    "scenario",
    "scenario_ids",
    "accident_cause",
    "investigation_summary",
];

fn fence() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?s)```[A-Za-z]*[ \t]*\r?\n?(.*?)```").expect("valid pattern"))
}

/// The JSON text of a bare object answer or the first fenced code block.
pub fn json_payload(raw: &str) -> Option<&str> {
    let t = raw.trim();
    if t.starts_with('{') || t.starts_with('[') {
        return Some(t);
    }
    fence()
        .captures(t)
        .and_then(|c| c.get(1))
        .map(|m| m.as_str().trim())
}

pub fn parse_extraction_json(raw: &str, taxonomy: &Taxonomy) -> Result<ExtractionRecord, ParseError> {
    parse_extraction_json_for(raw, taxonomy, None)
}

/// Like [`parse_extraction_json`], using `report_id` when the answer omits it.
pub fn parse_extraction_json_for(
    raw: &str,
    taxonomy: &Taxonomy,
    report_id: Option<&str>,
) -> Result<ExtractionRecord, ParseError> {
    let payload = json_payload(raw).ok_or_else(|| ParseError::NotJson(snippet(raw)))?;
    let value: Value = serde_json::from_str(payload).map_err(|e| ParseError::NotJson(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| violation("<root>", "expected a JSON object"))?;
    if let Some(k) = obj.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
        return Err(violation(k, "unknown field"));
    }
    if obj.contains_key("scenario") && obj.contains_key("scenario_ids") {
        return Err(violation("scenario", "both `scenario` and `scenario_ids` given"));
    }

    let report_id = match obj.get("report_id") {
        None | Some(Value::Null) => report_id
            .map(str::to_string)
            .ok_or_else(|| violation("report_id", "missing"))?,
        Some(Value::String(s)) if !s.trim().is_empty() => s.trim().to_string(),
        Some(Value::String(_)) => match report_id {
            Some(id) => id.to_string(),
            None => return Err(violation("report_id", "empty")),
        },
        Some(other) => return Err(violation("report_id", format!("expected string, got {other}"))),
    };

    let scenario = obj.get("scenario").or_else(|| obj.get("scenario_ids"));
    let ids = scenario_ids(scenario)?;

    Ok(ExtractionRecord {
        report_id,
        event_date: event_date(obj)?,
        site_address: opt_string(obj, "site_address")?,
        naics_code: naics(obj)?,
        age: age(obj)?,
        sex: sex(obj)?,
        occupation: opt_string(obj, "occupation")?,
        degree_of_injury: match obj.get("degree_of_injury") {
            None | Some(Value::Null) => DegreeOfInjury::Unknown,
            Some(Value::String(s)) => DegreeOfInjury::normalize(s),
            Some(other) => {
                return Err(violation("degree_of_injury", format!("expected string, got {other}")))
            }
        },
        scenario_ids: taxonomy.validate_ids(&ids)?,
        accident_cause: opt_string(obj, "accident_cause")?,
        investigation_summary: opt_string(obj, "investigation_summary")?,
    })
}

fn snippet(raw: &str) -> String {
    let s: String = raw.trim().chars().take(60).collect();
    if s.is_empty() {
        "empty answer".into()
    } else {
        format!("{s:?}")
    }
}

fn opt_string(obj: &Map<String, Value>, field: &str) -> Result<Option<String>, ParseError> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => {
            let t = s.trim();
            Ok((!t.is_empty()).then(|| t.to_string()))
        }
        Some(other) => Err(violation(field, format!("expected string, got {other}"))),
    }
}

fn event_date(obj: &Map<String, Value>) -> Result<Option<NaiveDate>, ParseError> {
    let Some(s) = opt_string(obj, "event_date")? else {
        return Ok(None);
    };
    ["%m/%d/%Y", "%Y-%m-%d"]
        .iter()
        .find_map(|fmt| NaiveDate::parse_from_str(&s, fmt).ok())
        .map(Some)
        .ok_or_else(|| violation("event_date", format!("{s:?} is not M/D/YYYY or YYYY-MM-DD")))
}

fn naics(obj: &Map<String, Value>) -> Result<Option<String>, ParseError> {
    let code = match obj.get("naics_code") {
        None | Some(Value::Null) => return Ok(None),
        Some(Value::Number(n)) if n.is_u64() => n.to_string(),
        Some(Value::String(s)) if s.trim().is_empty() => return Ok(None),
        Some(Value::String(s)) => s.trim().to_string(),
        Some(other) => return Err(violation("naics_code", format!("expected digits, got {other}"))),
    };
    if code.len() < 2 || code.len() > 6 || !code.bytes().all(|b| b.is_ascii_digit()) {
        return Err(violation("naics_code", format!("{code:?} is not a 2-6 digit code")));
    }
    Ok(Some(code))
}

fn age(obj: &Map<String, Value>) -> Result<Option<u8>, ParseError> {
    let n = match obj.get("age") {
        None | Some(Value::Null) => return Ok(None),
        Some(Value::Number(n)) => n
            .as_i64()
            .ok_or_else(|| violation("age", format!("{n} is not an integer")))?,
        Some(Value::String(s)) if s.trim().is_empty() => return Ok(None),
        Some(Value::String(s)) => s
            .trim()
            .parse::<i64>()
            .map_err(|_| violation("age", format!("{s:?} is not an integer")))?,
        Some(other) => return Err(violation("age", format!("expected integer, got {other}"))),
    };
    if !ExtractionRecord::AGE_RANGE.contains(&n) {
        return Err(violation("age", format!("{n} outside 10..=100")));
    }
    Ok(Some(n as u8))
}

fn sex(obj: &Map<String, Value>) -> Result<Option<Sex>, ParseError> {
    let Some(s) = opt_string(obj, "sex")? else {
        return Ok(None);
    };
    match s.to_ascii_lowercase().as_str() {
        "m" | "male" => Ok(Some(Sex::M)),
        "f" | "female" => Ok(Some(Sex::F)),
        _ => Err(violation("sex", format!("{s:?} is not M or F"))),
    }
}

fn scenario_ids(v: Option<&Value>) -> Result<Vec<i64>, ParseError> {
    let as_id = |v: &Value| {
        v.as_i64()
            .ok_or_else(|| violation("scenario", format!("{v} is not an integer category id")))
    };
    match v {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(Value::Array(items)) => items.iter().map(as_id).collect(),
        Some(n @ Value::Number(_)) => Ok(vec![as_id(n)?]),
        Some(other) => Err(violation("scenario", format!("expected integer or array, got {other}"))),
    }
}
