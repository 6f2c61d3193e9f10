//! Text pipeline: prompt the model with one accident report, parse its JSON
//! answer into an [`ExtractionRecord`], then score and count the labels.

mod parse;
mod prompt;
mod record;
mod stats;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{Execution, REQUEST_WORKERS};
use crate::gateway::{Gateway, GatewayError, Message};
use crate::ingest::AccidentReport;
use crate::taxonomy::{Taxonomy, TaxonomyError};

pub use parse::{json_payload, parse_extraction_json, parse_extraction_json_for, ParseError};
pub use prompt::{build_extraction_prompt, correction_message, render_prompt, FIELDS, TEMPLATE_VERSION};
pub use record::{DegreeOfInjury, ExtractionRecord, GoldLabel, Sex};
pub use stats::{evaluate_accuracy, frequency_stats, AccuracyError, AccuracyReport, FrequencyStats};

/// At most one corrective retry per report.
pub const MAX_MODEL_CALLS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attempt {
    pub prompt: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractionOutcome {
    pub record: ExtractionRecord,
    pub attempts: Vec<Attempt>,
}

impl ExtractionOutcome {
    pub fn retries(&self) -> usize {
        self.attempts.len().saturating_sub(1)
    }
}

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("extraction failed for report {report_id}: {last_error}")]
    ExtractionFailed {
        report_id: String,
        last_error: ParseError,
        attempts: Vec<Attempt>,
    },
    #[error("report {report_id}: {source}")]
    Gateway {
        report_id: String,
        source: GatewayError,
        attempts: Vec<Attempt>,
    },
}

impl ExtractError {
    pub fn report_id(&self) -> &str {
        match self {
            ExtractError::ExtractionFailed { report_id, .. } | ExtractError::Gateway { report_id, .. } => {
                report_id
            }
        }
    }

    pub fn attempts(&self) -> &[Attempt] {
        match self {
            ExtractError::ExtractionFailed { attempts, .. } | ExtractError::Gateway { attempts, .. } => {
                attempts
            }
        }
    }
}

/// Prompt, send, parse; on a parse failure, one more call with the parser's
/// error appended to the conversation. The record's `report_id` is always
/// the report's inspection id.
pub fn extract(
    report: &AccidentReport,
    taxonomy: &Taxonomy,
    gateway: &Gateway,
) -> Result<ExtractionOutcome, ExtractError> {
    let mut request = build_extraction_prompt(report, taxonomy, gateway.model_name());
    let mut attempts = Vec::new();
    let mut last_error = None;
    for _ in 0..MAX_MODEL_CALLS {
        let response = match gateway.send_chat(&request) {
            Ok(r) => r,
            Err(source) => {
                return Err(ExtractError::Gateway {
                    report_id: report.inspection_id.clone(),
                    source,
                    attempts,
                })
            }
        };
        attempts.push(Attempt {
            prompt: request.prompt_text(),
            response: response.text.clone(),
        });
        match parse_extraction_json_for(&response.text, taxonomy, Some(&report.inspection_id)) {
            Ok(mut record) => {
                record.report_id = report.inspection_id.clone();
                return Ok(ExtractionOutcome { record, attempts });
            }
            Err(e) => {
                request.messages.push(Message::assistant(response.text));
                request.messages.push(Message::user(correction_message(&e.to_string())));
                last_error = Some(e);
            }
        }
    }
    Err(ExtractError::ExtractionFailed {
        report_id: report.inspection_id.clone(),
        last_error: last_error.expect("at least one attempt"),
        attempts,
    })
}

pub fn extract_all(
    reports: &[AccidentReport],
    taxonomy: &Taxonomy,
    gateway: &Gateway,
    exec: Execution,
) -> Vec<Result<ExtractionOutcome, ExtractError>> {
    exec.map_bounded(REQUEST_WORKERS, reports, |r| extract(r, taxonomy, gateway))
}

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("I/O error at {path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error("{path} line {line}: {reason}")]
    Malformed { path: PathBuf, line: usize, reason: String },
    #[error("{path} line {line}: {source}")]
    Taxonomy {
        path: PathBuf,
        line: usize,
        source: TaxonomyError,
    },
    #[error("{path}: duplicate report id {id}")]
    Duplicate { path: PathBuf, id: String },
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> OutputError + '_ {
    move |e| OutputError::Io {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

#[derive(Serialize)]
struct RawResponseFile<'a> {
    report_id: &'a str,
    template_version: &'a str,
    attempts: &'a [Attempt],
    error: Option<String>,
}

/// Writes `records.jsonl` (successes, input order) and one
/// `raw_responses/<report_id>.json` per report that reached the model.
pub fn write_outputs(
    out_dir: &Path,
    outcomes: &[Result<ExtractionOutcome, ExtractError>],
) -> Result<(), OutputError> {
    let raw_dir = out_dir.join("raw_responses");
    std::fs::create_dir_all(&raw_dir).map_err(io_err(&raw_dir))?;
    let mut lines = String::new();
    for o in outcomes {
        let (id, attempts, error) = match o {
            Ok(ok) => {
                lines.push_str(&serde_json::to_string(&ok.record).expect("record serializes"));
                lines.push('\n');
                (ok.record.report_id.as_str(), ok.attempts.as_slice(), None)
            }
            Err(e) => (e.report_id(), e.attempts(), Some(e.to_string())),
        };
        let file = RawResponseFile {
            report_id: id,
            template_version: TEMPLATE_VERSION,
            attempts,
            error,
        };
        let path = raw_dir.join(format!("{id}.json"));
        let json = serde_json::to_string_pretty(&file).expect("raw response serializes");
        std::fs::write(&path, json).map_err(io_err(&path))?;
    }
    let path = out_dir.join("records.jsonl");
    std::fs::write(&path, lines).map_err(io_err(&path))
}

pub fn read_records(path: &Path) -> Result<Vec<ExtractionRecord>, OutputError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| OutputError::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Gold CSV with header `report_id,scenario_ids`; ids are `;`-separated and
/// may be empty.
pub fn read_gold(path: &Path, taxonomy: &Taxonomy) -> Result<Vec<GoldLabel>, OutputError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_gold(&text, path, taxonomy)
}

pub fn parse_gold(text: &str, path: &Path, taxonomy: &Taxonomy) -> Result<Vec<GoldLabel>, OutputError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let malformed = |reason: String| OutputError::Malformed {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let row = row.map_err(|e| malformed(e.to_string()))?;
        let id = row.get(0).filter(|s| !s.is_empty()).ok_or_else(|| malformed("missing report_id".into()))?;
        let ids = row
            .get(1)
            .unwrap_or("")
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<i64>().map_err(|_| malformed(format!("bad category id {s:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let scenario_ids = taxonomy.validate_ids(&ids).map_err(|source| OutputError::Taxonomy {
            path: path.to_path_buf(),
            line,
            source,
        })?;
        if !seen.insert(id.to_string()) {
            return Err(OutputError::Duplicate {
                path: path.to_path_buf(),
                id: id.to_string(),
            });
        }
        out.push(GoldLabel {
            report_id: id.to_string(),
            scenario_ids,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use chrono::Utc;

    use super::*;
    use crate::gateway::{request_digest, FixtureRecord, FixtureStore, GatewayOptions};

    fn report(id: &str) -> AccidentReport {
        AccidentReport::from_text(id, format!("https://h/d?id={id}"), "Worker fell from a ladder.", Utc::now())
            .unwrap()
    }

    fn fixture(entries: Vec<(crate::gateway::ChatRequest, &str)>) -> Gateway {
        let store = FixtureStore::from_records(entries.into_iter().map(|(r, t)| FixtureRecord {
            digest: request_digest(&r),
            response_text: t.into(),
            input_tokens: 1000,
            output_tokens: 120,
        }));
        Gateway::replay(store, &GatewayOptions::default())
    }

    fn retry_request(first: &crate::gateway::ChatRequest, answer: &str, t: &Taxonomy) -> crate::gateway::ChatRequest {
        let err = parse_extraction_json_for(answer, t, Some("x")).unwrap_err();
        let mut r = first.clone();
        r.messages.push(Message::assistant(answer));
        r.messages.push(Message::user(correction_message(&err.to_string())));
        r
    }

    #[test]
    fn happy_path_no_retry() {
        let t = Taxonomy::load();
        let rep = report("1");
        let req = build_extraction_prompt(&rep, &t, "gpt-4o-mini");
        let g = fixture(vec![(req, r#"{"report_id":"1","scenario":[2]}"#)]);
        let out = extract(&rep, &t, &g).unwrap();
        assert_eq!(out.record.scenario_ids, vec![2]);
        assert_eq!(out.retries(), 0);
    }

    #[test]
    fn prose_then_json_retries_once() {
        let t = Taxonomy::load();
        let rep = report("2");
        let first = build_extraction_prompt(&rep, &t, "gpt-4o-mini");
        let prose = "The worker fell from a ladder.";
        let second = retry_request(&first, prose, &t);
        let g = fixture(vec![(first, prose), (second, r#"{"scenario":2}"#)]);
        let out = extract(&rep, &t, &g).unwrap();
        assert_eq!(out.retries(), 1);
        assert_eq!(out.record.report_id, "2");
    }

    #[test]
    fn two_prose_answers_fail() {
        let t = Taxonomy::load();
        let rep = report("3");
        let first = build_extraction_prompt(&rep, &t, "gpt-4o-mini");
        let prose = "Sorry, I can't.";
        let second = retry_request(&first, prose, &t);
        let g = fixture(vec![(first, prose), (second, "Still no.")]);
        match extract(&rep, &t, &g) {
            Err(ExtractError::ExtractionFailed { attempts, last_error, .. }) => {
                assert_eq!(attempts.len(), MAX_MODEL_CALLS);
                assert!(matches!(last_error, ParseError::NotJson(_)));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(g.usage().requests, 2);
    }

    #[test]
    fn outputs_written() {
        let t = Taxonomy::load();
        let rep = report("4");
        let req = build_extraction_prompt(&rep, &t, "gpt-4o-mini");
        let g = fixture(vec![(req, r#"{"scenario":[1]}"#)]);
        let outcomes = extract_all(&[rep, report("5")], &t, &g, Execution::Sequential);
        let dir = tempfile::tempdir().unwrap();
        write_outputs(dir.path(), &outcomes).unwrap();
        let records = read_records(&dir.path().join("records.jsonl")).unwrap();
        assert_eq!(records.len(), 1);
        assert!(dir.path().join("raw_responses/4.json").exists());
        // report 5 missed the fixture before any model text existed
        let raw5 = std::fs::read_to_string(dir.path().join("raw_responses/5.json")).unwrap();
        assert!(raw5.contains("no fixture entry"));
    }

    #[test]
    fn gold_csv() {
        let t = Taxonomy::load();
        let p = Path::new("gold.csv");
        let g = parse_gold("report_id,scenario_ids\n1,7;2\n2,\n3, 5 \n", p, &t).unwrap();
        assert_eq!(g[0].scenario_ids, vec![7, 2]);
        assert!(g[1].scenario_ids.is_empty());
        assert_eq!(g[2].scenario_ids, vec![5]);
        assert!(matches!(
            parse_gold("report_id,scenario_ids\n1,99\n", p, &t),
            Err(OutputError::Taxonomy { line: 2, .. })
        ));
        assert!(matches!(
            parse_gold("report_id,scenario_ids\n1,1\n1,2\n", p, &t),
            Err(OutputError::Duplicate { .. })
        ));
        assert!(matches!(
            parse_gold("report_id,scenario_ids\n1,x\n", p, &t),
            Err(OutputError::Malformed { .. })
        ));
    }
}
