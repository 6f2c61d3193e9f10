//! Yes/no safety-rule benchmark over labelled images, with single-prompt or
//! ten-prompt majority-vote modes.

mod manifest;
mod metrics;
mod prompts;
mod vote;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{Execution, REQUEST_WORKERS};
use crate::gateway::{ChatRequest, Gateway, GatewayError, Message};
use crate::vision::PreparedImage;

pub use manifest::{load_manifest, parse_manifest, ManifestError, VqaSample, MANIFEST_HEADER};
pub use metrics::{compute_metrics, f1_score, report_table, Metrics, Table, TableRow};
pub use prompts::{
    build_prompt_set, find_rule, known_rules, normalize_answer, AnswerOutcome, PromptSet, SafetyRule,
    PPE_TEMPLATES, RULE_LINE, TEMPLATE_VERSION,
};
pub use vote::{majority_vote, VoteError, VoteResult};

pub const DEFAULT_PROMPT_INDEX: usize = 1;
const ANSWER_TOKENS: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "prompt_index")]
pub enum Mode {
    /// One prompt, by its 1-based index.
    Single(usize),
    Ensemble,
}

impl Default for Mode {
    fn default() -> Self {
        Mode::Single(DEFAULT_PROMPT_INDEX)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Single(i) => write!(f, "single({i})"),
            Mode::Ensemble => f.write_str("ensemble"),
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "single" => Ok(Mode::default()),
            "ensemble" => Ok(Mode::Ensemble),
            other => Err(format!("unknown mode {other:?}; expected single or ensemble")),
        }
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("prompt index {index} out of range 1..={len}")]
    PromptIndex { index: usize, len: usize },
    #[error("sample {sample_id} uses rule {rule_id}, but the benchmark runs rule {expected}")]
    RuleMismatch {
        sample_id: String,
        rule_id: String,
        expected: String,
    },
    #[error("I/O error at {path}: {reason}")]
    Io { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleStatus {
    Ok,
    Failed,
}

/// Everything recorded for one sample; one line of `results.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub sample_id: String,
    pub gold: bool,
    pub status: SampleStatus,
    pub prompt_indices: Vec<usize>,
    pub responses: Vec<String>,
    pub outcomes: Vec<AnswerOutcome>,
    pub vote: Option<VoteResult>,
    /// Predicted violation; absent for failed samples.
    pub decision: Option<bool>,
    /// Every answer was invalid and the sample was scored as "no".
    pub flagged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub rule: SafetyRule,
    pub mode: Mode,
    pub results: Vec<SampleResult>,
    pub metrics: Metrics,
    pub failed: usize,
    pub flagged: usize,
}

/// Confusion counts recomputed from per-sample decisions; failed samples
/// are skipped.
pub fn confusion(results: &[SampleResult]) -> Metrics {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for r in results {
        match (r.decision, r.gold) {
            (Some(true), true) => tp += 1,
            (Some(true), false) => fp += 1,
            (Some(false), true) => fn_ += 1,
            (Some(false), false) => tn += 1,
            (None, _) => {}
        }
    }
    compute_metrics(tp, fp, fn_, tn)
}

fn failed(sample: &VqaSample, indices: Vec<usize>, error: String) -> SampleResult {
    SampleResult {
        sample_id: sample.sample_id.clone(),
        gold: sample.gold_violation,
        status: SampleStatus::Failed,
        prompt_indices: indices,
        responses: Vec::new(),
        outcomes: Vec::new(),
        vote: None,
        decision: None,
        flagged: false,
        error: Some(error),
    }
}

fn evaluate_sample(
    sample: &VqaSample,
    prompts: &PromptSet,
    indices: &[usize],
    gateway: &Gateway,
    exec: Execution,
) -> SampleResult {
    let image = match fs::read(&sample.image_path)
        .map_err(|e| e.to_string())
        .and_then(|b| PreparedImage::decode(&b).map_err(|e| e.to_string()))
    {
        Ok(img) => img,
        Err(e) => return failed(sample, indices.to_vec(), format!("image: {e}")),
    };
    let replies: Vec<Result<String, GatewayError>> = exec.map(indices, |&i| {
        let prompt = prompts.prompt(i).expect("index checked by evaluate");
        let request = ChatRequest::new(
            gateway.model_name(),
            vec![Message::user_with_image(prompt, image.bytes.clone(), image.media_type)],
        )
        .with_max_output_tokens(ANSWER_TOKENS);
        gateway.send_chat(&request).map(|r| r.text)
    });
    let mut responses = Vec::with_capacity(replies.len());
    for r in replies {
        match r {
            Ok(text) => responses.push(text),
            Err(e) => return failed(sample, indices.to_vec(), e.to_string()),
        }
    }
    let outcomes: Vec<AnswerOutcome> = responses.iter().map(|r| normalize_answer(r)).collect();
    let (vote, decision, flagged) = match majority_vote(&outcomes) {
        Ok(v) => (Some(v), v.decision, false),
        Err(_) => (None, false, true),
    };
    SampleResult {
        sample_id: sample.sample_id.clone(),
        gold: sample.gold_violation,
        status: SampleStatus::Ok,
        prompt_indices: indices.to_vec(),
        responses,
        outcomes,
        vote,
        decision: Some(decision),
        flagged,
        error: None,
    }
}

/// Runs every sample in `mode`. A sample whose requests fail is recorded as
/// failed and left out of the metrics; a sample with no valid answer counts
/// as "no violation" and is flagged.
pub fn evaluate(
    samples: &[VqaSample],
    rule: &SafetyRule,
    mode: Mode,
    gateway: &Gateway,
    exec: Execution,
) -> Result<Evaluation, BenchError> {
    let prompts = build_prompt_set(rule);
    let indices: Vec<usize> = match mode {
        Mode::Single(i) if (1..=prompts.len()).contains(&i) => vec![i],
        Mode::Single(index) => {
            return Err(BenchError::PromptIndex {
                index,
                len: prompts.len(),
            })
        }
        Mode::Ensemble => (1..=prompts.len()).collect(),
    };
    if let Some(s) = samples.iter().find(|s| s.rule_id != rule.rule_id) {
        return Err(BenchError::RuleMismatch {
            sample_id: s.sample_id.clone(),
            rule_id: s.rule_id.clone(),
            expected: rule.rule_id.clone(),
        });
    }
    let results = exec.map_bounded(REQUEST_WORKERS, samples, |s| evaluate_sample(s, &prompts, &indices, gateway, exec));
    let metrics = confusion(&results);
    Ok(Evaluation {
        rule: rule.clone(),
        mode,
        failed: results.iter().filter(|r| r.status == SampleStatus::Failed).count(),
        flagged: results.iter().filter(|r| r.flagged).count(),
        results,
        metrics,
    })
}

/// Reads `results.jsonl` back.
pub fn read_results(path: &Path) -> Result<Vec<SampleResult>, BenchError> {
    let io = |reason: String| BenchError::Io {
        path: path.to_path_buf(),
        reason,
    };
    let text = fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| io(format!("line {}: {e}", i + 1))))
        .collect()
}

impl Evaluation {
    pub fn results_jsonl(&self) -> String {
        self.results
            .iter()
            .map(|r| serde_json::to_string(r).expect("serializable") + "\n")
            .collect()
    }

    /// Writes `results.jsonl`, `metrics.csv`, `metrics.json` and `table.txt`.
    /// `extra_rows` are appended to the table after this run's row.
    pub fn write_outputs(&self, dir: &Path, model: &str, extra_rows: &[TableRow]) -> Result<Table, BenchError> {
        let write = |name: &str, body: &str| {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| BenchError::Io {
                path,
                reason: e.to_string(),
            })
        };
        fs::create_dir_all(dir).map_err(|e| BenchError::Io {
            path: dir.to_path_buf(),
            reason: e.to_string(),
        })?;
        let mut rows = vec![TableRow::from_metrics(format!("{model} {}", self.mode), &self.metrics)];
        rows.extend_from_slice(extra_rows);
        let table = report_table(&rows);
        write("results.jsonl", &self.results_jsonl())?;
        write("metrics.csv", &table.csv)?;
        let summary = serde_json::json!({
            "rule_id": self.rule.rule_id,
            "mode": self.mode,
            "template_version": TEMPLATE_VERSION,
            "metrics": self.metrics,
            "evaluated": self.metrics.total(),
            "failed": self.failed,
            "flagged": self.flagged,
        });
        write("metrics.json", &(serde_json::to_string_pretty(&summary).expect("serializable") + "\n"))?;
        let mut text = table.text.clone();
        for f in &table.flags {
            text.push_str(&format!("warning: {f}\n"));
        }
        write("table.txt", &text)?;
        Ok(table)
    }
}
