//! Prompt templates for the four stages and parsers for their answers.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::geometry::{GeometryError, RatioBBox};
use crate::extraction::json_payload;
use crate::taxonomy::{CategoryId, Taxonomy};

pub const TEMPLATE_VERSION: &str = "vision-v1";

pub const DESCRIBE_PROMPT: &str = "You are a construction safety inspector reviewing a \
photograph of a construction site. Describe the scene in detailed and technical terms: \
the workers (how many, where they stand, posture, personal protective equipment), \
equipment and tools, suspended or moving loads, materials, structures, openings, edges \
and elevations, ongoing activities, and environmental conditions. Describe only what is \
visible in the image and state positions (left, right, foreground, background) explicitly.";

pub const NO_SCENARIOS: &str = "No plausible accident scenarios.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneDescription {
    pub image_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub narrative: String,
    pub category_id: Option<CategoryId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioPrediction {
    pub scenarios: Vec<Scenario>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HazardFinding {
    pub object_label: String,
    pub category_id: CategoryId,
    pub rationale: String,
}

pub fn predict_prompt(description: &str) -> String {
    format!(
        "Below is a technical description of a construction site photograph.\n\n\
         Description:\n<<<\n{description}\n>>>\n\n\
         Think like a safety inspector. Using the interactions between the objects, their \
         spatial layout and the human activity described, infer the accident scenarios that \
         could plausibly happen at this site, such as unsafe configurations or workers too \
         close to a hazard. Write each scenario as one numbered line naming the object \
         involved and how the accident would occur. If the scene shows no plausible \
         accident, answer exactly: {NO_SCENARIOS}"
    )
}

pub fn filter_prompt(prediction_text: &str, taxonomy: &Taxonomy) -> String {
    format!(
        "Accident scenarios predicted for a construction site photograph:\n<<<\n{prediction_text}\n>>>\n\n\
         Hazard categories:\n{}\n\
         Keep only the scenarios whose hazard is high severity and is tied to one specific \
         object that is clearly visible in the photograph and could be boxed. For each one, \
         pick the single best matching category number from the list above. Answer with a \
         JSON array inside a ```json fenced block; each element must be \
         {{\"object\": \"<visible object>\", \"category_id\": <number>, \"rationale\": \"<one sentence>\"}}. \
         Answer [] if nothing qualifies.",
        taxonomy.render_numbered()
    )
}

pub fn localize_prompt(finding: &HazardFinding, category_name: &str) -> String {
    format!(
        "Locate this object in the construction site photograph: {}\n\
         Hazard: {category_name}. {}\n\n\
         Give the object's bounding box in ratio format: the center (cx, cy) and size (w, h) \
         as fractions of the image width and height, each between 0 and 1, with (0, 0) at \
         the top-left corner. Answer with only a fenced JSON block: \
         ```json\n{{\"cx\": 0.0, \"cy\": 0.0, \"w\": 0.0, \"h\": 0.0}}\n```",
        finding.object_label, finding.rationale
    )
}

pub fn localize_correction(error: &str) -> String {
    format!(
        "That answer could not be used: {error}. Reply with only a fenced JSON block holding \
         four numbers between 0 and 1 with positive width and height: \
         ```json\n{{\"cx\": 0.0, \"cy\": 0.0, \"w\": 0.0, \"h\": 0.0}}\n```"
    )
}

pub fn refine_prompt(finding: &HazardFinding) -> String {
    format!(
        "This image is a zoomed crop around your earlier detection of: {}. Your box is \
         drawn in red. If the red box tightly encloses the object, answer exactly CONFIRM. \
         Otherwise answer with only a fenced JSON block giving the corrected box in ratio \
         format relative to this crop: \
         ```json\n{{\"cx\": 0.0, \"cy\": 0.0, \"w\": 0.0, \"h\": 0.0}}\n```",
        finding.object_label
    )
}

fn list_item() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:\d+[.):]|[-*•])\s+(.+?)\s*$").expect("valid pattern"))
}

fn category_hint() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\bcategory\s*(?:id\s*)?[#:]?\s*(\d+)").expect("valid pattern"))
}

fn nothing_found() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^\s*(?:no\b.*\b(?:scenarios?|hazards?|accidents?)\b|none)[.!]?\s*$")
            .expect("valid pattern")
    })
}

/// `None` when the text is neither a list nor an explicit "nothing found".
pub fn parse_scenarios(text: &str) -> Option<ScenarioPrediction> {
    let scenarios: Vec<Scenario> = text
        .lines()
        .filter_map(|l| list_item().captures(l))
        .map(|c| {
            let narrative = c[1].trim_matches(|ch: char| ch == '*').trim().to_string();
            let category_id = category_hint()
                .captures(&narrative)
                .and_then(|h| h[1].parse().ok());
            Scenario { narrative, category_id }
        })
        .filter(|s| !s.narrative.is_empty())
        .collect();
    if !scenarios.is_empty() {
        return Some(ScenarioPrediction { scenarios });
    }
    nothing_found()
        .is_match(text.trim())
        .then(ScenarioPrediction::default)
}

/// Valid findings plus one warning per dropped element.
pub fn parse_findings(text: &str, taxonomy: &Taxonomy) -> (Vec<HazardFinding>, Vec<String>) {
    let mut warnings = Vec::new();
    let value = json_payload(text).and_then(|p| serde_json::from_str::<Value>(p).ok());
    let items = match value {
        Some(Value::Array(items)) => items,
        Some(obj @ Value::Object(_)) => vec![obj],
        _ => {
            warnings.push("filter answer is not a JSON array; no findings kept".to_string());
            return (Vec::new(), warnings);
        }
    };
    let mut findings = Vec::new();
    for (i, item) in items.iter().enumerate() {
        match finding_from(item, taxonomy) {
            Ok(f) => findings.push(f),
            Err(reason) => warnings.push(format!("dropped finding {}: {reason}", i + 1)),
        }
    }
    (findings, warnings)
}

fn finding_from(item: &Value, taxonomy: &Taxonomy) -> Result<HazardFinding, String> {
    let obj = item.as_object().ok_or("not a JSON object")?;
    let label = obj
        .get("object")
        .or_else(|| obj.get("object_label"))
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .ok_or("missing object")?;
    let raw_id = obj
        .get("category_id")
        .or_else(|| obj.get("category"))
        .ok_or("missing category_id")?;
    let id = match raw_id {
        Value::Number(n) => n.as_i64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
    .ok_or_else(|| format!("category_id {raw_id} is not an integer"))?;
    let category = taxonomy.resolve(id).map_err(|e| e.to_string())?;
    let rationale = obj
        .get("rationale")
        .and_then(Value::as_str)
        .unwrap_or("")
        .trim()
        .to_string();
    Ok(HazardFinding {
        object_label: label.to_string(),
        category_id: category.id,
        rationale,
    })
}

/// Four ratio numbers from a fenced or bare JSON object, clamped.
pub fn parse_bbox(text: &str) -> Result<RatioBBox, String> {
    let payload = json_payload(text).ok_or("no JSON object in answer")?;
    let value: Value = serde_json::from_str(payload).map_err(|e| format!("invalid JSON: {e}"))?;
    let obj = value.as_object().ok_or("expected a JSON object")?;
    let num = |k: &str| {
        obj.get(k)
            .and_then(Value::as_f64)
            .ok_or_else(|| format!("`{k}` missing or not a number"))
    };
    let (cx, cy, w, h) = (num("cx")?, num("cy")?, num("w")?, num("h")?);
    RatioBBox::clamped(cx, cy, w, h).map_err(|e: GeometryError| e.to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub enum RefineAnswer {
    Confirm,
    /// Crop-relative box, already clamped to the crop.
    Corrected(RatioBBox),
    Unparsable(String),
}

pub fn parse_refinement(text: &str) -> RefineAnswer {
    let first = text
        .split_whitespace()
        .next()
        .unwrap_or("")
        .trim_matches(|c: char| !c.is_ascii_alphanumeric())
        .to_ascii_lowercase();
    if first == "confirm" || first == "confirmed" {
        return RefineAnswer::Confirm;
    }
    match parse_bbox(text) {
        Ok(b) => RefineAnswer::Corrected(b),
        Err(e) => RefineAnswer::Unparsable(e),
    }
}
