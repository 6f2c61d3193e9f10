use crate::gateway::{ChatRequest, Message};
use crate::ingest::AccidentReport;
use crate::taxonomy::Taxonomy;

/// Stored alongside every output produced with this template.
pub const TEMPLATE_VERSION: &str = "extraction-v1";

/// JSON keys the model must emit, with their definitions.
pub const FIELDS: &[(&str, &str)] = &[
    ("report_id", "the inspection id given above, copied exactly"),
    ("event_date", "date of the incident as M/D/YYYY, or null if not stated"),
    ("site_address", "street address of the worksite, or null"),
    ("naics_code", "NAICS industry code as a string of digits, or null"),
    ("age", "age of the injured employee as an integer, or null"),
    ("sex", "\"M\" or \"F\", or null"),
    ("occupation", "occupation of the injured employee, or null"),
    (
        "degree_of_injury",
        "one of \"Fatality\", \"Hospitalized injury\", \"Non-hospitalized injury\", or \"Unknown\"",
    ),
    (
        "scenario",
        "array of one or more accident scenario category numbers from the list below; [] if none applies",
    ),
    ("accident_cause", "one sentence stating the direct cause of the accident, or null"),
    ("investigation_summary", "two or three sentence summary of the investigation narrative, or null"),
];

const INTRO: &str = "You are a construction safety analyst. Read the OSHA accident \
inspection report below and extract the requested fields.\n\n";

const OUTRO: &str = "Answer with exactly one JSON object containing all of the fields above \
and nothing else: no prose, no explanation, no extra keys.";

/// Renders the extraction prompt as a single user message.
pub fn build_extraction_prompt(report: &AccidentReport, taxonomy: &Taxonomy, model: &str) -> ChatRequest {
    ChatRequest::new(model, vec![Message::user(render_prompt(report, taxonomy))])
}

pub fn render_prompt(report: &AccidentReport, taxonomy: &Taxonomy) -> String {
    let mut p = String::from(INTRO);
    p.push_str("Fields (JSON key: definition):\n");
    for (key, def) in FIELDS {
        p.push_str(&format!("- {key}: {def}\n"));
    }
    p.push_str("\nAccident scenario categories:\n");
    p.push_str(&taxonomy.render_numbered());
    p.push_str(&format!("\nInspection id: {}\nReport text:\n<<<\n", report.inspection_id));
    p.push_str(&report.raw_text);
    p.push_str("\n>>>\n\n");
    p.push_str(OUTRO);
    p
}

/// Follow-up turn asking the model to fix an unparsable answer.
pub fn correction_message(error: &str) -> String {
    format!(
        "Your previous answer could not be used: {error}. {OUTRO} Use only the keys listed \
         above and only category numbers from the list."
    )
}
