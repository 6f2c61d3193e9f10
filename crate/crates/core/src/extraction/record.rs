use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::taxonomy::CategoryId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sex {
    M,
    F,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DegreeOfInjury {
    Fatality,
    Hospitalized,
    NonHospitalized,
    #[default]
    Unknown,
}

impl DegreeOfInjury {
    /// Maps free-text injury degrees onto the four classes; anything
    /// unrecognized becomes `Unknown`.
    pub fn normalize(text: &str) -> Self {
        let t = text.trim().to_ascii_lowercase();
        let compact: String = t.chars().filter(|c| c.is_ascii_alphabetic()).collect();
        if compact.contains("fatal") || compact.contains("death") || compact.contains("died") {
            DegreeOfInjury::Fatality
        } else if compact.contains("nonhosp") || compact.contains("nothosp") {
            DegreeOfInjury::NonHospitalized
        } else if compact.contains("hospital") {
            DegreeOfInjury::Hospitalized
        } else {
            DegreeOfInjury::Unknown
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DegreeOfInjury::Fatality => "fatality",
            DegreeOfInjury::Hospitalized => "hospitalized",
            DegreeOfInjury::NonHospitalized => "non-hospitalized",
            DegreeOfInjury::Unknown => "unknown",
        }
    }
}

/// Structured fields and scenario labels extracted from one report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub report_id: String,
    pub event_date: Option<NaiveDate>,
    pub site_address: Option<String>,
    pub naics_code: Option<String>,
    pub age: Option<u8>,
    pub sex: Option<Sex>,
    pub occupation: Option<String>,
    pub degree_of_injury: DegreeOfInjury,
    pub scenario_ids: Vec<CategoryId>,
    pub accident_cause: Option<String>,
    pub investigation_summary: Option<String>,
}

impl ExtractionRecord {
    pub const AGE_RANGE: std::ops::RangeInclusive<i64> = 10..=100;

    pub fn empty(report_id: impl Into<String>) -> Self {
        Self {
            report_id: report_id.into(),
            event_date: None,
            site_address: None,
            naics_code: None,
            age: None,
            sex: None,
            occupation: None,
            degree_of_injury: DegreeOfInjury::Unknown,
            scenario_ids: Vec::new(),
            accident_cause: None,
            investigation_summary: None,
        }
    }
}

/// Hand-assigned scenario labels for one report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLabel {
    pub report_id: String,
    pub scenario_ids: Vec<CategoryId>,
}
