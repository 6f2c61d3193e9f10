use std::collections::{BTreeMap, HashMap, HashSet};

use chrono::Datelike;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::record::{ExtractionRecord, GoldLabel};
use crate::taxonomy::{CategoryId, FamilyId, Taxonomy};

/// Label-level counts: a record labelled with two categories of the same
/// family adds two to that family. Records without labels are counted in
/// `total_reports` and `unclassified` only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyStats {
    pub total_reports: usize,
    pub unclassified: usize,
    pub per_category: BTreeMap<CategoryId, usize>,
    pub per_family: BTreeMap<FamilyId, usize>,
    /// Classified records per event year; undated records under `"unknown"`.
    pub per_year: BTreeMap<String, usize>,
}

pub fn frequency_stats(records: &[ExtractionRecord], taxonomy: &Taxonomy) -> FrequencyStats {
    let mut per_category: BTreeMap<CategoryId, usize> =
        taxonomy.categories().iter().map(|c| (c.id, 0)).collect();
    let mut per_family: BTreeMap<FamilyId, usize> =
        taxonomy.families().iter().map(|f| (f.id, 0)).collect();
    let mut per_year = BTreeMap::new();
    let mut unclassified = 0;
    for r in records {
        if r.scenario_ids.is_empty() {
            unclassified += 1;
            continue;
        }
        let distinct: HashSet<_> = r.scenario_ids.iter().copied().collect();
        for id in distinct {
            let Ok(cat) = taxonomy.resolve(id as i64) else {
                log::warn!("record {} has unknown category {id}; skipped", r.report_id);
                continue;
            };
            *per_category.entry(cat.id).or_default() += 1;
            *per_family.entry(cat.family_id).or_default() += 1;
        }
        let year = r
            .event_date
            .map(|d| d.year().to_string())
            .unwrap_or_else(|| "unknown".to_string());
        *per_year.entry(year).or_default() += 1;
    }
    FrequencyStats {
        total_reports: records.len(),
        unclassified,
        per_category,
        per_family,
        per_year,
    }
}

impl FrequencyStats {
    /// `category_id,family,name,count` rows in category order.
    pub fn to_csv(&self, taxonomy: &Taxonomy) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["category_id", "family", "name", "count"])
            .expect("in-memory write");
        for c in taxonomy.categories() {
            let fam = taxonomy.family(c.family_id).map(|f| f.name.as_str()).unwrap_or("");
            let n = self.per_category.get(&c.id).copied().unwrap_or(0);
            w.write_record([c.id.to_string(), fam.to_string(), c.name.clone(), n.to_string()])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8 csv")
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum AccuracyError {
    #[error("gold set is empty")]
    EmptyGold,
    #[error("duplicate gold report id {0}")]
    DuplicateGold(String),
    #[error("duplicate extraction record for report {0}")]
    DuplicateRecord(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyReport {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    /// Gold ids whose record was missing or whose label set differed, sorted.
    pub wrong: Vec<String>,
}

/// Exact label-set match per gold report; a missing record counts as wrong.
pub fn evaluate_accuracy(
    records: &[ExtractionRecord],
    gold: &[GoldLabel],
) -> Result<AccuracyReport, AccuracyError> {
    if gold.is_empty() {
        return Err(AccuracyError::EmptyGold);
    }
    let mut by_id: HashMap<&str, HashSet<CategoryId>> = HashMap::new();
    for r in records {
        if by_id
            .insert(&r.report_id, r.scenario_ids.iter().copied().collect())
            .is_some()
        {
            return Err(AccuracyError::DuplicateRecord(r.report_id.clone()));
        }
    }
    let mut seen = HashSet::new();
    let mut wrong = Vec::new();
    for g in gold {
        if !seen.insert(g.report_id.as_str()) {
            return Err(AccuracyError::DuplicateGold(g.report_id.clone()));
        }
        let want: HashSet<CategoryId> = g.scenario_ids.iter().copied().collect();
        if by_id.get(g.report_id.as_str()) != Some(&want) {
            wrong.push(g.report_id.clone());
        }
    }
    wrong.sort();
    let correct = gold.len() - wrong.len();
    Ok(AccuracyReport {
        correct,
        total: gold.len(),
        accuracy: correct as f64 / gold.len() as f64,
        wrong,
    })
}
