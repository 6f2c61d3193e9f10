use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::prompts::find_rule;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VqaSample {
    pub sample_id: String,
    pub image_path: PathBuf,
    pub rule_id: String,
    pub gold_violation: bool,
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error("image for sample {sample_id} not found at {path}")]
    MissingImage { sample_id: String, path: PathBuf },
    #[error("duplicate sample id {0}")]
    DuplicateSample(String),
    #[error("manifest line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("manifest line {line}: unknown rule {rule_id}")]
    UnknownRule { line: u64, rule_id: String },
}

pub const MANIFEST_HEADER: [&str; 4] = ["sample_id", "image_path", "rule_id", "gold"];

fn parse_gold(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "yes" | "true" | "1" => Some(true),
        "no" | "false" | "0" => Some(false),
        _ => None,
    }
}

/// Reads `sample_id,image_path,rule_id,gold` rows. Image paths are relative
/// to the manifest's directory; a header row is optional.
pub fn load_manifest(path: &Path) -> Result<Vec<VqaSample>, ManifestError> {
    let text = std::fs::read_to_string(path).map_err(|e| ManifestError::Io {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<Vec<VqaSample>, ManifestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut seen = HashSet::new();
    let mut samples = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| ManifestError::MalformedRow {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(i as u64 + 1);
        if i == 0 && row.iter().eq(MANIFEST_HEADER.iter().copied()) {
            continue;
        }
        if row.len() != 4 {
            return Err(ManifestError::MalformedRow {
                line,
                reason: format!("expected 4 columns, found {}", row.len()),
            });
        }
        let (id, image, rule_id, gold) = (&row[0], &row[1], &row[2], &row[3]);
        if id.is_empty() || image.is_empty() {
            return Err(ManifestError::MalformedRow {
                line,
                reason: "empty sample id or image path".into(),
            });
        }
        let gold_violation = parse_gold(gold).ok_or_else(|| ManifestError::MalformedRow {
            line,
            reason: format!("gold {gold:?} is not yes/no/true/false/1/0"),
        })?;
        if find_rule(rule_id).is_none() {
            return Err(ManifestError::UnknownRule {
                line,
                rule_id: rule_id.to_string(),
            });
        }
        if !seen.insert(id.to_string()) {
            return Err(ManifestError::DuplicateSample(id.to_string()));
        }
        let image_path = base_dir.join(image);
        if !image_path.is_file() {
            return Err(ManifestError::MissingImage {
                sample_id: id.to_string(),
                path: image_path,
            });
        }
        samples.push(VqaSample {
            sample_id: id.to_string(),
            image_path,
            rule_id: rule_id.to_string(),
            gold_violation,
        });
    }
    Ok(samples)
}
