use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;
use serde_json::Value;
use sitehazard::gateway::Usage;

use crate::config::Config;
use crate::exit::ExitStatus;

#[derive(Debug, Serialize)]
pub struct TemplateVersions {
    pub extraction: &'static str,
    pub vision: &'static str,
    pub rulevqa: &'static str,
}

pub const TEMPLATES: TemplateVersions = TemplateVersions {
    extraction: sitehazard::extraction::TEMPLATE_VERSION,
    vision: sitehazard::vision::TEMPLATE_VERSION,
    rulevqa: sitehazard::rulevqa::TEMPLATE_VERSION,
};

/// What a command reports back for its run manifest.
#[derive(Debug, Default)]
pub struct RunLog {
    pub usage: Option<Usage>,
    pub outputs: Vec<PathBuf>,
    pub summary: Value,
}

impl RunLog {
    pub fn output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }
}

#[derive(Debug, Serialize)]
pub struct RunManifest<'a> {
    pub tool_version: &'static str,
    pub command: &'a str,
    pub args: &'a [String],
    pub config: &'a Config,
    pub parallel_build: bool,
    pub template_versions: TemplateVersions,
    pub started_at: String,
    pub finished_at: String,
    pub exit_status: ExitStatus,
    pub exit_code: u8,
    pub error: Option<String>,
    pub usage: Option<Usage>,
    pub outputs: &'a [PathBuf],
    pub summary: &'a Value,
}

pub fn timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub fn manifest_path(output_dir: &Path, command: &str) -> PathBuf {
    output_dir.join(format!("run_manifest.{command}.json"))
}

impl RunManifest<'_> {
    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, json + "\n")
    }
}
