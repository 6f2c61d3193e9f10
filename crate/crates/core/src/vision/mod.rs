//! Vision pipeline: describe the scene, predict accident scenarios, keep the
//! high-risk localizable ones, then box each hazard and review the box on a
//! zoomed crop.

pub mod geometry;
mod raster;
mod render;
mod stages;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use image::Rgba;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{Execution, REQUEST_WORKERS};
use crate::gateway::{ChatRequest, Gateway, GatewayError, MediaType, Message};
use crate::taxonomy::Taxonomy;

pub use geometry::{ratio_to_pixels, CropRegion, GeometryError, PixelRect, RatioBBox};
pub use raster::{crop_with_margin, encode_png, ImageDecodeError, PreparedImage, MAX_DIMENSION};
pub use render::{annotate_image, family_color, STROKE};
pub use stages::{
    filter_prompt, localize_correction, localize_prompt, parse_bbox, parse_findings, parse_refinement,
    parse_scenarios, predict_prompt, refine_prompt, HazardFinding, RefineAnswer, Scenario,
    ScenarioPrediction, SceneDescription, DESCRIBE_PROMPT, NO_SCENARIOS, TEMPLATE_VERSION,
};

pub const CROP_MARGIN: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Describe,
    Predict,
    Filter,
    Localize,
    Refine,
}

impl Stage {
    /// Stage number used in run-directory file names.
    pub fn number(self) -> u8 {
        match self {
            Stage::Describe => 1,
            Stage::Predict => 2,
            Stage::Filter => 3,
            Stage::Localize | Stage::Refine => 4,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Describe => "describe",
            Stage::Predict => "predict",
            Stage::Filter => "filter",
            Stage::Localize => "localize",
            Stage::Refine => "refine",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum VisionError {
    #[error(transparent)]
    ImageDecode(#[from] ImageDecodeError),
    #[error("stage {stage} failed{}: {reason}", finding.as_ref().map(|f| format!(" for `{f}`")).unwrap_or_default())]
    StageFailed {
        stage: Stage,
        finding: Option<String>,
        reason: String,
    },
    #[error("stage {stage}: {source}")]
    Gateway { stage: Stage, source: GatewayError },
    #[error("I/O error at {path}: {reason}")]
    Io { path: PathBuf, reason: String },
}

impl VisionError {
    fn stage(stage: Stage, finding: Option<&HazardFinding>, reason: impl Into<String>) -> Self {
        VisionError::StageFailed {
            stage,
            finding: finding.map(|f| f.object_label.clone()),
            reason: reason.into(),
        }
    }

    pub fn is_unavailable(&self) -> bool {
        matches!(self, VisionError::Gateway { source, .. } if source.is_unavailable())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub finding: HazardFinding,
    pub bbox: RatioBBox,
    pub initial_bbox: RatioBBox,
    pub refined: bool,
    /// IoU between the initial and final boxes.
    pub refinement_delta: f64,
}

/// One prompt/response round with the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub stage: Stage,
    pub finding: Option<String>,
    pub prompt: String,
    pub response: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    pub exchanges: Vec<Exchange>,
}

impl Transcript {
    fn send(
        &mut self,
        gateway: &Gateway,
        stage: Stage,
        finding: Option<&HazardFinding>,
        request: &ChatRequest,
    ) -> Result<String, VisionError> {
        let prompt = request.prompt_text();
        let result = gateway.send_chat(request);
        let response = match &result {
            Ok(r) => r.text.clone(),
            Err(_) => String::new(),
        };
        self.exchanges.push(Exchange {
            stage,
            finding: finding.map(|f| f.object_label.clone()),
            prompt,
            response,
        });
        match result {
            Ok(r) => Ok(r.text),
            Err(GatewayError::EmptyResponse) | Err(GatewayError::Truncated) => {
                Err(VisionError::stage(stage, finding, "model returned no text"))
            }
            Err(source) => Err(VisionError::Gateway { stage, source }),
        }
    }

    /// Prompt and response files for stage `n`. Single-exchange stages are
    /// stored verbatim; stage 4 lists every exchange under a header.
    pub fn stage_files(&self, n: u8) -> Option<(String, String)> {
        let ex: Vec<&Exchange> = self.exchanges.iter().filter(|e| e.stage.number() == n).collect();
        match ex.as_slice() {
            [] => None,
            [one] if n < 4 => Some((one.prompt.clone(), one.response.clone())),
            many => {
                let (mut p, mut r) = (String::new(), String::new());
                for (i, e) in many.iter().enumerate() {
                    let head = format!(
                        "=== {} {}: {} ===\n",
                        i + 1,
                        e.stage,
                        e.finding.as_deref().unwrap_or("")
                    );
                    p.push_str(&head);
                    p.push_str(&e.prompt);
                    p.push_str("\n\n");
                    r.push_str(&head);
                    r.push_str(&e.response);
                    r.push_str("\n\n");
                }
                Some((p, r))
            }
        }
    }
}

pub fn describe_scene(
    image_id: &str,
    image: &PreparedImage,
    gateway: &Gateway,
    transcript: &mut Transcript,
) -> Result<SceneDescription, VisionError> {
    let request = ChatRequest::new(
        gateway.model_name(),
        vec![Message::user_with_image(DESCRIBE_PROMPT, image.bytes.clone(), image.media_type)],
    );
    let text = transcript.send(gateway, Stage::Describe, None, &request)?;
    Ok(SceneDescription {
        image_id: image_id.to_string(),
        text,
    })
}

/// Returns the parsed list and the raw answer that the filter stage quotes.
pub fn predict_scenarios(
    description: &SceneDescription,
    gateway: &Gateway,
    transcript: &mut Transcript,
) -> Result<(ScenarioPrediction, String), VisionError> {
    if description.text.trim().is_empty() {
        return Err(VisionError::stage(Stage::Predict, None, "scene description is empty"));
    }
    let request = ChatRequest::new(
        gateway.model_name(),
        vec![Message::user(predict_prompt(&description.text))],
    );
    let text = transcript.send(gateway, Stage::Predict, None, &request)?;
    let prediction = parse_scenarios(&text)
        .ok_or_else(|| VisionError::stage(Stage::Predict, None, "answer is not a list of scenarios"))?;
    Ok((prediction, text))
}

/// Findings plus warnings for dropped elements. No model call when the
/// prediction is empty.
pub fn filter_high_risk(
    prediction: &ScenarioPrediction,
    prediction_text: &str,
    taxonomy: &Taxonomy,
    gateway: &Gateway,
    transcript: &mut Transcript,
) -> Result<(Vec<HazardFinding>, Vec<String>), VisionError> {
    if prediction.scenarios.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let request = ChatRequest::new(
        gateway.model_name(),
        vec![Message::user(filter_prompt(prediction_text, taxonomy))],
    );
    let text = transcript.send(gateway, Stage::Filter, None, &request)?;
    let (findings, warnings) = parse_findings(&text, taxonomy);
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok((findings, warnings))
}

pub fn localize(
    image: &PreparedImage,
    finding: &HazardFinding,
    taxonomy: &Taxonomy,
    gateway: &Gateway,
    transcript: &mut Transcript,
) -> Result<RatioBBox, VisionError> {
    let category = taxonomy
        .resolve(finding.category_id as i64)
        .map(|c| c.name.as_str())
        .unwrap_or("unknown");
    let mut request = ChatRequest::new(
        gateway.model_name(),
        vec![Message::user_with_image(
            localize_prompt(finding, category),
            image.bytes.clone(),
            image.media_type,
        )],
    );
    let text = transcript.send(gateway, Stage::Localize, Some(finding), &request)?;
    let first_error = match parse_bbox(&text) {
        Ok(b) => return Ok(b),
        Err(e) => e,
    };
    request.messages.push(Message::assistant(text));
    request.messages.push(Message::user(localize_correction(&first_error)));
    let text = transcript.send(gateway, Stage::Localize, Some(finding), &request)?;
    parse_bbox(&text).map_err(|e| VisionError::stage(Stage::Localize, Some(finding), e))
}

/// One review round on a crop around `initial` with the box drawn in.
/// Returns the annotation and a warning if the answer was unusable.
pub fn refine_bbox(
    image: &PreparedImage,
    finding: &HazardFinding,
    initial: RatioBBox,
    gateway: &Gateway,
    transcript: &mut Transcript,
) -> Result<(Annotation, Option<String>), VisionError> {
    let rect = ratio_to_pixels(&initial, image.width(), image.height());
    let (crop, region) = crop_with_margin(&image.image, &rect, CROP_MARGIN);
    let mut crop = crop.to_rgba8();
    let (ox, oy) = region.offset();
    let local = PixelRect {
        x0: rect.x0 - ox,
        y0: rect.y0 - oy,
        x1: rect.x1 - ox,
        y1: rect.y1 - oy,
    };
    raster::draw_rect(&mut crop, &local, 2, Rgba([255, 0, 0, 255]));
    let crop_png = encode_png(&image::DynamicImage::ImageRgba8(crop));
    let request = ChatRequest::new(
        gateway.model_name(),
        vec![Message::user_with_image(refine_prompt(finding), crop_png, MediaType::Png)],
    );
    let text = transcript.send(gateway, Stage::Refine, Some(finding), &request)?;
    let keep = |warning| {
        (
            Annotation {
                finding: finding.clone(),
                bbox: initial,
                initial_bbox: initial,
                refined: false,
                refinement_delta: 1.0,
            },
            warning,
        )
    };
    Ok(match parse_refinement(&text) {
        RefineAnswer::Confirm => keep(None),
        RefineAnswer::Unparsable(e) => {
            let w = format!("refinement for `{}` ignored: {e}", finding.object_label);
            log::warn!("{w}");
            keep(Some(w))
        }
        RefineAnswer::Corrected(local) => {
            let full = region.to_full(&local);
            let bbox = RatioBBox::clamped(full.cx, full.cy, full.w, full.h).unwrap_or(initial);
            (
                Annotation {
                    finding: finding.clone(),
                    bbox,
                    initial_bbox: initial,
                    refined: true,
                    refinement_delta: initial.iou(&bbox),
                },
                None,
            )
        }
    })
}

/// Everything produced for one image, complete or not.
#[derive(Debug, Clone, Default)]
pub struct PipelineRun {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub description: Option<SceneDescription>,
    pub prediction: Option<ScenarioPrediction>,
    pub findings: Vec<HazardFinding>,
    pub annotations: Vec<Annotation>,
    pub warnings: Vec<String>,
    pub transcript: Transcript,
    /// Annotated PNG; present only when every stage succeeded.
    pub rendered: Option<Vec<u8>>,
}

#[derive(Debug, Error)]
#[error("vision pipeline failed for image {}", run.image_id)]
pub struct PipelineFailure {
    pub run: Box<PipelineRun>,
    #[source]
    pub error: VisionError,
}

#[derive(Serialize)]
struct AnnotationView<'a> {
    object_label: &'a str,
    category_id: u32,
    category_name: &'a str,
    rationale: &'a str,
    bbox: RatioBBox,
    initial_bbox: RatioBBox,
    pixel_rect: PixelRect,
    refined: bool,
    refinement_delta: f64,
}

#[derive(Serialize)]
struct AnnotationsFile<'a> {
    image_id: &'a str,
    template_version: &'a str,
    status: &'a str,
    error: Option<String>,
    width: u32,
    height: u32,
    scenarios: Option<&'a [Scenario]>,
    findings: &'a [HazardFinding],
    annotations: Vec<AnnotationView<'a>>,
    warnings: &'a [String],
}

impl PipelineRun {
    /// Contents of `annotations.json`.
    pub fn annotations_json(&self, taxonomy: &Taxonomy, error: Option<&VisionError>) -> String {
        let annotations = self
            .annotations
            .iter()
            .map(|a| AnnotationView {
                object_label: &a.finding.object_label,
                category_id: a.finding.category_id,
                category_name: taxonomy
                    .resolve(a.finding.category_id as i64)
                    .map(|c| c.name.as_str())
                    .unwrap_or(""),
                rationale: &a.finding.rationale,
                bbox: a.bbox,
                initial_bbox: a.initial_bbox,
                pixel_rect: ratio_to_pixels(&a.bbox, self.width.max(1), self.height.max(1)),
                refined: a.refined,
                refinement_delta: a.refinement_delta,
            })
            .collect();
        let file = AnnotationsFile {
            image_id: &self.image_id,
            template_version: TEMPLATE_VERSION,
            status: if error.is_some() { "failed" } else { "complete" },
            error: error.map(|e| e.to_string()),
            width: self.width,
            height: self.height,
            scenarios: self.prediction.as_ref().map(|p| p.scenarios.as_slice()),
            findings: &self.findings,
            annotations,
            warnings: &self.warnings,
        };
        let mut s = serde_json::to_string_pretty(&file).expect("serializable");
        s.push('\n');
        s
    }

    /// Writes stage files, `annotations.json` and `annotated.png` under `dir`.
    pub fn persist(&self, dir: &Path, taxonomy: &Taxonomy, error: Option<&VisionError>) -> Result<(), VisionError> {
        let write = |name: &str, bytes: &[u8]| {
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(|e| VisionError::Io {
                path,
                reason: e.to_string(),
            })
        };
        fs::create_dir_all(dir).map_err(|e| VisionError::Io {
            path: dir.to_path_buf(),
            reason: e.to_string(),
        })?;
        for n in 1..=4 {
            if let Some((p, r)) = self.transcript.stage_files(n) {
                write(&format!("stage{n}_prompt.txt"), p.as_bytes())?;
                write(&format!("stage{n}_response.txt"), r.as_bytes())?;
            }
        }
        write("annotations.json", self.annotations_json(taxonomy, error).as_bytes())?;
        if let Some(png) = &self.rendered {
            write("annotated.png", png)?;
        }
        Ok(())
    }
}

fn run_stages(
    run: &mut PipelineRun,
    image_bytes: &[u8],
    taxonomy: &Taxonomy,
    gateway: &Gateway,
) -> Result<(), VisionError> {
    let image = PreparedImage::decode(image_bytes)?;
    run.width = image.width();
    run.height = image.height();

    let description = describe_scene(&run.image_id, &image, gateway, &mut run.transcript)?;
    run.description = Some(description.clone());

    let (prediction, prediction_text) = predict_scenarios(&description, gateway, &mut run.transcript)?;
    run.prediction = Some(prediction.clone());

    let (findings, warnings) = filter_high_risk(
        &prediction,
        &prediction_text,
        taxonomy,
        gateway,
        &mut run.transcript,
    )?;
    run.findings = findings.clone();
    run.warnings.extend(warnings);

    for finding in &findings {
        let initial = localize(&image, finding, taxonomy, gateway, &mut run.transcript)?;
        let (annotation, warning) = refine_bbox(&image, finding, initial, gateway, &mut run.transcript)?;
        run.annotations.push(annotation);
        run.warnings.extend(warning);
    }
    run.rendered = Some(annotate_image(&image.image, &run.annotations, taxonomy));
    Ok(())
}

/// Runs every stage in order. With `run_dir`, all artifacts are written
/// there, including the partial ones when a stage fails.
pub fn run_pipeline(
    image_id: &str,
    image_bytes: &[u8],
    taxonomy: &Taxonomy,
    gateway: &Gateway,
    run_dir: Option<&Path>,
) -> Result<PipelineRun, PipelineFailure> {
    let mut run = PipelineRun {
        image_id: image_id.to_string(),
        ..PipelineRun::default()
    };
    let outcome = run_stages(&mut run, image_bytes, taxonomy, gateway);
    let error = outcome.err();
    let persisted = match run_dir {
        Some(dir) => run.persist(dir, taxonomy, error.as_ref()),
        None => Ok(()),
    };
    match (error, persisted) {
        (Some(error), _) | (None, Err(error)) => Err(PipelineFailure {
            run: Box::new(run),
            error,
        }),
        (None, Ok(())) => Ok(run),
    }
}

/// Image files (`.png`, `.jpg`, `.jpeg`) directly inside `dir`, sorted.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>, VisionError> {
    let io = |e: std::io::Error| VisionError::Io {
        path: dir.to_path_buf(),
        reason: e.to_string(),
    };
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if path.is_file() && matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Runs the pipeline on each image, writing `out_dir/<file stem>/`.
pub fn run_images(
    images: &[PathBuf],
    out_dir: &Path,
    taxonomy: &Taxonomy,
    gateway: &Gateway,
    exec: Execution,
) -> Vec<Result<PipelineRun, PipelineFailure>> {
    exec.map_bounded(REQUEST_WORKERS, images, |path| {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "image".to_string());
        let dir = out_dir.join(&id);
        match fs::read(path) {
            Ok(bytes) => run_pipeline(&id, &bytes, taxonomy, gateway, Some(&dir)),
            Err(e) => Err(PipelineFailure {
                run: Box::new(PipelineRun {
                    image_id: id,
                    ..PipelineRun::default()
                }),
                error: VisionError::Io {
                    path: path.clone(),
                    reason: e.to_string(),
                },
            }),
        }
    })
}
