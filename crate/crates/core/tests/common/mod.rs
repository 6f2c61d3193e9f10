#![allow(dead_code)]

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use image::{DynamicImage, Rgba, RgbaImage};
use serde_json::{json, Value};
use sitehazard::gateway::{Backend, Gateway, GatewayOptions, HttpReply, Transport};

pub fn opts() -> GatewayOptions {
    GatewayOptions {
        model_name: "test-model".into(),
        rate_limit_rpm: 1_000_000,
        ..Default::default()
    }
}

pub fn completion(text: &str) -> Result<HttpReply, String> {
    Ok(HttpReply {
        status: 200,
        body: json!({
            "choices": [{"message": {"content": text}, "finish_reason": "stop"}],
            "usage": {"prompt_tokens": 100, "completion_tokens": 10}
        })
        .to_string(),
    })
}

fn content_text(content: &Value) -> String {
    match content {
        Value::String(s) => s.clone(),
        Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join("\n"),
        _ => String::new(),
    }
}

/// Text of the last message in a chat-completions body.
pub fn last_text(body: &Value) -> String {
    body["messages"]
        .as_array()
        .and_then(|m| m.last())
        .map(|m| content_text(&m["content"]))
        .unwrap_or_default()
}

/// Data-URL payloads of every image in the body.
pub fn images(body: &Value) -> Vec<Vec<u8>> {
    use base64::Engine;
    let mut out = Vec::new();
    for m in body["messages"].as_array().into_iter().flatten() {
        for p in m["content"].as_array().into_iter().flatten() {
            if let Some(url) = p["image_url"]["url"].as_str() {
                let b64 = url.split_once(',').map(|(_, b)| b).unwrap_or("");
                out.push(base64::engine::general_purpose::STANDARD.decode(b64).unwrap());
            }
        }
    }
    out
}

/// A transport answering from `script`, counting calls.
pub fn scripted(
    script: impl Fn(&Value) -> String + Send + Sync + 'static,
) -> (Box<dyn Transport>, Arc<AtomicUsize>) {
    let calls = Arc::new(AtomicUsize::new(0));
    let c = calls.clone();
    let t = move |body: &Value| {
        c.fetch_add(1, Ordering::SeqCst);
        completion(&script(body))
    };
    (Box::new(t), calls)
}

/// Records `script`'s answers into `fixture` while running `f`.
pub fn record<T>(
    fixture: &Path,
    script: impl Fn(&Value) -> String + Send + Sync + 'static,
    f: impl FnOnce(&Gateway) -> T,
) -> T {
    let (t, _) = scripted(script);
    let g = Gateway::recording(t, fixture, &opts()).unwrap();
    f(&g)
}

/// Strict replay over `fixture`.
pub fn replay(fixture: &Path) -> Gateway {
    Gateway::connect(
        &Backend::Replay {
            fixture_path: fixture.to_path_buf(),
            strict: true,
        },
        &opts(),
    )
    .unwrap()
}

pub fn calls(c: &Arc<AtomicUsize>) -> usize {
    c.load(Ordering::SeqCst)
}

/// Deterministic RGB test image encoded as PNG.
pub fn test_png(w: u32, h: u32) -> Vec<u8> {
    let img = RgbaImage::from_fn(w, h, |x, y| {
        Rgba([(x * 255 / w.max(1)) as u8, (y * 255 / h.max(1)) as u8, 120, 255])
    });
    sitehazard::vision::encode_png(&DynamicImage::ImageRgba8(img))
}

/// Writes `golds.len()` small PNGs whose top-left pixel encodes the sample
/// index, plus `manifest.csv`; returns the manifest path.
pub fn vqa_corpus(dir: &Path, golds: &[bool]) -> std::path::PathBuf {
    let mut manifest = String::from("sample_id,image_path,rule_id,gold\n");
    for (i, g) in golds.iter().enumerate() {
        let img = RgbaImage::from_fn(16, 12, |x, y| {
            if x == 0 && y == 0 {
                Rgba([i as u8, (i >> 8) as u8, 7, 255])
            } else {
                Rgba([200, 180, 40, 255])
            }
        });
        let name = format!("img_{i:03}.png");
        std::fs::write(dir.join(&name), sitehazard::vision::encode_png(&DynamicImage::ImageRgba8(img))).unwrap();
        manifest.push_str(&format!("s{i:03},{name},1,{}\n", if *g { "yes" } else { "no" }));
    }
    let path = dir.join("manifest.csv");
    std::fs::write(&path, manifest).unwrap();
    path
}

/// Sample index and 1-based prompt index of a rule-VQA request.
pub fn vqa_request(body: &Value) -> (usize, usize) {
    let img = image::load_from_memory(&images(body)[0]).unwrap().to_rgba8();
    let p = img.get_pixel(0, 0);
    let sample = p[0] as usize | (p[1] as usize) << 8;
    let text = last_text(body);
    let set = sitehazard::rulevqa::build_prompt_set(&sitehazard::rulevqa::SafetyRule::ppe());
    let prompt = (1..=set.len())
        .find(|&i| set.prompt(i).as_deref() == Some(text.as_str()))
        .expect("request uses a known prompt");
    (sample, prompt)
}

pub fn extraction_fixture_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/extraction")
}

/// Answers extraction prompts from `responses.json`: the n-th call for a
/// report (counted by conversation length) gets the n-th canned answer.
pub fn canned_extraction_model() -> impl Fn(&Value) -> String + Send + Sync + 'static {
    let text = std::fs::read_to_string(extraction_fixture_dir().join("responses.json")).unwrap();
    let canned: std::collections::HashMap<String, Vec<String>> = serde_json::from_str(&text).unwrap();
    move |body: &Value| {
        let msgs = body["messages"].as_array().unwrap();
        let first = content_text(&msgs[0]["content"]);
        let id = first
            .lines()
            .find_map(|l| l.strip_prefix("Inspection id: "))
            .expect("prompt names the inspection id")
            .trim();
        let attempt = (msgs.len() - 1) / 2;
        canned[id][attempt.min(canned[id].len() - 1)].clone()
    }
}

pub const BASE_ANSWER: &str = r#"{"report_id":"1433331.015","event_date":"9/12/2019","site_address":"3170 SW Coral Way, Miami, FL 33135","naics_code":"238290","age":50,"sex":"M","occupation":"Assemblers","degree_of_injury":"Hospitalized injury","scenario":[7],"accident_cause":"Motor pack fell","investigation_summary":"The pack fell."}"#;

#[derive(Debug)]
pub enum Expect {
    NotJson,
    Field(&'static str),
    Category(i64),
}

impl Expect {
    pub fn matches(&self, err: &sitehazard::extraction::ParseError) -> bool {
        use sitehazard::extraction::ParseError;
        match (self, err) {
            (Expect::NotJson, ParseError::NotJson(_)) => true,
            (Expect::Field(f), ParseError::SchemaViolation { field, .. }) => field == f,
            (Expect::Category(c), ParseError::UnknownCategory(got)) => c == got,
            _ => false,
        }
    }
}

/// Malformed answers and the error each must produce.
pub fn rejection_cases() -> Vec<(&'static str, String, Expect)> {
    let swap = |from: &str, to: &str| BASE_ANSWER.replace(from, to);
    vec![
        ("prose", "I cannot extract the fields from this report.".into(), Expect::NotJson),
        ("empty", String::new(), Expect::NotJson),
        ("cut off", r#"{"report_id": "1", "age": "#.into(), Expect::NotJson),
        ("fenced garbage", "```json\nreport_id = 1\n```".into(), Expect::NotJson),
        ("array root", "[1, 2, 3]".into(), Expect::Field("<root>")),
        ("misspelled key", swap("\"report_id\"", "\"reportid\""), Expect::Field("reportid")),
        ("extra key", swap("\"age\":50", "\"age\":50,\"injury_type\":\"fracture\""), Expect::Field("injury_type")),
        ("age too high", swap("\"age\":50", "\"age\":250"), Expect::Field("age")),
        ("age too low", swap("\"age\":50", "\"age\":5"), Expect::Field("age")),
        ("age in words", swap("\"age\":50", "\"age\":\"fifty\""), Expect::Field("age")),
        ("fractional age", swap("\"age\":50", "\"age\":50.5"), Expect::Field("age")),
        ("unknown category", swap("[7]", "[7, 99]"), Expect::Category(99)),
        ("category zero", swap("[7]", "0"), Expect::Category(0)),
        ("category as text", swap("[7]", "\"falls\""), Expect::Field("scenario")),
        ("bad sex", swap("\"sex\":\"M\"", "\"sex\":\"X\""), Expect::Field("sex")),
        ("bad date", swap("9/12/2019", "12th of September"), Expect::Field("event_date")),
        ("bad naics", swap("\"238290\"", "\"ABC\""), Expect::Field("naics_code")),
        (
            "both scenario keys",
            swap("\"scenario\":[7]", "\"scenario\":[7],\"scenario_ids\":[7]"),
            Expect::Field("scenario"),
        ),
    ]
}
