#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde_json::{json, Value};

pub const TOKEN_ENV: &str = "SITEHAZARD_TEST_TOKEN";
pub const TOKEN_VALUE: &str = "test-secret-do-not-persist";

/// A chat-completions endpoint on localhost answering from a script.
pub struct FakeModel {
    pub url: String,
    calls: Arc<AtomicUsize>,
}

impl FakeModel {
    pub fn start(script: impl Fn(&Value) -> String + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let calls = Arc::new(AtomicUsize::new(0));
        let script = Arc::new(script);
        let c = calls.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let script = script.clone();
                let c = c.clone();
                std::thread::spawn(move || serve(stream, &*script, &c));
            }
        });
        Self { url, calls }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

fn serve(stream: TcpStream, script: &(dyn Fn(&Value) -> String + Send + Sync), calls: &AtomicUsize) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut out = stream;
    out.set_nodelay(true).ok();
    loop {
        let mut length = 0usize;
        let mut authorized = false;
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        loop {
            line.clear();
            if reader.read_line(&mut line).unwrap_or(0) == 0 {
                return;
            }
            let l = line.trim_end();
            if l.is_empty() {
                break;
            }
            let lower = l.to_ascii_lowercase();
            if let Some(v) = lower.strip_prefix("content-length:") {
                length = v.trim().parse().unwrap();
            }
            if l.ends_with(&format!("Bearer {TOKEN_VALUE}")) {
                authorized = true;
            }
        }
        let mut body = vec![0u8; length];
        reader.read_exact(&mut body).unwrap();
        let (status, reply) = if authorized {
            calls.fetch_add(1, Ordering::SeqCst);
            let request: Value = serde_json::from_slice(&body).unwrap();
            let text = script(&request);
            let reply = json!({
                "choices": [{"message": {"content": text}, "finish_reason": "stop"}],
                "usage": {"prompt_tokens": 100, "completion_tokens": 10}
            });
            ("200 OK", reply.to_string())
        } else {
            ("401 Unauthorized", json!({"error": "bad token"}).to_string())
        };
        let head = format!(
            "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n",
            reply.len()
        );
        if out.write_all((head + &reply).as_bytes()).is_err() {
            return;
        }
    }
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

pub fn last_text(body: &Value) -> String {
    body["messages"]
        .as_array()
        .and_then(|m| m.last())
        .map(|m| content_text(&m["content"]))
        .unwrap_or_default()
}

pub fn first_text(body: &Value) -> String {
    content_text(&body["messages"][0]["content"])
}

/// Decoded bytes of the first image in the request.
pub fn first_image(body: &Value) -> Vec<u8> {
    use base64::Engine;
    for m in body["messages"].as_array().into_iter().flatten() {
        for p in m["content"].as_array().into_iter().flatten() {
            if let Some(url) = p["image_url"]["url"].as_str() {
                let b64 = url.split_once(',').map(|(_, b)| b).unwrap_or("");
                return base64::engine::general_purpose::STANDARD.decode(b64).unwrap();
            }
        }
    }
    panic!("request has no image")
}

pub fn sitehazard() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sitehazard"));
    for (k, _) in std::env::vars() {
        if k.starts_with("SITEHAZARD_") {
            c.env_remove(k);
        }
    }
    c.env("RUST_LOG", "warn");
    c
}

pub fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    eprintln!(
        "--- stdout\n{}--- stderr\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Arguments for a replay run against `fixture` writing to `out`.
pub fn replay_args(fixture: &Path, out: &Path) -> Vec<String> {
    vec![
        "--backend".into(),
        "replay".into(),
        "--fixture".into(),
        fixture.display().to_string(),
        "--model".into(),
        "fake-model".into(),
        "--output-dir".into(),
        out.display().to_string(),
    ]
}

/// Arguments for recording through `model` into `fixture`.
pub fn record_args(model: &FakeModel, fixture: &Path, out: &Path) -> Vec<String> {
    vec![
        "--endpoint".into(),
        model.url.clone(),
        "--token-env".into(),
        TOKEN_ENV.into(),
        "--rate-limit".into(),
        "100000".into(),
        "--fixture".into(),
        fixture.display().to_string(),
        "--model".into(),
        "fake-model".into(),
        "--output-dir".into(),
        out.display().to_string(),
    ]
}

pub fn png(w: u32, h: u32, marker: u8) -> Vec<u8> {
    let img = image::RgbaImage::from_fn(w, h, |x, y| {
        if x == 0 && y == 0 {
            image::Rgba([marker, 0, 7, 255])
        } else {
            image::Rgba([(x * 255 / w) as u8, (y * 255 / h) as u8, 120, 255])
        }
    });
    sitehazard::vision::encode_png(&image::DynamicImage::ImageRgba8(img))
}

pub fn marker(png_bytes: &[u8]) -> u8 {
    image::load_from_memory(png_bytes).unwrap().to_rgba8().get_pixel(0, 0)[0]
}

pub fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

pub fn core_fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(rel)
}

const DESCRIPTION: &str = "Two workers stand beneath a suspended lifting chain on the left. \
A third worker cuts concrete with a handheld saw.";
const SCENARIOS: &str = "1. The suspended lifting chain swings and strikes a worker (category 8)\n\
2. The saw kicks back and cuts the operator\n";
const FINDINGS: &str = "[{\"object\": \"suspended lifting chain\", \"category_id\": 8, \
\"rationale\": \"Unsecured chain swings over workers.\"}]";

pub fn vision_model(body: &Value) -> String {
    let t = last_text(body);
    if t.contains("Describe the scene") {
        format!("{DESCRIPTION} Camera {}.", marker(&first_image(body)))
    } else if t.contains("Below is a technical description") {
        let camera = t.split("Camera ").nth(1).and_then(|s| s.split('.').next()).unwrap_or("?");
        format!("{SCENARIOS}3. Camera {camera} shows no other hazard\n")
    } else if t.contains("Keep only the scenarios") {
        FINDINGS.into()
    } else if t.contains("Locate this object") {
        "{\"cx\": 0.3, \"cy\": 0.4, \"w\": 0.2, \"h\": 0.3}".into()
    } else if t.contains("zoomed crop") {
        "CONFIRM".into()
    } else {
        panic!("unexpected prompt: {t}")
    }
}

/// Per-sample answers: sample `i` answers prompt `p` with yes when
/// `(i + p) % 3 != 0`, and sample 7 never gives a usable answer.
pub fn vqa_model(body: &Value) -> String {
    let sample = marker(&first_image(body)) as usize;
    let text = last_text(body);
    let prompt = text.len() % 10;
    if sample == 7 {
        "I cannot tell from this picture.".into()
    } else if !(sample + prompt).is_multiple_of(3) {
        "Yes, the worker is missing a helmet.".into()
    } else {
        "No.".into()
    }
}

pub fn vqa_corpus(dir: &Path, n: usize) -> PathBuf {
    let mut manifest = String::from("sample_id,image_path,rule_id,gold\n");
    for i in 0..n {
        let name = format!("img_{i:02}.png");
        std::fs::write(dir.join(&name), png(16, 12, i as u8)).unwrap();
        manifest.push_str(&format!("s{i:02},{name},1,{}\n", if i.is_multiple_of(2) { "yes" } else { "no" }));
    }
    let path = dir.join("manifest.csv");
    std::fs::write(&path, manifest).unwrap();
    path
}


pub fn record_run(model: &FakeModel, fixture: &Path, out: &Path, cmd: &[&str]) -> Output {
    run(sitehazard()
        .args(record_args(model, fixture, out))
        .arg("replay-record")
        .args(cmd)
        .env(TOKEN_ENV, TOKEN_VALUE))
}

pub fn replay_run(fixture: &Path, out: &Path, cmd: &[&str]) -> Output {
    run(sitehazard().args(replay_args(fixture, out)).args(cmd))
}
