//! Content digest used to key replay fixtures.

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::types::{ChatRequest, Part};

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Canonical JSON form of the digest inputs. Object keys serialize sorted and
/// image payloads are replaced by the SHA-256 of their raw bytes, so base64
/// or data-URL re-encoding never changes the digest.
pub fn canonical_form(request: &ChatRequest) -> String {
    let messages: Vec<Value> = request
        .messages
        .iter()
        .map(|m| {
            let parts: Vec<Value> = m
                .parts
                .iter()
                .map(|p| match p {
                    Part::Text(t) => json!({ "type": "text", "text": t }),
                    Part::Image { bytes, media_type } => json!({
                        "type": "image",
                        "media_type": media_type.mime(),
                        "sha256": sha256_hex(bytes),
                    }),
                })
                .collect();
            json!({ "role": m.role.as_str(), "parts": parts })
        })
        .collect();
    json!({
        "model": request.model_name,
        "temperature": request.temperature,
        "messages": messages,
    })
    .to_string()
}

/// Hex SHA-256 over [`canonical_form`].
pub fn request_digest(request: &ChatRequest) -> String {
    sha256_hex(canonical_form(request).as_bytes())
}
