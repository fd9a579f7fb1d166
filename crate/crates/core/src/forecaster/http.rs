//! Live chat-completion backend.
//!
//! Requests use the widespread provider wire shape: a single user message,
//! CSV attachments inlined into the message text, SVG charts attached as
//! base64 data URLs. Credentials come from an environment variable named in
//! the configuration, never from the configuration file itself; and every
//! outgoing bundle is re-screened against the deny list immediately before
//! leaving the process.

use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::RetryPolicy;
use crate::error::{Error, Result};
use crate::prompt::{check_anonymized, AttachmentKind, PromptBundle};

/// Connection settings for the live backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Full chat-completions URL.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub credentials_env: String,
    /// Sampling temperature; omitted from the request when `None` so the
    /// provider default applies.
    #[serde(default)]
    pub temperature: Option<f64>,
    /// Identifiers that must never appear in an outgoing prompt.
    #[serde(default)]
    pub deny_list: Vec<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    60
}

/// Builds the JSON request body for a bundle. Text-only bundles send a plain
/// string message; chart bundles send multi-part content with image URLs.
pub fn build_request_body(config: &HttpConfig, bundle: &PromptBundle) -> String {
    let mut text = bundle.text.clone();
    let mut images = Vec::new();
    for a in &bundle.attachments {
        match a.kind {
            AttachmentKind::Csv => {
                text.push('\n');
                text.push_str(&a.name);
                text.push_str(":\n");
                text.push_str(&String::from_utf8_lossy(&a.payload));
            }
            AttachmentKind::Svg => {
                let encoded = base64::engine::general_purpose::STANDARD.encode(&a.payload);
                images.push(json!({
                    "type": "image_url",
                    "image_url": {
                        "url": format!("data:image/svg+xml;base64,{encoded}"),
                        "detail": "auto",
                    },
                }));
            }
        }
    }
    let content: Value = if images.is_empty() {
        Value::String(text)
    } else {
        let mut parts = vec![json!({ "type": "text", "text": text })];
        parts.extend(images);
        Value::Array(parts)
    };
    let mut body = json!({
        "model": config.model,
        "messages": [{ "role": "user", "content": content }],
    });
    if let Some(t) = config.temperature {
        body["temperature"] = json!(t);
    }
    body.to_string()
}

/// Pulls the assistant text out of a chat-completion response body.
fn extract_text(body: &str) -> Option<String> {
    let v: Value = serde_json::from_str(body).ok()?;
    let choice = v.get("choices")?.get(0)?;
    if let Some(content) = choice.pointer("/message/content") {
        match content {
            Value::String(s) => return Some(s.clone()),
            Value::Array(parts) => {
                let mut out = String::new();
                for p in parts {
                    if let Some(Value::String(s)) = p.get("text") {
                        out.push_str(s);
                    }
                }
                return Some(out);
            }
            _ => {}
        }
    }
    // Older completion-style shape.
    if let Some(Value::String(s)) = choice.get("text") {
        return Some(s.clone());
    }
    None
}

fn retryable(status: reqwest::StatusCode) -> bool {
    status.as_u16() == 429 || status.is_server_error()
}

/// Sends a bundle, returning `(request body, response text)`.
///
/// Transport failures and retryable statuses are retried with doubling
/// backoff up to the policy's attempt budget; credential rejections fail
/// immediately as [`Error::Auth`].
pub fn send(
    config: &HttpConfig,
    retry: &RetryPolicy,
    bundle: &PromptBundle,
) -> Result<(String, String)> {
    check_anonymized(bundle, &config.deny_list)?;
    let key = std::env::var(&config.credentials_env).map_err(|_| {
        Error::Auth(format!(
            "environment variable {} is not set",
            config.credentials_env
        ))
    })?;
    let body = build_request_body(config, bundle);
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(config.timeout_secs))
        .build()
        .map_err(|e| Error::Transport {
            attempts: 0,
            msg: format!("client setup: {e}"),
        })?;

    let attempts = retry.max_attempts.max(1);
    let mut last_err = String::new();
    for attempt in 1..=attempts {
        if attempt > 1 {
            std::thread::sleep(Duration::from_millis(
                retry.backoff_ms.saturating_mul(1 << (attempt - 2).min(16)),
            ));
        }
        let sent = client
            .post(&config.endpoint)
            .bearer_auth(&key)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.clone())
            .send();
        let response = match sent {
            Ok(r) => r,
            Err(e) => {
                last_err = e.to_string();
                continue;
            }
        };
        let status = response.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(Error::Auth(format!(
                "endpoint rejected credentials (HTTP {status})"
            )));
        }
        let text = response.text().unwrap_or_default();
        if retryable(status) {
            last_err = format!("HTTP {status}");
            continue;
        }
        if !status.is_success() {
            return Err(Error::Transport {
                attempts: attempt,
                msg: format!(
                    "HTTP {status}: {}",
                    text.chars().take(200).collect::<String>()
                ),
            });
        }
        return match extract_text(&text) {
            Some(answer) => Ok((body, answer)),
            None => Err(Error::Transport {
                attempts: attempt,
                msg: "response body has no assistant message".into(),
            }),
        };
    }
    Err(Error::Transport {
        attempts,
        msg: last_err,
    })
}
