//! Page conversion with retries, temperature escalation, rotation handling
//! and a plain-text fallback.

use std::io::Cursor;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::response::{page_response_schema, validate_response, PageResponse};
use super::{fit_prompt, halving_limits, AnchorLayout, PromptBudget, DEFAULT_CHAR_LIMIT};

/// After this many rotations the next one would restore the original
/// orientation, so the response is taken as is.
pub const MAX_ROTATIONS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    #[default]
    RawAnchorText,
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConverterPolicy {
    pub max_retries: u32,
    pub temperatures: Vec<f64>,
    pub char_limits: Vec<usize>,
    pub fallback: Fallback,
    pub budget: PromptBudget,
}

impl Default for ConverterPolicy {
    fn default() -> Self {
        ConverterPolicy {
            max_retries: 3,
            temperatures: vec![0.1, 0.2, 0.3, 0.5, 0.8],
            char_limits: halving_limits(DEFAULT_CHAR_LIMIT, 64),
            fallback: Fallback::RawAnchorText,
            budget: PromptBudget::default(),
        }
    }
}

impl ConverterPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if self.temperatures.is_empty() {
            return Err("temperatures must not be empty".into());
        }
        if self.char_limits.is_empty() {
            return Err("char_limits must not be empty".into());
        }
        if self.char_limits.windows(2).any(|w| w[0] <= w[1]) {
            return Err("char_limits must be strictly decreasing".into());
        }
        Ok(())
    }

    /// Temperature for the `call`-th converter call (0-based); the last one
    /// repeats.
    pub fn temperature(&self, call: usize) -> f64 {
        self.temperatures[call.min(self.temperatures.len() - 1)]
    }
}

pub struct ConverterRequest<'a> {
    pub image_png: Option<&'a [u8]>,
    pub prompt: &'a str,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConverterError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("generation hit the token limit")]
    Truncated,
    /// Not worth retrying (bad credentials, malformed request).
    #[error("converter refused the request: {0}")]
    Fatal(String),
}

/// A vision-language model behind some API: page image plus prompt in, raw
/// JSON text out.
pub trait Converter: Send + Sync {
    fn convert(&self, request: &ConverterRequest<'_>) -> Result<String, ConverterError>;
}

#[derive(Debug, Clone, Default)]
pub struct PageInput {
    pub layout: AnchorLayout,
    pub image_png: Option<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum AttemptResult {
    Accepted,
    Invalid(String),
    Transport(String),
    Truncated,
    Rotate(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttemptRecord {
    pub temperature: f64,
    pub char_limit: Option<usize>,
    pub anchor_seed: u64,
    /// Clockwise rotation applied to the page image for this call.
    pub rotation: u32,
    pub result: AttemptResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvertOutcome {
    pub text: String,
    pub response: Option<PageResponse>,
    pub attempts: Vec<AttemptRecord>,
    pub fallback_used: bool,
    pub rotation: u32,
    pub warnings: Vec<String>,
}

#[derive(Debug, Error)]
pub enum ConvertError {
    #[error("all {} attempts failed and the fallback is empty", .attempts.len())]
    Exhausted { attempts: Vec<AttemptRecord> },
    #[error(transparent)]
    Fatal(ConverterError),
    #[error("bad policy: {0}")]
    Policy(String),
    #[error("rotating page image: {0}")]
    Image(String),
}

/// Rotate a PNG clockwise by a multiple of 90 degrees.
pub fn rotate_png(png: &[u8], degrees: u32) -> Result<Vec<u8>, String> {
    let img = image::load_from_memory_with_format(png, image::ImageFormat::Png).map_err(|e| e.to_string())?;
    let rotated = match degrees % 360 {
        0 => img,
        90 => img.rotate90(),
        180 => img.rotate180(),
        270 => img.rotate270(),
        d => return Err(format!("cannot rotate by {d} degrees")),
    };
    let mut out = Cursor::new(Vec::new());
    rotated
        .write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| e.to_string())?;
    Ok(out.into_inner())
}

/// Convert one page.
///
/// Each converter call uses the next temperature in the escalation list and
/// an anchor sampled with a fresh seed. Invalid responses, transport errors
/// and truncated generations use up one of `max_retries + 1` attempts. A
/// response flagging the page as misrotated rotates the image and asks
/// again without using an attempt, at most [`MAX_ROTATIONS`] times. When
/// attempts run out the fallback applies.
pub fn convert_page(
    page: &PageInput,
    converter: &dyn Converter,
    policy: &ConverterPolicy,
    seed: u64,
) -> Result<ConvertOutcome, ConvertError> {
    policy.validate().map_err(ConvertError::Policy)?;
    let mut image = page.image_png.clone();
    let mut rotation = 0u32;
    let mut rotations = 0u32;
    let mut failures = 0u32;
    let mut attempts: Vec<AttemptRecord> = Vec::new();
    let mut warnings = Vec::new();

    while failures <= policy.max_retries {
        let call = attempts.len();
        let anchor_seed = seed.wrapping_add(call as u64);
        let fitted = fit_prompt(&page.layout, &policy.char_limits, &policy.budget, anchor_seed);
        if let Some(w) = fitted.warning {
            warnings.push(w);
        }
        let temperature = policy.temperature(call);
        let request = ConverterRequest {
            image_png: image.as_deref(),
            prompt: &fitted.prompt,
            temperature,
        };
        let mut record = AttemptRecord {
            temperature,
            char_limit: fitted.char_limit,
            anchor_seed,
            rotation,
            result: AttemptResult::Accepted,
        };
        let raw = match converter.convert(&request) {
            Ok(raw) => raw,
            Err(ConverterError::Fatal(msg)) => return Err(ConvertError::Fatal(ConverterError::Fatal(msg))),
            Err(e) => {
                record.result = match e {
                    ConverterError::Truncated => AttemptResult::Truncated,
                    other => AttemptResult::Transport(other.to_string()),
                };
                attempts.push(record);
                failures += 1;
                continue;
            }
        };
        let response = match validate_response(&raw) {
            Ok(r) => r,
            Err(e) => {
                record.result = AttemptResult::Invalid(e.to_string());
                attempts.push(record);
                failures += 1;
                continue;
            }
        };
        if !response.is_rotation_valid && response.rotation_correction != 0 {
            if rotations < MAX_ROTATIONS {
                let turn = response.rotation_correction;
                record.result = AttemptResult::Rotate(turn);
                attempts.push(record);
                if let Some(png) = &image {
                    image = Some(rotate_png(png, turn).map_err(ConvertError::Image)?);
                }
                rotation = (rotation + turn) % 360;
                rotations += 1;
                continue;
            }
            warnings.push(format!(
                "page still reported misrotated after {MAX_ROTATIONS} rotations; keeping the response"
            ));
        }
        attempts.push(record);
        return Ok(ConvertOutcome {
            text: response.natural_text.clone().unwrap_or_default(),
            response: Some(response),
            attempts,
            fallback_used: false,
            rotation,
            warnings,
        });
    }

    match policy.fallback {
        Fallback::RawAnchorText => {
            warnings.push(format!(
                "conversion failed after {} attempts; using text extracted from the PDF",
                attempts.len()
            ));
            Ok(ConvertOutcome {
                text: page.layout.plain_text(),
                response: None,
                attempts,
                fallback_used: true,
                rotation,
                warnings,
            })
        }
        Fallback::Empty => Err(ConvertError::Exhausted { attempts }),
    }
}

/// Converter speaking the OpenAI-compatible chat-completions API.
pub struct OpenAiConverter {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub max_tokens: u32,
    /// Send the page-response JSON schema as `response_format`.
    pub use_schema: bool,
    client: reqwest::blocking::Client,
}

impl OpenAiConverter {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        timeout: Duration,
    ) -> Result<Self, ConverterError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ConverterError::Fatal(e.to_string()))?;
        Ok(OpenAiConverter {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            max_tokens: 4096,
            use_schema: false,
            client,
        })
    }

    pub fn request_body(&self, request: &ConverterRequest<'_>) -> Value {
        let mut content = vec![json!({"type": "text", "text": request.prompt})];
        if let Some(png) = request.image_png {
            let b64 = base64::engine::general_purpose::STANDARD.encode(png);
            content.push(json!({
                "type": "image_url",
                "image_url": {"url": format!("data:image/png;base64,{b64}")}
            }));
        }
        let mut body = json!({
            "model": self.model,
            "temperature": request.temperature,
            "max_tokens": self.max_tokens,
            "messages": [{"role": "user", "content": content}],
        });
        if self.use_schema {
            body["response_format"] = json!({
                "type": "json_schema",
                "json_schema": page_response_schema(),
            });
        }
        body
    }
}

impl Converter for OpenAiConverter {
    fn convert(&self, request: &ConverterRequest<'_>) -> Result<String, ConverterError> {
        let mut req = self.client.post(&self.endpoint).json(&self.request_body(request));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| ConverterError::Transport(e.to_string()))?;
        let status = resp.status();
        let body = resp.text().map_err(|e| ConverterError::Transport(e.to_string()))?;
        if !status.is_success() {
            let msg = format!("HTTP {status}: {}", body.chars().take(200).collect::<String>());
            return if status.is_server_error() || status.as_u16() == 429 || status.as_u16() == 408 {
                Err(ConverterError::Transport(msg))
            } else {
                Err(ConverterError::Fatal(msg))
            };
        }
        let v: Value = serde_json::from_str(&body)
            .map_err(|e| ConverterError::Transport(format!("response body: {e}")))?;
        let choice = &v["choices"][0];
        if choice["finish_reason"] == "length" {
            return Err(ConverterError::Truncated);
        }
        choice["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ConverterError::Transport("response has no message content".into()))
    }
}
