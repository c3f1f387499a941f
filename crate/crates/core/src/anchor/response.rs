//! Structured page response returned by the converter model.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

pub const ROTATIONS: [u32; 4] = [0, 90, 180, 270];

const FIELDS: [&str; 6] = [
    "primary_language",
    "is_rotation_valid",
    "rotation_correction",
    "is_table",
    "is_diagram",
    "natural_text",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageResponse {
    pub primary_language: Option<String>,
    pub is_rotation_valid: bool,
    pub rotation_correction: u32,
    pub is_table: bool,
    pub is_diagram: bool,
    pub natural_text: Option<String>,
}

impl PageResponse {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("page response serializes")
    }
}

/// Every variant is worth a retry: the next sample may well be valid.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResponseError {
    #[error("response is not valid JSON: {0}")]
    Json(String),
    #[error("response is not a JSON object")]
    NotObject,
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("missing required field `{0}`")]
    Missing(&'static str),
    #[error("field `{field}` must be {expected}")]
    Type {
        field: &'static str,
        expected: &'static str,
    },
    #[error("rotation_correction {0} is not one of 0, 90, 180, 270")]
    Rotation(i64),
}

impl ResponseError {
    pub fn is_retryable(&self) -> bool {
        true
    }
}

fn field<'a>(obj: &'a Map<String, Value>, name: &'static str) -> Result<&'a Value, ResponseError> {
    obj.get(name).ok_or(ResponseError::Missing(name))
}

fn boolean(obj: &Map<String, Value>, name: &'static str) -> Result<bool, ResponseError> {
    field(obj, name)?.as_bool().ok_or(ResponseError::Type {
        field: name,
        expected: "a boolean",
    })
}

fn nullable_string(obj: &Map<String, Value>, name: &'static str) -> Result<Option<String>, ResponseError> {
    match field(obj, name)? {
        Value::Null => Ok(None),
        Value::String(s) => Ok(Some(s.clone())),
        _ => Err(ResponseError::Type {
            field: name,
            expected: "a string or null",
        }),
    }
}

/// Strict parse: an object with exactly the six schema fields.
pub fn validate_response(raw_json: &str) -> Result<PageResponse, ResponseError> {
    let value: Value = serde_json::from_str(raw_json).map_err(|e| ResponseError::Json(e.to_string()))?;
    let obj = value.as_object().ok_or(ResponseError::NotObject)?;
    if let Some(unknown) = obj.keys().find(|k| !FIELDS.contains(&k.as_str())) {
        return Err(ResponseError::UnknownField(unknown.clone()));
    }
    let rotation = field(obj, "rotation_correction")?
        .as_i64()
        .ok_or(ResponseError::Type {
            field: "rotation_correction",
            expected: "an integer",
        })?;
    if !ROTATIONS.iter().any(|&r| r as i64 == rotation) {
        return Err(ResponseError::Rotation(rotation));
    }
    Ok(PageResponse {
        primary_language: nullable_string(obj, "primary_language")?,
        is_rotation_valid: boolean(obj, "is_rotation_valid")?,
        rotation_correction: rotation as u32,
        is_table: boolean(obj, "is_table")?,
        is_diagram: boolean(obj, "is_diagram")?,
        natural_text: nullable_string(obj, "natural_text")?,
    })
}

/// `response_format.json_schema` payload for schema-constrained endpoints.
pub fn page_response_schema() -> Value {
    json!({
        "name": "page_response",
        "schema": {
            "type": "object",
            "properties": {
                "primary_language": {
                    "type": ["string", "null"],
                    "description": "The primary language of the text using two-letter codes or null if there is no text at all that you think you should read."
                },
                "is_rotation_valid": {
                    "type": "boolean",
                    "description": "Is this page oriented correctly for reading? Answer only considering the textual content, do not factor in the rotation of any charts, tables, drawings, or figures."
                },
                "rotation_correction": {
                    "type": "integer",
                    "description": "Indicates the degree of clockwise rotation needed if the page is not oriented correctly.",
                    "enum": [0, 90, 180, 270],
                    "default": 0
                },
                "is_table": {
                    "type": "boolean",
                    "description": "Indicates if the majority of the page content is in tabular format."
                },
                "is_diagram": {
                    "type": "boolean",
                    "description": "Indicates if the majority of the page content is a visual diagram."
                },
                "natural_text": {
                    "type": ["string", "null"],
                    "description": "The natural text content extracted from the page."
                }
            },
            "additionalProperties": false,
            "required": FIELDS
        },
        "strict": true
    })
}
