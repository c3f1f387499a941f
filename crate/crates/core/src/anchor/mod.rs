//! Document anchoring: positioned text and image boxes from the PDF, sampled
//! into a character budget and placed in the conversion prompt next to the
//! page image.
//!
//! Anchor text looks like
//!
//! ```text
//! Page dimensions: 612.0x792.0
//! [72,700] Hello anchors
//! [img 200,300→300,350]
//! ```

mod convert;
mod pdf;
mod response;

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use convert::{
    convert_page, rotate_png, AttemptRecord, AttemptResult, ConvertError, ConvertOutcome, Converter,
    ConverterError, ConverterPolicy, ConverterRequest, Fallback, OpenAiConverter, PageInput,
    MAX_ROTATIONS,
};
pub use pdf::{layout_from_document, layout_from_pdf, layout_from_pdf_bytes};
pub use response::{page_response_schema, validate_response, PageResponse, ResponseError, ROTATIONS};

pub const DEFAULT_CHAR_LIMIT: usize = 6000;

/// Inference-time prompt; `{base_text}` is replaced by the anchor text.
pub const PROMPT_TEMPLATE: &str = "Below is the image of one page of a document, as well as some raw textual content that was previously extracted for it.
Just return the plain text representation of this document as if you were reading it naturally.
Do not hallucinate.
RAW_TEXT_START
{base_text}
RAW_TEXT_END";

/// Longer prompt used with a schema-constrained teacher model.
pub const TEACHER_PROMPT_TEMPLATE: &str = "Below is the image of one page of a PDF document, as well as some raw textual content that was previously extracted for it that includes position information for each image and block of text (The origin [0x0] of the coordinates is in the lower left corner of the image).
Just return the plain text representation of this document as if you were reading it naturally.
Turn equations into a LaTeX representation, and tables into markdown format. Remove the headers and footers, but keep references and footnotes.
Read any natural handwriting.
This is likely one page out of several in the document, so be sure to preserve any sentences that come from the previous page, or continue onto the next page, exactly as they are.
If there is no text at all that you think you should read, you can output null.
Do not hallucinate.
RAW_TEXT_START
{base_text}
RAW_TEXT_END";

#[derive(Debug, Error)]
pub enum AnchorError {
    #[error("pdf: {0}")]
    Pdf(String),
    #[error("layout sidecar {path}: {message}")]
    Sidecar { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextBlock {
    pub x: f64,
    pub y: f64,
    #[serde(rename = "t")]
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Serialize for ImageBox {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.x0, self.y0, self.x1, self.y1].serialize(s)
    }
}

impl<'de> Deserialize<'de> for ImageBox {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [x0, y0, x1, y1] = <[f64; 4]>::deserialize(d)?;
        Ok(ImageBox { x0, y0, x1, y1 })
    }
}

/// Page layout in PDF units, origin bottom-left. Serializes as the layout
/// sidecar format `{"w":..,"h":..,"blocks":[{"x","y","t"}],"images":[[x0,y0,x1,y1]]}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnchorLayout {
    #[serde(rename = "w")]
    pub page_width: f64,
    #[serde(rename = "h")]
    pub page_height: f64,
    #[serde(rename = "blocks", default)]
    pub text_blocks: Vec<TextBlock>,
    #[serde(rename = "images", default)]
    pub image_boxes: Vec<ImageBox>,
}

impl AnchorLayout {
    pub fn from_sidecar_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load_sidecar(path: &Path) -> Result<Self, AnchorError> {
        let err = |message: String| AnchorError::Sidecar {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        Self::from_sidecar_json(&text).map_err(|e| err(e.to_string()))
    }

    /// Block texts one per line, used when conversion gives up.
    pub fn plain_text(&self) -> String {
        self.text_blocks
            .iter()
            .map(|b| b.text.trim())
            .filter(|t| !t.is_empty())
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Block and image lines in anchor order: text blocks, then images.
    pub fn element_lines(&self) -> Vec<String> {
        let text = self
            .text_blocks
            .iter()
            .map(|b| format!("[{:.0},{:.0}] {}\n", b.x, b.y, one_line(&b.text)));
        let images = self
            .image_boxes
            .iter()
            .map(|i| format!("[img {:.0},{:.0}→{:.0},{:.0}]\n", i.x0, i.y0, i.x1, i.y1));
        text.chain(images).collect()
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn anchor_header(layout: &AnchorLayout) -> String {
    format!(
        "Page dimensions: {:.1}x{:.1}\n",
        layout.page_width, layout.page_height
    )
}

fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Anchor text of at most `char_limit` characters.
///
/// Everything is kept when it fits. Otherwise the first and last text
/// blocks and the first and last images are taken first, and the rest of
/// the budget is filled in a seeded random order. Elements that do not fit
/// are skipped. Output keeps document order. Returns "" when even the
/// header does not fit.
pub fn build_anchor(layout: &AnchorLayout, char_limit: usize, seed: u64) -> String {
    let header = anchor_header(layout);
    let header_len = char_len(&header);
    if header_len > char_limit {
        return String::new();
    }
    let lines = layout.element_lines();
    let lens: Vec<usize> = lines.iter().map(|l| char_len(l)).collect();
    if header_len + lens.iter().sum::<usize>() <= char_limit {
        return header + &lines.concat();
    }

    let n_text = layout.text_blocks.len();
    let n_img = layout.image_boxes.len();
    let mut priority: Vec<usize> = Vec::with_capacity(4);
    if n_text > 0 {
        priority.extend([0, n_text - 1]);
    }
    if n_img > 0 {
        priority.extend([n_text, n_text + n_img - 1]);
    }
    priority.dedup();
    let mut rest: Vec<usize> = (0..lines.len()).filter(|i| !priority.contains(i)).collect();
    rest.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut budget = char_limit - header_len;
    let mut keep = vec![false; lines.len()];
    for i in priority.into_iter().chain(rest) {
        if lens[i] <= budget {
            keep[i] = true;
            budget -= lens[i];
        }
    }
    let mut out = header;
    for (line, _) in lines.iter().zip(&keep).filter(|(_, &k)| k) {
        out.push_str(line);
    }
    out
}

pub fn build_prompt(anchor: &str) -> String {
    PROMPT_TEMPLATE.replace("{base_text}", anchor.trim_end_matches('\n'))
}

/// Token estimate of a prompt against a model's context.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PromptBudget {
    pub max_tokens: usize,
    pub chars_per_token: usize,
    /// Tokens taken by everything except the prompt text (page image,
    /// chat scaffolding).
    pub reserved_tokens: usize,
}

impl Default for PromptBudget {
    fn default() -> Self {
        PromptBudget {
            max_tokens: 8192,
            chars_per_token: 4,
            reserved_tokens: 0,
        }
    }
}

impl PromptBudget {
    pub fn estimate(&self, prompt: &str) -> usize {
        char_len(prompt).div_ceil(self.chars_per_token.max(1)) + self.reserved_tokens
    }

    pub fn fits(&self, prompt: &str) -> bool {
        self.estimate(prompt) <= self.max_tokens
    }
}

/// `start`, `start/2`, ... while at least `min`.
pub fn halving_limits(start: usize, min: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut l = start;
    while l >= min.max(1) {
        out.push(l);
        l /= 2;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedPrompt {
    pub prompt: String,
    pub anchor: String,
    /// Limit that produced the final anchor; `None` for the empty fallback.
    pub char_limit: Option<usize>,
    pub tried: Vec<usize>,
    pub warning: Option<String>,
}

/// Try each limit in turn until the prompt fits the budget; fall back to an
/// empty anchor with a warning.
pub fn fit_prompt(layout: &AnchorLayout, limits: &[usize], budget: &PromptBudget, seed: u64) -> FittedPrompt {
    let mut tried = Vec::new();
    for &limit in limits {
        tried.push(limit);
        let anchor = build_anchor(layout, limit, seed);
        let prompt = build_prompt(&anchor);
        if budget.fits(&prompt) {
            return FittedPrompt {
                prompt,
                anchor,
                char_limit: Some(limit),
                tried,
                warning: None,
            };
        }
    }
    let prompt = build_prompt("");
    let warning = if budget.fits(&prompt) {
        "anchor dropped: no character limit fits the prompt budget".to_string()
    } else {
        "prompt exceeds the budget even without anchor text".to_string()
    };
    log::warn!("{warning}");
    FittedPrompt {
        prompt,
        anchor: String::new(),
        char_limit: None,
        tried,
        warning: Some(warning),
    }
}
