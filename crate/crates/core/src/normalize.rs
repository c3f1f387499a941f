//! Canonical string normalization shared by test cases and candidate output.
//!
//! A single pass runs these stages in a fixed order:
//!
//! 1. `<br>`, `<br/>` and `<br />` (any case) become newlines.
//! 2. Unicode NFC.
//! 3. ASCII folding of curly quotes and hyphen/dash/minus characters; soft
//!    hyphens are deleted.
//! 4. Markdown emphasis stripping (`**x**`, `__x__`, `*x*`, `_x_`), paired
//!    within one line only.
//! 5. Whitespace collapsing: every run becomes one ASCII space, or one `\n`
//!    when the run contains a line break (unless newlines are collapsed too).
//!    Lines are trimmed and NFC is re-applied to the result.
//!
//! Later stages can expose input for earlier ones (emphasis stripping can turn
//! `<*b*r>` into `<br>`), so passes repeat until the text is stable. Every pass
//! after the first is length non-increasing, which keeps the loop short.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

static BR_TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)<br\s*/?\s*>").unwrap());

const MAX_PASSES: usize = 8;

/// Text after [`normalize`]. `source_len` counts characters of the raw input.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NormalizedText {
    pub value: String,
    pub source_len: usize,
}

impl NormalizedText {
    pub fn as_str(&self) -> &str {
        &self.value
    }

    pub fn char_len(&self) -> usize {
        self.value.chars().count()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

impl AsRef<str> for NormalizedText {
    fn as_ref(&self) -> &str {
        &self.value
    }
}

impl std::fmt::Display for NormalizedText {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.value)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizeOptions {
    /// Collapse line breaks into single spaces as well.
    pub collapse_newlines: bool,
}

/// Normalize with default options (line breaks preserved).
pub fn normalize(raw: &str) -> NormalizedText {
    normalize_with(raw, NormalizeOptions::default())
}

pub fn normalize_with(raw: &str, opts: NormalizeOptions) -> NormalizedText {
    let mut value = single_pass(raw, opts);
    for _ in 1..MAX_PASSES {
        let next = single_pass(&value, opts);
        if next == value {
            break;
        }
        value = next;
    }
    NormalizedText {
        value,
        source_len: raw.chars().count(),
    }
}

fn single_pass(raw: &str, opts: NormalizeOptions) -> String {
    let s = BR_TAG.replace_all(raw, "\n");
    let s: String = s.nfc().collect();
    let s = fold_ascii(&s);
    let s = strip_emphasis(&s, opts);
    let s = collapse_whitespace(&s, opts);
    s.nfc().collect()
}

/// Characters that end a line for emphasis pairing and whitespace collapsing.
pub(crate) fn is_line_break(c: char) -> bool {
    matches!(
        c,
        '\n' | '\r' | '\u{0B}' | '\u{0C}' | '\u{85}' | '\u{2028}' | '\u{2029}'
    )
}

fn fold_ascii(s: &str) -> String {
    s.chars()
        .filter(|&c| c != '\u{AD}')
        .map(|c| match c {
            '\u{2018}' | '\u{2019}' => '\'',
            '\u{201C}' | '\u{201D}' => '"',
            '\u{2010}'..='\u{2015}' | '\u{2212}' => '-',
            other => other,
        })
        .collect()
}

fn strip_emphasis(s: &str, opts: NormalizeOptions) -> String {
    if !s.contains(['*', '_']) {
        return s.to_string();
    }
    let mut out = String::with_capacity(s.len());
    let mut line: Vec<char> = Vec::new();
    for c in s.chars() {
        if !opts.collapse_newlines && is_line_break(c) {
            strip_line(&mut line);
            out.extend(line.drain(..));
            out.push(c);
        } else {
            line.push(c);
        }
    }
    strip_line(&mut line);
    out.extend(line);
    out
}

fn strip_line(line: &mut Vec<char>) {
    loop {
        let mut changed = false;
        for marker in [&['*', '*'][..], &['_', '_'][..], &['*'][..], &['_'][..]] {
            while let Some((open, close)) = find_pair(line, marker) {
                let n = marker.len();
                line.drain(close..close + n);
                line.drain(open..open + n);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
}

fn marker_at(line: &[char], i: usize, marker: &[char]) -> bool {
    line.len() >= i + marker.len() && &line[i..i + marker.len()] == marker
}

/// Leftmost opener with the nearest valid closer on the same line.
fn find_pair(line: &[char], marker: &[char]) -> Option<(usize, usize)> {
    let n = marker.len();
    let underscore = marker[0] == '_';
    let word = |i: usize| line.get(i).is_some_and(|c| c.is_alphanumeric());
    for open in 0..line.len() {
        if !marker_at(line, open, marker) {
            continue;
        }
        let after = open + n;
        match line.get(after) {
            Some(c) if !c.is_whitespace() => {}
            _ => continue,
        }
        if underscore && open > 0 && word(open - 1) {
            continue;
        }
        for close in after + 1..line.len() {
            if !marker_at(line, close, marker) || line[close - 1].is_whitespace() {
                continue;
            }
            if underscore && word(close + n) {
                continue;
            }
            return Some((open, close));
        }
    }
    None
}

fn collapse_whitespace(s: &str, opts: NormalizeOptions) -> String {
    let mut out = String::with_capacity(s.len());
    let mut pending: Option<char> = None;
    for c in s.chars() {
        if c.is_whitespace() {
            let sep = if !opts.collapse_newlines && is_line_break(c) {
                '\n'
            } else {
                ' '
            };
            pending = match pending {
                Some('\n') => Some('\n'),
                _ => Some(sep),
            };
        } else {
            if let Some(sep) = pending.take() {
                if !out.is_empty() {
                    out.push(sep);
                }
            }
            out.push(c);
        }
    }
    out
}
