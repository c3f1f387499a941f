//! Text Presence, Text Absence, Natural Reading Order and Baseline checks.
//!
//! All comparisons run on normalized text measured in characters. Fuzzy
//! matching is approximate substring search: the needle must match some
//! substring of the haystack within `max_diffs` edits (insertions, deletions
//! or substitutions); skipping haystack text on either side is free.

use serde::{Deserialize, Serialize};

use crate::model::{CandidateDocument, TestCase, TestKind};
use crate::normalize::normalize;

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    pub passed: bool,
    pub best_distance: usize,
    pub location: Option<usize>,
    pub explanation: String,
}

impl MatchResult {
    pub fn pass(explanation: impl Into<String>) -> Self {
        MatchResult {
            passed: true,
            best_distance: 0,
            location: None,
            explanation: explanation.into(),
        }
    }

    pub fn fail(explanation: impl Into<String>) -> Self {
        MatchResult {
            passed: false,
            best_distance: 0,
            location: None,
            explanation: explanation.into(),
        }
    }
}

/// Restrict matching to the first and/or last N characters of a document.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Window {
    pub first_n: Option<usize>,
    pub last_n: Option<usize>,
}

impl Window {
    pub const WHOLE: Window = Window {
        first_n: None,
        last_n: None,
    };

    pub fn of(tc: &TestCase) -> Self {
        Window {
            first_n: tc.first_n,
            last_n: tc.last_n,
        }
    }

    /// Character range `[start, end)` of a document of `len` characters.
    pub fn range(self, len: usize) -> (usize, usize) {
        let end = self.first_n.map_or(len, |n| n.min(len));
        let start = self.last_n.map_or(0, |n| len.saturating_sub(n));
        (start.min(end), end)
    }
}

/// Default fuzz budget for text tests: a tenth of the needle length.
pub fn default_max_diffs(needle: &str) -> u32 {
    (needle.chars().count() / 10) as u32
}

/// Fold case per character so offsets stay aligned with the original text.
fn fold_case(c: char) -> char {
    let mut lower = c.to_lowercase();
    match (lower.next(), lower.next()) {
        (Some(l), None) => l,
        _ => c,
    }
}

fn chars_of(s: &str, case_sensitive: bool) -> Vec<char> {
    if case_sensitive {
        s.chars().collect()
    } else {
        s.chars().map(fold_case).collect()
    }
}

/// All minimal-distance occurrences of `needle` in `hay`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Occurrences {
    pub distance: usize,
    /// Distinct start offsets (into `hay`) of minimal-distance matches, ascending.
    pub starts: Vec<usize>,
}

/// Substring edit distance by the column-wise DP with a free start row. Each
/// cell also carries the haystack offset where its best alignment begins;
/// ties prefer the diagonal, then a deletion, then an insertion.
pub fn occurrences(needle: &[char], hay: &[char]) -> Occurrences {
    let m = needle.len();
    if m == 0 {
        return Occurrences {
            distance: 0,
            starts: (0..=hay.len()).collect(),
        };
    }
    // column j holds (distance, start) for needle prefixes 0..=m against hay ending at j
    let mut prev: Vec<(usize, usize)> = (0..=m).map(|i| (i, 0)).collect();
    let mut cur = prev.clone();
    let mut best = prev[m].0;
    let mut starts = vec![0];
    for (j, &h) in hay.iter().enumerate() {
        let col = j + 1;
        cur[0] = (0, col);
        for i in 1..=m {
            let cost = usize::from(needle[i - 1] != h);
            let diag = (prev[i - 1].0 + cost, prev[i - 1].1);
            let del = (cur[i - 1].0 + 1, cur[i - 1].1);
            let ins = (prev[i].0 + 1, prev[i].1);
            let mut pick = diag;
            if del.0 < pick.0 {
                pick = del;
            }
            if ins.0 < pick.0 {
                pick = ins;
            }
            cur[i] = pick;
        }
        let (d, s) = cur[m];
        if d < best {
            best = d;
            starts.clear();
            starts.push(s);
        } else if d == best {
            starts.push(s);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    starts.sort_unstable();
    starts.dedup();
    Occurrences {
        distance: best,
        starts,
    }
}

/// Search `needle` in `haystack` within `window`.
pub fn fuzzy_find(
    needle: &str,
    haystack: &str,
    max_diffs: u32,
    window: Window,
    case_sensitive: bool,
) -> MatchResult {
    let needle = chars_of(needle, case_sensitive);
    let hay = chars_of(haystack, case_sensitive);
    let (lo, hi) = window.range(hay.len());
    let occ = occurrences(&needle, &hay[lo..hi]);
    let passed = occ.distance <= max_diffs as usize;
    let location = occ.starts.first().map(|s| s + lo);
    let explanation = if passed {
        format!(
            "found at offset {} with {} edits",
            location.unwrap_or(lo),
            occ.distance
        )
    } else {
        format!(
            "best match needs {} edits, budget {}",
            occ.distance, max_diffs
        )
    };
    MatchResult {
        passed,
        best_distance: occ.distance,
        location,
        explanation,
    }
}

fn text_budget(tc: &TestCase, needle: &str) -> u32 {
    tc.max_diffs.unwrap_or_else(|| default_max_diffs(needle))
}

pub fn check_presence(tc: &TestCase, doc: &CandidateDocument) -> MatchResult {
    let TestKind::Present { text } = &tc.kind else {
        return MatchResult::fail("not a presence test");
    };
    let needle = normalize(text).value;
    fuzzy_find(
        &needle,
        doc.normalized.as_str(),
        text_budget(tc, &needle),
        Window::of(tc),
        tc.is_case_sensitive(),
    )
}

pub fn check_absence(tc: &TestCase, doc: &CandidateDocument) -> MatchResult {
    let TestKind::Absent { text } = &tc.kind else {
        return MatchResult::fail("not an absence test");
    };
    let needle = normalize(text).value;
    let found = fuzzy_find(
        &needle,
        doc.normalized.as_str(),
        text_budget(tc, &needle),
        Window::of(tc),
        tc.is_case_sensitive(),
    );
    let explanation = if found.passed {
        format!("text should be absent but was {}", found.explanation)
    } else {
        "text absent".to_string()
    };
    MatchResult {
        passed: !found.passed,
        explanation,
        ..found
    }
}

pub fn check_order(tc: &TestCase, doc: &CandidateDocument) -> MatchResult {
    let TestKind::Order { before, after } = &tc.kind else {
        return MatchResult::fail("not a reading-order test");
    };
    let cs = tc.is_case_sensitive();
    let hay = chars_of(doc.normalized.as_str(), cs);
    let (lo, hi) = Window::of(tc).range(hay.len());
    let region = &hay[lo..hi];

    let find = |segment: &str| {
        let needle = normalize(segment).value;
        let budget = text_budget(tc, &needle) as usize;
        let occ = occurrences(&chars_of(&needle, cs), region);
        (occ.distance <= budget).then_some(occ)
    };
    let (Some(b), Some(a)) = (find(before), find(after)) else {
        return MatchResult::fail("anchor not found");
    };
    let distance = b.distance.max(a.distance);
    // any ordered pair passes; the earliest `before` is the best witness
    let first_before = b.starts[0];
    match a.starts.iter().find(|&&s| s > first_before) {
        Some(&after_at) => MatchResult {
            passed: true,
            best_distance: distance,
            location: Some(first_before + lo),
            explanation: format!(
                "before at {} precedes after at {}",
                first_before + lo,
                after_at + lo
            ),
        },
        None => MatchResult {
            passed: false,
            best_distance: distance,
            location: Some(first_before + lo),
            explanation: "segments out of order".into(),
        },
    }
}

/// Repetition and charset rules for baseline tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BaselineConfig {
    /// Longest repeating unit, in characters.
    pub max_unit: usize,
    /// A trailing repeated span longer than this fails the test.
    pub repeat_threshold: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            max_unit: 50,
            repeat_threshold: 30,
        }
    }
}

/// Longest run of whole repeated units at the end of `text`, as
/// `(unit_len, span_len)`, considering only runs of at least two units.
pub fn trailing_repetition(text: &str, max_unit: usize) -> Option<(usize, usize)> {
    let chars: Vec<char> = text.trim_end().chars().collect();
    let n = chars.len();
    let mut best: Option<(usize, usize)> = None;
    for unit in 1..=max_unit.min(n / 2) {
        let tail = &chars[n - unit..];
        let mut reps = 1;
        while (reps + 1) * unit <= n && &chars[n - (reps + 1) * unit..n - reps * unit] == tail {
            reps += 1;
        }
        if reps >= 2 && best.is_none_or(|(_, span)| reps * unit > span) {
            best = Some((unit, reps * unit));
        }
    }
    best
}

/// CJK ideographs, kana and emoji presentation ranges.
pub fn is_disallowed_char(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x309F            // Hiragana
        | 0x30A0..=0x30FF          // Katakana
        | 0x31F0..=0x31FF          // Katakana phonetic extensions
        | 0x3400..=0x4DBF          // CJK extension A
        | 0x4E00..=0x9FFF          // CJK unified ideographs
        | 0xF900..=0xFAFF          // CJK compatibility ideographs
        | 0x20000..=0x3134F        // CJK extensions B-G
        | 0x1F1E6..=0x1F1FF        // regional indicators
        | 0x1F300..=0x1F5FF
        | 0x1F600..=0x1F64F
        | 0x1F680..=0x1F6FF
        | 0x1F900..=0x1F9FF
        | 0x1FA70..=0x1FAFF
    )
}

pub fn check_baseline(doc: &CandidateDocument, cjk_ok: bool) -> MatchResult {
    check_baseline_with(doc, cjk_ok, BaselineConfig::default())
}

pub fn check_baseline_with(
    doc: &CandidateDocument,
    cjk_ok: bool,
    cfg: BaselineConfig,
) -> MatchResult {
    let text = doc.normalized.as_str();
    if !text.chars().any(char::is_alphanumeric) {
        return MatchResult::fail("no alphanumeric output");
    }
    if let Some((unit, span)) = trailing_repetition(text, cfg.max_unit) {
        if span > cfg.repeat_threshold {
            return MatchResult::fail(format!(
                "output ends with a {span}-char repetition of a {unit}-char unit"
            ));
        }
    }
    if !cjk_ok {
        if let Some((at, c)) = text.chars().enumerate().find(|&(_, c)| is_disallowed_char(c)) {
            let mut result = MatchResult::fail(format!("disallowed character U+{:04X}", c as u32));
            result.location = Some(at);
            return result;
        }
    }
    MatchResult::pass("baseline ok")
}
