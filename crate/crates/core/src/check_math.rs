//! Math Formula Accuracy by rendered-layout matching.
//!
//! The reference equation and every equation found in the candidate output
//! are rendered to symbol boxes. Two symbols are related `left-of` when their
//! centers differ by more than a tolerance along x, and `above` likewise along
//! y. The test passes when some candidate equation admits an injective,
//! glyph-preserving map of the reference symbols that keeps every reference
//! relation. Extra candidate symbols are ignored.

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::check_text::MatchResult;
use crate::model::{CandidateDocument, TestKind};
use crate::render::{RenderError, RenderRequest, Renderer, SymbolBox};

/// Node expansions allowed per candidate equation.
pub const DEFAULT_EXPANSION_BUDGET: u64 = 1_000_000;

/// Tolerance as a fraction of the reference's median symbol height.
pub const DEFAULT_TAU_FRACTION: f64 = 0.25;

/// Visually identical code points folded before glyph comparison.
pub const GLYPH_EQUIVALENCES: &[(char, char)] = &[
    ('\u{2212}', '-'), // minus sign
    ('\u{2010}', '-'),
    ('\u{2011}', '-'),
    ('\u{2012}', '-'),
    ('\u{2013}', '-'),
    ('\u{FE63}', '-'),
    ('\u{FF0D}', '-'),
    ('\u{2032}', '\''), // prime
    ('\u{2019}', '\''),
    ('\u{2217}', '*'), // asterisk operator
    ('\u{2223}', '|'), // divides
    ('\u{2236}', ':'), // ratio
    ('\u{210E}', 'h'), // planck constant
    ('\u{FF0B}', '+'),
    ('\u{FF1D}', '='),
];

pub fn canonical_glyph(glyph: &str) -> String {
    glyph
        .nfc()
        .map(|c| {
            GLYPH_EQUIVALENCES
                .iter()
                .find(|(from, _)| *from == c)
                .map_or(c, |&(_, to)| to)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymbolLayout {
    pub source: String,
    pub symbols: Vec<SymbolBox>,
}

impl SymbolLayout {
    pub fn new(source: impl Into<String>, symbols: Vec<SymbolBox>) -> Self {
        SymbolLayout {
            source: source.into(),
            symbols,
        }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn median_height(&self) -> f64 {
        let mut h: Vec<f64> = self.symbols.iter().map(SymbolBox::height).collect();
        if h.is_empty() {
            return 0.0;
        }
        h.sort_by(f64::total_cmp);
        let mid = h.len() / 2;
        if h.len() % 2 == 1 {
            h[mid]
        } else {
            (h[mid - 1] + h[mid]) / 2.0
        }
    }

    /// Default tolerance for this layout used as a reference.
    pub fn default_tau(&self) -> f64 {
        (self.median_height() * DEFAULT_TAU_FRACTION).max(f64::EPSILON)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    LeftOf,
    Above,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationGraph {
    pub glyphs: Vec<String>,
    pub edges: Vec<(usize, usize, Relation)>,
}

fn left_of(a: &SymbolBox, b: &SymbolBox, tau: f64) -> bool {
    a.center().0 + tau < b.center().0
}

fn above(a: &SymbolBox, b: &SymbolBox, tau: f64) -> bool {
    a.center().1 + tau < b.center().1
}

/// Pairwise `left-of`/`above` edges between symbol centers. Right-of and
/// below are the converse edges and are not stored.
pub fn relation_graph(layout: &SymbolLayout, tau: f64) -> RelationGraph {
    let s = &layout.symbols;
    let mut edges = Vec::new();
    for i in 0..s.len() {
        for j in 0..s.len() {
            if i == j {
                continue;
            }
            if left_of(&s[i], &s[j], tau) {
                edges.push((i, j, Relation::LeftOf));
            }
            if above(&s[i], &s[j], tau) {
                edges.push((i, j, Relation::Above));
            }
        }
    }
    RelationGraph {
        glyphs: s.iter().map(|b| canonical_glyph(&b.glyph)).collect(),
        edges,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FormulaMatch {
    pub matched: bool,
    pub expansions: u64,
    pub budget_exhausted: bool,
}

impl FormulaMatch {
    pub fn is_match(&self) -> bool {
        self.matched
    }
}

pub fn match_formula(reference: &SymbolLayout, candidate: &SymbolLayout, tau: f64) -> FormulaMatch {
    match_formula_with_budget(reference, candidate, tau, DEFAULT_EXPANSION_BUDGET)
}

struct Search<'a> {
    order: Vec<usize>,
    options: Vec<Vec<usize>>,
    ref_syms: &'a [SymbolBox],
    cand_syms: &'a [SymbolBox],
    tau: f64,
    assigned: Vec<Option<usize>>,
    used: Vec<bool>,
    expansions: u64,
    budget: u64,
}

impl Search<'_> {
    fn consistent(&self, r: usize, c: usize) -> bool {
        let (rs, cs, tau) = (self.ref_syms, self.cand_syms, self.tau);
        self.assigned.iter().enumerate().all(|(p, m)| {
            let Some(mp) = *m else { return true };
            (!left_of(&rs[p], &rs[r], tau) || left_of(&cs[mp], &cs[c], tau))
                && (!left_of(&rs[r], &rs[p], tau) || left_of(&cs[c], &cs[mp], tau))
                && (!above(&rs[p], &rs[r], tau) || above(&cs[mp], &cs[c], tau))
                && (!above(&rs[r], &rs[p], tau) || above(&cs[c], &cs[mp], tau))
        })
    }

    /// `Some(found)` when the search finished, `None` on budget exhaustion.
    fn run(&mut self, depth: usize) -> Option<bool> {
        if depth == self.order.len() {
            return Some(true);
        }
        let r = self.order[depth];
        for k in 0..self.options[r].len() {
            let c = self.options[r][k];
            if self.used[c] {
                continue;
            }
            self.expansions += 1;
            if self.expansions > self.budget {
                return None;
            }
            if !self.consistent(r, c) {
                continue;
            }
            self.assigned[r] = Some(c);
            self.used[c] = true;
            let found = self.run(depth + 1);
            self.assigned[r] = None;
            self.used[c] = false;
            match found {
                Some(false) => {}
                other => return other,
            }
        }
        Some(false)
    }
}

/// Backtracking search, rarest reference glyph first.
pub fn match_formula_with_budget(
    reference: &SymbolLayout,
    candidate: &SymbolLayout,
    tau: f64,
    budget: u64,
) -> FormulaMatch {
    let no = |expansions| FormulaMatch {
        matched: false,
        expansions,
        budget_exhausted: false,
    };
    if reference.is_empty() || reference.len() > candidate.len() {
        return no(0);
    }
    let mut by_glyph: HashMap<String, Vec<usize>> = HashMap::new();
    for (i, s) in candidate.symbols.iter().enumerate() {
        by_glyph.entry(canonical_glyph(&s.glyph)).or_default().push(i);
    }
    let options: Vec<Vec<usize>> = reference
        .symbols
        .iter()
        .map(|s| by_glyph.get(&canonical_glyph(&s.glyph)).cloned().unwrap_or_default())
        .collect();
    if options.iter().any(Vec::is_empty) {
        return no(0);
    }
    let mut order: Vec<usize> = (0..reference.len()).collect();
    order.sort_by_key(|&i| (options[i].len(), i));

    let mut search = Search {
        order,
        options,
        ref_syms: &reference.symbols,
        cand_syms: &candidate.symbols,
        tau,
        assigned: vec![None; reference.len()],
        used: vec![false; candidate.len()],
        expansions: 0,
        budget,
    };
    match search.run(0) {
        Some(matched) => FormulaMatch {
            matched,
            expansions: search.expansions,
            budget_exhausted: false,
        },
        None => FormulaMatch {
            matched: false,
            expansions: search.expansions,
            budget_exhausted: true,
        },
    }
}

/// LaTeX spans delimited by `$$…$$`, `\[…\]`, `\(…\)` or `$…$`, outside
/// triple-backtick code fences. Deduplicated, first occurrence order.
pub fn extract_candidate_equations(raw: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut push = |s: &str| {
        let s = s.trim();
        if !s.is_empty() && !out.iter().any(|o| o == s) {
            out.push(s.to_string());
        }
    };
    for (i, segment) in raw.split("```").enumerate() {
        if i % 2 == 1 {
            continue;
        }
        let mut rest = segment;
        loop {
            let Some((start, open, close)) = next_opener(rest) else {
                break;
            };
            let body_start = start + open.len();
            match find_closer(&rest[body_start..], close) {
                Some(end) => {
                    push(&rest[body_start..body_start + end]);
                    rest = &rest[body_start + end + close.len()..];
                }
                None => rest = &rest[body_start..],
            }
        }
    }
    out
}

fn next_opener(s: &str) -> Option<(usize, &'static str, &'static str)> {
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => match bytes.get(i + 1) {
                Some(b'[') => return Some((i, "\\[", "\\]")),
                Some(b'(') => return Some((i, "\\(", "\\)")),
                _ => i += 2,
            },
            b'$' if bytes.get(i + 1) == Some(&b'$') => return Some((i, "$$", "$$")),
            b'$' => return Some((i, "$", "$")),
            _ => i += 1,
        }
    }
    None
}

fn find_closer(s: &str, close: &str) -> Option<usize> {
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if s[i..].starts_with(close) {
            return Some(i);
        }
        if bytes[i] == b'\\' && close == "$" {
            i += 2;
            continue;
        }
        i += 1;
    }
    None
}

#[derive(Debug, Error)]
pub enum MathError {
    #[error(transparent)]
    Renderer(#[from] RenderError),
    #[error("reference equation failed to render: {0}")]
    Reference(String),
    #[error("not a math test")]
    WrongCategory,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MathOptions {
    /// Absolute tolerance in render pixels; defaults to a quarter of the
    /// reference's median symbol height.
    pub tau: Option<f64>,
    pub budget: u64,
}

impl Default for MathOptions {
    fn default() -> Self {
        MathOptions {
            tau: None,
            budget: DEFAULT_EXPANSION_BUDGET,
        }
    }
}

/// Render `latex` strings in one batch, returning layouts (or the error).
pub fn render_layouts(
    renderer: &dyn Renderer,
    latex: &[String],
) -> Result<Vec<Result<SymbolLayout, String>>, RenderError> {
    let requests: Vec<RenderRequest> = latex
        .iter()
        .enumerate()
        .map(|(i, l)| RenderRequest::new(format!("eq{i}"), l.clone(), true))
        .collect();
    let responses = renderer.render_batch(&requests)?;
    if responses.len() != requests.len() {
        return Err(RenderError::Protocol(format!(
            "{} responses for {} requests",
            responses.len(),
            requests.len()
        )));
    }
    let by_id: HashMap<&str, _> = responses.iter().map(|r| (r.id.as_str(), r)).collect();
    Ok(requests
        .iter()
        .map(|req| match by_id.get(req.id.as_str()) {
            Some(r) if r.ok && !r.symbols.is_empty() => {
                let symbols: Vec<SymbolBox> =
                    r.symbols.iter().filter(|s| s.is_valid()).cloned().collect();
                Ok(SymbolLayout::new(req.latex.clone(), symbols))
            }
            Some(r) => Err(r.error.clone().unwrap_or_else(|| "empty rendering".into())),
            None => Err(format!("no response for {}", req.id)),
        })
        .collect())
}

pub fn check_math(
    reference_latex: &str,
    doc: &CandidateDocument,
    renderer: &dyn Renderer,
    opts: MathOptions,
) -> Result<MatchResult, MathError> {
    let candidates = extract_candidate_equations(&doc.raw);
    let mut latex = vec![reference_latex.to_string()];
    latex.extend(candidates.iter().cloned());
    let mut layouts = render_layouts(renderer, &latex)?.into_iter();
    let reference = layouts
        .next()
        .expect("reference requested")
        .map_err(MathError::Reference)?;
    if reference.is_empty() {
        return Err(MathError::Reference("no symbols".into()));
    }
    if candidates.is_empty() {
        return Ok(MatchResult::fail("no equations in output"));
    }
    let tau = opts.tau.unwrap_or_else(|| reference.default_tau());
    let mut exhausted = 0;
    let mut rendered = 0;
    for (i, layout) in layouts.enumerate() {
        let Ok(layout) = layout else { continue };
        rendered += 1;
        let m = match_formula_with_budget(&reference, &layout, tau, opts.budget);
        if m.matched {
            return Ok(MatchResult::pass(format!("matched candidate equation {i}")));
        }
        if m.budget_exhausted {
            exhausted += 1;
        }
    }
    let mut why = format!(
        "no match among {} equations ({} rendered)",
        candidates.len(),
        rendered
    );
    if exhausted > 0 {
        why.push_str(&format!("; search budget exhausted on {exhausted}"));
    }
    Ok(MatchResult::fail(why))
}

/// Convenience wrapper taking the math test case itself.
pub fn check_math_test(
    kind: &TestKind,
    doc: &CandidateDocument,
    renderer: &dyn Renderer,
    opts: MathOptions,
) -> Result<MatchResult, MathError> {
    match kind {
        TestKind::Math { math } => check_math(math, doc, renderer, opts),
        _ => Err(MathError::WrongCategory),
    }
}
