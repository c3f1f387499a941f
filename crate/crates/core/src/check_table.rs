//! Table Accuracy: extract Markdown pipe tables and HTML `<table>`s into
//! logical grids, then check a target cell's neighbourhood.
//!
//! HTML `rowspan`/`colspan` are expanded with the usual occupancy walk: a cell
//! spanning k columns fills k grid positions carrying the same text. Grid
//! neighbours skip positions that belong to the same source cell, so a cell
//! spanning two rows has as its `up` the cell above its top row.

use std::sync::LazyLock;

use regex::Regex;
use serde::Serialize;

use crate::check_text::{fuzzy_find, MatchResult, Window};
use crate::model::{CandidateDocument, TableRelationTest};
use crate::normalize::normalize;

/// Spans beyond this are clamped; protects against `colspan="100000"`.
pub const MAX_SPAN: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GridCell {
    pub text: String,
    pub row: usize,
    pub col: usize,
    pub rowspan: usize,
    pub colspan: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LogicalGrid {
    pub n_rows: usize,
    pub n_cols: usize,
    /// Source cells, in document order.
    pub cells: Vec<GridCell>,
    /// Row-major `n_rows * n_cols` map from position to source cell index.
    slots: Vec<Option<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    fn step(self) -> (isize, isize) {
        match self {
            Direction::Up => (-1, 0),
            Direction::Down => (1, 0),
            Direction::Left => (0, -1),
            Direction::Right => (0, 1),
        }
    }
}

/// Source cell before span expansion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceCell {
    pub text: String,
    pub rowspan: usize,
    pub colspan: usize,
}

impl SourceCell {
    pub fn plain(text: impl Into<String>) -> Self {
        SourceCell {
            text: text.into(),
            rowspan: 1,
            colspan: 1,
        }
    }
}

impl LogicalGrid {
    /// Lay out rows of source cells, expanding spans.
    pub fn from_rows(rows: &[Vec<SourceCell>]) -> LogicalGrid {
        let mut occupancy: Vec<Vec<Option<usize>>> = Vec::new();
        let mut cells = Vec::new();
        for (r, row) in rows.iter().enumerate() {
            if occupancy.len() <= r {
                occupancy.resize(r + 1, Vec::new());
            }
            let mut c = 0;
            for src in row {
                while occupancy[r].get(c).is_some_and(Option::is_some) {
                    c += 1;
                }
                let rowspan = src.rowspan.clamp(1, MAX_SPAN);
                let colspan = src.colspan.clamp(1, MAX_SPAN);
                let id = cells.len();
                cells.push(GridCell {
                    text: normalize(&src.text).value,
                    row: r,
                    col: c,
                    rowspan,
                    colspan,
                });
                if occupancy.len() < r + rowspan {
                    occupancy.resize(r + rowspan, Vec::new());
                }
                for line in occupancy.iter_mut().skip(r).take(rowspan) {
                    if line.len() < c + colspan {
                        line.resize(c + colspan, None);
                    }
                    for slot in line.iter_mut().skip(c).take(colspan) {
                        *slot = Some(id);
                    }
                }
                c += colspan;
            }
        }
        let n_rows = occupancy.len();
        let n_cols = occupancy.iter().map(Vec::len).max().unwrap_or(0);
        let mut slots = vec![None; n_rows * n_cols];
        for (r, line) in occupancy.iter().enumerate() {
            for (c, slot) in line.iter().enumerate() {
                slots[r * n_cols + c] = *slot;
            }
        }
        LogicalGrid {
            n_rows,
            n_cols,
            cells,
            slots,
        }
    }

    pub fn cell_id_at(&self, row: usize, col: usize) -> Option<usize> {
        if row < self.n_rows && col < self.n_cols {
            self.slots[row * self.n_cols + col]
        } else {
            None
        }
    }

    pub fn text_at(&self, row: usize, col: usize) -> Option<&str> {
        self.cell_id_at(row, col).map(|id| self.cells[id].text.as_str())
    }

    pub fn occupied_positions(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    /// Dense text matrix; unoccupied positions are `None`.
    pub fn to_matrix(&self) -> Vec<Vec<Option<String>>> {
        (0..self.n_rows)
            .map(|r| {
                (0..self.n_cols)
                    .map(|c| self.text_at(r, c).map(str::to_string))
                    .collect()
            })
            .collect()
    }

    fn walk(&self, row: usize, col: usize, dir: Direction) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (dr, dc) = dir.step();
        let (n_rows, n_cols) = (self.n_rows as isize, self.n_cols as isize);
        (1..).map_while(move |k: isize| {
            let r = row as isize + dr * k;
            let c = col as isize + dc * k;
            (r >= 0 && c >= 0 && r < n_rows && c < n_cols).then_some((r as usize, c as usize))
        })
    }

    /// Adjacent position in `dir` that belongs to a different source cell.
    pub fn neighbor(&self, row: usize, col: usize, dir: Direction) -> Option<(usize, usize)> {
        let own = self.cell_id_at(row, col);
        self.walk(row, col, dir)
            .find(|&(r, c)| own.is_none() || self.cell_id_at(r, c) != own)
    }

    pub fn neighbor_text(&self, row: usize, col: usize, dir: Direction) -> Option<&str> {
        self.neighbor(row, col, dir)
            .and_then(|(r, c)| self.text_at(r, c))
    }

    /// Nearest non-empty cell of another source cell scanning in `dir`.
    pub fn heading(&self, row: usize, col: usize, dir: Direction) -> Option<&str> {
        let own = self.cell_id_at(row, col);
        self.walk(row, col, dir)
            .filter_map(|(r, c)| self.cell_id_at(r, c))
            .filter(|&id| Some(id) != own)
            .map(|id| self.cells[id].text.as_str())
            .find(|t| !t.is_empty())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TableExtraction {
    pub grids: Vec<LogicalGrid>,
    /// Malformed tables that were skipped.
    pub diagnostics: Vec<String>,
}

/// All Markdown and HTML tables in a document's raw output.
pub fn extract_tables(doc: &CandidateDocument) -> TableExtraction {
    extract_tables_from(&doc.raw)
}

pub fn extract_tables_from(raw: &str) -> TableExtraction {
    let mut out = TableExtraction::default();
    let (html_grids, html_diags, rest) = parse_html_tables(raw);
    out.grids.extend(html_grids);
    out.diagnostics.extend(html_diags);
    let (md_grids, md_diags) = parse_markdown_tables(&rest);
    out.grids.extend(md_grids);
    out.diagnostics.extend(md_diags);
    out
}

// ---------------------------------------------------------------------------
// Markdown

static DELIMITER_CELL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^:?-+:?$").unwrap());

fn split_pipe_row(line: &str) -> Vec<String> {
    let mut t = line.trim();
    if let Some(s) = t.strip_prefix('|') {
        t = s;
    }
    if t.ends_with('|') && !t.ends_with("\\|") {
        t = &t[..t.len() - 1];
    }
    let mut cells = Vec::new();
    let mut cur = String::new();
    let mut chars = t.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '\\' if chars.peek() == Some(&'|') => {
                cur.push('|');
                chars.next();
            }
            '|' => cells.push(std::mem::take(&mut cur).trim().to_string()),
            _ => cur.push(c),
        }
    }
    cells.push(cur.trim().to_string());
    cells
}

fn is_delimiter_row(line: &str) -> Option<usize> {
    if !line.contains('-') {
        return None;
    }
    let cells = split_pipe_row(line);
    let ok = (line.contains('|') || cells.len() == 1)
        && cells.iter().all(|c| DELIMITER_CELL.is_match(c.replace(' ', "").as_str()));
    ok.then_some(cells.len())
}

fn parse_markdown_tables(text: &str) -> (Vec<LogicalGrid>, Vec<String>) {
    let lines: Vec<&str> = text.lines().collect();
    let mut grids = Vec::new();
    let mut diags = Vec::new();
    let mut i = 0;
    while i + 1 < lines.len() {
        let header = lines[i];
        if !header.contains('|') {
            i += 1;
            continue;
        }
        let Some(width) = is_delimiter_row(lines[i + 1]) else {
            i += 1;
            continue;
        };
        let head = split_pipe_row(header);
        if head.len() != width {
            diags.push(format!(
                "markdown table at line {}: header has {} cells, delimiter {}",
                i + 1,
                head.len(),
                width
            ));
            i += 2;
            continue;
        }
        let mut rows = vec![head];
        let mut j = i + 2;
        while j < lines.len() && lines[j].contains('|') && !lines[j].trim().is_empty() {
            let mut row = split_pipe_row(lines[j]);
            row.resize(width, String::new());
            rows.push(row);
            j += 1;
        }
        let rows: Vec<Vec<SourceCell>> = rows
            .into_iter()
            .map(|r| r.into_iter().map(SourceCell::plain).collect())
            .collect();
        grids.push(LogicalGrid::from_rows(&rows));
        i = j;
    }
    (grids, diags)
}

// ---------------------------------------------------------------------------
// HTML

static TAG: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?s)<!--.*?-->|<\s*(/?)\s*([A-Za-z][A-Za-z0-9]*)([^>]*)>").unwrap()
});
static SPAN_ATTR: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(?i)\b(rowspan|colspan)\s*=\s*["']?\s*(\d+)"#).unwrap()
});

#[derive(Default)]
struct TableBuilder {
    rows: Vec<Vec<SourceCell>>,
    in_row: bool,
    open_cell: Option<SourceCell>,
}

impl TableBuilder {
    fn close_cell(&mut self) {
        if let Some(cell) = self.open_cell.take() {
            if !self.in_row {
                self.rows.push(Vec::new());
                self.in_row = true;
            }
            self.rows.last_mut().expect("row open").push(cell);
        }
    }

    fn close_row(&mut self) {
        self.close_cell();
        self.in_row = false;
    }

    fn open_row(&mut self) {
        self.close_row();
        self.rows.push(Vec::new());
        self.in_row = true;
    }
}

fn decode_entities(s: &str) -> String {
    if !s.contains('&') {
        return s.to_string();
    }
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(pos) = rest.find('&') {
        out.push_str(&rest[..pos]);
        rest = &rest[pos..];
        let end = rest[..rest.len().min(12)].find(';');
        let decoded = end.and_then(|e| {
            let name = &rest[1..e];
            let c = match name {
                "amp" => Some('&'),
                "lt" => Some('<'),
                "gt" => Some('>'),
                "quot" => Some('"'),
                "apos" | "#39" => Some('\''),
                "nbsp" => Some('\u{A0}'),
                _ => {
                    if let Some(hex) = name.strip_prefix("#x").or_else(|| name.strip_prefix("#X")) {
                        u32::from_str_radix(hex, 16).ok().and_then(char::from_u32)
                    } else if let Some(dec) = name.strip_prefix('#') {
                        dec.parse().ok().and_then(char::from_u32)
                    } else {
                        None
                    }
                }
            };
            c.map(|c| (c, e + 1))
        });
        match decoded {
            Some((c, len)) => {
                out.push(c);
                rest = &rest[len..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

fn span_attrs(attrs: &str) -> (usize, usize) {
    let mut rowspan = 1;
    let mut colspan = 1;
    for cap in SPAN_ATTR.captures_iter(attrs) {
        let v: usize = cap[2].parse().unwrap_or(1);
        if cap[1].eq_ignore_ascii_case("rowspan") {
            rowspan = v.max(1);
        } else {
            colspan = v.max(1);
        }
    }
    (rowspan, colspan)
}

/// Returns grids, diagnostics, and the input with table markup removed so the
/// Markdown pass does not see it.
fn parse_html_tables(raw: &str) -> (Vec<LogicalGrid>, Vec<String>, String) {
    if !raw.to_ascii_lowercase().contains("<table") {
        return (Vec::new(), Vec::new(), raw.to_string());
    }
    let mut grids = Vec::new();
    let mut diags = Vec::new();
    let mut rest = String::with_capacity(raw.len());
    let mut stack: Vec<TableBuilder> = Vec::new();
    let mut last = 0;

    let push_text = |stack: &mut Vec<TableBuilder>, text: &str| {
        let text = decode_entities(text);
        for b in stack.iter_mut() {
            if let Some(cell) = b.open_cell.as_mut() {
                cell.text.push_str(&text);
            }
        }
    };

    for m in TAG.captures_iter(raw) {
        let whole = m.get(0).expect("match");
        let between = &raw[last..whole.start()];
        if stack.is_empty() {
            rest.push_str(between);
        } else {
            push_text(&mut stack, between);
        }
        last = whole.end();
        let Some(name) = m.get(2) else {
            continue; // comment
        };
        let closing = !m[1].is_empty();
        let name = name.as_str().to_ascii_lowercase();
        match (name.as_str(), closing) {
            ("table", false) => stack.push(TableBuilder::default()),
            ("table", true) => match stack.pop() {
                Some(mut b) => {
                    b.close_row();
                    let rows: Vec<Vec<SourceCell>> =
                        b.rows.into_iter().filter(|r| !r.is_empty()).collect();
                    if rows.is_empty() {
                        diags.push("html table without cells".to_string());
                    } else {
                        grids.push(LogicalGrid::from_rows(&rows));
                    }
                }
                None => diags.push("stray </table>".to_string()),
            },
            _ if stack.is_empty() => rest.push_str(whole.as_str()),
            ("tr", false) => stack.last_mut().expect("table").open_row(),
            ("tr", true) => stack.last_mut().expect("table").close_row(),
            ("td" | "th", false) => {
                let (rowspan, colspan) = span_attrs(&m[3]);
                let b = stack.last_mut().expect("table");
                b.close_cell();
                b.open_cell = Some(SourceCell {
                    text: String::new(),
                    rowspan,
                    colspan,
                });
            }
            ("td" | "th", true) => stack.last_mut().expect("table").close_cell(),
            ("br", _) | ("p", true) | ("div", true) | ("li", true) => push_text(&mut stack, "\n"),
            _ => {}
        }
    }
    let tail = &raw[last..];
    if stack.is_empty() {
        rest.push_str(tail);
    } else {
        diags.push(format!("{} unclosed html table(s) skipped", stack.len()));
    }
    (grids, diags, rest)
}

// ---------------------------------------------------------------------------
// Checking

fn cell_matches(expected: &str, actual: Option<&str>, max_diffs: u32, case_sensitive: bool) -> bool {
    let expected = normalize(expected).value;
    match actual {
        _ if expected.is_empty() => actual.is_none_or(str::is_empty),
        Some(text) => fuzzy_find(&expected, text, max_diffs, Window::WHOLE, case_sensitive).passed,
        None => false,
    }
}

fn relations_hold(
    tc: &TableRelationTest,
    grid: &LogicalGrid,
    row: usize,
    col: usize,
    max_diffs: u32,
    cs: bool,
) -> bool {
    let checks: [(&Option<String>, Option<&str>); 6] = [
        (&tc.up, grid.neighbor_text(row, col, Direction::Up)),
        (&tc.down, grid.neighbor_text(row, col, Direction::Down)),
        (&tc.left, grid.neighbor_text(row, col, Direction::Left)),
        (&tc.right, grid.neighbor_text(row, col, Direction::Right)),
        (&tc.top_heading, grid.heading(row, col, Direction::Up)),
        (&tc.left_heading, grid.heading(row, col, Direction::Left)),
    ];
    checks.iter().all(|(expected, actual)| {
        expected
            .as_ref()
            .is_none_or(|e| cell_matches(e, *actual, max_diffs, cs))
    })
}

/// Passes when some grid holds a cell matching `tc.cell` from whose position
/// every stated relation holds.
pub fn check_table(
    tc: &TableRelationTest,
    doc: &CandidateDocument,
    max_diffs: u32,
    case_sensitive: bool,
) -> MatchResult {
    let extraction = extract_tables(doc);
    if extraction.grids.is_empty() {
        return MatchResult::fail("no tables found");
    }
    let mut target_seen = false;
    for (g, grid) in extraction.grids.iter().enumerate() {
        for row in 0..grid.n_rows {
            for col in 0..grid.n_cols {
                if !cell_matches(&tc.cell, grid.text_at(row, col), max_diffs, case_sensitive) {
                    continue;
                }
                target_seen = true;
                if relations_hold(tc, grid, row, col, max_diffs, case_sensitive) {
                    return MatchResult::pass(format!("table {g} cell ({row},{col}) satisfies all relations"));
                }
            }
        }
    }
    if target_seen {
        MatchResult::fail("target cell found but relations do not hold")
    } else {
        MatchResult::fail("target cell not found in any table")
    }
}
