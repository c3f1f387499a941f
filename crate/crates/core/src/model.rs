//! Test cases, corpora and candidate documents.
//!
//! A corpus directory holds one JSONL file per document source (the file stem
//! is the source name) plus a `pdfs/` tree that every test's `pdf` path must
//! resolve under. An optional `baseline_flags.jsonl` marks pages whose
//! baseline charset check is disabled (`"cjk_ok": true`) or whose baseline
//! test is suppressed entirely (`"suppress": true`).

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::normalize::{normalize, NormalizedText};

/// Keys accepted in a corpus line. Anything else is reported as a warning.
pub const CORPUS_KEYS: &[&str] = &[
    "id",
    "pdf",
    "page",
    "type",
    "text",
    "before",
    "after",
    "cell",
    "up",
    "down",
    "left",
    "right",
    "top_heading",
    "left_heading",
    "math",
    "max_diffs",
    "first_n",
    "last_n",
    "case_sensitive",
    "checked",
    "url",
];

pub const FLAGS_FILE: &str = "baseline_flags.jsonl";
pub const BASELINE_SOURCE: &str = "baseline";
pub const PDF_DIR: &str = "pdfs";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Present,
    Absent,
    Order,
    Table,
    Math,
    Baseline,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Present,
        Category::Absent,
        Category::Order,
        Category::Table,
        Category::Math,
        Category::Baseline,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Present => "present",
            Category::Absent => "absent",
            Category::Order => "order",
            Category::Table => "table",
            Category::Math => "math",
            Category::Baseline => "baseline",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Category::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Expected neighbourhood of a table cell.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TableRelationTest {
    pub cell: String,
    pub up: Option<String>,
    pub down: Option<String>,
    pub left: Option<String>,
    pub right: Option<String>,
    pub top_heading: Option<String>,
    pub left_heading: Option<String>,
}

impl TableRelationTest {
    pub fn has_relation(&self) -> bool {
        [
            &self.up,
            &self.down,
            &self.left,
            &self.right,
            &self.top_heading,
            &self.left_heading,
        ]
        .iter()
        .any(|r| r.is_some())
    }
}

/// Category-specific payload of a test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TestKind {
    Present { text: String },
    Absent { text: String },
    Order { before: String, after: String },
    Table(TableRelationTest),
    Math { math: String },
    Baseline { cjk_ok: bool },
}

impl TestKind {
    pub fn category(&self) -> Category {
        match self {
            TestKind::Present { .. } => Category::Present,
            TestKind::Absent { .. } => Category::Absent,
            TestKind::Order { .. } => Category::Order,
            TestKind::Table(_) => Category::Table,
            TestKind::Math { .. } => Category::Math,
            TestKind::Baseline { .. } => Category::Baseline,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestCase {
    pub id: String,
    pub pdf: String,
    pub page: u32,
    pub kind: TestKind,
    pub max_diffs: Option<u32>,
    pub first_n: Option<usize>,
    pub last_n: Option<usize>,
    pub case_sensitive: Option<bool>,
    pub checked: Option<String>,
    pub url: Option<String>,
}

impl TestCase {
    pub fn new(id: impl Into<String>, pdf: impl Into<String>, page: u32, kind: TestKind) -> Self {
        TestCase {
            id: id.into(),
            pdf: pdf.into(),
            page,
            kind,
            max_diffs: None,
            first_n: None,
            last_n: None,
            case_sensitive: None,
            checked: None,
            url: None,
        }
    }

    pub fn category(&self) -> Category {
        self.kind.category()
    }

    /// Absence tests compare case-insensitively unless told otherwise.
    pub fn is_case_sensitive(&self) -> bool {
        self.case_sensitive
            .unwrap_or(!matches!(self.kind, TestKind::Absent { .. }))
    }

    pub fn page_key(&self) -> PageKey {
        PageKey {
            pdf: self.pdf.clone(),
            page: self.page,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        if self.page < 1 {
            return Err("page must be >= 1".into());
        }
        if self.first_n == Some(0) || self.last_n == Some(0) {
            return Err("first_n/last_n must be >= 1".into());
        }
        let nonempty = |field: &str, v: &str| {
            if v.trim().is_empty() {
                Err(format!("`{field}` must be non-empty"))
            } else {
                Ok(())
            }
        };
        match &self.kind {
            TestKind::Present { text } | TestKind::Absent { text } => nonempty("text", text),
            TestKind::Order { before, after } => {
                nonempty("before", before)?;
                nonempty("after", after)
            }
            TestKind::Table(t) => {
                nonempty("cell", &t.cell)?;
                if t.has_relation() {
                    Ok(())
                } else {
                    Err("table test needs at least one relation".into())
                }
            }
            TestKind::Math { math } => nonempty("math", math),
            TestKind::Baseline { .. } => Ok(()),
        }
    }

    /// Parse one corpus line. Returns the test plus any unknown keys.
    pub fn from_json_line(line: &str) -> Result<(TestCase, Vec<String>), String> {
        let value: Value = serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
        let Value::Object(map) = value else {
            return Err("expected a JSON object".into());
        };
        let unknown: Vec<String> = map
            .keys()
            .filter(|k| !CORPUS_KEYS.contains(&k.as_str()))
            .cloned()
            .collect();
        let known: Map<String, Value> = map
            .into_iter()
            .filter(|(k, _)| CORPUS_KEYS.contains(&k.as_str()))
            .collect();
        let raw: RawTestCase =
            serde_json::from_value(Value::Object(known)).map_err(|e| e.to_string())?;
        let tc = raw.into_test_case()?;
        tc.validate()?;
        Ok((tc, unknown))
    }

    /// Canonical single-line JSON (fixed key order, absent fields omitted).
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&RawTestCase::from(self)).expect("test case serializes")
    }
}

/// Flat wire form of a test case; field order is the canonical key order.
#[derive(Debug, Default, Serialize, Deserialize)]
struct RawTestCase {
    id: Option<String>,
    pdf: Option<String>,
    page: Option<u32>,
    #[serde(rename = "type")]
    category: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    before: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    after: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cell: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    up: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    down: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    left: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    right: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    top_heading: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    left_heading: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    math: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_diffs: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    first_n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    last_n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    case_sensitive: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    checked: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    url: Option<String>,
}

impl RawTestCase {
    fn into_test_case(self) -> Result<TestCase, String> {
        fn req<T>(v: Option<T>, field: &str) -> Result<T, String> {
            v.ok_or_else(|| format!("missing `{field}`"))
        }
        let category = req(self.category, "type")?;
        let kind = match Category::parse(&category) {
            Some(Category::Present) => TestKind::Present {
                text: req(self.text, "text")?,
            },
            Some(Category::Absent) => TestKind::Absent {
                text: req(self.text, "text")?,
            },
            Some(Category::Order) => TestKind::Order {
                before: req(self.before, "before")?,
                after: req(self.after, "after")?,
            },
            Some(Category::Table) => TestKind::Table(TableRelationTest {
                cell: req(self.cell, "cell")?,
                up: self.up,
                down: self.down,
                left: self.left,
                right: self.right,
                top_heading: self.top_heading,
                left_heading: self.left_heading,
            }),
            Some(Category::Math) => TestKind::Math {
                math: req(self.math, "math")?,
            },
            Some(Category::Baseline) => TestKind::Baseline { cjk_ok: false },
            None => return Err(format!("unknown category `{category}`")),
        };
        Ok(TestCase {
            id: req(self.id, "id")?,
            pdf: req(self.pdf, "pdf")?,
            page: req(self.page, "page")?,
            kind,
            max_diffs: self.max_diffs,
            first_n: self.first_n,
            last_n: self.last_n,
            case_sensitive: self.case_sensitive,
            checked: self.checked,
            url: self.url,
        })
    }
}

impl From<&TestCase> for RawTestCase {
    fn from(tc: &TestCase) -> Self {
        let mut raw = RawTestCase {
            id: Some(tc.id.clone()),
            pdf: Some(tc.pdf.clone()),
            page: Some(tc.page),
            category: Some(tc.category().as_str().to_string()),
            max_diffs: tc.max_diffs,
            first_n: tc.first_n,
            last_n: tc.last_n,
            case_sensitive: tc.case_sensitive,
            checked: tc.checked.clone(),
            url: tc.url.clone(),
            ..Default::default()
        };
        match &tc.kind {
            TestKind::Present { text } | TestKind::Absent { text } => raw.text = Some(text.clone()),
            TestKind::Order { before, after } => {
                raw.before = Some(before.clone());
                raw.after = Some(after.clone());
            }
            TestKind::Table(t) => {
                raw.cell = Some(t.cell.clone());
                raw.up = t.up.clone();
                raw.down = t.down.clone();
                raw.left = t.left.clone();
                raw.right = t.right.clone();
                raw.top_heading = t.top_heading.clone();
                raw.left_heading = t.left_heading.clone();
            }
            TestKind::Math { math } => raw.math = Some(math.clone()),
            TestKind::Baseline { .. } => {}
        }
        raw
    }
}

/// A (pdf, page) pair, the unit that tool outputs are produced for.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PageKey {
    pub pdf: String,
    pub page: u32,
}

impl PageKey {
    pub fn new(pdf: impl Into<String>, page: u32) -> Self {
        PageKey {
            pdf: pdf.into(),
            page,
        }
    }

    /// `<pdf-stem>_pg<page>`, the stem of a tool output file.
    pub fn output_stem(&self) -> String {
        let stem = Path::new(&self.pdf)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.pdf.clone());
        format!("{stem}_pg{}", self.page)
    }
}

impl std::fmt::Display for PageKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}#{}", self.pdf, self.page)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageFlags {
    #[serde(default)]
    pub cjk_ok: bool,
    #[serde(default)]
    pub suppress: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub sources: BTreeMap<String, Vec<TestCase>>,
    pub pdf_root: PathBuf,
    pub page_flags: BTreeMap<PageKey, PageFlags>,
}

impl Corpus {
    pub fn source_counts(&self) -> BTreeMap<String, usize> {
        self.sources
            .iter()
            .map(|(s, tests)| (s.clone(), tests.len()))
            .collect()
    }

    pub fn total_tests(&self) -> usize {
        self.sources.values().map(Vec::len).sum()
    }

    pub fn tests(&self) -> impl Iterator<Item = (&str, &TestCase)> {
        self.sources
            .iter()
            .flat_map(|(s, tests)| tests.iter().map(move |t| (s.as_str(), t)))
    }

    /// Distinct pages referenced by any test, sorted.
    pub fn pages(&self) -> BTreeSet<PageKey> {
        self.tests().map(|(_, t)| t.page_key()).collect()
    }

    pub fn pdf_path(&self, pdf: &str) -> PathBuf {
        self.pdf_root.join(pdf)
    }

    /// Canonical JSONL of one source.
    pub fn source_jsonl(&self, source: &str) -> Option<String> {
        self.sources.get(source).map(|tests| {
            tests
                .iter()
                .map(|t| t.to_json_line() + "\n")
                .collect::<String>()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LoadWarning {
    pub file: String,
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for LoadWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}: {}", self.file, self.line, self.message)
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {message}")]
    Line {
        file: String,
        line: usize,
        message: String,
    },
    #[error("no JSONL sources in {0}")]
    Empty(PathBuf),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Skip bad lines with a warning instead of failing.
    pub lenient: bool,
}

#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub corpus: Corpus,
    pub warnings: Vec<LoadWarning>,
}

/// Strict load: the first malformed line, unknown category, duplicate id or
/// dangling pdf path is an error. Unknown keys are still only warnings.
pub fn load_corpus(dir: &Path) -> Result<LoadedCorpus, CorpusError> {
    load_corpus_with(dir, LoadOptions::default())
}

pub fn load_corpus_with(dir: &Path, opts: LoadOptions) -> Result<LoadedCorpus, CorpusError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CorpusError::Io { path, source }
    };
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
        .filter(|p| p.file_name().is_some_and(|n| n != FLAGS_FILE))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CorpusError::Empty(dir.to_path_buf()));
    }

    let pdf_root = dir.join(PDF_DIR);
    let mut corpus = Corpus {
        pdf_root: pdf_root.clone(),
        ..Default::default()
    };
    let mut warnings = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();

    for path in &files {
        let file = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let source = path
            .file_stem()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let bytes = fs::read(path).map_err(io_err(path))?;
        let text = String::from_utf8_lossy(&bytes);
        let mut tests = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fail = |message: String| CorpusError::Line {
                file: file.clone(),
                line: line_no,
                message,
            };
            let parsed = TestCase::from_json_line(line).and_then(|(tc, unknown)| {
                if !seen_ids.insert(tc.id.clone()) {
                    return Err(format!("duplicate id `{}`", tc.id));
                }
                if !pdf_root.join(&tc.pdf).is_file() {
                    return Err(format!("dangling pdf path `{}`", tc.pdf));
                }
                Ok((tc, unknown))
            });
            match parsed {
                Ok((tc, unknown)) => {
                    for key in unknown {
                        warnings.push(LoadWarning {
                            file: file.clone(),
                            line: line_no,
                            message: format!("unknown key `{key}`"),
                        });
                    }
                    tests.push(tc);
                }
                Err(message) if opts.lenient => warnings.push(LoadWarning {
                    file: file.clone(),
                    line: line_no,
                    message,
                }),
                Err(message) => return Err(fail(message)),
            }
        }
        corpus.sources.insert(source, tests);
    }

    let flags_path = dir.join(FLAGS_FILE);
    if flags_path.is_file() {
        let text = fs::read_to_string(&flags_path).map_err(io_err(&flags_path))?;
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            #[derive(Deserialize)]
            struct FlagLine {
                pdf: String,
                page: u32,
                #[serde(flatten)]
                flags: PageFlags,
            }
            match serde_json::from_str::<FlagLine>(line) {
                Ok(f) => {
                    corpus.page_flags.insert(PageKey::new(f.pdf, f.page), f.flags);
                }
                Err(e) if opts.lenient => warnings.push(LoadWarning {
                    file: FLAGS_FILE.into(),
                    line: idx + 1,
                    message: e.to_string(),
                }),
                Err(e) => {
                    return Err(CorpusError::Line {
                        file: FLAGS_FILE.into(),
                        line: idx + 1,
                        message: e.to_string(),
                    })
                }
            }
        }
    }

    Ok(LoadedCorpus { corpus, warnings })
}

/// Add one baseline test per distinct page to the `baseline` source.
///
/// Pages that already carry an explicit baseline test keep it; suppressed
/// pages get none; `cjk_ok` pages get a baseline with the charset check off.
pub fn attach_baseline_tests(mut corpus: Corpus) -> Corpus {
    let explicit: BTreeSet<PageKey> = corpus
        .tests()
        .filter(|(_, t)| t.category() == Category::Baseline)
        .map(|(_, t)| t.page_key())
        .collect();
    let pages: BTreeSet<PageKey> = corpus
        .tests()
        .filter(|(_, t)| t.category() != Category::Baseline)
        .map(|(_, t)| t.page_key())
        .collect();

    for tests in corpus.sources.values_mut() {
        for t in tests.iter_mut() {
            let key = t.page_key();
            if let TestKind::Baseline { cjk_ok } = &mut t.kind {
                *cjk_ok = corpus.page_flags.get(&key).is_some_and(|f| f.cjk_ok);
            }
        }
    }

    let mut added = Vec::new();
    for page in pages.difference(&explicit) {
        let flags = corpus.page_flags.get(page).copied().unwrap_or_default();
        if flags.suppress {
            continue;
        }
        added.push(TestCase::new(
            format!("{}_baseline", page.output_stem()),
            page.pdf.clone(),
            page.page,
            TestKind::Baseline {
                cjk_ok: flags.cjk_ok,
            },
        ));
    }
    if !added.is_empty() {
        corpus
            .sources
            .entry(BASELINE_SOURCE.to_string())
            .or_default()
            .extend(added);
    }
    corpus
}

/// One tool's output for one page.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateDocument {
    pub pdf: String,
    pub page: u32,
    pub tool: String,
    pub raw: String,
    pub normalized: NormalizedText,
}

impl CandidateDocument {
    pub fn new(
        pdf: impl Into<String>,
        page: u32,
        tool: impl Into<String>,
        raw: impl Into<String>,
    ) -> Self {
        let raw = raw.into();
        let normalized = normalize(&raw);
        CandidateDocument {
            pdf: pdf.into(),
            page,
            tool: tool.into(),
            raw,
            normalized,
        }
    }

    /// Standalone document, mostly for tests and ad-hoc checks.
    pub fn from_text(raw: impl Into<String>) -> Self {
        CandidateDocument::new("", 1, "", raw)
    }
}
