//! Runs a corpus against tool outputs and aggregates the results.
//!
//! Outputs are read from `<outputs>/<tool>/<pdf-stem>_pg<page>.md` (or
//! `.txt`). A page without output fails every test on it with "no output".
//! The overall score is the unweighted mean of per-source pass rates; tests
//! that could not be evaluated (renderer down) count as errors and are left
//! out of the rates.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::check_math::{check_math, MathOptions};
use crate::check_table::check_table;
use crate::check_text::{check_absence, check_baseline, check_order, check_presence};
use crate::model::{CandidateDocument, Category, Corpus, PageKey, TestCase, TestKind, BASELINE_SOURCE};
use crate::render::Renderer;

pub const DEFAULT_ITERATIONS: usize = 10_000;
pub const OUTPUT_EXTENSIONS: &[&str] = &["md", "txt"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestStatus {
    Pass,
    Fail,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub source: String,
    pub category: Category,
    pub pdf: String,
    pub page: u32,
    pub status: TestStatus,
    pub explanation: String,
}

impl TestOutcome {
    pub fn passed(&self) -> bool {
        self.status == TestStatus::Pass
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceSummary {
    pub rate: f64,
    pub passed: usize,
    pub failed: usize,
    pub errored: usize,
}

impl SourceSummary {
    pub fn scored(&self) -> usize {
        self.passed + self.failed
    }
}

/// Bootstrap resampling unit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResampleLevel {
    #[default]
    Test,
    Page,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub tool: String,
    pub per_test: BTreeMap<String, TestOutcome>,
    pub per_source: BTreeMap<String, SourceSummary>,
    pub overall: f64,
    pub ci95: (f64, f64),
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl RunResult {
    pub fn errored(&self) -> usize {
        self.per_source.values().map(|s| s.errored).sum()
    }

    pub fn per_category(&self) -> BTreeMap<Category, (usize, usize)> {
        let mut out: BTreeMap<Category, (usize, usize)> = BTreeMap::new();
        for t in self.per_test.values().filter(|t| t.status != TestStatus::Error) {
            let e = out.entry(t.category).or_default();
            e.0 += usize::from(t.passed());
            e.1 += 1;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub jobs: usize,
    pub seed: u64,
    pub iterations: usize,
    pub resample: ResampleLevel,
    pub math: MathOptions,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            jobs: 0,
            seed: 0,
            iterations: DEFAULT_ITERATIONS,
            resample: ResampleLevel::Test,
            math: MathOptions::default(),
        }
    }
}

/// Path of the output file for a page, whichever extension exists.
pub fn output_path(tool_dir: &Path, key: &PageKey) -> Option<PathBuf> {
    let stem = key.output_stem();
    OUTPUT_EXTENSIONS
        .iter()
        .map(|ext| tool_dir.join(format!("{stem}.{ext}")))
        .find(|p| p.is_file())
}

/// Tool names are the subdirectories of `outputs`, sorted.
pub fn discover_tools(outputs: &Path) -> std::io::Result<Vec<String>> {
    let mut tools = Vec::new();
    for entry in fs::read_dir(outputs)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            tools.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    tools.sort();
    Ok(tools)
}

/// Evaluate one test against its page's output (`None` when missing).
pub fn evaluate(
    tc: &TestCase,
    doc: Option<&CandidateDocument>,
    renderer: &dyn Renderer,
    math: MathOptions,
) -> (TestStatus, String) {
    let Some(doc) = doc else {
        return (TestStatus::Fail, "no output".into());
    };
    let result = match &tc.kind {
        TestKind::Present { .. } => check_presence(tc, doc),
        TestKind::Absent { .. } => check_absence(tc, doc),
        TestKind::Order { .. } => check_order(tc, doc),
        TestKind::Table(t) => check_table(t, doc, tc.max_diffs.unwrap_or(0), tc.is_case_sensitive()),
        TestKind::Baseline { cjk_ok } => check_baseline(doc, *cjk_ok),
        TestKind::Math { math: latex } => match check_math(latex, doc, renderer, math) {
            Ok(r) => r,
            Err(e) => return (TestStatus::Error, e.to_string()),
        },
    };
    let status = if result.passed {
        TestStatus::Pass
    } else {
        TestStatus::Fail
    };
    (status, result.explanation)
}

/// Read every page output of one tool. Unreadable files become warnings.
pub fn load_outputs(
    corpus: &Corpus,
    tool_dir: &Path,
    tool: &str,
    warnings: &mut Vec<String>,
) -> HashMap<PageKey, CandidateDocument> {
    let mut docs = HashMap::new();
    for key in corpus.pages() {
        let Some(path) = output_path(tool_dir, &key) else {
            continue;
        };
        match fs::read(&path) {
            Ok(bytes) => {
                let raw = String::from_utf8_lossy(&bytes).into_owned();
                docs.insert(key.clone(), CandidateDocument::new(&key.pdf, key.page, tool, raw));
            }
            Err(e) => warnings.push(format!("{}: {e}", path.display())),
        }
    }
    docs
}

/// Score already-evaluated outcomes.
pub fn summarize(per_test: &BTreeMap<String, TestOutcome>) -> (BTreeMap<String, SourceSummary>, f64) {
    let mut per_source: BTreeMap<String, SourceSummary> = BTreeMap::new();
    for t in per_test.values() {
        let s = per_source.entry(t.source.clone()).or_default();
        match t.status {
            TestStatus::Pass => s.passed += 1,
            TestStatus::Fail => s.failed += 1,
            TestStatus::Error => s.errored += 1,
        }
    }
    let mut rates = Vec::new();
    for s in per_source.values_mut() {
        if s.scored() > 0 {
            s.rate = s.passed as f64 / s.scored() as f64;
            rates.push(s.rate);
        }
    }
    (per_source, macro_average(&rates))
}

pub fn macro_average(rates: &[f64]) -> f64 {
    if rates.is_empty() {
        0.0
    } else {
        rates.iter().sum::<f64>() / rates.len() as f64
    }
}

/// Evaluate every test of `corpus` against one tool's outputs.
pub fn run(
    corpus: &Corpus,
    tool_dir: &Path,
    tool: &str,
    renderer: &dyn Renderer,
    opts: &RunOptions,
) -> RunResult {
    let mut warnings = Vec::new();
    let docs = load_outputs(corpus, tool_dir, tool, &mut warnings);
    let missing = corpus.pages().iter().filter(|k| !docs.contains_key(*k)).count();
    if missing > 0 {
        warnings.push(format!("{tool}: {missing} page(s) without output"));
    }
    run_documents(corpus, &docs, tool, renderer, opts, warnings)
}

/// Like [`run`], with the page outputs supplied directly.
pub fn run_documents(
    corpus: &Corpus,
    docs: &HashMap<PageKey, CandidateDocument>,
    tool: &str,
    renderer: &dyn Renderer,
    opts: &RunOptions,
    mut warnings: Vec<String>,
) -> RunResult {
    let tests: Vec<(&str, &TestCase)> = corpus.tests().collect();
    let eval = || {
        tests
            .par_iter()
            .map(|(source, tc)| {
                let doc = docs.get(&tc.page_key());
                let (status, explanation) = evaluate(tc, doc, renderer, opts.math);
                (
                    tc.id.clone(),
                    TestOutcome {
                        source: source.to_string(),
                        category: tc.category(),
                        pdf: tc.pdf.clone(),
                        page: tc.page,
                        status,
                        explanation,
                    },
                )
            })
            .collect::<BTreeMap<_, _>>()
    };
    let per_test = with_jobs(opts.jobs, eval);

    let errored = per_test.values().filter(|t| t.status == TestStatus::Error).count();
    if errored > 0 {
        warnings.push(format!("{tool}: {errored} test(s) errored and were not scored"));
    }
    let (per_source, overall) = summarize(&per_test);
    for (name, s) in &per_source {
        if s.scored() == 0 {
            warnings.push(format!("{tool}: source {name} has no scored tests"));
        }
    }
    let units = resample_units(&per_test, opts.resample);
    let ci95 = with_jobs(opts.jobs, || bootstrap_units(&units, opts.iterations, opts.seed));
    RunResult {
        tool: tool.to_string(),
        per_test,
        per_source,
        overall,
        ci95,
        warnings,
    }
}

fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    if jobs == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Passed/total counts of one resampling unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tally {
    pub passed: u32,
    pub total: u32,
}

/// Group scored outcomes into per-source resampling units.
pub fn resample_units(
    per_test: &BTreeMap<String, TestOutcome>,
    level: ResampleLevel,
) -> BTreeMap<String, Vec<Tally>> {
    let mut pages: BTreeMap<String, BTreeMap<(String, u32), Tally>> = BTreeMap::new();
    let mut tests: BTreeMap<String, Vec<Tally>> = BTreeMap::new();
    for t in per_test.values().filter(|t| t.status != TestStatus::Error) {
        let passed = u32::from(t.passed());
        match level {
            ResampleLevel::Test => tests
                .entry(t.source.clone())
                .or_default()
                .push(Tally { passed, total: 1 }),
            ResampleLevel::Page => {
                let e = pages
                    .entry(t.source.clone())
                    .or_default()
                    .entry((t.pdf.clone(), t.page))
                    .or_insert(Tally { passed: 0, total: 0 });
                e.passed += passed;
                e.total += 1;
            }
        }
    }
    match level {
        ResampleLevel::Test => tests,
        ResampleLevel::Page => pages
            .into_iter()
            .map(|(s, p)| (s, p.into_values().collect()))
            .collect(),
    }
}

/// Test-level percentile bootstrap of the macro-averaged score.
pub fn bootstrap_ci(
    per_test: &BTreeMap<String, TestOutcome>,
    iterations: usize,
    seed: u64,
) -> (f64, f64) {
    bootstrap_units(&resample_units(per_test, ResampleLevel::Test), iterations, seed)
}

/// Percentile bootstrap over arbitrary per-source units. Each iteration
/// draws from its own ChaCha stream, so results do not depend on thread
/// count. The interval is widened if needed to contain the point estimate.
pub fn bootstrap_units(units: &BTreeMap<String, Vec<Tally>>, iterations: usize, seed: u64) -> (f64, f64) {
    let sources: Vec<&Vec<Tally>> = units.values().filter(|u| !u.is_empty()).collect();
    let rate = |passed: u64, total: u64| if total == 0 { 0.0 } else { passed as f64 / total as f64 };
    let point = macro_average(
        &sources
            .iter()
            .map(|u| {
                let (p, t) = u.iter().fold((0u64, 0u64), |(p, t), x| (p + x.passed as u64, t + x.total as u64));
                rate(p, t)
            })
            .collect::<Vec<_>>(),
    );
    if sources.is_empty() || iterations == 0 {
        return (point, point);
    }
    let mut samples: Vec<f64> = (0..iterations)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut sum = 0.0;
            for u in &sources {
                let (mut p, mut t) = (0u64, 0u64);
                for _ in 0..u.len() {
                    let x = u[rng.random_range(0..u.len())];
                    p += x.passed as u64;
                    t += x.total as u64;
                }
                sum += rate(p, t);
            }
            sum / sources.len() as f64
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    let lo = percentile(&samples, 2.5).min(point);
    let hi = percentile(&samples, 97.5).max(point);
    (lo, hi)
}

/// Linear interpolation between closest ranks; `sorted` must be ascending.
pub fn percentile(sorted: &[f64], pct: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = (pct / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Column order for the results table: known sources first, then any other
/// sources alphabetically, baseline last.
pub const KNOWN_SOURCES: &[(&str, &str)] = &[
    ("arxiv_math", "AR"),
    ("old_scans_math", "OSM"),
    ("tables_tests", "TA"),
    ("old_scans", "OS"),
    ("headers_footers", "HF"),
    ("multi_column", "MC"),
    ("long_tiny_text", "LTT"),
    (BASELINE_SOURCE, "Base"),
];

pub fn column_order<'a>(sources: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut names: Vec<&str> = sources.into_iter().collect();
    names.sort();
    names.dedup();
    let rank = |s: &str| match KNOWN_SOURCES.iter().position(|(k, _)| *k == s) {
        Some(_) if s == BASELINE_SOURCE => (2, 0),
        Some(i) => (0, i),
        None => (1, 0),
    };
    names.sort_by_key(|s| rank(s));
    names.into_iter().map(str::to_string).collect()
}

pub fn column_label(source: &str) -> &str {
    KNOWN_SOURCES
        .iter()
        .find(|(k, _)| *k == source)
        .map_or(source, |(_, label)| label)
}

/// JSON report over one or more tools. Field order is fixed, maps are
/// sorted, so identical runs serialize identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_at: Option<u64>,
    pub seed: u64,
    pub iterations: usize,
    pub resample: ResampleLevel,
    pub tools: BTreeMap<String, RunResult>,
    /// Problems found while loading the corpus.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl Report {
    pub const SCHEMA_VERSION: u32 = 1;

    pub fn new(results: Vec<RunResult>, opts: &RunOptions, timestamp: bool) -> Self {
        let generated_at = timestamp.then(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs())
        });
        Report {
            schema_version: Self::SCHEMA_VERSION,
            generated_at,
            seed: opts.seed,
            iterations: opts.iterations,
            resample: opts.resample,
            tools: results.into_iter().map(|r| (r.tool.clone(), r)).collect(),
            warnings: Vec::new(),
        }
    }

    pub fn warning_count(&self) -> usize {
        self.warnings.len() + self.tools.values().map(|r| r.warnings.len()).sum::<usize>()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Recompute rates and intervals from the stored per-test outcomes.
    pub fn rescore(&mut self, iterations: usize, seed: u64, resample: ResampleLevel) {
        self.iterations = iterations;
        self.seed = seed;
        self.resample = resample;
        for r in self.tools.values_mut() {
            let (per_source, overall) = summarize(&r.per_test);
            r.per_source = per_source;
            r.overall = overall;
            r.ci95 = bootstrap_units(&resample_units(&r.per_test, resample), iterations, seed);
        }
    }

    /// One row per tool, one column per source, then Overall with the CI
    /// half-width. Percentages with one decimal.
    pub fn to_markdown(&self) -> String {
        let columns = column_order(
            self.tools
                .values()
                .flat_map(|r| r.per_source.keys().map(String::as_str)),
        );
        let mut out = String::from("| Tool |");
        for c in &columns {
            out.push_str(&format!(" {} |", column_label(c)));
        }
        out.push_str(" Overall |\n|---|");
        out.push_str(&"---:|".repeat(columns.len() + 1));
        out.push('\n');
        let mut rows: Vec<&RunResult> = self.tools.values().collect();
        rows.sort_by(|a, b| b.overall.total_cmp(&a.overall).then(a.tool.cmp(&b.tool)));
        for r in rows {
            out.push_str(&format!("| {} |", r.tool));
            for c in &columns {
                match r.per_source.get(c).filter(|s| s.scored() > 0) {
                    Some(s) => out.push_str(&format!(" {:.1} |", s.rate * 100.0)),
                    None => out.push_str(" - |"),
                }
            }
            let half = (r.ci95.1 - r.ci95.0) / 2.0 * 100.0;
            out.push_str(&format!(" {:.1} ± {:.1} |\n", r.overall * 100.0, half));
        }
        out
    }
}
