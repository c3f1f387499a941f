use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand, ValueEnum};
use pagebench::align::{align_score_with, bucket_counts, AlignmentScore, Denominator};
use pagebench::anchor::{
    build_anchor, build_prompt, convert_page, halving_limits, layout_from_pdf, AnchorLayout, ConverterPolicy, Fallback,
    OpenAiConverter, PageInput, PromptBudget, DEFAULT_CHAR_LIMIT,
};
use pagebench::elo::{
    compute_elo, elo_ci, latest_judgments, load_judgments, ratings_markdown, win_table_markdown, EloConfig, BASE_RATING,
    DEFAULT_K, DEFAULT_RESAMPLES, DEFAULT_SHUFFLES,
};
use pagebench::model::{load_corpus_with, LoadOptions, PageKey};
use pagebench::normalize::normalize;
use pagebench::score::OUTPUT_EXTENSIONS;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{pick, positive, Config};
use crate::Status;

pub const API_KEY_ENV: &str = "CONVERTER_API_KEY";

// ---------------------------------------------------------------------------
// align

#[derive(Clone, Copy, ValueEnum)]
pub enum DenominatorArg {
    Max,
    Min,
    Mean,
}

#[derive(Args)]
pub struct AlignArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    /// Per-page scores.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "max")]
    denominator: DenominatorArg,
}

#[derive(Serialize)]
struct AlignRow<'a> {
    page: &'a str,
    matched: usize,
    words_a: usize,
    words_b: usize,
    score: f64,
    bucket: &'static str,
}

/// Page outputs of a directory by file stem.
fn outputs_by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if !OUTPUT_EXTENSIONS.contains(&ext) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.entry(stem.to_string()).or_insert(path);
        }
    }
    Ok(out)
}

pub fn align(a: AlignArgs) -> Result<Status> {
    let denominator = match a.denominator {
        DenominatorArg::Max => Denominator::Max,
        DenominatorArg::Min => Denominator::Min,
        DenominatorArg::Mean => Denominator::Mean,
    };
    let left = outputs_by_stem(&a.a)?;
    let right = outputs_by_stem(&a.b)?;
    let mut warnings = 0;
    for stem in right.keys().filter(|s| !left.contains_key(*s)) {
        log::warn!("{stem} only in {}", a.b.display());
        warnings += 1;
    }
    let mut rows: Vec<(String, AlignmentScore)> = Vec::new();
    for (stem, pa) in &left {
        let Some(pb) = right.get(stem) else {
            log::warn!("{stem} only in {}", a.a.display());
            warnings += 1;
            continue;
        };
        let ta = normalize(&std::fs::read_to_string(pa).with_context(|| format!("reading {}", pa.display()))?);
        let tb = normalize(&std::fs::read_to_string(pb).with_context(|| format!("reading {}", pb.display()))?);
        rows.push((stem.clone(), align_score_with(ta.as_str(), tb.as_str(), denominator)));
    }
    if let Some(path) = &a.csv {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
        for (page, s) in &rows {
            w.serialize(AlignRow {
                page,
                matched: s.matched,
                words_a: s.len_a,
                words_b: s.len_b,
                score: s.score,
                bucket: s.bucket.as_str(),
            })?;
        }
        w.flush()?;
        println!("wrote {}", path.display());
    }
    let scores: Vec<AlignmentScore> = rows.iter().map(|(_, s)| *s).collect();
    let n = scores.len().max(1) as f64;
    println!("| Alignment | Pages | Share (%) |\n|---|---:|---:|");
    for (bucket, count) in bucket_counts(&scores) {
        println!("| {} | {count} | {:.1} |", bucket.as_str(), count as f64 / n * 100.0);
    }
    let mean = scores.iter().map(|s| s.score).sum::<f64>() / n;
    println!("| mean score | {} | {:.1} |", scores.len(), mean * 100.0);
    Ok(if warnings == 0 { Status::Clean } else { Status::Warnings })
}

// ---------------------------------------------------------------------------
// elo

#[derive(Args)]
pub struct EloArgs {
    #[arg(long)]
    judgments: PathBuf,
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    shuffles: Option<usize>,
    /// Bootstrap resamples for the intervals (0 skips them).
    #[arg(long)]
    resamples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write ratings, intervals and records as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

pub fn elo(a: EloArgs, cfg: &Config) -> Result<Status> {
    let elo_cfg = EloConfig {
        base: BASE_RATING,
        k: positive("k", pick(a.k, cfg.elo.k, DEFAULT_K))?,
        shuffles: positive("shuffles", pick(a.shuffles, cfg.elo.shuffles, DEFAULT_SHUFFLES))?,
        seed: pick(a.seed, cfg.seed, 0),
    };
    let resamples = pick(a.resamples, cfg.elo.resamples, DEFAULT_RESAMPLES);
    log::info!("resolved: {elo_cfg:?} resamples={resamples}");
    let all = load_judgments(&a.judgments)?;
    let total = all.len();
    let judgments = latest_judgments(all);
    if judgments.len() < total {
        log::info!("{} superseded judgment(s) ignored", total - judgments.len());
    }
    let mut result = compute_elo(&judgments, &elo_cfg);
    if resamples > 0 && result.decisive >= 2 {
        result.ci95 = elo_ci(&judgments, &elo_cfg, resamples, elo_cfg.shuffles);
    }
    println!(
        "{} judgments, {} decisive\n\n{}\n{}",
        result.judgments,
        result.decisive,
        win_table_markdown(&result),
        ratings_markdown(&result)
    );
    if let Some(path) = &a.json {
        std::fs::write(path, serde_json::to_string_pretty(&result)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {}", path.display());
    }
    Ok(if result.decisive == 0 { Status::Warnings } else { Status::Clean })
}

// ---------------------------------------------------------------------------
// anchor

#[derive(Subcommand)]
pub enum AnchorCommand {
    /// Print the anchor text (or full prompt) for one page.
    Build(AnchorArgs),
}

#[derive(Args)]
pub struct AnchorArgs {
    #[arg(long, required_unless_present = "layout", conflicts_with = "layout")]
    pdf: Option<PathBuf>,
    /// 1-based page number.
    #[arg(long, default_value_t = 1)]
    page: u32,
    /// Layout sidecar JSON instead of a PDF.
    #[arg(long)]
    layout: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_CHAR_LIMIT)]
    limit: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print the whole prompt rather than the anchor alone.
    #[arg(long)]
    prompt: bool,
    /// Also write the extracted layout as a sidecar.
    #[arg(long)]
    save_layout: Option<PathBuf>,
}

pub fn anchor(cmd: AnchorCommand) -> Result<Status> {
    let AnchorCommand::Build(a) = cmd;
    let layout = match (&a.pdf, &a.layout) {
        (Some(pdf), _) => layout_from_pdf(pdf, a.page)?,
        (None, Some(sidecar)) => AnchorLayout::load_sidecar(sidecar)?,
        (None, None) => bail!("give --pdf or --layout"),
    };
    if let Some(path) = &a.save_layout {
        std::fs::write(path, serde_json::to_string(&layout)?).with_context(|| format!("writing {}", path.display()))?;
    }
    let anchor = build_anchor(&layout, a.limit, a.seed);
    if a.prompt {
        println!("{}", build_prompt(&anchor));
    } else {
        print!("{anchor}");
    }
    Ok(Status::Clean)
}

// ---------------------------------------------------------------------------
// convert

#[derive(Clone, Copy, ValueEnum)]
pub enum FallbackArg {
    Raw,
    Empty,
}

#[derive(Args)]
pub struct ConvertArgs {
    /// Corpus whose pages are converted.
    #[arg(long)]
    corpus: PathBuf,
    /// Where `<pdf-stem>_pg<page>.md` files go.
    #[arg(long)]
    out: PathBuf,
    /// Chat-completions URL of an OpenAI-compatible server.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long, value_enum)]
    fallback: Option<FallbackArg>,
    /// Pre-rendered page images named `<pdf-stem>_pg<page>.png`.
    #[arg(long)]
    images: Option<PathBuf>,
    /// Layout sidecars named `<pdf-stem>_pg<page>.json`, used before the PDF.
    #[arg(long)]
    layouts: Option<PathBuf>,
    #[arg(long)]
    retries: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Pages converted concurrently.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Serialize)]
struct ConvertLog<'a> {
    page: String,
    ok: bool,
    fallback_used: bool,
    rotation: u32,
    attempts: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    warnings: &'a [String],
}

fn policy(a: &ConvertArgs, cfg: &Config) -> Result<ConverterPolicy> {
    let c = &cfg.convert;
    let defaults = ConverterPolicy::default();
    let fallback = match (a.fallback, c.fallback.as_deref()) {
        (Some(FallbackArg::Raw), _) | (None, Some("raw")) | (None, None) => Fallback::RawAnchorText,
        (Some(FallbackArg::Empty), _) | (None, Some("empty")) => Fallback::Empty,
        (None, Some(other)) => bail!("fallback must be `raw` or `empty`, got `{other}`"),
    };
    let start = positive("char_limit", c.char_limit.unwrap_or(DEFAULT_CHAR_LIMIT))?;
    let min = positive("min_char_limit", c.min_char_limit.unwrap_or(64))?;
    let temperatures = c.temperatures.clone().unwrap_or(defaults.temperatures);
    if let Some(t) = temperatures.iter().find(|t| !(0.0..=2.0).contains(*t)) {
        bail!("temperature {t} outside [0, 2]");
    }
    let p = ConverterPolicy {
        max_retries: pick(a.retries, c.max_retries, defaults.max_retries),
        temperatures,
        char_limits: halving_limits(start, min),
        fallback,
        budget: PromptBudget {
            max_tokens: positive("max_prompt_tokens", c.max_prompt_tokens.unwrap_or(defaults.budget.max_tokens))?,
            ..defaults.budget
        },
    };
    p.validate().map_err(anyhow::Error::msg)?;
    Ok(p)
}

pub fn convert(a: ConvertArgs, cfg: &Config) -> Result<Status> {
    let policy = policy(&a, cfg)?;
    let endpoint = a
        .endpoint
        .clone()
        .or(cfg.convert.endpoint.clone())
        .context("--endpoint is required")?;
    let model = a
        .model
        .clone()
        .or(cfg.convert.model.clone())
        .unwrap_or_else(|| "olmocr".to_string());
    let api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
    let timeout = Duration::from_secs(cfg.convert.timeout_secs.unwrap_or(120));
    let mut converter = OpenAiConverter::new(endpoint.clone(), model.clone(), api_key, timeout)?;
    converter.max_tokens = cfg.convert.max_tokens.unwrap_or(converter.max_tokens);
    converter.use_schema = cfg.convert.use_schema.unwrap_or(false);
    let seed = pick(a.seed, cfg.seed, 0);
    log::info!("resolved: endpoint={endpoint} model={model} seed={seed} {policy:?}");

    let corpus = load_corpus_with(&a.corpus, LoadOptions { lenient: true })?.corpus;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let log_path = a.out.join("convert_log.jsonl");
    let log_file = Mutex::new(std::fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    if a.images.is_none() {
        log::warn!("no --images directory; pages are sent without an image");
    }

    let pages: Vec<PageKey> = corpus.pages().into_iter().collect();
    let jobs = positive("jobs", pick(a.jobs, cfg.jobs, 4))?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    let problems: usize = pool.install(|| {
        pages
            .par_iter()
            .map(|key| {
                let stem = key.output_stem();
                let outcome = load_page(&a, &corpus.pdf_path(&key.pdf), key)
                    .and_then(|input| convert_page(&input, &converter, &policy, seed).map_err(anyhow::Error::from));
                let (ok, line) = match &outcome {
                    Ok(out) => {
                        let written = std::fs::write(a.out.join(format!("{stem}.md")), &out.text);
                        let entry = ConvertLog {
                            page: stem.clone(),
                            ok: written.is_ok(),
                            fallback_used: out.fallback_used,
                            rotation: out.rotation,
                            attempts: out.attempts.len(),
                            error: written.err().map(|e| e.to_string()),
                            warnings: &out.warnings,
                        };
                        (entry.ok && !out.fallback_used, serde_json::to_string(&entry))
                    }
                    Err(e) => {
                        log::warn!("{stem}: {e:#}");
                        let entry = ConvertLog {
                            page: stem.clone(),
                            ok: false,
                            fallback_used: false,
                            rotation: 0,
                            attempts: 0,
                            error: Some(format!("{e:#}")),
                            warnings: &[],
                        };
                        (false, serde_json::to_string(&entry))
                    }
                };
                if let Ok(line) = line {
                    let mut f = log_file.lock().unwrap();
                    let _ = writeln!(f, "{line}");
                }
                usize::from(!ok)
            })
            .sum()
    });
    println!(
        "converted {} page(s) into {}, {problems} with problems; log in {}",
        pages.len(),
        a.out.display(),
        log_path.display()
    );
    Ok(if problems == 0 { Status::Clean } else { Status::Warnings })
}

fn load_page(a: &ConvertArgs, pdf: &Path, key: &PageKey) -> Result<PageInput> {
    let stem = key.output_stem();
    let sidecar = a.layouts.as_ref().map(|d| d.join(format!("{stem}.json")));
    let layout = match sidecar.filter(|p| p.exists()) {
        Some(p) => AnchorLayout::load_sidecar(&p)?,
        None => layout_from_pdf(pdf, key.page)?,
    };
    let image_png = match &a.images {
        Some(dir) => {
            let p = dir.join(format!("{stem}.png"));
            Some(std::fs::read(&p).with_context(|| format!("reading {}", p.display()))?)
        }
        None => None,
    };
    Ok(PageInput { layout, image_png })
}
