use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand, ValueEnum};
use pagebench::check_math::MathOptions;
use pagebench::model::{attach_baseline_tests, load_corpus_with, LoadOptions};
use pagebench::render::{BridgePool, FixtureRenderer, NoRenderer, Renderer};
use pagebench::score::{self, discover_tools, Report, ResampleLevel, RunOptions, DEFAULT_ITERATIONS};

use crate::config::{pick, positive, Config};
use crate::Status;

#[derive(Subcommand)]
pub enum BenchCommand {
    /// Score tool outputs against a corpus.
    Run(RunArgs),
    /// Recompute rates and intervals of an existing JSON report.
    Score(ScoreArgs),
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Resample {
    Test,
    Page,
}

impl From<Resample> for ResampleLevel {
    fn from(r: Resample) -> Self {
        match r {
            Resample::Test => ResampleLevel::Test,
            Resample::Page => ResampleLevel::Page,
        }
    }
}

fn parse_resample(s: &str) -> Result<ResampleLevel> {
    match s {
        "test" => Ok(ResampleLevel::Test),
        "page" => Ok(ResampleLevel::Page),
        other => bail!("resample must be `test` or `page`, got `{other}`"),
    }
}

#[derive(Args)]
pub struct RunArgs {
    /// Directory of per-source test JSONL files.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Directory holding one subdirectory of page outputs per tool.
    #[arg(long)]
    outputs: Option<PathBuf>,
    /// Tools to score (default: every subdirectory of --outputs).
    #[arg(long, value_delimiter = ',')]
    tools: Vec<String>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long, value_enum)]
    resample: Option<Resample>,
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    md: Option<PathBuf>,
    /// Leave the generation time out of the JSON report.
    #[arg(long)]
    no_timestamps: bool,
    /// Fail on the first malformed corpus line instead of skipping it.
    #[arg(long)]
    strict: bool,
    /// Do not add the per-page baseline tests.
    #[arg(long)]
    no_baseline: bool,
    /// Render bridge command, split on whitespace.
    #[arg(long)]
    bridge_cmd: Option<String>,
    #[arg(long)]
    bridge_pool: Option<usize>,
    /// Recorded renderings to use instead of a bridge.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Formula matching tolerance in render pixels.
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Args)]
pub struct ScoreArgs {
    /// JSON report written by `bench run`.
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long, value_enum)]
    resample: Option<Resample>,
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    md: Option<PathBuf>,
}

pub fn run(cmd: BenchCommand, cfg: &Config) -> Result<Status> {
    match cmd {
        BenchCommand::Run(a) => bench_run(a, cfg),
        BenchCommand::Score(a) => bench_score(a, cfg),
    }
}

fn renderer(a: &RunArgs, cfg: &Config) -> Result<Box<dyn Renderer>> {
    let fixtures = a.fixtures.clone().or(cfg.render.fixtures.clone());
    let command: Option<Vec<String>> = a
        .bridge_cmd
        .as_ref()
        .map(|c| c.split_whitespace().map(String::from).collect())
        .or(cfg.render.bridge_cmd.clone());
    match (fixtures, command) {
        (Some(_), Some(_)) => bail!("give either --fixtures or --bridge-cmd, not both"),
        (Some(path), None) => Ok(Box::new(
            FixtureRenderer::load(&path).with_context(|| format!("loading fixtures {}", path.display()))?,
        )),
        (None, Some(command)) => {
            if command.is_empty() {
                bail!("empty bridge command");
            }
            let size = positive("bridge pool size", pick(a.bridge_pool, cfg.render.pool, 2))?;
            let pool = BridgePool::new(command, size);
            pool.check().context("starting the render bridge")?;
            Ok(Box::new(pool))
        }
        (None, None) => {
            log::warn!("no renderer configured; math tests will error and be left unscored");
            Ok(Box::new(NoRenderer))
        }
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn bench_run(a: RunArgs, cfg: &Config) -> Result<Status> {
    let corpus_dir = a
        .corpus
        .clone()
        .or(cfg.bench.corpus.clone())
        .context("--corpus is required")?;
    let outputs = a
        .outputs
        .clone()
        .or(cfg.bench.outputs.clone())
        .context("--outputs is required")?;
    let resample = match (a.resample, &cfg.bench.resample) {
        (Some(r), _) => r.into(),
        (None, Some(s)) => parse_resample(s)?,
        (None, None) => ResampleLevel::Test,
    };
    let tau = a.tau.or(cfg.render.tau);
    if let Some(t) = tau {
        positive("tau", t)?;
    }
    let opts = RunOptions {
        jobs: pick(a.jobs, cfg.jobs, 0),
        seed: pick(a.seed, cfg.seed, 0),
        iterations: positive("iterations", pick(a.iterations, cfg.bench.iterations, DEFAULT_ITERATIONS))?,
        resample,
        math: MathOptions {
            tau,
            budget: positive("expansion budget", cfg.render.budget.unwrap_or(MathOptions::default().budget))?,
        },
    };
    log::info!(
        "resolved: corpus={} outputs={} {:?}",
        corpus_dir.display(),
        outputs.display(),
        opts
    );

    let lenient = !a.strict && cfg.bench.lenient.unwrap_or(true);
    let loaded = load_corpus_with(&corpus_dir, LoadOptions { lenient })?;
    let load_warnings: Vec<String> = loaded.warnings.iter().map(ToString::to_string).collect();
    for w in &load_warnings {
        log::warn!("{w}");
    }
    let corpus = if a.no_baseline {
        loaded.corpus
    } else {
        attach_baseline_tests(loaded.corpus)
    };
    let tools = if a.tools.is_empty() {
        discover_tools(&outputs).with_context(|| format!("listing {}", outputs.display()))?
    } else {
        a.tools.clone()
    };
    if tools.is_empty() {
        bail!("no tool directories under {}", outputs.display());
    }
    let renderer = renderer(&a, cfg)?;

    let results = tools
        .iter()
        .map(|tool| {
            log::info!("scoring {tool}");
            score::run(&corpus, &outputs.join(tool), tool, renderer.as_ref(), &opts)
        })
        .collect();
    let mut report = Report::new(results, &opts, !a.no_timestamps);
    report.warnings = load_warnings;
    finish(&report, a.json.as_deref(), a.md.as_deref())
}

fn finish(report: &Report, json: Option<&Path>, md: Option<&Path>) -> Result<Status> {
    let table = report.to_markdown();
    print!("{table}");
    if let Some(p) = json {
        write(p, &report.to_json())?;
    }
    if let Some(p) = md {
        write(p, &table)?;
    }
    let warnings = report.warning_count();
    for w in report.warnings.iter().chain(report.tools.values().flat_map(|r| &r.warnings)) {
        eprintln!("warning: {w}");
    }
    Ok(if warnings == 0 { Status::Clean } else { Status::Warnings })
}

fn bench_score(a: ScoreArgs, cfg: &Config) -> Result<Status> {
    let text = std::fs::read_to_string(&a.report).with_context(|| format!("reading {}", a.report.display()))?;
    let mut report: Report = serde_json::from_str(&text).with_context(|| format!("parsing {}", a.report.display()))?;
    let iterations = positive("iterations", pick(a.iterations, cfg.bench.iterations, report.iterations))?;
    let seed = pick(a.seed, cfg.seed, report.seed);
    let resample = a.resample.map_or(report.resample, Into::into);
    report.rescore(iterations, seed, resample);
    finish(&report, a.json.as_deref(), a.md.as_deref())
}
