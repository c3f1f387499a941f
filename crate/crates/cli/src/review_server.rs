use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use clap::{Args, Subcommand};
use pagebench::model::{load_corpus_with, LoadOptions, PageKey};
use pagebench::review::{sample_pairs, ReviewError, ReviewQueue, Submission};
use pagebench::score::discover_tools;
use serde::Deserialize;
use tower_http::services::ServeDir;

use crate::config::{pick, positive, Config};
use crate::Status;

const INDEX_HTML: &str = include_str!("index.html");

#[derive(Subcommand)]
pub enum ReviewCommand {
    /// Serve the blind pairwise review app.
    Serve(ServeArgs),
}

#[derive(Args)]
pub struct ServeArgs {
    /// Corpus whose pages are compared.
    #[arg(long)]
    corpus: PathBuf,
    /// One subdirectory of page outputs per tool.
    #[arg(long)]
    outputs: PathBuf,
    #[arg(long, value_delimiter = ',')]
    tools: Vec<String>,
    /// Append-only JSONL of judgments; existing entries are not re-served.
    #[arg(long)]
    judgments: Option<PathBuf>,
    /// Maximum number of comparisons sampled.
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    addr: Option<String>,
    /// Page images named `<pdf-stem>_pg<page>.png`, served under /pages.
    #[arg(long)]
    images: Option<PathBuf>,
    /// Directory with a replacement front end.
    #[arg(long = "static")]
    static_dir: Option<PathBuf>,
}

#[derive(Deserialize)]
struct NextQuery {
    #[serde(default)]
    annotator: String,
}

struct ApiError(ReviewError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            ReviewError::UnknownPair(_) => StatusCode::NOT_FOUND,
            ReviewError::NotServed { .. } => StatusCode::CONFLICT,
            ReviewError::NoAnnotator => StatusCode::BAD_REQUEST,
            ReviewError::Io(_) | ReviewError::Judgments(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            log::error!("{}", self.0);
        }
        (status, Json(serde_json::json!({ "error": self.0.to_string() }))).into_response()
    }
}

async fn next(State(queue): State<Arc<ReviewQueue>>, Query(q): Query<NextQuery>) -> Result<Response, ApiError> {
    Ok(Json(queue.next_item(&q.annotator).map_err(ApiError)?).into_response())
}

async fn submit(State(queue): State<Arc<ReviewQueue>>, Json(s): Json<Submission>) -> Result<Response, ApiError> {
    // the append is fsynced, keep it off the async workers
    let ack = tokio::task::spawn_blocking(move || queue.submit(&s.pair_id, s.choice, &s.annotator))
        .await
        .map_err(|e| ApiError(ReviewError::Io(std::io::Error::other(e))))?
        .map_err(ApiError)?;
    Ok(Json(ack).into_response())
}

/// The review API plus page images and the front end.
pub fn router(queue: Arc<ReviewQueue>, images: Option<PathBuf>, static_dir: Option<PathBuf>) -> Router {
    let mut app = Router::new()
        .route("/api/next", get(next))
        .route("/api/submit", post(submit))
        .with_state(queue);
    if let Some(dir) = images {
        app = app.nest_service("/pages", ServeDir::new(dir));
    }
    match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app.route("/", get(|| async { Html(INDEX_HTML) })),
    }
}

pub fn run(cmd: ReviewCommand, cfg: &Config) -> Result<Status> {
    let ReviewCommand::Serve(a) = cmd;
    let seed = pick(a.seed, cfg.seed, 0);
    let max_pairs = positive("pairs", pick(a.pairs, cfg.review.pairs, 2000))?;
    let addr: SocketAddr = pick(a.addr.clone(), cfg.review.addr.clone(), "127.0.0.1:8080".to_string())
        .parse()
        .context("parsing --addr")?;
    let judgments = a.judgments.clone().or(cfg.review.judgments.clone());
    log::info!(
        "resolved: corpus={} outputs={} seed={seed} pairs={max_pairs} addr={addr} judgments={:?}",
        a.corpus.display(),
        a.outputs.display(),
        judgments
    );

    let corpus = load_corpus_with(&a.corpus, LoadOptions { lenient: true })?.corpus;
    let tools = if a.tools.is_empty() {
        discover_tools(&a.outputs).with_context(|| format!("listing {}", a.outputs.display()))?
    } else {
        a.tools.clone()
    };
    if tools.len() < 2 {
        bail!("need at least two tools to compare, found {}", tools.len());
    }
    let pages: Vec<PageKey> = corpus.pages().into_iter().collect();
    let pairs = sample_pairs(&a.outputs, &tools, &pages, max_pairs, seed)?;
    if pairs.is_empty() {
        bail!("no page has outputs from two tools");
    }
    let queue = match &judgments {
        Some(path) => ReviewQueue::open(pairs, seed, path)?,
        None => {
            log::warn!("no --judgments file; judgments are kept in memory only");
            ReviewQueue::in_memory(pairs, seed)
        }
    };
    println!("{} comparisons from {} tools, listening on http://{addr}", queue.len(), tools.len());
    let app = router(Arc::new(queue), a.images.clone(), a.static_dir.clone());

    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .context("serving")
    })?;
    Ok(Status::Clean)
}
