//! Blind pairwise review queue backing the review web app.
//!
//! Annotators see a page image and two unlabeled outputs in random order.
//! Tool names only ever reach the judgments file.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::elo::{load_judgments, Judgment, JudgmentError, Outcome};
use crate::model::PageKey;
use crate::score::output_path;

/// One comparison: the same page converted by two tools.
#[derive(Debug, Clone, PartialEq)]
pub struct ReviewPair {
    pub pair_id: String,
    pub page_id: String,
    pub page_image_url: String,
    pub tool_a: String,
    pub tool_b: String,
    pub text_a: String,
    pub text_b: String,
}

/// What the browser gets. Carries no tool names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub pair_id: String,
    pub page_image_url: String,
    pub left_text: String,
    pub right_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextItem {
    Item(ReviewItem),
    Complete { served: usize },
}

/// The annotator's choice in screen terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SideChoice {
    Left,
    Right,
    BothGood,
    BothBad,
    Invalid,
    Skipped,
}

impl SideChoice {
    fn outcome(self, swapped: bool) -> Outcome {
        let o = match self {
            SideChoice::Left => Outcome::AWins,
            SideChoice::Right => Outcome::BWins,
            SideChoice::BothGood => Outcome::BothGood,
            SideChoice::BothBad => Outcome::BothBad,
            SideChoice::Invalid => Outcome::Invalid,
            SideChoice::Skipped => Outcome::Skipped,
        };
        if swapped {
            o.swapped()
        } else {
            o
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub pair_id: String,
    pub choice: SideChoice,
    pub annotator: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ack {
    pub pair_id: String,
    /// True when this submission replaces an earlier one.
    pub superseded: bool,
}

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("unknown pair `{0}`")]
    UnknownPair(String),
    #[error("pair `{pair_id}` was not served to `{annotator}`")]
    NotServed { pair_id: String, annotator: String },
    #[error("annotator name must not be empty")]
    NoAnnotator,
    #[error("writing judgments: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Judgments(#[from] JudgmentError),
}

#[derive(Default)]
struct Session {
    order: Vec<usize>,
    next: usize,
    rng: Option<ChaCha8Rng>,
    /// pair index → whether tool_a was shown on the right
    served: HashMap<usize, bool>,
    submitted: HashSet<usize>,
}

struct Sink {
    file: Option<File>,
    path: Option<PathBuf>,
}

pub struct ReviewQueue {
    pairs: Vec<ReviewPair>,
    by_id: HashMap<String, usize>,
    seed: u64,
    sessions: Mutex<HashMap<String, Session>>,
    /// (annotator, page, tools) already judged in an earlier run
    judged_before: HashSet<(String, String, String, String)>,
    sink: Mutex<Sink>,
}

fn fnv1a(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn judged_key(annotator: &str, page: &str, a: &str, b: &str) -> (String, String, String, String) {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    (annotator.into(), page.into(), lo.into(), hi.into())
}

impl ReviewQueue {
    /// Queue whose judgments are kept in memory only.
    pub fn in_memory(pairs: Vec<ReviewPair>, seed: u64) -> Self {
        Self::build(pairs, seed, Sink { file: None, path: None }, HashSet::new())
    }

    /// Queue appending judgments to `path`. Pairs an annotator already
    /// judged in an existing file are not served to them again.
    pub fn open(pairs: Vec<ReviewPair>, seed: u64, path: &Path) -> Result<Self, ReviewError> {
        let mut judged = HashSet::new();
        if path.exists() {
            for j in load_judgments(path)? {
                judged.insert(judged_key(&j.annotator, &j.page_id, &j.tool_a, &j.tool_b));
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self::build(
            pairs,
            seed,
            Sink {
                file: Some(file),
                path: Some(path.to_path_buf()),
            },
            judged,
        ))
    }

    fn build(pairs: Vec<ReviewPair>, seed: u64, sink: Sink, judged_before: HashSet<(String, String, String, String)>) -> Self {
        let by_id = pairs.iter().enumerate().map(|(i, p)| (p.pair_id.clone(), i)).collect();
        ReviewQueue {
            pairs,
            by_id,
            seed,
            sessions: Mutex::new(HashMap::new()),
            judged_before,
            sink: Mutex::new(sink),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn judgments_path(&self) -> Option<PathBuf> {
        self.sink.lock().unwrap().path.clone()
    }

    /// Next unserved pair for `annotator`, sides drawn at random.
    pub fn next_item(&self, annotator: &str) -> Result<NextItem, ReviewError> {
        if annotator.is_empty() {
            return Err(ReviewError::NoAnnotator);
        }
        let mut sessions = self.sessions.lock().unwrap();
        let session = sessions.entry(annotator.to_string()).or_default();
        if session.rng.is_none() {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(annotator));
            session.order = (0..self.pairs.len()).collect();
            session.order.shuffle(&mut rng);
            session.rng = Some(rng);
        }
        let rng = session.rng.as_mut().expect("seeded above");
        while session.next < session.order.len() {
            let i = session.order[session.next];
            session.next += 1;
            let p = &self.pairs[i];
            if self
                .judged_before
                .contains(&judged_key(annotator, &p.page_id, &p.tool_a, &p.tool_b))
            {
                continue;
            }
            let swapped = rng.random_bool(0.5);
            session.served.insert(i, swapped);
            let (left, right) = if swapped { (&p.text_b, &p.text_a) } else { (&p.text_a, &p.text_b) };
            return Ok(NextItem::Item(ReviewItem {
                pair_id: p.pair_id.clone(),
                page_image_url: p.page_image_url.clone(),
                left_text: left.clone(),
                right_text: right.clone(),
            }));
        }
        Ok(NextItem::Complete {
            served: session.served.len(),
        })
    }

    /// Record a choice. The judgment line is flushed to disk before the ack.
    /// Submitting again for the same pair appends a superseding line.
    pub fn submit(&self, pair_id: &str, choice: SideChoice, annotator: &str) -> Result<Ack, ReviewError> {
        let &i = self
            .by_id
            .get(pair_id)
            .ok_or_else(|| ReviewError::UnknownPair(pair_id.to_string()))?;
        let mut sessions = self.sessions.lock().unwrap();
        let not_served = || ReviewError::NotServed {
            pair_id: pair_id.to_string(),
            annotator: annotator.to_string(),
        };
        let session = sessions.get_mut(annotator).ok_or_else(not_served)?;
        let &swapped = session.served.get(&i).ok_or_else(not_served)?;
        let p = &self.pairs[i];
        let judgment = Judgment {
            page_id: p.page_id.clone(),
            tool_a: p.tool_a.clone(),
            tool_b: p.tool_b.clone(),
            outcome: choice.outcome(swapped),
            annotator: annotator.to_string(),
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).ok().map(|d| d.as_secs()),
        };
        let mut sink = self.sink.lock().unwrap();
        if let Some(file) = sink.file.as_mut() {
            let mut line = serde_json::to_string(&judgment).expect("judgment serializes");
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.flush()?;
            file.sync_data()?;
        }
        let superseded = !session.submitted.insert(i);
        if superseded {
            log::info!("{annotator} resubmitted {pair_id}; the latest judgment wins");
        }
        Ok(Ack {
            pair_id: pair_id.to_string(),
            superseded,
        })
    }
}

/// Sample up to `max_pairs` comparisons of two different tools on the same
/// page, from tool output directories under `outputs`.
pub fn sample_pairs(
    outputs: &Path,
    tools: &[String],
    pages: &[PageKey],
    max_pairs: usize,
    seed: u64,
) -> io::Result<Vec<ReviewPair>> {
    let mut candidates = Vec::new();
    for key in pages {
        let mut have = Vec::new();
        for tool in tools {
            if let Some(path) = output_path(&outputs.join(tool), key) {
                have.push((tool, std::fs::read_to_string(path)?));
            }
        }
        for a in 0..have.len() {
            for b in a + 1..have.len() {
                candidates.push((key, have[a].clone(), have[b].clone()));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    candidates.shuffle(&mut rng);
    candidates.truncate(max_pairs);
    Ok(candidates
        .into_iter()
        .enumerate()
        .map(|(n, (key, (ta, xa), (tb, xb)))| {
            let stem = key.output_stem();
            ReviewPair {
                pair_id: format!("p{n:05}"),
                page_id: stem.clone(),
                page_image_url: format!("/pages/{stem}.png"),
                tool_a: ta.clone(),
                tool_b: tb.clone(),
                text_a: xa,
                text_b: xb,
            }
        })
        .collect())
}
