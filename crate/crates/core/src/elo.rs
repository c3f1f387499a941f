//! ELO ratings from pairwise judgments.
//!
//! Only decisive judgments (`a_wins`, `b_wins`) are games. Ratings are the
//! mean over seeded shuffles of the game order, each shuffle replaying the
//! games sequentially from the base rating.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::score::percentile;

pub const BASE_RATING: f64 = 1500.0;
pub const DEFAULT_K: f64 = 32.0;
pub const DEFAULT_SHUFFLES: usize = 100;
pub const DEFAULT_RESAMPLES: usize = 5000;

/// Rating changes are rounded to this grid so that winner gain and loser
/// loss cancel exactly in floating point.
pub const DELTA_QUANTUM: f64 = 1.0 / (1u64 << 20) as f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    AWins,
    BWins,
    BothGood,
    BothBad,
    Invalid,
    Skipped,
}

impl Outcome {
    pub const ALL: [Outcome; 6] = [
        Outcome::AWins,
        Outcome::BWins,
        Outcome::BothGood,
        Outcome::BothBad,
        Outcome::Invalid,
        Outcome::Skipped,
    ];

    pub fn is_decisive(self) -> bool {
        matches!(self, Outcome::AWins | Outcome::BWins)
    }

    pub fn swapped(self) -> Outcome {
        match self {
            Outcome::AWins => Outcome::BWins,
            Outcome::BWins => Outcome::AWins,
            o => o,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub page_id: String,
    pub tool_a: String,
    pub tool_b: String,
    pub outcome: Outcome,
    #[serde(default)]
    pub annotator: String,
    /// Seconds since the Unix epoch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
}

impl Judgment {
    pub fn game(&self) -> Option<Game> {
        match self.outcome {
            Outcome::AWins => Some(Game::new(&self.tool_a, &self.tool_b)),
            Outcome::BWins => Some(Game::new(&self.tool_b, &self.tool_a)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Game {
    pub winner: String,
    pub loser: String,
}

impl Game {
    pub fn new(winner: &str, loser: &str) -> Self {
        Game {
            winner: winner.to_string(),
            loser: loser.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EloConfig {
    pub base: f64,
    pub k: f64,
    pub shuffles: usize,
    pub seed: u64,
}

impl Default for EloConfig {
    fn default() -> Self {
        EloConfig {
            base: BASE_RATING,
            k: DEFAULT_K,
            shuffles: DEFAULT_SHUFFLES,
            seed: 0,
        }
    }
}

/// Head-to-head record of two tools, `tool_a` sorting first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub tool_a: String,
    pub tool_b: String,
    pub a_wins: u32,
    pub b_wins: u32,
}

impl PairRecord {
    /// The same record seen from the side with more wins.
    pub fn leader_first(&self) -> PairRecord {
        if self.b_wins > self.a_wins {
            PairRecord {
                tool_a: self.tool_b.clone(),
                tool_b: self.tool_a.clone(),
                a_wins: self.b_wins,
                b_wins: self.a_wins,
            }
        } else {
            self.clone()
        }
    }

    pub fn a_win_rate(&self) -> f64 {
        win_rate_pct(self.a_wins, self.b_wins)
    }
}

/// Percentage rounded to one decimal, half away from zero, in exact
/// integer arithmetic.
pub fn win_rate_pct(wins: u32, losses: u32) -> f64 {
    let total = wins as u64 + losses as u64;
    if total == 0 {
        return 0.0;
    }
    let tenths = (2000 * wins as u64 + total) / (2 * total);
    tenths as f64 / 10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EloResult {
    pub ratings: BTreeMap<String, f64>,
    #[serde(default)]
    pub ci95: BTreeMap<String, (f64, f64)>,
    pub games: Vec<PairRecord>,
    pub decisive: usize,
    pub judgments: usize,
}

pub fn expected_score(r_self: f64, r_other: f64) -> f64 {
    // 10^(d/400) via exp, which is markedly cheaper than powf in the replay loops
    const SCALE: f64 = std::f64::consts::LN_10 / 400.0;
    1.0 / (1.0 + ((r_other - r_self) * SCALE).exp())
}

/// Rating transferred from loser to winner.
pub fn update_delta(r_winner: f64, r_loser: f64, k: f64) -> f64 {
    // k * (1 - E) with E = 1 / (1 + 10^((r_l - r_w) / 400)), one division only
    const SCALE: f64 = std::f64::consts::LN_10 / 400.0;
    let raw = k / (1.0 + ((r_winner - r_loser) * SCALE).exp());
    // scaling by a power of two is exact, so multiply instead of divide
    (raw * (1.0 / DELTA_QUANTUM)).round() * DELTA_QUANTUM
}

/// Replay `games` in order, updating `ratings` in place.
pub fn apply_games(ratings: &mut BTreeMap<String, f64>, games: &[&Game], base: f64, k: f64) {
    for g in games {
        let rw = *ratings.get(&g.winner).unwrap_or(&base);
        let rl = *ratings.get(&g.loser).unwrap_or(&base);
        let d = update_delta(rw, rl, k);
        ratings.insert(g.winner.clone(), rw + d);
        ratings.insert(g.loser.clone(), rl - d);
    }
}

pub fn tools_of(judgments: &[Judgment]) -> BTreeSet<String> {
    judgments
        .iter()
        .flat_map(|j| [j.tool_a.clone(), j.tool_b.clone()])
        .collect()
}

pub fn pair_records(judgments: &[Judgment]) -> Vec<PairRecord> {
    let mut m: BTreeMap<(String, String), (u32, u32)> = BTreeMap::new();
    for g in judgments.iter().filter_map(Judgment::game) {
        if g.winner <= g.loser {
            m.entry((g.winner, g.loser)).or_default().0 += 1;
        } else {
            m.entry((g.loser, g.winner)).or_default().1 += 1;
        }
    }
    m.into_iter()
        .map(|((tool_a, tool_b), (a_wins, b_wins))| PairRecord {
            tool_a,
            tool_b,
            a_wins,
            b_wins,
        })
        .collect()
}

/// Games with tools replaced by their index in a sorted tool list.
fn indexed(tools: &BTreeSet<String>, games: &[Game]) -> Vec<(usize, usize)> {
    let pos = |t: &String| tools.iter().position(|x| x == t).expect("tool listed");
    games.iter().map(|g| (pos(&g.winner), pos(&g.loser))).collect()
}

/// Ratings after replaying `games` in the order drawn for shuffle `index`.
fn one_ordering(n_tools: usize, games: &[(usize, usize)], cfg: &EloConfig, index: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let mut order = games.to_vec();
    order.shuffle(&mut rng);
    let mut ratings = vec![cfg.base; n_tools];
    for (w, l) in order {
        let d = update_delta(ratings[w], ratings[l], cfg.k);
        ratings[w] += d;
        ratings[l] -= d;
    }
    ratings
}

const LANES: usize = 4;

/// Several orderings replayed side by side. Each replay is one long chain of
/// dependent updates; interleaving independent chains hides their latency.
struct Lanes {
    orders: [Vec<(usize, usize)>; LANES],
    ratings: [Vec<f64>; LANES],
}

impl Lanes {
    fn new(games: &[(usize, usize)], n_tools: usize) -> Self {
        Lanes {
            orders: std::array::from_fn(|_| games.to_vec()),
            ratings: std::array::from_fn(|_| vec![0.0; n_tools]),
        }
    }

    /// Same result per lane as `one_ordering(.., first + lane)`.
    fn replay(&mut self, games: &[(usize, usize)], cfg: &EloConfig, first: usize, count: usize) {
        for lane in 0..count {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream((first + lane) as u64);
            self.orders[lane].copy_from_slice(games);
            self.orders[lane].shuffle(&mut rng);
            self.ratings[lane].fill(cfg.base);
        }
        for i in 0..games.len() {
            for lane in 0..count {
                let (w, l) = self.orders[lane][i];
                let r = &mut self.ratings[lane];
                let d = update_delta(r[w], r[l], cfg.k);
                r[w] += d;
                r[l] -= d;
            }
        }
    }
}

fn mean_ratings(n_tools: usize, runs: &[Vec<f64>]) -> Vec<f64> {
    (0..n_tools)
        .map(|t| runs.iter().map(|r| r[t]).sum::<f64>() / runs.len() as f64)
        .collect()
}

fn by_name(tools: &BTreeSet<String>, values: Vec<f64>) -> BTreeMap<String, f64> {
    tools.iter().cloned().zip(values).collect()
}

/// Mean rating over `shuffles` seeded orderings of the given games.
pub fn shuffled_ratings(tools: &BTreeSet<String>, games: &[Game], cfg: &EloConfig) -> BTreeMap<String, f64> {
    let idx = indexed(tools, games);
    let runs: Vec<Vec<f64>> = (0..cfg.shuffles.max(1))
        .into_par_iter()
        .map(|s| one_ordering(tools.len(), &idx, cfg, s))
        .collect();
    by_name(tools, mean_ratings(tools.len(), &runs))
}

pub fn compute_elo(judgments: &[Judgment], cfg: &EloConfig) -> EloResult {
    let tools = tools_of(judgments);
    let games: Vec<Game> = judgments.iter().filter_map(Judgment::game).collect();
    EloResult {
        ratings: shuffled_ratings(&tools, &games, cfg),
        ci95: BTreeMap::new(),
        games: pair_records(judgments),
        decisive: games.len(),
        judgments: judgments.len(),
    }
}

/// Percentile 95% intervals from resampling decisive games with
/// replacement. Each resample averages `shuffles_per_resample` orderings.
pub fn elo_ci(
    judgments: &[Judgment],
    cfg: &EloConfig,
    resamples: usize,
    shuffles_per_resample: usize,
) -> BTreeMap<String, (f64, f64)> {
    let tools = tools_of(judgments);
    let games: Vec<Game> = judgments.iter().filter_map(Judgment::game).collect();
    if games.is_empty() || resamples == 0 {
        return tools.into_iter().map(|t| (t, (cfg.base, cfg.base))).collect();
    }
    let idx = indexed(&tools, &games);
    let n = tools.len();
    let samples: Vec<Vec<f64>> = (0..resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream((1u64 << 32) | r as u64);
            let drawn: Vec<(usize, usize)> = (0..idx.len())
                .map(|_| idx[rng.random_range(0..idx.len())])
                .collect();
            let inner = EloConfig {
                seed: rng.random(),
                shuffles: shuffles_per_resample.max(1),
                ..*cfg
            };
            // sequential inside: the outer loop already saturates the pool
            let mut lanes = Lanes::new(&drawn, n);
            let mut sums = vec![0.0; n];
            let mut first = 0;
            while first < inner.shuffles {
                let count = LANES.min(inner.shuffles - first);
                lanes.replay(&drawn, &inner, first, count);
                for ratings in &lanes.ratings[..count] {
                    for (acc, r) in sums.iter_mut().zip(ratings) {
                        *acc += r;
                    }
                }
                first += count;
            }
            sums.iter().map(|s| s / inner.shuffles as f64).collect::<Vec<f64>>()
        })
        .collect();
    tools
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            let mut v: Vec<f64> = samples.iter().map(|s| s[i]).collect();
            v.sort_by(f64::total_cmp);
            (t, (percentile(&v, 2.5), percentile(&v, 97.5)))
        })
        .collect()
}

#[derive(Debug, thiserror::Error)]
pub enum JudgmentError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Line {
        path: String,
        line: usize,
        message: String,
    },
}

pub fn parse_judgments(text: &str, path: &str) -> Result<Vec<Judgment>, JudgmentError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| JudgmentError::Line {
            path: path.to_string(),
            line: i + 1,
            message,
        };
        let j: Judgment = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if j.tool_a == j.tool_b {
            return Err(err(format!("tool_a and tool_b are both `{}`", j.tool_a)));
        }
        out.push(j);
    }
    Ok(out)
}

pub fn load_judgments(path: &Path) -> Result<Vec<Judgment>, JudgmentError> {
    let text = fs::read_to_string(path).map_err(|source| JudgmentError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_judgments(&text, &path.display().to_string())
}

/// Drop judgments superseded by a later one from the same annotator on the
/// same page and tool pair. Judgments without an annotator are all kept.
pub fn latest_judgments(judgments: Vec<Judgment>) -> Vec<Judgment> {
    let key = |j: &Judgment| {
        let (lo, hi) = if j.tool_a <= j.tool_b {
            (j.tool_a.clone(), j.tool_b.clone())
        } else {
            (j.tool_b.clone(), j.tool_a.clone())
        };
        (j.annotator.clone(), j.page_id.clone(), lo, hi)
    };
    let mut last = std::collections::HashMap::new();
    for (i, j) in judgments.iter().enumerate() {
        if !j.annotator.is_empty() {
            last.insert(key(j), i);
        }
    }
    judgments
        .into_iter()
        .enumerate()
        .filter(|(i, j)| j.annotator.is_empty() || last[&key(j)] == *i)
        .map(|(_, j)| j)
        .collect()
}

/// Win/loss table, leader first, rows sorted by win rate.
pub fn win_table_markdown(result: &EloResult) -> String {
    let mut rows: Vec<PairRecord> = result.games.iter().map(PairRecord::leader_first).collect();
    rows.sort_by(|a, b| {
        b.a_win_rate()
            .total_cmp(&a.a_win_rate())
            .then_with(|| a.tool_a.cmp(&b.tool_a))
            .then_with(|| a.tool_b.cmp(&b.tool_b))
    });
    let mut out = String::from("| Matchup | Wins/Losses | Win rate (%) |\n|---|---:|---:|\n");
    for r in rows {
        out.push_str(&format!(
            "| {} vs {} | {}/{} | {:.1} |\n",
            r.tool_a,
            r.tool_b,
            r.a_wins,
            r.b_wins,
            r.a_win_rate()
        ));
    }
    out
}

pub fn ratings_markdown(result: &EloResult) -> String {
    let mut rows: Vec<(&String, &f64)> = result.ratings.iter().collect();
    rows.sort_by(|a, b| b.1.total_cmp(a.1).then(a.0.cmp(b.0)));
    let mut out = String::from("| Tool | Rating | 95% CI |\n|---|---:|---:|\n");
    for (t, r) in rows {
        let ci = result
            .ci95
            .get(t)
            .map_or("-".to_string(), |(lo, hi)| format!("{lo:.1}–{hi:.1}"));
        out.push_str(&format!("| {t} | {r:.1} | {ci} |\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn j(a: &str, b: &str, outcome: Outcome) -> Judgment {
        Judgment {
            page_id: "p".into(),
            tool_a: a.into(),
            tool_b: b.into(),
            outcome,
            annotator: "x".into(),
            timestamp: None,
        }
    }

    #[test]
    fn interleaved_lanes_match_single_replays() {
        let games: Vec<(usize, usize)> = (0..57).map(|i| (i % 3, (i * 7 + 1) % 3)).filter(|(w, l)| w != l).collect();
        let cfg = EloConfig { seed: 9, ..EloConfig::default() };
        let mut lanes = Lanes::new(&games, 3);
        for (first, count) in [(0, LANES), (4, 3), (11, 1)] {
            lanes.replay(&games, &cfg, first, count);
            for lane in 0..count {
                assert_eq!(lanes.ratings[lane], one_ordering(3, &games, &cfg, first + lane));
            }
        }
    }

    #[test]
    fn no_games_stay_at_base() {
        let r = compute_elo(&[j("a", "b", Outcome::BothGood)], &EloConfig::default());
        assert_eq!(r.ratings["a"], 1500.0);
        assert_eq!(r.ratings["b"], 1500.0);
        assert_eq!(r.decisive, 0);
    }

    #[test]
    fn first_update_is_half_k() {
        assert_eq!(update_delta(1500.0, 1500.0, 32.0), 16.0);
    }

    #[test]
    fn win_rates_round_half_up() {
        assert_eq!(win_rate_pct(49, 31), 61.3);
        assert_eq!(win_rate_pct(1, 1), 50.0);
        assert_eq!(win_rate_pct(0, 0), 0.0);
        assert_eq!(win_rate_pct(1, 7), 12.5);
    }

    #[test]
    fn records_and_leader() {
        let js = vec![
            j("b", "a", Outcome::AWins),
            j("a", "b", Outcome::BWins),
            j("a", "b", Outcome::AWins),
            j("a", "b", Outcome::Invalid),
        ];
        let rec = pair_records(&js);
        assert_eq!(rec.len(), 1);
        assert_eq!((rec[0].a_wins, rec[0].b_wins), (1, 2));
        let lead = rec[0].leader_first();
        assert_eq!((lead.tool_a.as_str(), lead.a_wins), ("b", 2));
    }

    #[test]
    fn judgment_json_shape() {
        let line = r#"{"page_id":"doc_pg1","tool_a":"x","tool_b":"y","outcome":"both_bad","annotator":"ann"}"#;
        let parsed = parse_judgments(line, "mem").unwrap();
        assert_eq!(parsed[0].outcome, Outcome::BothBad);
        assert!(parse_judgments(r#"{"page_id":"p","tool_a":"x","tool_b":"x","outcome":"a_wins"}"#, "mem").is_err());
    }
}
