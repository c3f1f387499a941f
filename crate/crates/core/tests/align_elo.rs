mod common;

use std::collections::BTreeMap;

use common::{lcs_quadratic, sequential_elo};
use pagebench::align::*;
use pagebench::elo::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn judgment(a: &str, b: &str, outcome: Outcome) -> Judgment {
    Judgment {
        page_id: "p".into(),
        tool_a: a.into(),
        tool_b: b.into(),
        outcome,
        annotator: String::new(),
        timestamp: None,
    }
}

fn record(a: &str, b: &str, a_wins: usize, b_wins: usize) -> Vec<Judgment> {
    let mut out: Vec<Judgment> = (0..a_wins).map(|_| judgment(a, b, Outcome::AWins)).collect();
    out.extend((0..b_wins).map(|_| judgment(a, b, Outcome::BWins)));
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn hirschberg_matches_quadratic_lcs(a in prop::collection::vec(0u32..6, 0..60), b in prop::collection::vec(0u32..6, 0..60)) {
        let pairs = hirschberg(&a, &b);
        prop_assert_eq!(pairs.len(), lcs_quadratic(&a, &b));
        prop_assert_eq!(lcs_length(&a, &b), pairs.len());
        for w in pairs.windows(2) {
            prop_assert!(w[0].0 < w[1].0 && w[0].1 < w[1].1);
        }
        for &(i, j) in &pairs {
            prop_assert_eq!(a[i], b[j]);
        }
    }

    #[test]
    fn alignment_is_symmetric(a in "[a-d ]{0,80}", b in "[a-d ]{0,80}") {
        let ab = align_score_with(&a, &b, Denominator::Max);
        let ba = align_score_with(&b, &a, Denominator::Max);
        prop_assert_eq!(ab.matched, ba.matched);
        prop_assert_eq!(ab.score, ba.score);
        prop_assert!((0.0..=1.0).contains(&ab.score));
    }

    #[test]
    fn swapping_labels_changes_nothing(outcomes in prop::collection::vec(0usize..6, 1..40), seed in any::<u64>()) {
        let tools = ["x", "y", "z"];
        let js: Vec<Judgment> = outcomes
            .iter()
            .enumerate()
            .map(|(i, &o)| judgment(tools[i % 3], tools[(i + 1) % 3], Outcome::ALL[o]))
            .collect();
        let swapped: Vec<Judgment> = js
            .iter()
            .map(|j| judgment(&j.tool_b, &j.tool_a, j.outcome.swapped()))
            .collect();
        let cfg = EloConfig { shuffles: 10, seed, ..EloConfig::default() };
        prop_assert_eq!(compute_elo(&js, &cfg).ratings, compute_elo(&swapped, &cfg).ratings);
    }
}

#[test]
fn ten_straight_wins_match_the_hand_oracle() {
    let js = record("A", "B", 10, 0);
    let got = compute_elo(&js, &EloConfig::default()).ratings;
    let games: Vec<(String, String)> = (0..10).map(|_| ("A".into(), "B".into())).collect();
    let want = sequential_elo(&games, 1500.0, 32.0);
    // identical games: every ordering is the same sequence
    for t in ["A", "B"] {
        assert!((got[t] - want[t]).abs() < 1e-4, "{t}: {} vs {}", got[t], want[t]);
    }
    assert!(got["A"] > got["B"]);
}

#[test]
fn zero_sum_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let names: Vec<String> = (0..6).map(|i| format!("t{i}")).collect();
    let games: Vec<Game> = (0..10_000)
        .map(|_| {
            let w = rng.random_range(0..6);
            let l = (w + rng.random_range(1..6)) % 6;
            Game::new(&names[w], &names[l])
        })
        .collect();
    let mut ratings: BTreeMap<String, f64> = names.iter().map(|n| (n.clone(), 1500.0)).collect();
    for g in &games {
        apply_games(&mut ratings, &[g], 1500.0, 32.0);
        assert_eq!(ratings.values().sum::<f64>(), 9000.0);
    }
}

#[test]
fn shuffle_averaging_reduces_order_variance() {
    let js = [record("A", "B", 30, 20), record("B", "C", 25, 25), record("A", "C", 35, 15)].concat();
    let var = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
    };
    let single: Vec<f64> = (0..20)
        .map(|s| compute_elo(&js, &EloConfig { shuffles: 1, seed: s, ..EloConfig::default() }).ratings["A"])
        .collect();
    let averaged: Vec<f64> = (0..20)
        .map(|s| compute_elo(&js, &EloConfig { shuffles: 100, seed: s, ..EloConfig::default() }).ratings["A"])
        .collect();
    assert!(var(&averaged) < var(&single), "{} vs {}", var(&averaged), var(&single));
}

#[test]
fn even_record_intervals_cover_base() {
    let js = record("A", "B", 5, 5);
    let cfg = EloConfig { seed: 4, ..EloConfig::default() };
    let ci = elo_ci(&js, &cfg, 500, 20);
    for t in ["A", "B"] {
        let (lo, hi) = ci[t];
        assert!(lo < 1500.0 && 1500.0 < hi, "{t}: {lo}..{hi}");
    }
    assert_eq!(ci, elo_ci(&js, &cfg, 500, 20));
}

#[test]
fn single_repeated_game_gives_a_point_interval() {
    let js = record("A", "B", 3, 0);
    let ci = elo_ci(&js, &EloConfig::default(), 200, 5);
    let (lo, hi) = ci["A"];
    assert!(hi - lo < 1e-9);
}

#[test]
fn indecisive_outcomes_are_not_games() {
    let js = vec![
        judgment("A", "B", Outcome::BothGood),
        judgment("A", "B", Outcome::BothBad),
        judgment("A", "B", Outcome::Invalid),
        judgment("A", "B", Outcome::Skipped),
    ];
    let r = compute_elo(&js, &EloConfig::default());
    assert_eq!(r.decisive, 0);
    assert!(r.ratings.values().all(|&x| x == 1500.0));
}
