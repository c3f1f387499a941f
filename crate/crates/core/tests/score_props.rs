use std::collections::BTreeMap;

use pagebench::model::Category;
use pagebench::score::*;
use proptest::prelude::*;

fn outcome(source: &str, page: u32, pass: bool) -> TestOutcome {
    TestOutcome {
        source: source.into(),
        category: Category::Present,
        pdf: format!("{source}.pdf"),
        page,
        status: if pass { TestStatus::Pass } else { TestStatus::Fail },
        explanation: String::new(),
    }
}

/// `counts[i] = (passed, failed)` for source `s{i}`.
fn corpus(counts: &[(usize, usize)], copies: usize) -> BTreeMap<String, TestOutcome> {
    let mut out = BTreeMap::new();
    for (i, &(p, f)) in counts.iter().enumerate() {
        let source = format!("s{i}");
        for c in 0..copies {
            for k in 0..p + f {
                out.insert(format!("{source}-{c}-{k:04}"), outcome(&source, k as u32, k < p));
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn macro_average_ignores_source_size(counts in prop::collection::vec((0usize..20, 0usize..20), 1..6), which in 0usize..6) {
        prop_assume!(counts.iter().all(|&(p, f)| p + f > 0));
        let base = corpus(&counts, 1);
        let (_, overall) = summarize(&base);
        let expected = counts.iter().map(|&(p, f)| p as f64 / (p + f) as f64).sum::<f64>() / counts.len() as f64;
        prop_assert!((overall - expected).abs() < 1e-12);

        // doubling one source moves the micro average but not the macro one
        let mut doubled = base.clone();
        let s = format!("s{}", which % counts.len());
        for (id, t) in base.iter().filter(|(_, t)| t.source == s) {
            doubled.insert(format!("{id}-dup"), t.clone());
        }
        let (_, overall2) = summarize(&doubled);
        prop_assert!((overall - overall2).abs() < 1e-12);
    }

    #[test]
    fn relabeling_tests_keeps_the_summary(counts in prop::collection::vec((0usize..15, 1usize..15), 1..5), salt in any::<u32>()) {
        let base = corpus(&counts, 1);
        let relabeled: BTreeMap<String, TestOutcome> = base
            .iter()
            .map(|(id, t)| (format!("{:08x}-{id}", (salt ^ id.len() as u32).wrapping_mul(2654435761)), t.clone()))
            .collect();
        prop_assert_eq!(summarize(&base), summarize(&relabeled));
    }

    #[test]
    fn ci_brackets_the_point_estimate(counts in prop::collection::vec((0usize..30, 0usize..30), 1..4), seed in any::<u64>()) {
        prop_assume!(counts.iter().all(|&(p, f)| p + f > 0));
        let per_test = corpus(&counts, 1);
        let (_, overall) = summarize(&per_test);
        let (lo, hi) = bootstrap_ci(&per_test, 200, seed);
        prop_assert!(lo <= overall && overall <= hi);
        prop_assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
    }
}

#[test]
fn page_level_resampling_is_wider_for_clustered_pages() {
    // every page is all-pass or all-fail, so pages are the real unit
    let mut per_test = BTreeMap::new();
    for page in 0..40u32 {
        for k in 0..10 {
            per_test.insert(format!("t{page:03}-{k}"), outcome("s", page, page % 2 == 0));
        }
    }
    let test_units = resample_units(&per_test, ResampleLevel::Test);
    let page_units = resample_units(&per_test, ResampleLevel::Page);
    let (tl, th) = bootstrap_units(&test_units, 2000, 3);
    let (pl, ph) = bootstrap_units(&page_units, 2000, 3);
    assert!(ph - pl > 1.5 * (th - tl), "page {pl}..{ph} vs test {tl}..{th}");
}

#[test]
fn more_tests_give_narrower_intervals() {
    let width = |n: usize, seed: u64| {
        let (lo, hi) = bootstrap_ci(&corpus(&[(n * 3 / 5, n * 2 / 5), (n / 2, n / 2)], 1), 500, seed);
        hi - lo
    };
    let mean = |n: usize| (0..20).map(|s| width(n, s)).sum::<f64>() / 20.0;
    let (w50, w200, w800) = (mean(50), mean(200), mean(800));
    assert!(w50 > w200 && w200 > w800, "{w50} {w200} {w800}");
}

#[test]
fn empty_outputs_fail_everything() {
    use pagebench::model::{Corpus, TestCase, TestKind};
    use pagebench::render::NoRenderer;

    let mut corpus = Corpus::default();
    for s in ["a", "b"] {
        corpus.sources.insert(
            s.into(),
            (0..3)
                .map(|i| TestCase::new(format!("{s}{i}"), format!("{s}.pdf"), 1, TestKind::Present { text: "x".into() }))
                .collect(),
        );
    }
    let dir = tempfile::tempdir().unwrap();
    let r = run(&corpus, dir.path(), "tool", &NoRenderer, &RunOptions { iterations: 100, ..RunOptions::default() });
    assert_eq!(r.overall, 0.0);
    assert!(r.per_test.values().all(|t| t.explanation == "no output"));
    assert!(!r.warnings.is_empty());
}
