use pagebench::elo::{compute_elo, latest_judgments, load_judgments, EloConfig, Outcome};
use pagebench::model::PageKey;
use pagebench::review::*;

const TOOLS: [&str; 3] = ["marker", "olmocr", "gotocr"];

fn pairs(n: usize) -> Vec<ReviewPair> {
    (0..n)
        .map(|i| {
            let a = TOOLS[i % 3];
            let b = TOOLS[(i + 1) % 3];
            ReviewPair {
                pair_id: format!("p{i:05}"),
                page_id: format!("doc{i}_pg1"),
                page_image_url: format!("/pages/doc{i}_pg1.png"),
                tool_a: a.into(),
                tool_b: b.into(),
                text_a: format!("output {i} of the first tool"),
                text_b: format!("output {i} of the second tool"),
            }
        })
        .collect()
}

#[test]
fn payloads_are_blind() {
    let q = ReviewQueue::in_memory(pairs(300), 11);
    while let NextItem::Item(item) = q.next_item("ann").unwrap() {
        let json = serde_json::to_string(&NextItem::Item(item)).unwrap();
        for tool in TOOLS {
            assert!(!json.contains(tool), "{json}");
        }
    }
}

#[test]
fn sides_are_balanced() {
    let q = ReviewQueue::in_memory(pairs(1000), 5);
    let mut a_left = 0;
    while let NextItem::Item(item) = q.next_item("ann").unwrap() {
        if item.left_text.ends_with("first tool") {
            a_left += 1;
        }
    }
    // 1,000 fair coin flips: 4 standard deviations is about 63
    assert!((437..=563).contains(&a_left), "tool_a shown left {a_left} times");
}

#[test]
fn judgments_feed_elo_directly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("judgments.jsonl");
    let q = ReviewQueue::open(pairs(30), 2, &path).unwrap();
    let mut submitted = 0;
    while let NextItem::Item(item) = q.next_item("ann").unwrap() {
        q.submit(&item.pair_id, SideChoice::Left, "ann").unwrap();
        submitted += 1;
    }
    let lines = std::fs::read_to_string(&path).unwrap().lines().count();
    assert_eq!(lines, submitted);

    let judgments = load_judgments(&path).unwrap();
    assert_eq!(judgments.len(), 30);
    assert!(judgments.iter().all(|j| j.outcome.is_decisive()));
    let result = compute_elo(&judgments, &EloConfig::default());
    assert_eq!(result.decisive, 30);
    let total: f64 = result.ratings.values().sum();
    assert!((total - 1500.0 * 3.0).abs() < 1e-6);
}

#[test]
fn resubmission_supersedes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("j.jsonl");
    let q = ReviewQueue::open(pairs(1), 0, &path).unwrap();
    let NextItem::Item(item) = q.next_item("ann").unwrap() else {
        panic!("queue empty")
    };
    q.submit(&item.pair_id, SideChoice::Left, "ann").unwrap();
    let ack = q.submit(&item.pair_id, SideChoice::Invalid, "ann").unwrap();
    assert!(ack.superseded);

    let all = load_judgments(&path).unwrap();
    assert_eq!(all.len(), 2);
    let latest = latest_judgments(all);
    assert_eq!(latest.len(), 1);
    assert_eq!(latest[0].outcome, Outcome::Invalid);
    assert_eq!(compute_elo(&latest, &EloConfig::default()).decisive, 0);
}

#[test]
fn reopening_skips_judged_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("j.jsonl");
    {
        let q = ReviewQueue::open(pairs(3), 0, &path).unwrap();
        let NextItem::Item(item) = q.next_item("ann").unwrap() else {
            panic!("queue empty")
        };
        q.submit(&item.pair_id, SideChoice::BothGood, "ann").unwrap();
    }
    let q = ReviewQueue::open(pairs(3), 0, &path).unwrap();
    let mut served = 0;
    while let NextItem::Item(_) = q.next_item("ann").unwrap() {
        served += 1;
    }
    assert_eq!(served, 2);
    assert!(matches!(q.next_item("fresh").unwrap(), NextItem::Item(_)));
}

#[test]
fn sampling_pairs_from_outputs() {
    let dir = tempfile::tempdir().unwrap();
    for tool in ["t1", "t2", "t3"] {
        std::fs::create_dir(dir.path().join(tool)).unwrap();
        std::fs::write(dir.path().join(tool).join("doc_pg1.md"), format!("{tool} says hi")).unwrap();
    }
    std::fs::write(dir.path().join("t1").join("other_pg2.md"), "lonely").unwrap();
    let tools: Vec<String> = ["t1", "t2", "t3"].map(String::from).to_vec();
    let pages = vec![PageKey::new("doc.pdf", 1), PageKey::new("other.pdf", 2)];
    let all = sample_pairs(dir.path(), &tools, &pages, 100, 0).unwrap();
    assert_eq!(all.len(), 3);
    assert!(all.iter().all(|p| p.tool_a != p.tool_b && p.page_id == "doc_pg1"));
    assert_eq!(sample_pairs(dir.path(), &tools, &pages, 2, 0).unwrap().len(), 2);
}
