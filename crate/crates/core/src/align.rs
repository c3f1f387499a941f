//! Word-level document similarity.
//!
//! Documents are split on whitespace after normalization and aligned with
//! Hirschberg's divide-and-conquer LCS, scoring +1 per aligned equal word and
//! 0 for gaps and mismatches. Memory stays linear in the shorter document.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::normalize::NormalizedText;

pub const LOW_BELOW: f64 = 0.70;
pub const HIGH_ABOVE: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Low,
    Medium,
    High,
}

impl Bucket {
    /// low below 0.70, medium on [0.70, 0.95], high above 0.95
    pub fn of(score: f64) -> Bucket {
        if score < LOW_BELOW {
            Bucket::Low
        } else if score <= HIGH_ABOVE {
            Bucket::Medium
        } else {
            Bucket::High
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Bucket::Low => "low",
            Bucket::Medium => "medium",
            Bucket::High => "high",
        }
    }
}

/// What `matched` is divided by.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Denominator {
    #[default]
    Max,
    Min,
    Mean,
}

impl Denominator {
    fn of(self, a: usize, b: usize) -> f64 {
        match self {
            Denominator::Max => a.max(b) as f64,
            Denominator::Min => a.min(b) as f64,
            Denominator::Mean => (a + b) as f64 / 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentScore {
    pub matched: usize,
    pub len_a: usize,
    pub len_b: usize,
    pub score: f64,
    pub bucket: Bucket,
}

pub fn align_score(a: &NormalizedText, b: &NormalizedText) -> AlignmentScore {
    align_score_with(a.as_str(), b.as_str(), Denominator::Max)
}

pub fn align_score_with(a: &str, b: &str, denominator: Denominator) -> AlignmentScore {
    let (ia, ib) = intern_words(a, b);
    let matched = lcs_length(&ia, &ib);
    let score = if ia.is_empty() && ib.is_empty() {
        1.0
    } else {
        let d = denominator.of(ia.len(), ib.len());
        if d == 0.0 {
            0.0
        } else {
            (matched as f64 / d).min(1.0)
        }
    };
    AlignmentScore {
        matched,
        len_a: ia.len(),
        len_b: ib.len(),
        score,
        bucket: Bucket::of(score),
    }
}

/// Map whitespace-separated words of both texts to shared integer ids.
pub fn intern_words<'t>(a: &'t str, b: &'t str) -> (Vec<u32>, Vec<u32>) {
    let mut ids: HashMap<&'t str, u32> = HashMap::new();
    let mut intern = |text: &'t str| -> Vec<u32> {
        text.split_whitespace()
            .map(|w| {
                let next = ids.len() as u32;
                *ids.entry(w).or_insert(next)
            })
            .collect()
    };
    let ia = intern(a);
    let ib = intern(b);
    (ia, ib)
}

pub fn lcs_length(a: &[u32], b: &[u32]) -> usize {
    hirschberg(a, b).len()
}

/// Index pairs of one maximum alignment, in increasing order.
pub fn hirschberg(a: &[u32], b: &[u32]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    if a.len() < b.len() {
        let mut scratch = Scratch::new(a.len());
        recurse(b, a, 0, 0, &mut scratch, &mut out);
        for p in &mut out {
            *p = (p.1, p.0);
        }
    } else {
        let mut scratch = Scratch::new(b.len());
        recurse(a, b, 0, 0, &mut scratch, &mut out);
    }
    out
}

/// Row buffers sized to the shorter sequence, reused across the recursion.
struct Scratch {
    fwd: Vec<u32>,
    bwd: Vec<u32>,
    tmp: Vec<u32>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Scratch {
            fwd: vec![0; n + 1],
            bwd: vec![0; n + 1],
            tmp: vec![0; n + 1],
        }
    }
}

/// Last row of the LCS table of `a` against `b` (forward or reversed).
fn lcs_row(a: &[u32], b: &[u32], reverse: bool, row: &mut [u32], prev: &mut [u32]) {
    let n = b.len();
    row[..=n].fill(0);
    for i in 0..a.len() {
        prev[..=n].copy_from_slice(&row[..=n]);
        let x = if reverse { a[a.len() - 1 - i] } else { a[i] };
        for j in 1..=n {
            let y = if reverse { b[n - j] } else { b[j - 1] };
            row[j] = if x == y {
                prev[j - 1] + 1
            } else {
                row[j - 1].max(prev[j])
            };
        }
    }
}

fn recurse(
    a: &[u32],
    b: &[u32],
    off_a: usize,
    off_b: usize,
    s: &mut Scratch,
    out: &mut Vec<(usize, usize)>,
) {
    if a.is_empty() || b.is_empty() {
        return;
    }
    if a.len() == 1 {
        if let Some(j) = b.iter().position(|&y| y == a[0]) {
            out.push((off_a, off_b + j));
        }
        return;
    }
    let mid = a.len() / 2;
    let n = b.len();
    lcs_row(&a[..mid], b, false, &mut s.fwd, &mut s.tmp);
    lcs_row(&a[mid..], b, true, &mut s.bwd, &mut s.tmp);
    let mut split = 0;
    let mut best = 0;
    for k in 0..=n {
        let v = s.fwd[k] + s.bwd[n - k];
        if v > best {
            best = v;
            split = k;
        }
    }
    if best == 0 {
        return;
    }
    recurse(&a[..mid], &b[..split], off_a, off_b, s, out);
    recurse(&a[mid..], &b[split..], off_a + mid, off_b + split, s, out);
}

/// Per-bucket counts over many scores.
pub fn bucket_counts(scores: &[AlignmentScore]) -> [(Bucket, usize); 3] {
    let count = |b| scores.iter().filter(|s| s.bucket == b).count();
    [
        (Bucket::Low, count(Bucket::Low)),
        (Bucket::Medium, count(Bucket::Medium)),
        (Bucket::High, count(Bucket::High)),
    ]
}
