//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use std::path::PathBuf;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

/// Minimal edit distance between `needle` and any substring of `hay`. For
/// every start position, one full Levenshtein table of the needle against
/// the next 2·m haystack characters gives the distance to every substring
/// starting there (a longer substring costs more than deleting the needle).
pub fn brute_substring_distance(needle: &[char], hay: &[char]) -> usize {
    let m = needle.len();
    let mut best = m;
    for i in 0..=hay.len() {
        let window = &hay[i..hay.len().min(i + 2 * m)];
        let table = levenshtein_table(needle, window);
        best = best.min(*table[m].iter().min().unwrap());
    }
    best
}

pub fn levenshtein(a: &[char], b: &[char]) -> usize {
    levenshtein_table(a, b)[a.len()][b.len()]
}

fn levenshtein_table(a: &[char], b: &[char]) -> Vec<Vec<usize>> {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d
}

/// (glyph, center x, center y)
pub type Sym = (String, f64, f64);

/// Does any injective glyph-preserving map keep every left-of/above relation?
/// Enumerates every mapping, no pruning.
pub fn exhaustive_formula_match(reference: &[Sym], candidate: &[Sym], tau: f64) -> bool {
    fn rels(s: &[Sym], i: usize, j: usize, tau: f64) -> (bool, bool) {
        (s[i].1 + tau < s[j].1, s[i].2 + tau < s[j].2)
    }
    fn go(r: &[Sym], c: &[Sym], tau: f64, map: &mut Vec<usize>, used: &mut Vec<bool>) -> bool {
        if map.len() == r.len() {
            for i in 0..r.len() {
                for j in 0..r.len() {
                    if i == j {
                        continue;
                    }
                    let (rl, ra) = rels(r, i, j, tau);
                    let (cl, ca) = rels(c, map[i], map[j], tau);
                    if (rl && !cl) || (ra && !ca) {
                        return false;
                    }
                }
            }
            return true;
        }
        let k = map.len();
        for ci in 0..c.len() {
            if used[ci] || c[ci].0 != r[k].0 {
                continue;
            }
            used[ci] = true;
            map.push(ci);
            let ok = go(r, c, tau, map, used);
            map.pop();
            used[ci] = false;
            if ok {
                return true;
            }
        }
        false
    }
    go(reference, candidate, tau, &mut Vec::new(), &mut vec![false; candidate.len()])
}

/// Word-level LCS by the full quadratic table.
pub fn lcs_quadratic(a: &[u32], b: &[u32]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] {
                t[i - 1][j - 1] + 1
            } else {
                t[i - 1][j].max(t[i][j - 1])
            };
        }
    }
    t[a.len()][b.len()]
}

/// Plain sequential Elo over (winner, loser) pairs, no quantization.
pub fn sequential_elo(games: &[(String, String)], base: f64, k: f64) -> std::collections::BTreeMap<String, f64> {
    let mut r = std::collections::BTreeMap::new();
    for (w, l) in games {
        let rw = *r.entry(w.clone()).or_insert(base);
        let rl = *r.entry(l.clone()).or_insert(base);
        let expected_w = 1.0 / (1.0 + 10f64.powf((rl - rw) / 400.0));
        let d = k * (1.0 - expected_w);
        *r.get_mut(w).unwrap() += d;
        *r.get_mut(l).unwrap() -= d;
    }
    r
}

pub mod scripted {
    use pagebench::anchor::{Converter, ConverterError, ConverterRequest, PageResponse};
    use std::sync::Mutex;

    #[derive(Debug, Clone, PartialEq)]
    pub struct Call {
        pub temperature: f64,
        pub prompt: String,
        pub image_dims: Option<(u32, u32)>,
    }

    /// Replays a fixed list of replies and records every request.
    pub struct ScriptedConverter {
        replies: Mutex<Vec<Result<String, ConverterError>>>,
        pub calls: Mutex<Vec<Call>>,
        repeat_last: bool,
    }

    impl ScriptedConverter {
        pub fn new(replies: Vec<Result<String, ConverterError>>) -> Self {
            let mut replies = replies;
            replies.reverse();
            ScriptedConverter {
                replies: Mutex::new(replies),
                calls: Mutex::new(Vec::new()),
                repeat_last: false,
            }
        }

        pub fn forever(reply: Result<String, ConverterError>) -> Self {
            let mut s = Self::new(vec![reply]);
            s.repeat_last = true;
            s
        }

        pub fn calls(&self) -> Vec<Call> {
            self.calls.lock().unwrap().clone()
        }
    }

    impl Converter for ScriptedConverter {
        fn convert(&self, r: &ConverterRequest<'_>) -> Result<String, ConverterError> {
            let image_dims = r.image_png.map(|png| {
                let img = image::load_from_memory(png).expect("request image is a PNG");
                (img.width(), img.height())
            });
            self.calls.lock().unwrap().push(Call {
                temperature: r.temperature,
                prompt: r.prompt.to_string(),
                image_dims,
            });
            let mut replies = self.replies.lock().unwrap();
            match (replies.len(), self.repeat_last) {
                (0, _) => panic!("converter called more times than scripted"),
                (1, true) => replies[0].clone(),
                _ => replies.pop().unwrap(),
            }
        }
    }

    pub fn page(text: &str, rotation_valid: bool, correction: u32) -> Result<String, ConverterError> {
        Ok(PageResponse {
            primary_language: Some("en".into()),
            is_rotation_valid: rotation_valid,
            rotation_correction: correction,
            is_table: false,
            is_diagram: false,
            natural_text: Some(text.into()),
        }
        .to_json())
    }

    pub fn png(width: u32, height: u32) -> Vec<u8> {
        let img = image::RgbImage::from_pixel(width, height, image::Rgb([255, 255, 255]));
        let mut out = std::io::Cursor::new(Vec::new());
        image::DynamicImage::ImageRgb8(img)
            .write_to(&mut out, image::ImageFormat::Png)
            .unwrap();
        out.into_inner()
    }
}
