mod common;

use pagebench::check_math::{
    check_math, match_formula, relation_graph, MathOptions, Relation, SymbolLayout,
};
use pagebench::model::CandidateDocument;
use pagebench::render::{FixtureRenderer, RenderRequest, Renderer, SymbolBox};
use proptest::prelude::*;

fn fixtures() -> FixtureRenderer {
    FixtureRenderer::load(&common::fixture_path("katex_symbols.jsonl")).unwrap()
}

fn layout(r: &FixtureRenderer, latex: &str) -> SymbolLayout {
    let e = r.get(latex).unwrap_or_else(|| panic!("no fixture for {latex}"));
    SymbolLayout::new(latex, e.symbols.clone())
}

fn centers(l: &SymbolLayout) -> Vec<common::Sym> {
    l.symbols
        .iter()
        .map(|s| {
            let (x, y) = s.center();
            (s.glyph.clone(), x, y)
        })
        .collect()
}

#[test]
fn integral_bounds_and_order() {
    let r = fixtures();
    let l = layout(&r, "\\int_{-3}^{3} x^2 dx");
    let tau = l.default_tau();
    let g = relation_graph(&l, tau);
    let integral = l.symbols.iter().position(|s| s.glyph == "∫").unwrap();
    let x = l.symbols.iter().position(|s| s.glyph == "x").unwrap();
    assert!(g.edges.contains(&(integral, x, Relation::LeftOf)));
    // the upper limit 3 is the one rendered highest
    let threes: Vec<usize> = (0..l.len()).filter(|&i| l.symbols[i].glyph == "3").collect();
    let upper = *threes
        .iter()
        .min_by(|&&a, &&b| l.symbols[a].y0.total_cmp(&l.symbols[b].y0))
        .unwrap();
    let minus = l.symbols.iter().position(|s| s.glyph == "−").unwrap();
    assert!(g.edges.contains(&(upper, minus, Relation::Above)));
    for (i, j, rel) in &g.edges {
        assert!(!g.edges.contains(&(*j, *i, *rel)), "asymmetric");
    }
}

#[test]
fn reflexive_on_every_fixture() {
    let r = fixtures();
    for latex in ["x", "x^2", "x_i", "\\int_{-3}^{3} x^2 dx", "f(x)=\\int_{-3}^{3} x^2 dx"] {
        let l = layout(&r, latex);
        assert!(match_formula(&l, &l, l.default_tau()).matched, "{latex}");
    }
}

#[test]
fn super_and_subscripts_never_cross_match() {
    let r = fixtures();
    for b in ["x", "a", "e", "y"] {
        for s in ["i", "2", "n", "j"] {
            let up = layout(&r, &format!("{b}^{s}"));
            let down = layout(&r, &format!("{b}_{s}"));
            assert!(!match_formula(&up, &down, up.default_tau()).matched);
            assert!(!match_formula(&down, &up, down.default_tau()).matched);
        }
    }
    let x2 = layout(&r, "x^2");
    let two_x = layout(&r, "2^x");
    assert!(!match_formula(&x2, &two_x, x2.default_tau()).matched);
    assert!(!common::exhaustive_formula_match(&centers(&x2), &centers(&two_x), x2.default_tau()));
}

#[test]
fn formula_inside_longer_equation() {
    let r = fixtures();
    let doc = CandidateDocument::from_text(
        "The bound is $$g(t) + f(x)=\\int_{-3}^{3} x^2 dx + C$$ as claimed.",
    );
    let res = check_math("f(x)=\\int_{-3}^{3} x^2 dx", &doc, &r, MathOptions::default()).unwrap();
    assert!(res.passed, "{}", res.explanation);
}

#[test]
fn spacing_macros_do_not_matter() {
    let r = fixtures();
    let doc = CandidateDocument::from_text("\\[ f(x) = \\int_{-3}^{3} x^{2} \\, \\mathrm{d}x \\]");
    let res = check_math("f(x)=\\int_{-3}^{3} x^2 dx", &doc, &r, MathOptions::default()).unwrap();
    assert!(res.passed, "{}", res.explanation);
    let reference = layout(&r, "f(x)=\\int_{-3}^{3} x^2 dx");
    let spaced = layout(&r, "f(x) = \\int_{-3}^{3} x^{2} \\, \\mathrm{d}x");
    assert!(common::exhaustive_formula_match(
        &centers(&reference),
        &centers(&spaced),
        reference.default_tau()
    ) || reference.len() > 8);
}

#[test]
fn swapped_limits_fail() {
    let r = fixtures();
    let doc = CandidateDocument::from_text("$f(x)=\\int_{3}^{-3} x^2 dx$");
    let res = check_math("f(x)=\\int_{-3}^{3} x^2 dx", &doc, &r, MathOptions::default()).unwrap();
    assert!(!res.passed);
}

#[test]
fn unrenderable_candidates_are_skipped() {
    let r = fixtures();
    let doc = CandidateDocument::from_text("$\\frac{1}{$ then $x^2$");
    assert!(check_math("x^2", &doc, &r, MathOptions::default()).unwrap().passed);
    let out = r.render_batch(&[RenderRequest::new("e", "\\frac{1}{", true)]).unwrap();
    assert!(!out[0].ok && out[0].error.as_deref().unwrap().contains("ParseError"));
}

fn arb_layout(max: usize) -> impl Strategy<Value = Vec<SymbolBox>> {
    prop::collection::vec(
        (prop::sample::select(vec!["a", "b", "c"]), 0u8..12, 0u8..6),
        1..=max,
    )
    .prop_map(|v| {
        v.into_iter()
            .map(|(g, gx, gy)| {
                let (x, y) = (gx as f64 * 6.0, gy as f64 * 6.0);
                SymbolBox::new(g, x, y, x + 8.0, y + 10.0)
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn agrees_with_exhaustive_oracle(r in arb_layout(5), c in arb_layout(8)) {
        let reference = SymbolLayout::new("r", r);
        let candidate = SymbolLayout::new("c", c);
        let tau = reference.default_tau();
        prop_assert_eq!(
            match_formula(&reference, &candidate, tau).matched,
            common::exhaustive_formula_match(&centers(&reference), &centers(&candidate), tau)
        );
    }

    #[test]
    fn reflexive(l in arb_layout(8)) {
        let l = SymbolLayout::new("l", l);
        prop_assert!(match_formula(&l, &l, l.default_tau()).matched);
    }

    #[test]
    fn extra_symbols_keep_a_match(l in arb_layout(6), extra in arb_layout(4)) {
        let reference = SymbolLayout::new("r", l.clone());
        let mut bigger = l;
        bigger.extend(extra);
        let candidate = SymbolLayout::new("c", bigger);
        prop_assert!(match_formula(&reference, &candidate, reference.default_tau()).matched);
    }

    #[test]
    fn edges_are_antisymmetric(l in arb_layout(8), tau in 0.5f64..10.0) {
        let g = relation_graph(&SymbolLayout::new("l", l), tau);
        for (i, j, rel) in &g.edges {
            prop_assert!(!g.edges.contains(&(*j, *i, *rel)));
        }
    }
}
