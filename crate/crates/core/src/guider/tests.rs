use std::collections::{BTreeMap, BTreeSet};

use chrono::Utc;

use super::*;
use crate::catalog::AttrValue;
use crate::constraint::{Constraint, Hardness};
use crate::executor::{Components, Enrichment, EvidenceDoc, EvidenceSet, ScoredItem};
use crate::memory::SessionContext;
use crate::planner::{PlannerConfig, RulePlanner};

fn item(id: &str, attrs: &[(&str, AttrValue)]) -> (String, Enrichment) {
    (
        id.to_string(),
        Enrichment {
            title: format!("Item {id}"),
            category_path: vec!["Audio".into(), "Earbuds".into()],
            price: 100.0,
            rating: 4.0,
            attributes: attrs
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
            pros: vec![],
            cons: vec![],
        },
    )
}

fn set(items: Vec<(String, Enrichment)>) -> CandidateSet {
    let n = items.len();
    CandidateSet {
        items: items
            .iter()
            .enumerate()
            .map(|(i, (id, _))| ScoredItem {
                id: id.clone(),
                score: (n - i) as f64,
            })
            .collect(),
        enriched: items.into_iter().collect(),
    }
}

fn text(s: &str) -> AttrValue {
    AttrValue::Text(s.into())
}

fn hours(v: f64) -> AttrValue {
    AttrValue::Measure {
        value: v,
        unit: "h".into(),
    }
}

fn colors(values: &[&str]) -> CandidateSet {
    set(values
        .iter()
        .enumerate()
        .map(|(i, c)| item(&format!("i{i}"), &[("color", text(c))]))
        .collect())
}

fn gain(c: &CandidateSet, attr: &str, state: &UserState) -> f64 {
    info_gain(attr, c, state, &GuiderConfig::default()).unwrap()
}

#[test]
fn gain_examples() {
    let c = colors(&["red", "red", "red", "red"]);
    assert_eq!(gain(&c, "color", &UserState::uniform(&c)), 0.0);
    let c = colors(&["red", "red", "blue", "blue"]);
    assert!((gain(&c, "color", &UserState::uniform(&c)) - 1.0).abs() < 1e-12);
    let c = colors(&["a", "b", "c", "d"]);
    assert!((gain(&c, "color", &UserState::uniform(&c)) - 2.0).abs() < 1e-12);

    let c = colors(&["a", "b"]);
    let mut s = UserState::uniform(&c);
    s.preference_weights.insert("i0".into(), 3.0);
    let expected = -(0.75f64 * 0.75f64.log2()) - 0.25 * 0.25f64.log2();
    assert!((gain(&c, "color", &s) - expected).abs() < 1e-12);
    assert!((expected - 0.8113).abs() < 1e-4);
}

#[test]
fn empty_candidates_error() {
    let c = CandidateSet::default();
    assert_eq!(
        info_gain("color", &c, &UserState::default(), &GuiderConfig::default()),
        Err(GuideError::EmptyCandidates)
    );
}

#[test]
fn numeric_buckets_equal_width() {
    let c = set(vec![
        item("a", &[("battery-life", hours(4.0))]),
        item("b", &[("battery-life", hours(6.0))]),
        item("c", &[("battery-life", hours(8.0))]),
        item("d", &[("battery-life", hours(12.0))]),
        item("e", &[]),
    ]);
    let buckets = partition(&c, "battery-life", &GuiderConfig::default());
    let labels: Vec<&str> = buckets.iter().map(|b| b.label.as_str()).collect();
    assert_eq!(labels, ["<6h", "6–8h", "8–10h", "≥10h", "unknown"]);
    assert!(buckets.iter().all(|b| b.count == 1));
    assert_eq!(buckets[3].members, ["d"]);
}

#[test]
fn facet_ranking_and_exclusion() {
    let c = set(vec![
        item(
            "a",
            &[
                ("color", text("red")),
                ("brand", text("x")),
                ("size", text("m")),
            ],
        ),
        item(
            "b",
            &[
                ("color", text("blue")),
                ("brand", text("x")),
                ("size", text("m")),
            ],
        ),
        item(
            "c",
            &[
                ("color", text("green")),
                ("brand", text("y")),
                ("size", text("m")),
            ],
        ),
        item(
            "d",
            &[
                ("color", text("black")),
                ("brand", text("x")),
                ("size", text("m")),
            ],
        ),
    ]);
    let s = UserState::uniform(&c);
    let cfg = GuiderConfig::default();
    let f = generate_facets(&c, &s, &BTreeSet::new(), 1, &cfg);
    assert_eq!(f.len(), 1);
    assert_eq!(f[0].attribute, "color");
    let all = generate_facets(&c, &s, &BTreeSet::new(), 5, &cfg);
    // size is constant, so suppressed
    assert_eq!(
        all.iter().map(|f| f.attribute.as_str()).collect::<Vec<_>>(),
        ["color", "brand"]
    );

    let fixed: BTreeSet<String> = ["color".to_string()].into();
    let f = generate_facets(&c, &s, &fixed, 1, &cfg);
    assert_eq!(f[0].attribute, "brand");

    let mut active = s.clone();
    active.active_facets.push(("color".into(), "red".into()));
    let f = generate_facets(&c, &active, &BTreeSet::new(), 1, &cfg);
    assert_eq!(f[0].attribute, "brand");
}

#[test]
fn apply_facet_narrows_and_intersects() {
    let c = set(vec![
        item("a", &[("color", text("red")), ("brand", text("x"))]),
        item("b", &[("color", text("red")), ("brand", text("y"))]),
        item("c", &[("color", text("blue")), ("brand", text("x"))]),
        item("d", &[("color", text("red")), ("brand", text("x"))]),
    ]);
    let cfg = GuiderConfig::default();
    let s = UserState::uniform(&c);
    let facets = generate_facets(&c, &s, &BTreeSet::new(), 5, &cfg);
    let red = apply_facet(&c, &facets, "color", "red").unwrap();
    assert_eq!(red.ids().collect::<Vec<_>>(), ["a", "b", "d"]);
    assert_eq!(apply_facet(&red, &facets, "color", "red").unwrap(), red);

    let facets2 = generate_facets(&red, &UserState::uniform(&red), &BTreeSet::new(), 5, &cfg);
    let both = apply_facet(&red, &facets2, "brand", "x").unwrap();
    assert_eq!(both.ids().collect::<Vec<_>>(), ["a", "d"]);
    assert!(both.enriched.keys().all(|k| both.contains(k)));

    let err = apply_facet(&red, &facets2, "color", "red").unwrap_err();
    assert!(matches!(err, GuideError::StaleSelection { .. }));
}

#[test]
fn user_state_weights() {
    let c = colors(&["red", "red", "blue"]);
    let now = Utc::now();
    let hist = vec![
        Interaction {
            item_id: "i0".into(),
            kind: InteractionKind::Click,
            timestamp: now,
        },
        Interaction {
            item_id: "i2".into(),
            kind: InteractionKind::AddToCart,
            timestamp: now,
        },
        Interaction {
            item_id: Interaction::facet_key("color", "red"),
            kind: InteractionKind::FacetClick,
            timestamp: now,
        },
    ];
    let s = UserState::derive(&hist, &c, vec![], &GuiderConfig::default());
    assert_eq!(s.weight("i0"), 3.0);
    assert_eq!(s.weight("i1"), 2.0);
    assert_eq!(s.weight("i2"), 4.0);
}

fn doc(id: &str, body: &str) -> EvidenceDoc {
    EvidenceDoc {
        doc_id: id.into(),
        title: String::new(),
        source: "s".into(),
        url: String::new(),
        body: body.into(),
        score: 0.5,
        components: Components {
            rel: 0.5,
            auth: 0.5,
            fresh: 0.5,
        },
    }
}

#[test]
fn strategy_kpis_tradeoffs_budget() {
    let c = set(vec![
        item(
            "a",
            &[
                ("battery-life", hours(8.0)),
                ("color", text("red")),
                ("weight", AttrValue::Number(50.0)),
            ],
        ),
        item(
            "b",
            &[
                ("battery-life", hours(6.0)),
                ("color", text("red")),
                ("weight", AttrValue::Number(52.0)),
            ],
        ),
    ]);
    let s = UserState::uniform(&c);
    let cfg = GuiderConfig::default();
    let no_ev = generate_strategy(&c, &EvidenceSet::default(), &[], &s, &cfg);
    // by gain: battery-life and weight split the pair, color does not
    let names: Vec<&str> = no_ev
        .category_kpis
        .iter()
        .map(|k| k.attribute.as_str())
        .collect();
    assert_eq!(names, ["battery-life", "weight", "color"]);
    assert!(no_ev.budget_note.is_none());
    let dims: Vec<&str> = no_ev
        .tradeoffs
        .iter()
        .map(|t| t.dimension.as_str())
        .collect();
    assert_eq!(dims, ["battery-life"]);

    let ev = EvidenceSet {
        docs: vec![
            doc("w1", "The color matters most"),
            doc("w2", "Pick a color you like"),
        ],
        expansion_queries: vec![],
    };
    let budget = [Constraint::price_at_most(200.0, Hardness::Hard)];
    let st = generate_strategy(&c, &ev, &budget, &s, &cfg);
    assert_eq!(st.category_kpis[0].attribute, "color");
    assert_eq!(st.category_kpis[0].mentions, 2);
    assert_eq!(
        st.budget_note.as_deref(),
        Some("Both candidates fit the $200 budget.")
    );

    let same = set(vec![
        item("a", &[("color", text("red"))]),
        item("b", &[("color", text("red"))]),
    ]);
    assert!(generate_strategy(&same, &ev, &[], &s, &cfg)
        .tradeoffs
        .is_empty());
}

fn vocab_planner() -> RulePlanner {
    let mut cfg = PlannerConfig::default();
    cfg.unit_attributes
        .insert("h".into(), ["battery-life".to_string()].into());
    cfg.attributes
        .extend(["battery-life".to_string(), "color".to_string()]);
    RulePlanner::new(cfg)
}

#[test]
fn convergent_from_top_facet() {
    let c = set(vec![
        item("a", &[("battery-life", hours(2.0))]),
        item("b", &[("battery-life", hours(8.5))]),
        item("c", &[("battery-life", hours(9.0))]),
        item("d", &[("battery-life", hours(10.0))]),
    ]);
    let cfg = GuiderConfig::default();
    let facets = generate_facets(&c, &UserState::uniform(&c), &BTreeSet::new(), 3, &cfg);
    assert_eq!(facets[0].buckets.last().unwrap().label, "≥8h");
    let ctx = SessionContext::new("s", "wireless earbuds");
    let out = suggest_queries(
        &ctx,
        &c,
        &facets,
        &EvidenceSet::default(),
        &vocab_planner(),
        &cfg,
    );
    assert_eq!(out[0].text, "wireless earbuds ≥8h battery");
    assert_eq!(out[0].kind, SuggestionKind::Convergent);
    // Earbuds leaf hits the co-purchase table
    assert!(out
        .iter()
        .any(|s| s.text == "ear tips" && s.kind == SuggestionKind::Stimulative));
}

#[test]
fn suggestions_skip_history_and_empty_inputs() {
    let c = set(vec![item("a", &[])]);
    let mut cfg = GuiderConfig::default();
    cfg.co_purchase = BTreeMap::new();
    let ctx = SessionContext::new("s", "thing");
    assert!(suggest_queries(
        &ctx,
        &c,
        &[],
        &EvidenceSet::default(),
        &vocab_planner(),
        &cfg
    )
    .is_empty());

    cfg.co_purchase
        .insert("mirrorless camera".into(), vec!["camera stabilizer".into()]);
    let mut cam = item("a", &[]);
    cam.1.category_path = vec!["Photo".into(), "Mirrorless Camera".into()];
    let c = set(vec![cam]);
    let out = suggest_queries(
        &ctx,
        &c,
        &[],
        &EvidenceSet::default(),
        &vocab_planner(),
        &cfg,
    );
    assert_eq!(out.len(), 1);
    assert!(out[0].text.contains("camera stabilizer"));

    let mut ctx = ctx;
    ctx.search_history.push("Camera Stabilizer".into());
    assert!(suggest_queries(
        &ctx,
        &c,
        &[],
        &EvidenceSet::default(),
        &vocab_planner(),
        &cfg
    )
    .is_empty());
}

#[test]
fn evidence_phrases_become_stimulative() {
    let c = set(vec![item("a", &[])]);
    let mut cfg = GuiderConfig::default();
    cfg.co_purchase = BTreeMap::new();
    let ev = EvidenceSet {
        docs: vec![doc(
            "w1",
            "Item a pairs well with travel pillows on long flights",
        )],
        expansion_queries: vec![],
    };
    let ctx = SessionContext::new("s", "item");
    let out = suggest_queries(&ctx, &c, &[], &ev, &vocab_planner(), &cfg);
    assert_eq!(out[0].text, "travel pillows");
    assert_eq!(out[0].provenance, "evidence:w1");
}
