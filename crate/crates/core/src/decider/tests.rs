use std::collections::BTreeMap;

use super::*;
use crate::constraint::{ConstraintValue, Hardness};
use crate::executor::{Components, Enrichment, ScoredItem, TaskPayload};
use crate::guider::Tradeoff;
use crate::planner::BackendError;

fn enrichment(title: &str, price: f64, rating: f64, pros: &[&str], cons: &[&str]) -> Enrichment {
    Enrichment {
        title: title.into(),
        category_path: vec!["Audio".into(), "Headphones".into()],
        price,
        rating,
        attributes: BTreeMap::new(),
        pros: pros.iter().map(|s| s.to_string()).collect(),
        cons: cons.iter().map(|s| s.to_string()).collect(),
    }
}

fn candidates(items: Vec<(&str, Enrichment)>) -> CandidateSet {
    CandidateSet {
        items: items
            .iter()
            .enumerate()
            .map(|(i, (id, _))| ScoredItem {
                id: id.to_string(),
                score: 1.0 / (i + 1) as f64,
            })
            .collect(),
        enriched: items
            .into_iter()
            .map(|(id, e)| (id.to_string(), e))
            .collect(),
    }
}

fn doc(id: &str, body: &str, score: f64, auth: f64) -> EvidenceDoc {
    EvidenceDoc {
        doc_id: id.into(),
        title: format!("Review {id}"),
        source: "example.org".into(),
        url: format!("https://example.org/{id}"),
        body: body.into(),
        score,
        components: Components {
            rel: 0.5,
            auth,
            fresh: 1.0,
        },
    }
}

fn context() -> DecisionContext {
    DecisionContext {
        candidates: candidates(vec![
            (
                "a",
                enrichment(
                    "Aurora Studio Headphones",
                    150.0,
                    4.0,
                    &["great sound", "comfortable fit"],
                    &["weak bass"],
                ),
            ),
            (
                "b",
                enrichment("Boreal Max Headphones", 250.0, 5.0, &["excellent anc"], &[]),
            ),
        ]),
        evidence: EvidenceSet {
            docs: vec![doc(
                "d1",
                "We tested the Aurora Studio headphones for a month.",
                0.8,
                0.9,
            )],
            expansion_queries: vec![],
        },
        constraints: vec![Constraint::price_at_most(200.0, Hardness::Hard)],
        strategy: PurchaseStrategy {
            tradeoffs: vec![Tradeoff {
                item_a: "a".into(),
                item_b: "b".into(),
                dimension: "price".into(),
                statement:
                    "Aurora Studio Headphones costs $150 versus $250 for Boreal Max Headphones."
                        .into(),
            }],
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn utility_matches_hand_computation() {
    let dctx = context();
    let p = EvalProtocol::default();
    let a = score_item("a", &dctx, &p);
    let functional = 0.5 * 1.0 + 0.5 * (2.0 / 3.0);
    let reliability = 0.5 * (4.0 / 5.0) + 0.5 * 0.9;
    assert!((a.functional - functional).abs() < 1e-12);
    assert_eq!(a.economic, 1.0);
    assert!((a.reliability - reliability).abs() < 1e-12);
    assert_eq!(a.constraint_ok, 1);
    let total = 0.5 * functional + 0.3 * 1.0 + 0.2 * reliability;
    assert!((a.total - total).abs() < 1e-12);

    let b = score_item("b", &dctx, &p);
    assert_eq!(b.constraint_ok, 0);
    assert_eq!(b.total, 0.0);
    assert!((b.economic - 0.75).abs() < 1e-12);
    // no supporting doc: authority falls back to 0.5
    assert!((b.reliability - (0.5 + 0.25)).abs() < 1e-12);
}

#[test]
fn gated_item_ranks_below() {
    let rec = decide(&context(), &EvalProtocol::default(), None).unwrap();
    assert_eq!(rec.best, "a");
    assert_eq!(rec.ranked[1].item_id, "b");
    assert!(!rec.rationale.all_gated);
    validate_citations(&rec.rationale, &context()).unwrap();
}

#[test]
fn all_gated_picks_best_pre_gate() {
    let mut dctx = context();
    dctx.constraints = vec![Constraint::price_at_most(100.0, Hardness::Hard)];
    let rec = decide(&dctx, &EvalProtocol::default(), None).unwrap();
    assert!(rec.rationale.all_gated);
    assert!(rec.ranked.iter().all(|r| r.utility.total == 0.0));
    let best_pre = rec
        .ranked
        .iter()
        .max_by(|x, y| x.utility.weighted.total_cmp(&y.utility.weighted))
        .unwrap();
    assert_eq!(rec.best, best_pre.item_id);
    assert!(rec.rationale.summary.contains("fails price ≤ 100"));
    validate_citations(&rec.rationale, &dctx).unwrap();
}

#[test]
fn rationale_cites_context() {
    let dctx = context();
    let rec = decide(&dctx, &EvalProtocol::default(), None).unwrap();
    let cites: Vec<&Citation> = rec.rationale.citations().collect();
    assert!(cites.contains(&&Citation::Document {
        doc_id: "d1".into()
    }));
    assert!(cites.contains(&&Citation::Tradeoff { index: 0 }));
    assert!(cites
        .iter()
        .any(|c| matches!(c, Citation::ReviewPhrase { phrase, .. } if phrase == "great sound")));
    let econ = &rec.rationale.sentences[1];
    assert_eq!(econ.text, "At $150 it is $50 under the $200 budget.");
}

#[test]
fn invalid_citations_are_caught() {
    let dctx = context();
    let mut r = decide(&dctx, &EvalProtocol::default(), None)
        .unwrap()
        .rationale;
    r.sentences[0].citations.push(Citation::Document {
        doc_id: "ghost".into(),
    });
    assert!(validate_citations(&r, &dctx).is_err());
    let mut r2 = decide(&dctx, &EvalProtocol::default(), None)
        .unwrap()
        .rationale;
    r2.sentences[0].citations = vec![Citation::Constraint {
        index: 0,
        item_id: "b".into(),
        satisfied: true,
    }];
    assert!(validate_citations(&r2, &dctx).is_err());
}

struct Restyle;
impl RationaleRewriter for Restyle {
    fn rewrite(&self, r: &Rationale) -> Result<Rationale, BackendError> {
        let mut out = r.clone();
        for s in &mut out.sentences {
            s.text = s.text.to_uppercase();
        }
        Ok(out)
    }
}

struct DropCitations;
impl RationaleRewriter for DropCitations {
    fn rewrite(&self, r: &Rationale) -> Result<Rationale, BackendError> {
        let mut out = r.clone();
        out.sentences[0].citations.clear();
        Ok(out)
    }
}

#[test]
fn rewrites_keep_structure_or_are_dropped() {
    let dctx = context();
    let p = EvalProtocol::default();
    let plain = decide(&dctx, &p, None).unwrap();
    let styled = decide(&dctx, &p, Some(&Restyle)).unwrap();
    assert!(styled.rewrite_rejected.is_none());
    assert_eq!(styled.ranked, plain.ranked);
    assert_ne!(styled.rationale, plain.rationale);

    let dropped = decide(&dctx, &p, Some(&DropCitations)).unwrap();
    assert!(dropped.rewrite_rejected.is_some());
    assert_eq!(dropped.rationale, plain.rationale);
}

struct Backend(Result<String, BackendError>);
impl crate::planner::GenerativeBackend for Backend {
    fn generate(&self, _prompt: &str) -> Result<String, BackendError> {
        self.0.clone()
    }
}

#[test]
fn generative_rewriter_failures_fall_back() {
    let dctx = context();
    let p = EvalProtocol::default();
    let plain = decide(&dctx, &p, None).unwrap();
    for backend in [
        Backend(Ok("not json".into())),
        Backend(Err(BackendError::Timeout)),
    ] {
        let rw = GenerativeRewriter::new(std::sync::Arc::new(backend));
        let rec = decide(&dctx, &p, Some(&rw)).unwrap();
        assert_eq!(rec.rationale, plain.rationale);
        assert!(rec.rewrite_rejected.is_some());
    }
    let echo = serde_json::to_string(&plain.rationale).unwrap();
    let rw = GenerativeRewriter::new(std::sync::Arc::new(Backend(Ok(echo))));
    let rec = decide(&dctx, &p, Some(&rw)).unwrap();
    assert!(rec.rewrite_rejected.is_none());
}

#[test]
fn scaling_weights_keeps_order() {
    let mut dctx = context();
    dctx.constraints.clear();
    let base = rank(&dctx, &EvalProtocol::new(0.5, 0.3, 0.2).unwrap());
    let scaled = rank(&dctx, &EvalProtocol::unnormalized(5.0, 3.0, 2.0));
    let ids = |r: &[RankedItem]| r.iter().map(|i| i.item_id.clone()).collect::<Vec<_>>();
    assert_eq!(ids(&base), ids(&scaled));
}

#[test]
fn protocol_validation() {
    assert!(EvalProtocol::new(0.5, 0.5, 0.5).is_err());
    assert!(EvalProtocol::new(-0.1, 0.6, 0.5).is_err());
    let p: EvalProtocol = serde_json::from_str("[0.6, 0.2, 0.2]").unwrap();
    assert_eq!(p.weights(), [0.6, 0.2, 0.2]);
    assert!(serde_json::from_str::<EvalProtocol>("[1, 1, 1]").is_err());
}

fn result(id: &str, kind: TaskKind, payload: TaskPayload) -> (String, TaskResult) {
    (
        id.into(),
        TaskResult {
            node_id: id.into(),
            kind,
            status: TaskStatus::Ok,
            payload: Some(payload),
            duration_ms: 0,
            error: None,
        },
    )
}

#[test]
fn fusion_merges_and_defaults_budget() {
    let ctx = SessionContext::new("s", "headphones").with_profile("budget", serde_json::json!(180));
    let dctx0 = context();
    let mut e1 = EvidenceSet {
        docs: vec![doc("d1", "x", 0.4, 0.5), doc("d2", "y", 0.6, 0.5)],
        expansion_queries: vec!["headset".into()],
    };
    let e2 = EvidenceSet {
        docs: vec![doc("d1", "x", 0.9, 0.5)],
        expansion_queries: vec!["headset".into(), "earphones".into()],
    };
    e1.docs.sort_by(|a, b| b.score.total_cmp(&a.score));
    let results: BTreeMap<String, TaskResult> = [
        result(
            "product",
            TaskKind::ProductSearch,
            TaskPayload::Candidates(dctx0.candidates.clone()),
        ),
        result("web1", TaskKind::WebSearch, TaskPayload::Evidence(e1)),
        result("web2", TaskKind::WebSearch, TaskPayload::Evidence(e2)),
    ]
    .into_iter()
    .collect();
    let dctx = fuse_context(&results, &ctx, &[], &PurchaseStrategy::default()).unwrap();
    let ids: Vec<(&str, f64)> = dctx
        .evidence
        .docs
        .iter()
        .map(|d| (d.doc_id.as_str(), d.score))
        .collect();
    assert_eq!(ids, [("d1", 0.9), ("d2", 0.6)]);
    assert_eq!(dctx.evidence.expansion_queries, ["headset", "earphones"]);
    assert_eq!(dctx.constraints.len(), 1);
    assert_eq!(dctx.constraints[0].hardness, Hardness::Soft);
    assert_eq!(dctx.constraints[0].value, ConstraintValue::Number(180.0));
    assert_eq!(dctx.budget(), Some((0, 180.0)));

    let explicit = [Constraint::price_at_most(300.0, Hardness::Hard)];
    let dctx = fuse_context(&results, &ctx, &explicit, &PurchaseStrategy::default()).unwrap();
    assert_eq!(dctx.constraints, explicit);

    let only_web: BTreeMap<String, TaskResult> = results
        .into_iter()
        .filter(|(k, _)| k != "product")
        .collect();
    assert_eq!(
        fuse_context(&only_web, &ctx, &[], &PurchaseStrategy::default()),
        Err(DecideError::NothingToDecide)
    );
}

#[test]
fn empty_candidates_error() {
    let dctx = DecisionContext::default();
    assert_eq!(
        decide(&dctx, &EvalProtocol::default(), None),
        Err(DecideError::NoCandidates)
    );
}

#[test]
fn bare_item_scores_0_825() {
    let dctx = DecisionContext {
        candidates: candidates(vec![("x", enrichment("Plain Kettle", 30.0, 5.0, &[], &[]))]),
        ..Default::default()
    };
    let v = score_item("x", &dctx, &EvalProtocol::default());
    assert!((v.functional - 0.75).abs() < 1e-12);
    assert_eq!(v.economic, 1.0);
    assert!((v.reliability - 0.75).abs() < 1e-12);
    assert!((v.total - 0.825).abs() < 1e-12);
    assert_eq!(
        decide(&dctx, &EvalProtocol::default(), None).unwrap().best,
        "x"
    );
}

#[test]
fn over_budget_economic() {
    let dctx = DecisionContext {
        candidates: candidates(vec![(
            "x",
            enrichment("Plain Kettle", 120.0, 5.0, &[], &[]),
        )]),
        constraints: vec![Constraint::price_at_most(100.0, Hardness::Soft)],
        ..Default::default()
    };
    let v = score_item("x", &dctx, &EvalProtocol::default());
    assert!((v.economic - 0.8).abs() < 1e-12);
}

#[test]
fn identical_vectors_tie_on_id() {
    let dctx = DecisionContext {
        candidates: candidates(vec![
            ("b", enrichment("Same Kettle", 30.0, 4.0, &[], &[])),
            ("a", enrichment("Same Kettle", 30.0, 4.0, &[], &[])),
        ]),
        ..Default::default()
    };
    assert_eq!(
        decide(&dctx, &EvalProtocol::default(), None).unwrap().best,
        "a"
    );
}
