//! Fuses the turn's signals into a decision context, scores candidates on a
//! gated multi-criteria utility and explains the pick with checkable
//! citations.

mod rationale;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraint::{Constraint, ConstraintOp, Hardness, PRICE};
use crate::executor::{CandidateSet, EvidenceDoc, EvidenceSet, TaskResult, TaskStatus};
use crate::guider::PurchaseStrategy;
use crate::memory::{Interaction, SessionContext};
use crate::planner::TaskKind;
use crate::text::{mentions_title, tokenize};

pub use rationale::{
    validate_citations, Citation, Dimension, GenerativeRewriter, Rationale, RationaleRewriter,
    RationaleSentence,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecideError {
    #[error("nothing to decide: no product search result")]
    NothingToDecide,
    #[error("no candidates to rank")]
    NoCandidates,
    #[error("invalid protocol weights: {0}")]
    InvalidWeights(String),
}

/// One step of the session so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TrajectoryEvent {
    Search { query: String },
    Interaction(Interaction),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecisionContext {
    pub candidates: CandidateSet,
    pub evidence: EvidenceSet,
    pub trajectory: Vec<TrajectoryEvent>,
    pub profile: BTreeMap<String, serde_json::Value>,
    pub constraints: Vec<Constraint>,
    pub strategy: PurchaseStrategy,
}

impl DecisionContext {
    /// Tightest price upper bound among the constraints, hard or soft.
    pub fn budget(&self) -> Option<(usize, f64)> {
        self.constraints
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.budget().map(|b| (i, b)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
    }
}

/// Merges all ok product-search and web-search results of a turn. Several
/// evidence sets are unioned by doc id keeping the higher score. A profile
/// budget becomes a soft price bound when no price bound is present.
pub fn fuse_context(
    results: &BTreeMap<String, TaskResult>,
    ctx: &SessionContext,
    constraints: &[Constraint],
    strategy: &PurchaseStrategy,
) -> Result<DecisionContext, DecideError> {
    let ok = |kind| {
        results
            .values()
            .filter(move |r: &&TaskResult| r.kind == kind && r.status == TaskStatus::Ok)
    };
    let mut product_sets = ok(TaskKind::ProductSearch)
        .filter_map(TaskResult::candidates)
        .peekable();
    if product_sets.peek().is_none() {
        return Err(DecideError::NothingToDecide);
    }
    let mut candidates = CandidateSet::default();
    for set in product_sets {
        for item in &set.items {
            match candidates.items.iter_mut().find(|i| i.id == item.id) {
                Some(existing) => existing.score = existing.score.max(item.score),
                None => candidates.items.push(item.clone()),
            }
        }
        for (id, e) in &set.enriched {
            candidates
                .enriched
                .entry(id.clone())
                .or_insert_with(|| e.clone());
        }
    }
    candidates
        .items
        .sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
    let resolvable: HashSet<String> = candidates.enriched.keys().cloned().collect();
    candidates.retain(|id| resolvable.contains(id));

    let evidence = union_evidence(ok(TaskKind::WebSearch).filter_map(TaskResult::evidence));

    let mut constraints = constraints.to_vec();
    if !constraints
        .iter()
        .any(|c| c.attribute == PRICE && c.op == ConstraintOp::Le)
    {
        if let Some(b) = ctx.profile_budget() {
            constraints
                .push(Constraint::price_at_most(b, Hardness::Soft).with_matched("profile budget"));
        }
    }
    let trajectory = trajectory(ctx);

    Ok(DecisionContext {
        candidates,
        evidence,
        trajectory,
        profile: ctx.user_profile.clone(),
        constraints,
        strategy: strategy.clone(),
    })
}

/// Prior searches followed by interactions, each oldest first.
pub fn trajectory(ctx: &SessionContext) -> Vec<TrajectoryEvent> {
    ctx.search_history
        .iter()
        .map(|q| TrajectoryEvent::Search { query: q.clone() })
        .chain(
            ctx.click_history
                .iter()
                .cloned()
                .map(TrajectoryEvent::Interaction),
        )
        .collect()
}

pub fn union_evidence<'a>(sets: impl IntoIterator<Item = &'a EvidenceSet>) -> EvidenceSet {
    let mut docs: BTreeMap<String, EvidenceDoc> = BTreeMap::new();
    let mut queries: Vec<String> = Vec::new();
    for set in sets {
        for q in &set.expansion_queries {
            if !queries.contains(q) {
                queries.push(q.clone());
            }
        }
        for d in &set.docs {
            match docs.get(&d.doc_id) {
                Some(prev) if prev.score >= d.score => {}
                _ => {
                    docs.insert(d.doc_id.clone(), d.clone());
                }
            }
        }
    }
    let mut docs: Vec<EvidenceDoc> = docs.into_values().collect();
    docs.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });
    EvidenceSet {
        docs,
        expansion_queries: queries,
    }
}

/// Dimension weights and scoring rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct EvalProtocol {
    functional: f64,
    economic: f64,
    reliability: f64,
}

impl EvalProtocol {
    pub fn new(functional: f64, economic: f64, reliability: f64) -> Result<Self, DecideError> {
        let w = [functional, economic, reliability];
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(DecideError::InvalidWeights(
                "weights must be non-negative".into(),
            ));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DecideError::InvalidWeights(format!(
                "weights sum to {sum}, not 1"
            )));
        }
        Ok(Self {
            functional,
            economic,
            reliability,
        })
    }

    /// Skips the sum-to-one check. Totals are then no longer in [0, 1];
    /// useful for checking that rankings only depend on weight ratios.
    pub fn unnormalized(functional: f64, economic: f64, reliability: f64) -> Self {
        Self {
            functional,
            economic,
            reliability,
        }
    }

    pub fn weights(&self) -> [f64; 3] {
        [self.functional, self.economic, self.reliability]
    }
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            functional: 0.5,
            economic: 0.3,
            reliability: 0.2,
        }
    }
}

impl TryFrom<[f64; 3]> for EvalProtocol {
    type Error = DecideError;

    fn try_from(w: [f64; 3]) -> Result<Self, Self::Error> {
        Self::new(w[0], w[1], w[2])
    }
}

impl From<EvalProtocol> for [f64; 3] {
    fn from(p: EvalProtocol) -> Self {
        p.weights()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityVector {
    pub functional: f64,
    pub economic: f64,
    pub reliability: f64,
    pub constraint_ok: u8,
    pub total: f64,
    /// Weighted sum before the constraint gate.
    pub weighted: f64,
}

/// Scores one candidate. Unknown ids score as an item with no data.
pub fn score_item(item_id: &str, dctx: &DecisionContext, protocol: &EvalProtocol) -> UtilityVector {
    let enrichment = dctx.candidates.enriched.get(item_id);
    let product = enrichment.map(|e| e.to_product(item_id));

    let soft: Vec<&Constraint> = dctx.constraints.iter().filter(|c| !c.is_hard()).collect();
    let soft_match = if soft.is_empty() {
        1.0
    } else {
        let met = soft
            .iter()
            .filter(|c| product.as_ref().is_some_and(|p| c.satisfied_by(p)))
            .count();
        met as f64 / soft.len() as f64
    };
    let (pros, cons) = enrichment.map_or((0, 0), |e| (e.pros.len(), e.cons.len()));
    let sentiment = if pros + cons == 0 {
        0.5
    } else {
        pros as f64 / (pros + cons) as f64
    };
    let functional = 0.5 * soft_match + 0.5 * sentiment;

    let price = enrichment.map_or(0.0, |e| e.price);
    let economic = match dctx.budget() {
        Some((_, b)) if b > 0.0 => (1.0 - (price - b).max(0.0) / b).clamp(0.0, 1.0),
        Some((_, _)) => {
            if price <= 0.0 {
                1.0
            } else {
                0.0
            }
        }
        None => 1.0,
    };

    let rating = enrichment.map_or(0.0, |e| e.rating).clamp(0.0, 5.0);
    let auths: Vec<f64> = supporting_docs(dctx, item_id)
        .map(|d| d.components.auth)
        .collect();
    let auth = if auths.is_empty() {
        0.5
    } else {
        auths.iter().sum::<f64>() / auths.len() as f64
    };
    let reliability = 0.5 * (rating / 5.0) + 0.5 * auth;

    let constraint_ok = u8::from(product.as_ref().is_some_and(|p| {
        dctx.constraints
            .iter()
            .filter(|c| c.is_hard())
            .all(|c| c.satisfied_by(p))
    }));
    let [wf, we, wr] = protocol.weights();
    let weighted = wf * functional + we * economic + wr * reliability;
    UtilityVector {
        functional,
        economic,
        reliability,
        constraint_ok,
        total: f64::from(constraint_ok) * weighted,
        weighted,
    }
}

/// Evidence documents whose text mentions the item's title.
pub fn supporting_docs<'a>(
    dctx: &'a DecisionContext,
    item_id: &str,
) -> impl Iterator<Item = &'a EvidenceDoc> + 'a {
    let title = dctx
        .candidates
        .enriched
        .get(item_id)
        .map(|e| e.title.clone())
        .unwrap_or_default();
    dctx.evidence.docs.iter().filter(move |d| {
        let tokens: HashSet<String> = tokenize(&format!("{} {}", d.title, d.body))
            .into_iter()
            .collect();
        mentions_title(&tokens, &title)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub item_id: String,
    pub utility: UtilityVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub best: String,
    pub ranked: Vec<RankedItem>,
    pub rationale: Rationale,
    /// Why a generative rewrite was discarded, if one was.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewrite_rejected: Option<String>,
}

/// Ordering key that is stable under positive rescaling of the weights:
/// totals are compared relative to the weight sum and rounded to 1e-12.
fn rank_key(v: f64, weight_sum: f64) -> i64 {
    if weight_sum > 0.0 {
        (v / weight_sum * 1e12).round() as i64
    } else {
        0
    }
}

/// Scores and ranks every candidate: total descending, then the pre-gate
/// score (which only separates gated items), then ascending id.
pub fn rank(dctx: &DecisionContext, protocol: &EvalProtocol) -> Vec<RankedItem> {
    let wsum: f64 = protocol.weights().iter().sum();
    let mut ranked: Vec<RankedItem> = dctx
        .candidates
        .ids()
        .map(|id| RankedItem {
            item_id: id.to_string(),
            utility: score_item(id, dctx, protocol),
        })
        .collect();
    ranked.sort_by(|a, b| {
        rank_key(b.utility.total, wsum)
            .cmp(&rank_key(a.utility.total, wsum))
            .then_with(|| {
                rank_key(b.utility.weighted, wsum).cmp(&rank_key(a.utility.weighted, wsum))
            })
            .then_with(|| a.item_id.cmp(&b.item_id))
    });
    ranked
}

/// Ranks the candidates and explains the top pick. A rewriter may restyle
/// the sentences; its output is kept only if every citation still resolves
/// and the citation structure is unchanged.
pub fn decide(
    dctx: &DecisionContext,
    protocol: &EvalProtocol,
    rewriter: Option<&dyn RationaleRewriter>,
) -> Result<Recommendation, DecideError> {
    if dctx.candidates.is_empty() {
        return Err(DecideError::NoCandidates);
    }
    let ranked = rank(dctx, protocol);
    let best = ranked[0].item_id.clone();
    let template = rationale::build(dctx, &ranked);
    debug_assert!(validate_citations(&template, dctx).is_ok());
    let mut rec = Recommendation {
        best,
        ranked,
        rationale: template,
        rewrite_rejected: None,
    };
    if let Some(rw) = rewriter {
        match rw.rewrite(&rec.rationale) {
            Ok(candidate) => match rationale::check_rewrite(&rec.rationale, &candidate, dctx) {
                Ok(()) => rec.rationale = candidate,
                Err(reason) => rec.rewrite_rejected = Some(reason),
            },
            Err(e) => rec.rewrite_rejected = Some(e.to_string()),
        }
    }
    Ok(rec)
}

#[cfg(test)]
mod tests;
