use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{supporting_docs, DecisionContext, RankedItem};
use crate::planner::{BackendError, GenerativeBackend};
use crate::text::format_number;

pub const REWRITE_REQUEST_SCHEMA: &str = "cogsearch.rationale_rewrite.v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Functional,
    Economic,
    Reliability,
    Constraints,
    Tradeoff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Pro,
    Con,
}

/// A pointer into the decision context that a sentence relies on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Citation {
    ReviewPhrase {
        item_id: String,
        phrase: String,
        polarity: Polarity,
    },
    Document {
        doc_id: String,
    },
    /// Index into the context's constraints, with the claimed outcome for
    /// `item_id`.
    Constraint {
        index: usize,
        item_id: String,
        satisfied: bool,
    },
    Tradeoff {
        index: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationaleSentence {
    pub dimension: Dimension,
    pub text: String,
    pub citations: Vec<Citation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rationale {
    pub summary: String,
    pub sentences: Vec<RationaleSentence>,
    /// No candidate passed the hard constraints; the pick is the best
    /// pre-gate score and the summary lists the violations.
    pub all_gated: bool,
}

impl Rationale {
    pub fn citations(&self) -> impl Iterator<Item = &Citation> {
        self.sentences.iter().flat_map(|s| s.citations.iter())
    }
}

/// Restyles rationale text. Must keep sentences, dimensions and citations.
pub trait RationaleRewriter: Send + Sync {
    fn rewrite(&self, rationale: &Rationale) -> Result<Rationale, BackendError>;
}

pub struct GenerativeRewriter {
    backend: Arc<dyn GenerativeBackend>,
}

impl GenerativeRewriter {
    pub fn new(backend: Arc<dyn GenerativeBackend>) -> Self {
        Self { backend }
    }
}

impl RationaleRewriter for GenerativeRewriter {
    fn rewrite(&self, rationale: &Rationale) -> Result<Rationale, BackendError> {
        let prompt = json!({
            "schema": REWRITE_REQUEST_SCHEMA,
            "instructions": "Rewrite each sentence's text for fluency. Return the same JSON \
                document with identical dimensions, citations and all_gated; only `summary` \
                and sentence `text` may change.",
            "rationale": rationale,
        });
        let raw = self.backend.generate(&prompt.to_string())?;
        serde_json::from_str(&raw)
            .map_err(|e| BackendError::Failed(format!("unparseable rewrite: {e}")))
    }
}

fn money(v: f64) -> String {
    format!("${}", format_number(v))
}

fn title_of(dctx: &DecisionContext, id: &str) -> String {
    dctx.candidates
        .enriched
        .get(id)
        .map_or_else(|| id.to_string(), |e| e.title.clone())
}

/// Templated explanation of `ranked[0]`. Every sentence cites what it uses.
pub(super) fn build(dctx: &DecisionContext, ranked: &[RankedItem]) -> Rationale {
    let best = &ranked[0];
    let id = best.item_id.as_str();
    let title = title_of(dctx, id);
    let enrichment = dctx.candidates.enriched.get(id);
    let all_gated = ranked.iter().all(|r| r.utility.constraint_ok == 0);
    let product = enrichment.map(|e| e.to_product(id));
    let holds = |i: usize| {
        product
            .as_ref()
            .is_some_and(|p| dctx.constraints[i].satisfied_by(p))
    };
    let mut sentences = Vec::new();

    // functional
    let mut citations = Vec::new();
    let mut text = match enrichment.and_then(|e| e.pros.first()) {
        Some(pro) => {
            citations.push(Citation::ReviewPhrase {
                item_id: id.to_string(),
                phrase: pro.clone(),
                polarity: Polarity::Pro,
            });
            format!("Reviewers of {title} highlight \"{pro}\".")
        }
        None => format!("{title} has no positive review highlights yet."),
    };
    if let Some(con) = enrichment.and_then(|e| e.cons.first()) {
        citations.push(Citation::ReviewPhrase {
            item_id: id.to_string(),
            phrase: con.clone(),
            polarity: Polarity::Con,
        });
        text.push_str(&format!(" The most common complaint is \"{con}\"."));
    }
    let soft: Vec<usize> = (0..dctx.constraints.len())
        .filter(|&i| !dctx.constraints[i].is_hard())
        .collect();
    if !soft.is_empty() {
        let met = soft.iter().filter(|&&i| holds(i)).count();
        text.push_str(&format!(
            " It meets {met} of {} stated preferences.",
            soft.len()
        ));
        citations.extend(soft.iter().map(|&i| Citation::Constraint {
            index: i,
            item_id: id.to_string(),
            satisfied: holds(i),
        }));
    }
    sentences.push(RationaleSentence {
        dimension: Dimension::Functional,
        text,
        citations,
    });

    // economic
    let price = enrichment.map_or(0.0, |e| e.price);
    let (text, citations) = match dctx.budget() {
        Some((i, b)) => {
            let gap = (b - price).abs();
            let text = if price <= b {
                format!(
                    "At {} it is {} under the {} budget.",
                    money(price),
                    money(gap),
                    money(b)
                )
            } else {
                format!(
                    "At {} it is {} over the {} budget.",
                    money(price),
                    money(gap),
                    money(b)
                )
            };
            let cite = Citation::Constraint {
                index: i,
                item_id: id.to_string(),
                satisfied: holds(i),
            };
            (text, vec![cite])
        }
        None => (
            format!("It costs {}; no budget was given.", money(price)),
            vec![],
        ),
    };
    sentences.push(RationaleSentence {
        dimension: Dimension::Economic,
        text,
        citations,
    });

    // reliability
    let rating = enrichment.map_or(0.0, |e| e.rating);
    let (text, citations) = match supporting_docs(dctx, id).next() {
        Some(doc) => (
            format!(
                "It is rated {}/5 and covered by {} (\"{}\").",
                format_number(rating),
                doc.source,
                doc.title
            ),
            vec![Citation::Document {
                doc_id: doc.doc_id.clone(),
            }],
        ),
        None => (
            format!(
                "It is rated {}/5; no external coverage was found.",
                format_number(rating)
            ),
            vec![],
        ),
    };
    sentences.push(RationaleSentence {
        dimension: Dimension::Reliability,
        text,
        citations,
    });

    // hard constraint checklist
    let hard: Vec<usize> = (0..dctx.constraints.len())
        .filter(|&i| dctx.constraints[i].is_hard())
        .collect();
    let text = if hard.is_empty() {
        "No hard constraints applied.".to_string()
    } else {
        let items: Vec<String> = hard
            .iter()
            .map(|&i| {
                let c = &dctx.constraints[i];
                let mark = if holds(i) { "met" } else { "violated" };
                format!("{} {} {} {mark}", c.attribute, c.op.symbol(), c.value)
            })
            .collect();
        format!("Hard constraints: {}.", items.join(", "))
    };
    sentences.push(RationaleSentence {
        dimension: Dimension::Constraints,
        text,
        citations: hard
            .iter()
            .map(|&i| Citation::Constraint {
                index: i,
                item_id: id.to_string(),
                satisfied: holds(i),
            })
            .collect(),
    });

    if let Some((i, t)) = dctx
        .strategy
        .tradeoffs
        .iter()
        .enumerate()
        .find(|(_, t)| t.item_a == id || t.item_b == id)
    {
        sentences.push(RationaleSentence {
            dimension: Dimension::Tradeoff,
            text: t.statement.clone(),
            citations: vec![Citation::Tradeoff { index: i }],
        });
    }

    let summary = if all_gated {
        let violations: Vec<String> = ranked
            .iter()
            .map(|r| {
                let p = dctx
                    .candidates
                    .enriched
                    .get(&r.item_id)
                    .map(|e| e.to_product(&r.item_id));
                let failed: Vec<String> = dctx
                    .constraints
                    .iter()
                    .filter(|c| c.is_hard() && !p.as_ref().is_some_and(|p| c.satisfied_by(p)))
                    .map(|c| format!("{} {} {}", c.attribute, c.op.symbol(), c.value))
                    .collect();
                format!(
                    "{} fails {}",
                    title_of(dctx, &r.item_id),
                    failed.join(" and ")
                )
            })
            .collect();
        format!(
            "No candidate satisfies every hard constraint; {title} scores best before the \
             constraint check. {}.",
            violations.join("; ")
        )
    } else {
        format!("Recommended: {title} (utility {:.3}).", best.utility.total)
    };

    Rationale {
        summary,
        sentences,
        all_gated,
    }
}

/// Checks that every citation resolves against the context.
pub fn validate_citations(rationale: &Rationale, dctx: &DecisionContext) -> Result<(), String> {
    for c in rationale.citations() {
        match c {
            Citation::ReviewPhrase {
                item_id,
                phrase,
                polarity,
            } => {
                let e = dctx
                    .candidates
                    .enriched
                    .get(item_id)
                    .ok_or_else(|| format!("cited item {item_id} is not a candidate"))?;
                let pool = match polarity {
                    Polarity::Pro => &e.pros,
                    Polarity::Con => &e.cons,
                };
                if !pool.contains(phrase) {
                    return Err(format!(
                        "phrase \"{phrase}\" is not a review phrase of {item_id}"
                    ));
                }
            }
            Citation::Document { doc_id } => {
                if !dctx.evidence.docs.iter().any(|d| &d.doc_id == doc_id) {
                    return Err(format!("document {doc_id} is not in the evidence"));
                }
            }
            Citation::Constraint {
                index,
                item_id,
                satisfied,
            } => {
                let c = dctx
                    .constraints
                    .get(*index)
                    .ok_or_else(|| format!("constraint #{index} does not exist"))?;
                let p = dctx
                    .candidates
                    .enriched
                    .get(item_id)
                    .map(|e| e.to_product(item_id))
                    .ok_or_else(|| format!("cited item {item_id} is not a candidate"))?;
                if c.satisfied_by(&p) != *satisfied {
                    return Err(format!(
                        "constraint #{index} outcome for {item_id} is misstated"
                    ));
                }
            }
            Citation::Tradeoff { index } => {
                if *index >= dctx.strategy.tradeoffs.len() {
                    return Err(format!("trade-off #{index} does not exist"));
                }
            }
        }
    }
    Ok(())
}

/// A rewrite may only change wording.
pub(super) fn check_rewrite(
    template: &Rationale,
    rewritten: &Rationale,
    dctx: &DecisionContext,
) -> Result<(), String> {
    if rewritten.all_gated != template.all_gated {
        return Err("rewrite changed the gating outcome".into());
    }
    if rewritten.summary.trim().is_empty() {
        return Err("rewrite has an empty summary".into());
    }
    if rewritten.sentences.len() != template.sentences.len() {
        return Err("rewrite changed the number of sentences".into());
    }
    for (a, b) in template.sentences.iter().zip(&rewritten.sentences) {
        if a.dimension != b.dimension || a.citations != b.citations {
            return Err("rewrite changed a sentence's citations".into());
        }
        if b.text.trim().is_empty() {
            return Err("rewrite has an empty sentence".into());
        }
    }
    validate_citations(rewritten, dctx)
}
