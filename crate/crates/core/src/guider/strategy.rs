use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::facets::{facetable_attributes, info_gain};
use super::{GuiderConfig, UserState};
use crate::catalog::AttrValue;
use crate::constraint::Constraint;
use crate::executor::{CandidateSet, EvidenceSet};
use crate::text::{format_number, tokenize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kpi {
    pub attribute: String,
    pub why: String,
    /// Evidence documents mentioning the attribute.
    pub mentions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tradeoff {
    pub item_a: String,
    pub item_b: String,
    pub dimension: String,
    pub statement: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PurchaseStrategy {
    pub category_kpis: Vec<Kpi>,
    pub tradeoffs: Vec<Tradeoff>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_note: Option<String>,
}

fn contains_phrase(tokens: &[String], phrase: &[String]) -> bool {
    !phrase.is_empty() && tokens.windows(phrase.len()).any(|w| w == phrase)
}

fn money(v: f64) -> String {
    format!("${}", format_number(v))
}

/// KPIs by evidence mentions then info gain; trade-offs between the two
/// best-fused candidates; a budget note when a price bound is present.
pub fn generate_strategy(
    candidates: &CandidateSet,
    evidence: &EvidenceSet,
    constraints: &[Constraint],
    state: &UserState,
    config: &GuiderConfig,
) -> PurchaseStrategy {
    if candidates.is_empty() {
        return PurchaseStrategy::default();
    }
    PurchaseStrategy {
        category_kpis: kpis(candidates, evidence, state, config),
        tradeoffs: tradeoffs(candidates, config.tradeoff_threshold),
        budget_note: budget_note(candidates, constraints),
    }
}

fn kpis(
    candidates: &CandidateSet,
    evidence: &EvidenceSet,
    state: &UserState,
    config: &GuiderConfig,
) -> Vec<Kpi> {
    let docs: Vec<Vec<String>> = evidence
        .docs
        .iter()
        .map(|d| tokenize(&format!("{} {}", d.title, d.body)))
        .collect();
    let mut names: Vec<String> = candidates
        .enriched
        .values()
        .flat_map(|e| e.attributes.keys().cloned())
        .collect();
    names.sort();
    names.dedup();
    let mut rows: Vec<(String, usize, f64)> = names
        .into_iter()
        .map(|a| {
            let mut phrases = vec![tokenize(&a)];
            for s in config.kpi_synonyms.get(&a).into_iter().flatten() {
                phrases.push(tokenize(s));
            }
            let mentions = docs
                .iter()
                .filter(|d| phrases.iter().any(|p| contains_phrase(d, p)))
                .count();
            let gain = info_gain(&a, candidates, state, config).unwrap_or(0.0);
            (a, mentions, gain)
        })
        .collect();
    rows.sort_by(|a, b| {
        b.1.cmp(&a.1)
            .then_with(|| b.2.total_cmp(&a.2))
            .then_with(|| a.0.cmp(&b.0))
    });
    let shared = facetable_attributes(candidates);
    rows.into_iter()
        .take(3)
        .map(|(attribute, mentions, gain)| {
            let why = config
                .kpi_notes
                .get(&attribute)
                .cloned()
                .unwrap_or_else(|| {
                    let spread = if gain > 0.0 {
                        format!("separates the shortlist ({gain:.2} bits)")
                    } else if shared.contains(&attribute) {
                        "is the same across the shortlist".to_string()
                    } else {
                        "is listed for only one candidate".to_string()
                    };
                    match mentions {
                        0 => format!("{attribute} {spread}."),
                        1 => format!("{attribute} comes up in 1 expert source and {spread}."),
                        n => format!("{attribute} comes up in {n} expert sources and {spread}."),
                    }
                });
            Kpi {
                attribute,
                why,
                mentions,
            }
        })
        .collect()
}

fn tradeoffs(candidates: &CandidateSet, threshold: f64) -> Vec<Tradeoff> {
    let (Some(a), Some(b)) = (candidates.items.first(), candidates.items.get(1)) else {
        return vec![];
    };
    let (Some(ea), Some(eb)) = (
        candidates.enriched.get(&a.id),
        candidates.enriched.get(&b.id),
    ) else {
        return vec![];
    };
    let differs = |x: f64, y: f64| {
        let scale = x.abs().max(y.abs());
        scale > 0.0 && (x - y).abs() / scale >= threshold
    };
    let mut out = Vec::new();
    let mut push = |dimension: &str, statement: String| {
        out.push(Tradeoff {
            item_a: a.id.clone(),
            item_b: b.id.clone(),
            dimension: dimension.to_string(),
            statement,
        })
    };
    if differs(ea.price, eb.price) {
        push(
            "price",
            format!(
                "{} costs {} versus {} for {}.",
                ea.title,
                money(ea.price),
                money(eb.price),
                eb.title
            ),
        );
    }
    if differs(ea.rating, eb.rating) {
        push(
            "rating",
            format!(
                "{} is rated {} versus {} for {}.",
                ea.title,
                format_number(ea.rating),
                format_number(eb.rating),
                eb.title
            ),
        );
    }
    let shared: BTreeMap<&String, (&AttrValue, &AttrValue)> = ea
        .attributes
        .iter()
        .filter_map(|(k, va)| eb.attributes.get(k).map(|vb| (k, (va, vb))))
        .collect();
    for (attr, (va, vb)) in shared {
        let material = match (va.as_number(), vb.as_number()) {
            (Some(x), Some(y)) => differs(x, y),
            _ => !va.display_text().eq_ignore_ascii_case(&vb.display_text()),
        };
        if material {
            push(
                attr,
                format!("{} has {attr} {va} while {} has {vb}.", ea.title, eb.title),
            );
        }
    }
    out
}

fn budget_note(candidates: &CandidateSet, constraints: &[Constraint]) -> Option<String> {
    let budget = constraints
        .iter()
        .filter_map(Constraint::budget)
        .min_by(f64::total_cmp)?;
    let priced: Vec<(&str, f64)> = candidates
        .ids()
        .filter_map(|id| {
            candidates
                .enriched
                .get(id)
                .map(|e| (e.title.as_str(), e.price))
        })
        .collect();
    let n = priced.len();
    let fit = priced.iter().filter(|(_, p)| *p <= budget).count();
    let b = money(budget);
    Some(if fit == n && n == 1 {
        format!("{} fits the {b} budget.", priced[0].0)
    } else if fit == n && n == 2 {
        format!("Both candidates fit the {b} budget.")
    } else if fit == n {
        format!("All {n} candidates fit the {b} budget.")
    } else if fit == 0 {
        let (title, price) = priced
            .iter()
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .copied()
            .unwrap_or(("", 0.0));
        format!(
            "No candidate fits the {b} budget; the cheapest is {title} at {}.",
            money(price)
        )
    } else {
        format!("{fit} of {n} candidates fit the {b} budget.")
    })
}
