use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::facets::{BucketPredicate, Facet, UNKNOWN_BUCKET};
use super::GuiderConfig;
use crate::executor::{CandidateSet, EvidenceSet};
use crate::memory::SessionContext;
use crate::planner::RulePlanner;
use crate::text::{format_number, is_stopword, mentions_title, tokenize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuggestionKind {
    Convergent,
    Stimulative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySuggestion {
    pub text: String,
    pub kind: SuggestionKind,
    /// What produced it: `facet:<attr>=<label>`, `co_purchase:<category>`
    /// or `evidence:<doc id>`.
    pub provenance: String,
}

/// Renders a bucket as a query fragment the planner turns back into
/// constraints. `None` for the unknown bucket.
pub fn constraint_phrase(attribute: &str, predicate: &BucketPredicate) -> Option<String> {
    match predicate {
        BucketPredicate::Equals { value } => Some(format!("with {attribute} {value}")),
        BucketPredicate::Missing => None,
        BucketPredicate::Range { min, max, unit } => {
            let n = |v: &f64| format_number(*v);
            match unit {
                Some(u) => {
                    let head = attribute.split(['-', '_', ' ']).next().unwrap_or(attribute);
                    Some(match (min, max) {
                        (None, Some(hi)) => format!("under {}{u} {head}", n(hi)),
                        (Some(lo), Some(hi)) => format!("{}–{}{u} {head}", n(lo), n(hi)),
                        (Some(lo), None) => format!("≥{}{u} {head}", n(lo)),
                        (None, None) => return None,
                    })
                }
                None => Some(match (min, max) {
                    (None, Some(hi)) => format!("with {attribute} under {}", n(hi)),
                    (Some(lo), Some(hi)) => format!("with {attribute} {}–{}", n(lo), n(hi)),
                    (Some(lo), None) => format!("with {attribute} ≥{}", n(lo)),
                    (None, None) => return None,
                }),
            }
        }
    }
}

/// Up to `max_convergent` refinements built from the facets (each kept only
/// if it re-plans to a strict superset of the current constraints), then up
/// to `max_stimulative` adjacent needs from the co-purchase table and from
/// phrases that co-occur with candidate titles in evidence.
pub fn suggest_queries(
    ctx: &SessionContext,
    candidates: &CandidateSet,
    facets: &[Facet],
    evidence: &EvidenceSet,
    planner: &RulePlanner,
    config: &GuiderConfig,
) -> Vec<QuerySuggestion> {
    let mut seen: HashSet<String> = ctx
        .search_history
        .iter()
        .chain(std::iter::once(&ctx.query))
        .map(|q| q.trim().to_lowercase())
        .collect();
    let mut out = Vec::new();
    let mut push = |out: &mut Vec<QuerySuggestion>, text: String, kind, provenance: String| {
        if !text.trim().is_empty() && seen.insert(text.trim().to_lowercase()) {
            out.push(QuerySuggestion {
                text,
                kind,
                provenance,
            });
            true
        } else {
            false
        }
    };

    let base = planner.plan(ctx).map(|p| p.constraints).unwrap_or_default();
    let mut convergent = 0;
    for facet in facets {
        if convergent >= config.max_convergent {
            break;
        }
        let Some(bucket) = facet
            .buckets
            .iter()
            .filter(|b| b.label != UNKNOWN_BUCKET)
            .fold(None, |best: Option<&super::Bucket>, b| match best {
                Some(x) if x.count >= b.count => Some(x),
                _ => Some(b),
            })
        else {
            continue;
        };
        let Some(phrase) = constraint_phrase(&facet.attribute, &bucket.predicate) else {
            continue;
        };
        let text = format!("{} {phrase}", ctx.query.trim());
        let refined = SessionContext {
            query: text.clone(),
            ..ctx.clone()
        };
        let Ok(plan) = planner.plan(&refined) else {
            continue;
        };
        let superset = plan.constraints.len() > base.len()
            && base
                .iter()
                .all(|c| plan.constraints.iter().any(|n| n.same_predicate(c)));
        if !superset {
            log::debug!("dropping convergent suggestion '{text}': does not refine");
            continue;
        }
        let provenance = format!("facet:{}={}", facet.attribute, bucket.label);
        if push(&mut out, text, SuggestionKind::Convergent, provenance) {
            convergent += 1;
        }
    }

    let mut stimulative = 0;
    let leaves: Vec<String> = candidates
        .ids()
        .filter_map(|id| candidates.enriched.get(id))
        .filter_map(|e| e.category_path.last().cloned())
        .fold(Vec::new(), |mut acc, c| {
            if !acc.contains(&c) {
                acc.push(c);
            }
            acc
        });
    let table: BTreeMap<String, &Vec<String>> = config
        .co_purchase
        .iter()
        .map(|(k, v)| (k.to_lowercase(), v))
        .collect();
    'outer: for leaf in &leaves {
        for text in table
            .get(&leaf.to_lowercase())
            .into_iter()
            .flat_map(|v| v.iter())
        {
            if stimulative >= config.max_stimulative {
                break 'outer;
            }
            if push(
                &mut out,
                text.clone(),
                SuggestionKind::Stimulative,
                format!("co_purchase:{leaf}"),
            ) {
                stimulative += 1;
            }
        }
    }

    if stimulative < config.max_stimulative {
        for (phrase, doc) in evidence_phrases(ctx, candidates, evidence) {
            if stimulative >= config.max_stimulative {
                break;
            }
            if push(
                &mut out,
                phrase,
                SuggestionKind::Stimulative,
                format!("evidence:{doc}"),
            ) {
                stimulative += 1;
            }
        }
    }
    out
}

/// Content-word bigrams from evidence docs that mention a candidate, minus
/// words already in the query or the titles. Most widespread first.
fn evidence_phrases(
    ctx: &SessionContext,
    candidates: &CandidateSet,
    evidence: &EvidenceSet,
) -> Vec<(String, String)> {
    let titles: Vec<&str> = candidates
        .enriched
        .values()
        .map(|e| e.title.as_str())
        .collect();
    let mut known: BTreeSet<String> = tokenize(&ctx.query).into_iter().collect();
    for t in &titles {
        known.extend(tokenize(t));
    }
    let content = |t: &str| {
        t.len() >= 3 && t.chars().all(char::is_alphabetic) && !is_stopword(t) && !known.contains(t)
    };
    // phrase -> (doc count, first (doc index, position), first doc id)
    let mut stats: BTreeMap<String, (usize, (usize, usize), String)> = BTreeMap::new();
    for (i, doc) in evidence.docs.iter().enumerate() {
        let tokens = tokenize(&format!("{} {}", doc.title, doc.body));
        let set: HashSet<String> = tokens.iter().cloned().collect();
        if !titles.iter().any(|t| mentions_title(&set, t)) {
            continue;
        }
        let mut in_doc = BTreeSet::new();
        for (pos, w) in tokens.windows(2).enumerate() {
            if content(&w[0]) && content(&w[1]) && w[0] != w[1] {
                let p = format!("{} {}", w[0], w[1]);
                if in_doc.insert(p.clone()) {
                    stats
                        .entry(p)
                        .or_insert((0, (i, pos), doc.doc_id.clone()))
                        .0 += 1;
                }
            }
        }
    }
    let mut ranked: Vec<(String, (usize, (usize, usize), String))> = stats.into_iter().collect();
    ranked.sort_by(|a, b| {
        b.1 .0
            .cmp(&a.1 .0)
            .then_with(|| a.1 .1.cmp(&b.1 .1))
            .then_with(|| a.0.cmp(&b.0))
    });
    ranked.into_iter().map(|(p, (_, _, d))| (p, d)).collect()
}
