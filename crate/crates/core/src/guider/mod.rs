//! Guidance for the next step: information-gain facets, a purchase strategy
//! and convergent/stimulative follow-up queries.

mod facets;
mod strategy;
mod suggest;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::CandidateSet;
use crate::memory::{Interaction, InteractionKind};

pub use facets::{
    apply_facet, facetable_attributes, generate_facets, info_gain, partition, Bucket,
    BucketPredicate, Bucketing, Facet, UNKNOWN_BUCKET,
};
pub use strategy::{generate_strategy, Kpi, PurchaseStrategy, Tradeoff};
pub use suggest::{constraint_phrase, suggest_queries, QuerySuggestion, SuggestionKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GuideError {
    #[error("no candidates to guide over")]
    EmptyCandidates,
    #[error("facet selection {attribute}={bucket} is stale; regenerate facets")]
    StaleSelection { attribute: String, bucket: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuiderConfig {
    pub buckets: usize,
    pub bucketing: Bucketing,
    pub max_facets: usize,
    pub max_convergent: usize,
    pub max_stimulative: usize,
    /// Minimum relative difference for a numeric trade-off.
    pub tradeoff_threshold: f64,
    /// Extra words counted as mentions of an attribute in evidence.
    pub kpi_synonyms: BTreeMap<String, Vec<String>>,
    /// Fixed "why it matters" text per attribute.
    pub kpi_notes: BTreeMap<String, String>,
    /// Leaf category (case-insensitive) to complementary queries.
    pub co_purchase: BTreeMap<String, Vec<String>>,
}

fn table(rows: &[(&str, &[&str])]) -> BTreeMap<String, Vec<String>> {
    rows.iter()
        .map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect()))
        .collect()
}

impl Default for GuiderConfig {
    fn default() -> Self {
        Self {
            buckets: 4,
            bucketing: Bucketing::EqualWidth,
            max_facets: 3,
            max_convergent: 3,
            max_stimulative: 2,
            tradeoff_threshold: 0.10,
            kpi_synonyms: table(&[
                ("battery-life", &["battery", "runtime"]),
                ("display-type", &["screen", "panel", "display"]),
                ("noise-cancelling", &["anc", "noise"]),
                ("weight", &["weighs", "heavy", "lightweight"]),
            ]),
            kpi_notes: BTreeMap::new(),
            co_purchase: table(&[
                (
                    "mirrorless camera",
                    &["camera stabilizer", "sd memory card"],
                ),
                (
                    "mirrorless cameras",
                    &["camera stabilizer", "sd memory card"],
                ),
                ("headphones", &["headphone case", "headphone stand"]),
                ("earbuds", &["ear tips", "charging case"]),
                ("laptops", &["laptop sleeve", "wireless mouse"]),
                ("laptop", &["laptop sleeve", "wireless mouse"]),
                ("tents", &["sleeping bag", "camping lantern"]),
                ("running shoes", &["running socks", "fitness tracker"]),
                ("strollers", &["car seat", "stroller organizer"]),
            ]),
        }
    }
}

/// The user's momentary preferences over the current candidates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UserState {
    pub preference_weights: BTreeMap<String, f64>,
    /// Facet selections active for the current query, as (attribute, label).
    pub active_facets: Vec<(String, String)>,
}

impl UserState {
    /// Each candidate starts at weight 1 and gains 1 per click, 3 per
    /// add-to-cart and 1 per facet click whose bucket it falls in.
    pub fn derive(
        history: &[Interaction],
        candidates: &CandidateSet,
        active_facets: Vec<(String, String)>,
        config: &GuiderConfig,
    ) -> Self {
        let mut weights: BTreeMap<String, f64> =
            candidates.ids().map(|id| (id.to_string(), 1.0)).collect();
        for i in history {
            match i.kind {
                InteractionKind::Click => bump(&mut weights, &i.item_id, 1.0),
                InteractionKind::AddToCart => bump(&mut weights, &i.item_id, 3.0),
                InteractionKind::FacetClick => {
                    let Some((attribute, label)) = i.facet_parts() else {
                        continue;
                    };
                    for b in partition(candidates, attribute, config) {
                        if b.label == label {
                            for id in &b.members {
                                bump(&mut weights, id, 1.0);
                            }
                        }
                    }
                }
                InteractionKind::SuggestionClick => {}
            }
        }
        Self {
            preference_weights: weights,
            active_facets,
        }
    }

    pub fn uniform(candidates: &CandidateSet) -> Self {
        Self::derive(&[], candidates, vec![], &GuiderConfig::default())
    }

    /// Weight of a candidate; unknown ids weigh 1.
    pub fn weight(&self, id: &str) -> f64 {
        self.preference_weights.get(id).copied().unwrap_or(1.0)
    }
}

fn bump(weights: &mut BTreeMap<String, f64>, id: &str, by: f64) {
    if let Some(w) = weights.get_mut(id) {
        *w += by;
    }
}

#[cfg(test)]
mod tests;
