use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::catalog::{AttrValue, Catalog};
use crate::constraint::Constraint;
use crate::text::tokenize;

pub const RRF_K: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Enrichment {
    pub title: String,
    pub category_path: Vec<String>,
    pub price: f64,
    pub rating: f64,
    pub attributes: BTreeMap<String, AttrValue>,
    pub pros: Vec<String>,
    pub cons: Vec<String>,
}

impl Enrichment {
    /// Rebuilds the catalog item this snapshot was taken from.
    pub fn to_product(&self, id: &str) -> crate::catalog::Product {
        crate::catalog::Product {
            id: id.to_string(),
            title: self.title.clone(),
            category_path: self.category_path.clone(),
            attributes: self.attributes.clone(),
            price: self.price,
            rating: self.rating,
            review_ids: vec![],
        }
    }
}

/// Ranked candidates with their enrichment. `items` is score-descending.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub items: Vec<ScoredItem>,
    pub enriched: BTreeMap<String, Enrichment>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|i| i.id.as_str())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.items.iter().any(|i| i.id == id)
    }

    /// Keeps the items accepted by `keep`, preserving order, and drops the
    /// enrichment of removed items.
    pub fn retain(&mut self, mut keep: impl FnMut(&str) -> bool) {
        self.items.retain(|i| keep(&i.id));
        let ids: std::collections::BTreeSet<String> =
            self.items.iter().map(|i| i.id.clone()).collect();
        self.enriched.retain(|id, _| ids.contains(id));
    }
}

/// Reciprocal rank fusion: `Σ 1/(60 + rank)` with 1-based ranks. Output is
/// score-descending, ties by ascending id.
pub fn rrf_fuse(lists: &[&[String]]) -> Vec<(String, f64)> {
    let mut fused: HashMap<&str, f64> = HashMap::new();
    for list in lists {
        for (rank, id) in list.iter().enumerate() {
            *fused.entry(id.as_str()).or_default() += 1.0 / (RRF_K + (rank + 1) as f64);
        }
    }
    let mut out: Vec<(String, f64)> = fused
        .into_iter()
        .map(|(id, s)| (id.to_string(), s))
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnrichConfig {
    /// Sentences containing one of these words count as sentiment-bearing.
    pub lexicon: Vec<String>,
    pub max_phrases: usize,
}

impl Default for EnrichConfig {
    fn default() -> Self {
        let lexicon = [
            "amazing",
            "awful",
            "bad",
            "bright",
            "broken",
            "cheap",
            "clear",
            "comfortable",
            "crisp",
            "defective",
            "disappointing",
            "durable",
            "easy",
            "excellent",
            "fantastic",
            "fast",
            "flimsy",
            "good",
            "great",
            "hard",
            "heavy",
            "impressive",
            "light",
            "lightweight",
            "long",
            "loud",
            "noisy",
            "nice",
            "perfect",
            "poor",
            "quiet",
            "reliable",
            "short",
            "slow",
            "solid",
            "sturdy",
            "terrible",
            "uncomfortable",
            "useless",
            "weak",
            "worst",
            "best",
        ];
        Self {
            lexicon: lexicon.iter().map(|s| s.to_string()).collect(),
            max_phrases: 5,
        }
    }
}

/// Result of [`enrich_candidates`]; unknown ids land in `missing`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnrichOutput {
    pub enriched: BTreeMap<String, Enrichment>,
    pub missing: Vec<String>,
}

pub fn enrich_candidates(catalog: &Catalog, ids: &[String], config: &EnrichConfig) -> EnrichOutput {
    let mut out = EnrichOutput::default();
    for id in ids {
        let Some(p) = catalog.product(id) else {
            log::warn!("enrichment skipped unknown product {id}");
            out.missing.push(id.clone());
            continue;
        };
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for r in catalog.reviews_for(id) {
            if r.stars >= 4 {
                pos.push(r.text.as_str());
            } else if r.stars <= 2 {
                neg.push(r.text.as_str());
            }
        }
        out.enriched.insert(
            id.clone(),
            Enrichment {
                title: p.title.clone(),
                category_path: p.category_path.clone(),
                price: p.price,
                rating: p.rating,
                attributes: p.attributes.clone(),
                pros: top_phrases(&pos, config),
                cons: top_phrases(&neg, config),
            },
        );
    }
    out
}

fn top_phrases(texts: &[&str], config: &EnrichConfig) -> Vec<String> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for text in texts {
        for sentence in text.split(['.', '!', '?', ';', '\n']) {
            let tokens = tokenize(sentence);
            if tokens.iter().any(|t| config.lexicon.iter().any(|l| l == t)) {
                *counts.entry(tokens.join(" ")).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| {
        b.1.cmp(&a.1)
            .then_with(|| a.0.len().cmp(&b.0.len()))
            .then_with(|| a.0.cmp(&b.0))
    });
    ranked
        .into_iter()
        .take(config.max_phrases)
        .map(|(p, _)| p)
        .collect()
}

/// Hybrid retrieval: BM25 and vector search to depth `2k`, RRF fusion, hard
/// constraints applied as post-filters, then the top `k` enriched.
pub fn product_search(
    catalog: &Catalog,
    query: &str,
    constraints: &[Constraint],
    k: usize,
    enrich: &EnrichConfig,
) -> CandidateSet {
    let depth = 2 * k;
    let lexical: Vec<String> = catalog
        .bm25_search(query, depth)
        .into_iter()
        .map(|(id, _)| id)
        .collect();
    let vector: Vec<String> = catalog
        .vector_search(query, depth)
        .into_iter()
        .map(|(id, _)| id)
        .collect();
    let items: Vec<ScoredItem> = rrf_fuse(&[&lexical, &vector])
        .into_iter()
        .filter(|(id, _)| {
            catalog.product(id).is_some_and(|p| {
                constraints
                    .iter()
                    .filter(|c| c.is_hard())
                    .all(|c| c.satisfied_by(p))
            })
        })
        .take(k)
        .map(|(id, score)| ScoredItem { id, score })
        .collect();
    let ids: Vec<String> = items.iter().map(|i| i.id.clone()).collect();
    let enriched = enrich_candidates(catalog, &ids, enrich).enriched;
    CandidateSet { items, enriched }
}
