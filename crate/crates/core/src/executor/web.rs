use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{cosine, Catalog, WebDocument};
use crate::planner::GenerativeBackend;
use crate::text::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum WeightsError {
    #[error("score weights must be non-negative and finite")]
    Negative,
    #[error("score weights must sum to 1, got {0}")]
    NotNormalized(f64),
}

/// Mixing weights for relevance, authority and freshness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct ScoreWeights {
    alpha: f64,
    beta: f64,
    gamma: f64,
}

impl ScoreWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self, WeightsError> {
        if [alpha, beta, gamma]
            .iter()
            .any(|w| !w.is_finite() || *w < 0.0)
        {
            return Err(WeightsError::Negative);
        }
        let sum = alpha + beta + gamma;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(WeightsError::NotNormalized(sum));
        }
        Ok(Self { alpha, beta, gamma })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn combine(&self, rel: f64, auth: f64, fresh: f64) -> f64 {
        self.alpha * rel + self.beta * auth + self.gamma * fresh
    }
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            beta: 0.25,
            gamma: 0.15,
        }
    }
}

impl TryFrom<[f64; 3]> for ScoreWeights {
    type Error = WeightsError;

    fn try_from(w: [f64; 3]) -> Result<Self, Self::Error> {
        Self::new(w[0], w[1], w[2])
    }
}

impl From<ScoreWeights> for [f64; 3] {
    fn from(w: ScoreWeights) -> Self {
        [w.alpha, w.beta, w.gamma]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Components {
    pub rel: f64,
    pub auth: f64,
    pub fresh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceDoc {
    pub doc_id: String,
    pub title: String,
    pub source: String,
    pub url: String,
    /// Kept so later stages can check which items a document mentions.
    pub body: String,
    pub score: f64,
    pub components: Components,
}

/// Filtered web evidence, score-descending.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvidenceSet {
    pub docs: Vec<EvidenceDoc>,
    pub expansion_queries: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WebRequest {
    pub query: String,
    pub max_results: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("web source unreachable: {0}")]
pub struct SourceError(pub String);

/// Where web documents come from. The local corpus is the default; a live
/// client implements the same request/response shape.
pub trait WebSource: Send + Sync {
    fn search(&self, request: &WebRequest) -> Result<Vec<WebDocument>, SourceError>;
}

/// BM25 over the ingested web corpus. Never fails.
pub struct LocalCorpusSource {
    catalog: Arc<Catalog>,
}

impl LocalCorpusSource {
    pub fn new(catalog: Arc<Catalog>) -> Self {
        Self { catalog }
    }
}

impl WebSource for LocalCorpusSource {
    fn search(&self, request: &WebRequest) -> Result<Vec<WebDocument>, SourceError> {
        Ok(self
            .catalog
            .web_lexical()
            .search(&request.query, request.max_results)
            .into_iter()
            .filter_map(|(id, _)| self.catalog.webdoc(&id).cloned())
            .collect())
    }
}

/// Produces query variants. Implementations return at most three queries
/// with the original first.
pub trait QueryExpander: Send + Sync {
    fn expand(&self, need: &str) -> Vec<String>;
}

pub const MAX_VARIANTS: usize = 3;

/// Word-for-word synonym substitution from a static table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynonymExpander {
    pub table: BTreeMap<String, Vec<String>>,
}

impl Default for SynonymExpander {
    fn default() -> Self {
        let table: &[(&str, &[&str])] = &[
            ("budget", &["affordable", "cheap"]),
            ("camera", &["camcorder"]),
            ("cheap", &["affordable", "budget"]),
            ("earbuds", &["earphones", "in-ear headphones"]),
            ("headphones", &["headset", "earphones"]),
            ("laptop", &["notebook"]),
            ("monitor", &["display", "screen"]),
            ("phone", &["smartphone"]),
            ("review", &["test"]),
            ("shoes", &["sneakers", "footwear"]),
            ("speaker", &["loudspeaker"]),
            ("tv", &["television"]),
        ];
        Self {
            table: table
                .iter()
                .map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect()))
                .collect(),
        }
    }
}

impl QueryExpander for SynonymExpander {
    fn expand(&self, need: &str) -> Vec<String> {
        let tokens = tokenize(need);
        let mut out = vec![need.to_string()];
        for (i, t) in tokens.iter().enumerate() {
            for syn in self.table.get(t).into_iter().flatten() {
                if out.len() >= MAX_VARIANTS {
                    return out;
                }
                let mut v = tokens.clone();
                v[i] = syn.clone();
                let variant = v.join(" ");
                if !out.contains(&variant) {
                    out.push(variant);
                }
            }
        }
        out
    }
}

/// Asks a generative backend for variants; any failure or malformed reply
/// falls back to the synonym table.
pub struct GenerativeExpander {
    backend: Arc<dyn GenerativeBackend>,
    fallback: SynonymExpander,
}

impl GenerativeExpander {
    pub fn new(backend: Arc<dyn GenerativeBackend>, fallback: SynonymExpander) -> Self {
        Self { backend, fallback }
    }
}

impl QueryExpander for GenerativeExpander {
    fn expand(&self, need: &str) -> Vec<String> {
        let prompt = serde_json::json!({
            "schema": "cogsearch.expand_request.v1",
            "need": need,
            "max_variants": MAX_VARIANTS - 1,
            "response": "JSON array of strings",
        })
        .to_string();
        let parsed = self
            .backend
            .generate(&prompt)
            .ok()
            .and_then(|s| serde_json::from_str::<Vec<String>>(&s).ok());
        let Some(variants) = parsed else {
            return self.fallback.expand(need);
        };
        let mut out = vec![need.to_string()];
        for v in variants {
            let v = v.trim().to_string();
            if out.len() < MAX_VARIANTS && !v.is_empty() && !out.contains(&v) {
                out.push(v);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WebConfig {
    pub weights: ScoreWeights,
    pub k: usize,
    pub threshold: f64,
    pub tau_days: f64,
    /// Documents fetched per query variant.
    pub retrieve_depth: usize,
    pub authority: BTreeMap<String, f64>,
    pub default_authority: f64,
}

impl Default for WebConfig {
    fn default() -> Self {
        Self {
            weights: ScoreWeights::default(),
            k: 5,
            threshold: 0.3,
            tau_days: 30.0,
            retrieve_depth: 20,
            authority: BTreeMap::new(),
            default_authority: 0.5,
        }
    }
}

impl WebConfig {
    pub fn authority_of(&self, source: &str) -> f64 {
        self.authority
            .get(source)
            .copied()
            .unwrap_or(self.default_authority)
    }
}

/// `exp(-age_days / tau)`; future timestamps count as age zero.
pub fn freshness(published: DateTime<Utc>, now: DateTime<Utc>, tau_days: f64) -> f64 {
    let age_days = ((now - published).num_milliseconds() as f64 / 86_400_000.0).max(0.0);
    (-age_days / tau_days).exp()
}

/// Expand, retrieve each variant, then score and filter the union.
pub fn web_search(
    need: &str,
    source: &dyn WebSource,
    expander: &dyn QueryExpander,
    catalog: &Catalog,
    config: &WebConfig,
    now: DateTime<Utc>,
) -> Result<EvidenceSet, SourceError> {
    let mut variants = expander.expand(need);
    variants.truncate(MAX_VARIANTS);
    let mut pool: BTreeMap<String, WebDocument> = BTreeMap::new();
    for q in &variants {
        let request = WebRequest {
            query: q.clone(),
            max_results: config.retrieve_depth,
        };
        for doc in source.search(&request)? {
            pool.entry(doc.id.clone()).or_insert(doc);
        }
    }

    let need_vec = catalog.embed(need);
    let mut docs: Vec<EvidenceDoc> = pool
        .into_values()
        .map(|d| {
            let rel = cosine(&catalog.embed(&d.full_text()), &need_vec).clamp(0.0, 1.0);
            let auth = config.authority_of(&d.source);
            let fresh = freshness(d.published_at, now, config.tau_days);
            EvidenceDoc {
                score: config.weights.combine(rel, auth, fresh),
                components: Components { rel, auth, fresh },
                doc_id: d.id,
                title: d.title,
                source: d.source,
                url: d.url,
                body: d.body,
            }
        })
        .filter(|d| d.score >= config.threshold)
        .collect();
    docs.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });
    docs.truncate(config.k);
    Ok(EvidenceSet {
        docs,
        expansion_queries: variants,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::CatalogBuilder;
    use chrono::TimeZone;

    fn now() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2025, 6, 1, 0, 0, 0).unwrap()
    }

    fn corpus() -> Arc<Catalog> {
        let mut b = CatalogBuilder::default();
        for (id, source, title, body, days) in [
            (
                "w1",
                "reviews.example",
                "Best headphones 2025",
                "Our favourite noise cancelling headphones.",
                0,
            ),
            (
                "w2",
                "blog.example",
                "Headset roundup",
                "Headset picks for calls.",
                60,
            ),
            ("w3", "news.example", "Tent guide", "Tents for camping.", 5),
        ] {
            b.add_webdoc(
                WebDocument {
                    id: id.into(),
                    url: format!("https://{source}/{id}"),
                    source: source.into(),
                    title: title.into(),
                    body: body.into(),
                    published_at: now() - chrono::Duration::days(days),
                },
                now(),
            )
            .unwrap();
        }
        Arc::new(b.build())
    }

    #[test]
    fn weights_validate() {
        assert!(ScoreWeights::new(0.5, 0.5, 0.0).is_ok());
        assert_eq!(
            ScoreWeights::new(0.5, 0.5, 0.5),
            Err(WeightsError::NotNormalized(1.5))
        );
        assert_eq!(
            ScoreWeights::new(1.2, -0.2, 0.0),
            Err(WeightsError::Negative)
        );
        assert!(serde_json::from_str::<ScoreWeights>("[0.2,0.2,0.2]").is_err());
    }

    #[test]
    fn weighted_score_example() {
        // 0.6*0.5 + 0.25*0.8 + 0.15*exp(-1)
        let w = ScoreWeights::default();
        let fresh = freshness(now() - chrono::Duration::days(30), now(), 30.0);
        assert!((w.combine(0.5, 0.8, fresh) - 0.555_181_916_175_716_3).abs() < 1e-12);
        assert_eq!(freshness(now(), now(), 30.0), 1.0);
    }

    #[test]
    fn synonym_expansion() {
        let e = SynonymExpander::default();
        assert_eq!(
            e.expand("noise cancelling headphones"),
            [
                "noise cancelling headphones",
                "noise cancelling headset",
                "noise cancelling earphones"
            ]
        );
        assert_eq!(e.expand("tent"), ["tent"]);
    }

    #[test]
    fn expand_retrieve_filter() {
        let cat = corpus();
        let source = LocalCorpusSource::new(cat.clone());
        let mut cfg = WebConfig {
            threshold: 0.0,
            ..WebConfig::default()
        };
        cfg.authority.insert("reviews.example".into(), 0.9);
        let ev = web_search(
            "headphones",
            &source,
            &SynonymExpander::default(),
            &cat,
            &cfg,
            now(),
        )
        .unwrap();
        let got: Vec<&str> = ev.docs.iter().map(|d| d.doc_id.as_str()).collect();
        // w2 only matches through the "headset" variant
        assert_eq!(got, ["w1", "w2"]);
        for d in &ev.docs {
            let c = &d.components;
            assert!((cfg.weights.combine(c.rel, c.auth, c.fresh) - d.score).abs() < 1e-9);
        }
        assert_eq!(ev.docs[0].components.auth, 0.9);
        assert_eq!(ev.docs[0].components.fresh, 1.0);

        let strict = WebConfig {
            threshold: 0.99,
            ..cfg
        };
        let ev = web_search(
            "headphones",
            &source,
            &SynonymExpander::default(),
            &cat,
            &strict,
            now(),
        )
        .unwrap();
        assert!(ev.docs.is_empty());
    }

    struct Canned(&'static str);

    impl GenerativeBackend for Canned {
        fn generate(&self, _: &str) -> Result<String, crate::planner::BackendError> {
            Ok(self.0.to_string())
        }
    }

    #[test]
    fn generative_expander_caps_and_falls_back() {
        let e = GenerativeExpander::new(
            Arc::new(Canned(r#"["a","b","c","d"]"#)),
            SynonymExpander::default(),
        );
        assert_eq!(e.expand("laptop"), ["laptop", "a", "b"]);
        let e = GenerativeExpander::new(Arc::new(Canned("nope")), SynonymExpander::default());
        assert_eq!(e.expand("laptop"), ["laptop", "notebook"]);
    }
}
