use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::metrics::{acc_at_k, mean};
use super::synth::{epoch, USES};
use crate::catalog::{Catalog, Product};
use crate::clock::{Clock, ManualClock};
use crate::engine::{Engine, EngineConfig, EventBody, TurnRequest};
use crate::memory::{MemoryStore, SessionContext};
use crate::text::format_number;

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("catalog is empty")]
    EmptyCatalog,
    #[error("line {line}: {reason}")]
    BadCase { line: usize, reason: String },
    #[error("case {index}: gold item '{item}' is not in the catalog")]
    UnknownGold { index: usize, item: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseCategory {
    Simple,
    Complex,
    Consultative,
}

impl CaseCategory {
    pub const ALL: [CaseCategory; 3] = [Self::Simple, Self::Complex, Self::Consultative];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundOp {
    Ge,
    Le,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureBound {
    pub attribute: String,
    pub op: BoundOp,
    pub value: f64,
    pub unit: String,
}

/// The predicate a complex case's gold set was computed from, kept so the
/// gold set can be re-derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseFilter {
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_price: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exclude_brand: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<MeasureBound>,
}

impl CaseFilter {
    pub fn matches(&self, p: &Product) -> bool {
        if p.leaf_category() != self.category {
            return false;
        }
        if self.max_price.is_some_and(|m| p.price > m) {
            return false;
        }
        if let Some(b) = &self.exclude_brand {
            if p.attributes
                .get("brand")
                .is_some_and(|v| v.display_text().eq_ignore_ascii_case(b))
            {
                return false;
            }
        }
        if let Some(m) = &self.measure {
            let Some(v) = p.attributes.get(&m.attribute) else {
                return false;
            };
            if v.unit() != Some(m.unit.as_str()) {
                return false;
            }
            let Some(x) = v.as_number() else {
                return false;
            };
            let ok = match m.op {
                BoundOp::Ge => x >= m.value,
                BoundOp::Le => x <= m.value,
            };
            if !ok {
                return false;
            }
        }
        true
    }

    /// Exhaustive scan of the catalog.
    pub fn apply(&self, catalog: &Catalog) -> BTreeSet<String> {
        catalog
            .products()
            .filter(|p| self.matches(p))
            .map(|p| p.id.clone())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkCase {
    pub query: String,
    pub category: CaseCategory,
    pub gold_items: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<SessionContext>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<CaseFilter>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseCounts {
    pub simple: usize,
    pub complex: usize,
    pub consultative: usize,
}

impl Default for CaseCounts {
    fn default() -> Self {
        Self {
            simple: 100,
            complex: 100,
            consultative: 100,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GeneratedBenchmark {
    pub cases: Vec<BenchmarkCase>,
    /// Categories that produced fewer cases than asked for, and why.
    pub shortfalls: Vec<String>,
}

fn brand(p: &Product) -> Option<String> {
    p.attributes.get("brand").map(|v| v.display_text())
}

/// The one numeric attribute with a unit, if the product has exactly one.
fn measure(p: &Product) -> Option<(&str, f64, &str)> {
    let mut it = p
        .attributes
        .iter()
        .filter_map(|(k, v)| Some((k.as_str(), v.as_number()?, v.unit()?)));
    let first = it.next()?;
    it.next().is_none().then_some(first)
}

/// Seeded benchmark over `catalog`. Simple cases are verbatim titles (every
/// fifth one a bare category name), complex cases add a price cap, a brand
/// negation and a measured bound, consultative cases ask for the best item
/// in a category for some use.
pub fn generate_benchmark(
    catalog: &Catalog,
    seed: u64,
    counts: CaseCounts,
) -> Result<GeneratedBenchmark, BenchError> {
    if catalog.product_count() == 0 {
        return Err(BenchError::EmptyCatalog);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GeneratedBenchmark::default();
    let products: Vec<&Product> = catalog.products().collect();
    let mut by_leaf: BTreeMap<&str, Vec<&Product>> = BTreeMap::new();
    for p in &products {
        by_leaf.entry(p.leaf_category()).or_default().push(p);
    }
    let leaves: Vec<&str> = by_leaf.keys().copied().collect();

    let mut picks = products.clone();
    picks.shuffle(&mut rng);
    for i in 0..counts.simple {
        if i % 5 == 4 {
            let leaf = leaves[rng.gen_range(0..leaves.len())];
            out.cases.push(BenchmarkCase {
                query: leaf.to_lowercase(),
                category: CaseCategory::Simple,
                gold_items: by_leaf[leaf].iter().map(|p| p.id.clone()).collect(),
                context: None,
                filter: None,
            });
        } else if let Some(p) = picks.pop() {
            out.cases.push(BenchmarkCase {
                query: p.title.clone(),
                category: CaseCategory::Simple,
                gold_items: BTreeSet::from([p.id.clone()]),
                context: None,
                filter: None,
            });
        } else {
            out.shortfalls
                .push(format!("simple: only {i} distinct titles"));
            break;
        }
    }

    // anchors are products that can satisfy a full complex query
    let all_brands: BTreeSet<String> = products.iter().filter_map(|p| brand(p)).collect();
    let mut anchors: Vec<&Product> = products
        .iter()
        .copied()
        .filter(|p| measure(p).is_some() && brand(p).is_some())
        .collect();
    anchors.shuffle(&mut rng);
    let mut made = 0;
    for p in anchors {
        if made == counts.complex {
            break;
        }
        let own = brand(p).expect("anchor has a brand");
        let others: Vec<&String> = all_brands.iter().filter(|b| **b != own).collect();
        let Some(excluded) = others.choose(&mut rng) else {
            continue;
        };
        let (attr, value, unit) = measure(p).expect("anchor has a measure");
        let cap = ((p.price / 50.0).floor() + 1.0) * 50.0;
        // lighter is better for weights; more is better otherwise
        let (op, bound, word) = if attr == "weight" {
            (BoundOp::Le, value.ceil(), "under")
        } else {
            (BoundOp::Ge, value.floor(), "at least")
        };
        let filter = CaseFilter {
            category: p.leaf_category().to_string(),
            max_price: Some(cap),
            exclude_brand: Some((*excluded).clone()),
            measure: Some(MeasureBound {
                attribute: attr.to_string(),
                op,
                value: bound,
                unit: unit.to_string(),
            }),
        };
        let head = if made % 2 == 0 {
            p.leaf_category().to_lowercase()
        } else {
            p.title.clone()
        };
        let query = format!(
            "{head} {word} {}{unit} under ${} without {excluded}",
            format_number(bound),
            format_number(cap)
        );
        let gold = filter.apply(catalog);
        debug_assert!(gold.contains(&p.id));
        out.cases.push(BenchmarkCase {
            query,
            category: CaseCategory::Complex,
            gold_items: gold,
            context: None,
            filter: Some(filter),
        });
        made += 1;
    }
    if made < counts.complex {
        out.shortfalls.push(format!(
            "complex: only {made} products carry a brand and a measured attribute"
        ));
    }

    let mut made = 0;
    for _ in 0..counts.consultative {
        let leaf = leaves[rng.gen_range(0..leaves.len())];
        let mut ranked = by_leaf[leaf].clone();
        if ranked.len() < DEFAULT_K {
            continue;
        }
        ranked.sort_by(|a, b| b.rating.total_cmp(&a.rating).then_with(|| a.id.cmp(&b.id)));
        let use_case = USES[rng.gen_range(0..USES.len())];
        out.cases.push(BenchmarkCase {
            query: format!("best {} for {use_case}", leaf.to_lowercase()),
            category: CaseCategory::Consultative,
            gold_items: ranked
                .iter()
                .take(DEFAULT_K)
                .map(|p| p.id.clone())
                .collect(),
            context: None,
            filter: None,
        });
        made += 1;
    }
    if made < counts.consultative {
        out.shortfalls.push(format!(
            "consultative: {} draws hit categories with fewer than {DEFAULT_K} items",
            counts.consultative - made
        ));
    }
    Ok(out)
}

pub fn write_cases(cases: &[BenchmarkCase], mut w: impl Write) -> std::io::Result<()> {
    for c in cases {
        serde_json::to_writer(&mut w, c)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Reads benchmark.jsonl. Blank lines are skipped; a malformed line or an
/// empty gold set is an error.
pub fn read_cases(r: impl BufRead) -> Result<Vec<BenchmarkCase>, BenchError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let case: BenchmarkCase = serde_json::from_str(&line).map_err(|e| BenchError::BadCase {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if case.gold_items.is_empty() {
            return Err(BenchError::BadCase {
                line: i + 1,
                reason: "empty gold set".into(),
            });
        }
        out.push(case);
    }
    Ok(out)
}

/// Checks that every gold id exists in the catalog.
pub fn check_cases(cases: &[BenchmarkCase], catalog: &Catalog) -> Result<(), BenchError> {
    for (index, c) in cases.iter().enumerate() {
        if let Some(item) = c.gold_items.iter().find(|g| catalog.product(g).is_none()) {
            return Err(BenchError::UnknownGold {
                index,
                item: item.clone(),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub engine: EngineConfig,
    pub k: usize,
    pub parallelism: usize,
    /// Recorded in the report; generation is seeded separately.
    pub seed: u64,
    /// Fixed "now" for every case, so freshness does not drift between runs.
    pub now: DateTime<Utc>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        let mut engine = EngineConfig::default();
        engine.executor.candidate_k = DEFAULT_K;
        Self {
            engine,
            k: DEFAULT_K,
            parallelism: std::thread::available_parallelism().map_or(4, |n| n.get()),
            seed: 0,
            now: epoch(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseTrace {
    pub index: usize,
    pub category: CaseCategory,
    pub query: String,
    pub hit: u8,
    pub top_k: Vec<String>,
    pub events: Vec<String>,
    /// Facet attributes offered; absent when the guider is ablated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub facets: Option<Vec<String>>,
    pub evidence_count: usize,
    pub evidence_empty: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub cases: usize,
    pub acc: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub seed: u64,
    pub config_hash: String,
    pub k: usize,
    pub categories: BTreeMap<CaseCategory, CategoryScore>,
    pub overall: f64,
    pub traces: Vec<CaseTrace>,
}

impl BenchReport {
    pub fn acc(&self, category: CaseCategory) -> Option<f64> {
        self.categories.get(&category).map(|c| c.acc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// sha256 of the engine config and k, hex encoded.
pub fn config_hash(options: &BenchOptions) -> String {
    let body = serde_json::to_vec(&(&options.engine, options.k)).expect("config serializes");
    Sha256::digest(&body)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn run_case(
    engine: &Engine,
    session: &str,
    index: usize,
    case: &BenchmarkCase,
    k: usize,
) -> CaseTrace {
    let mut trace = CaseTrace {
        index,
        category: case.category,
        query: case.query.clone(),
        hit: 0,
        top_k: Vec::new(),
        events: Vec::new(),
        facets: None,
        evidence_count: 0,
        evidence_empty: true,
        failure: None,
    };
    if let Some(ctx) = &case.context {
        if let Err(e) = engine.seed_context(session, ctx) {
            trace.failure = Some(e.to_string());
            return trace;
        }
    }
    let mut failure = None;
    let result = engine.run_turn(session, &TurnRequest::new(&case.query), &mut |ev| {
        trace.events.push(ev.body.type_name().to_string());
        if let EventBody::Error { code, message } = &ev.body {
            failure = Some(format!("{code:?}: {message}"));
        }
    });
    match result {
        Ok(Some(state)) => {
            trace.top_k = state.ranked_ids().into_iter().take(k).collect();
            if !engine.config().ablation.guider {
                trace.facets = Some(state.facets.iter().map(|f| f.attribute.clone()).collect());
            }
            trace.evidence_count = state.evidence.docs.len();
            trace.evidence_empty = state.evidence.docs.is_empty();
            trace.hit = acc_at_k(&trace.top_k, &case.gold_items, k).unwrap_or(0);
        }
        Ok(None) => {}
        Err(e) => failure = Some(e.to_string()),
    }
    if trace.hit == 0 && failure.is_none() && trace.top_k.is_empty() {
        failure = Some("no ranked items".into());
    }
    trace.failure = failure;
    trace
}

/// Runs every case in its own session of one shared engine. Results are in
/// case order whatever the parallelism, and the report has no timings, so
/// equal inputs give byte-identical reports.
pub fn run_benchmark(
    catalog: Arc<Catalog>,
    cases: &[BenchmarkCase],
    options: &BenchOptions,
) -> BenchReport {
    let clock: Arc<dyn Clock> = Arc::new(ManualClock::new(options.now));
    let memory = Arc::new(MemoryStore::new(clock.clone()));
    let engine = Engine::new(catalog, options.engine.clone(), clock, memory);
    let k = options.k.max(1);
    let sessions: Vec<String> = cases.iter().map(|_| engine.create_session()).collect();
    let slots: Mutex<Vec<Option<CaseTrace>>> = Mutex::new(vec![None; cases.len()]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..options.parallelism.clamp(1, cases.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= cases.len() {
                    break;
                }
                let trace = run_case(&engine, &sessions[i], i, &cases[i], k);
                slots.lock()[i] = Some(trace);
            });
        }
    });
    let traces: Vec<CaseTrace> = slots
        .into_inner()
        .into_iter()
        .map(|t| t.expect("every case ran"))
        .collect();

    let mut categories = BTreeMap::new();
    for cat in CaseCategory::ALL {
        let rows: Vec<&CaseTrace> = traces.iter().filter(|t| t.category == cat).collect();
        if rows.is_empty() {
            continue;
        }
        let hits: Vec<f64> = rows.iter().map(|t| f64::from(t.hit)).collect();
        categories.insert(
            cat,
            CategoryScore {
                cases: rows.len(),
                acc: mean(&hits),
                failures: rows.iter().filter(|t| t.failure.is_some()).count(),
            },
        );
    }
    let all: Vec<f64> = traces.iter().map(|t| f64::from(t.hit)).collect();
    BenchReport {
        seed: options.seed,
        config_hash: config_hash(options),
        k,
        categories,
        overall: mean(&all),
        traces,
    }
}
