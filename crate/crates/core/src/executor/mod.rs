//! Runs a task graph: catalog retrieval, web evidence and tool calls, with
//! dependency-ordered scheduling and per-node failure isolation.

mod product;
mod scheduler;
mod tools;
mod web;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::catalog::Catalog;
use crate::clock::Clock;
use crate::memory::{MemoryStore, RecordKind, SessionContext};
use crate::planner::{TaskGraph, TaskKind, TaskNode, TaskSpec, CANDIDATES_SLOT};

pub use product::{
    enrich_candidates, product_search, rrf_fuse, CandidateSet, EnrichConfig, EnrichOutput,
    Enrichment, ScoredItem, RRF_K,
};
pub use scheduler::{schedule, NodeOutcome, ScheduleEvent};
pub use tools::{
    builtin_specs, stub_bindings, Args, FieldSpec, FieldType, PriceHistoryTable, Schema,
    StubTables, ToolError, ToolHandler, ToolRegistry, ToolSpec, DEFAULT_TIMEOUT_MS,
};
pub use web::{
    freshness, web_search, Components, EvidenceDoc, EvidenceSet, GenerativeExpander,
    LocalCorpusSource, QueryExpander, ScoreWeights, SourceError, SynonymExpander, WebConfig,
    WebRequest, WebSource, WeightsError, MAX_VARIANTS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Ok,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "data", rename_all = "snake_case")]
pub enum TaskPayload {
    Candidates(CandidateSet),
    Evidence(EvidenceSet),
    Tool(Args),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskErrorKind {
    UnknownTool,
    InvalidArguments,
    Timeout,
    InvalidOutput,
    HandlerFailed,
    SourceUnreachable,
    AncestorFailed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskError {
    pub kind: TaskErrorKind,
    pub message: String,
}

impl From<ToolError> for TaskError {
    fn from(e: ToolError) -> Self {
        let kind = match &e {
            ToolError::UnknownTool(_) => TaskErrorKind::UnknownTool,
            ToolError::InvalidArguments(_) => TaskErrorKind::InvalidArguments,
            ToolError::Timeout(_) => TaskErrorKind::Timeout,
            ToolError::InvalidOutput(_) => TaskErrorKind::InvalidOutput,
            ToolError::Handler(_) | ToolError::Config(_) => TaskErrorKind::HandlerFailed,
        };
        TaskError {
            kind,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub node_id: String,
    pub kind: TaskKind,
    pub status: TaskStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<TaskPayload>,
    pub duration_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<TaskError>,
}

impl TaskResult {
    pub fn candidates(&self) -> Option<&CandidateSet> {
        match &self.payload {
            Some(TaskPayload::Candidates(c)) => Some(c),
            _ => None,
        }
    }

    pub fn evidence(&self) -> Option<&EvidenceSet> {
        match &self.payload {
            Some(TaskPayload::Evidence(e)) => Some(e),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecutorConfig {
    pub candidate_k: usize,
    pub parallelism: usize,
    pub web: WebConfig,
    pub enrich: EnrichConfig,
    /// Candidates forwarded to tools that take a `products` argument.
    pub tool_products: usize,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        Self {
            candidate_k: 10,
            parallelism: 4,
            web: WebConfig::default(),
            enrich: EnrichConfig::default(),
            tool_products: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExecEvent<'a> {
    Started { node: &'a TaskNode },
    Finished { result: &'a TaskResult },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub results: BTreeMap<String, TaskResult>,
    /// Node ids in the order they finished; skipped nodes are absent.
    pub completion_order: Vec<String>,
}

impl ExecutionReport {
    pub fn ok_results(&self, kind: TaskKind) -> impl Iterator<Item = &TaskResult> {
        self.results
            .values()
            .filter(move |r| r.kind == kind && r.status == TaskStatus::Ok)
    }
}

pub struct Executor {
    catalog: Arc<Catalog>,
    tools: Arc<ToolRegistry>,
    source: Arc<dyn WebSource>,
    expander: Arc<dyn QueryExpander>,
    clock: Arc<dyn Clock>,
    config: ExecutorConfig,
}

impl Executor {
    /// Local web corpus, synonym expansion and the builtin stub tools.
    pub fn new(catalog: Arc<Catalog>, clock: Arc<dyn Clock>) -> Self {
        Self {
            source: Arc::new(LocalCorpusSource::new(catalog.clone())),
            catalog,
            tools: Arc::new(ToolRegistry::builtin()),
            expander: Arc::new(SynonymExpander::default()),
            clock,
            config: ExecutorConfig::default(),
        }
    }

    pub fn with_config(mut self, config: ExecutorConfig) -> Self {
        self.config = config;
        self
    }

    pub fn with_tools(mut self, tools: Arc<ToolRegistry>) -> Self {
        self.tools = tools;
        self
    }

    pub fn with_web_source(mut self, source: Arc<dyn WebSource>) -> Self {
        self.source = source;
        self
    }

    pub fn with_expander(mut self, expander: Arc<dyn QueryExpander>) -> Self {
        self.expander = expander;
        self
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    pub fn config(&self) -> &ExecutorConfig {
        &self.config
    }

    pub fn tools(&self) -> &ToolRegistry {
        &self.tools
    }

    pub fn invoke_tool(&self, name: &str, args: &Args) -> Result<Args, ToolError> {
        self.tools.invoke(name, args)
    }

    pub fn execute(&self, graph: &TaskGraph, ctx: &SessionContext) -> ExecutionReport {
        self.execute_with(graph, ctx, None, &mut |_| {})
    }

    /// Runs `graph` (which must already be valid). Every result is appended
    /// to `memory` as an agent-state record when the session exists there.
    pub fn execute_with(
        &self,
        graph: &TaskGraph,
        ctx: &SessionContext,
        memory: Option<&MemoryStore>,
        observer: &mut dyn FnMut(ExecEvent<'_>),
    ) -> ExecutionReport {
        let mut report = ExecutionReport::default();
        let (outcomes, _) = schedule(
            graph,
            self.config.parallelism,
            |node, inputs| {
                let started = self.clock.now();
                let r = self.run_node(node, &inputs);
                let ms = (self.clock.now() - started).num_milliseconds().max(0) as u64;
                match r {
                    Ok(p) => Ok((p, ms)),
                    Err(e) => Err((e, ms)),
                }
            },
            |event| match event {
                ScheduleEvent::Started { node } => observer(ExecEvent::Started { node }),
                ScheduleEvent::Finished { node, outcome } => {
                    let result = match outcome {
                        Ok((p, ms)) => TaskResult {
                            node_id: node.id.clone(),
                            kind: node.kind(),
                            status: TaskStatus::Ok,
                            payload: Some(p.clone()),
                            duration_ms: *ms,
                            error: None,
                        },
                        Err((e, ms)) => TaskResult {
                            node_id: node.id.clone(),
                            kind: node.kind(),
                            status: TaskStatus::Failed,
                            payload: None,
                            duration_ms: *ms,
                            error: Some(e.clone()),
                        },
                    };
                    observer(ExecEvent::Finished { result: &result });
                    report.completion_order.push(node.id.clone());
                    report.results.insert(node.id.clone(), result);
                }
            },
        );
        for node in &graph.nodes {
            if matches!(outcomes.get(&node.id), Some(NodeOutcome::Skipped)) {
                report.results.insert(
                    node.id.clone(),
                    TaskResult {
                        node_id: node.id.clone(),
                        kind: node.kind(),
                        status: TaskStatus::Skipped,
                        payload: None,
                        duration_ms: 0,
                        error: Some(TaskError {
                            kind: TaskErrorKind::AncestorFailed,
                            message: "skipped: an upstream task failed".into(),
                        }),
                    },
                );
            }
        }

        if let Some(memory) = memory.filter(|m| m.contains(&ctx.session_id)) {
            // graph order, not completion order, so replays write identical memory
            for id in graph.nodes.iter().map(|n| &n.id) {
                let payload = json!({
                    "agent": "executor",
                    "turn": ctx.turn_index,
                    "result": report.results[id],
                });
                if let Err(e) = memory.append(&ctx.session_id, RecordKind::AgentState, payload) {
                    log::warn!("could not record task result {id}: {e}");
                }
            }
        }
        report
    }

    fn run_node(
        &self,
        node: &TaskNode,
        inputs: &BTreeMap<String, (TaskPayload, u64)>,
    ) -> Result<TaskPayload, TaskError> {
        match &node.spec {
            TaskSpec::ProductSearch(p) => Ok(TaskPayload::Candidates(product_search(
                &self.catalog,
                &p.query,
                &p.constraints,
                self.config.candidate_k,
                &self.config.enrich,
            ))),
            TaskSpec::WebSearch(w) => web_search(
                &w.need,
                self.source.as_ref(),
                self.expander.as_ref(),
                &self.catalog,
                &self.config.web,
                self.clock.now(),
            )
            .map(TaskPayload::Evidence)
            .map_err(|e| TaskError {
                kind: TaskErrorKind::SourceUnreachable,
                message: e.to_string(),
            }),
            TaskSpec::ToolInvocation(t) => {
                let mut args = t.args.clone();
                let takes_products = self
                    .tools
                    .spec(&t.tool)
                    .is_some_and(|s| s.args.0.contains_key("products"));
                if let (true, Some((TaskPayload::Candidates(c), _))) =
                    (takes_products, inputs.get(CANDIDATES_SLOT))
                {
                    let products: Vec<Value> = c
                        .items
                        .iter()
                        .take(self.config.tool_products)
                        .map(|i| {
                            let price = c.enriched.get(&i.id).map(|e| e.price);
                            json!({ "id": i.id, "price": price })
                        })
                        .collect();
                    args.insert("products".into(), Value::Array(products));
                }
                self.tools
                    .invoke(&t.tool, &args)
                    .map(TaskPayload::Tool)
                    .map_err(TaskError::from)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{CatalogBuilder, Product};
    use crate::clock::SystemClock;
    use crate::planner::{RulePlanner, ToolParams};

    fn catalog() -> Arc<Catalog> {
        let mut b = CatalogBuilder::default();
        for (id, title, price) in [("p1", "Trail Tent", 180.0), ("p2", "Beach Tent", 90.0)] {
            b.add_product(Product {
                id: id.into(),
                title: title.into(),
                category_path: vec!["Outdoors".into(), "Tents".into()],
                attributes: BTreeMap::new(),
                price,
                rating: 4.2,
                review_ids: vec![],
            })
            .unwrap();
        }
        Arc::new(b.build())
    }

    fn executor() -> Executor {
        Executor::new(catalog(), Arc::new(SystemClock))
    }

    #[test]
    fn single_product_search() {
        let ctx = SessionContext::new("s", "tent");
        let plan = RulePlanner::default().plan(&ctx).unwrap();
        let report = executor().execute(&plan.graph, &ctx);
        assert_eq!(report.results.len(), 1);
        let r = report.results.values().next().unwrap();
        assert_eq!(r.status, TaskStatus::Ok);
        assert_eq!(r.candidates().unwrap().len(), 2);
    }

    #[test]
    fn price_history_consumes_candidates_and_results_recorded() {
        let memory = MemoryStore::default();
        memory.create_session("s").unwrap();
        let ctx = SessionContext::new("s", "tent under $100 price history");
        let plan = RulePlanner::default().plan(&ctx).unwrap();
        let mut started = Vec::new();
        let report = executor().execute_with(&plan.graph, &ctx, Some(&memory), &mut |e| {
            if let ExecEvent::Started { node } = e {
                started.push(node.id.clone());
            }
        });
        assert_eq!(started, ["product_search", "tool:price_history"]);
        let tool = &report.results["tool:price_history"];
        assert_eq!(tool.status, TaskStatus::Ok, "{:?}", tool.error);
        match &tool.payload {
            Some(TaskPayload::Tool(out)) => {
                assert_eq!(out["product_id"], "p2");
                assert_eq!(out["current_price"], 90.0);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(memory.history("s", RecordKind::AgentState).len(), 2);
    }

    #[test]
    fn unknown_tool_fails_node_only() {
        let ctx = SessionContext::new("s", "tent");
        let mut graph = RulePlanner::default().plan(&ctx).unwrap().graph;
        graph.nodes.push(TaskNode::new(
            "tool:frobnicate",
            TaskSpec::ToolInvocation(ToolParams {
                tool: "frobnicate".into(),
                args: Default::default(),
            }),
        ));
        let report = executor().execute(&graph, &ctx);
        let bad = &report.results["tool:frobnicate"];
        assert_eq!(bad.status, TaskStatus::Failed);
        assert_eq!(bad.error.as_ref().unwrap().kind, TaskErrorKind::UnknownTool);
        assert_eq!(report.results["product_search"].status, TaskStatus::Ok);
    }

    struct Down;

    impl WebSource for Down {
        fn search(&self, _: &WebRequest) -> Result<Vec<crate::catalog::WebDocument>, SourceError> {
            Err(SourceError("connection refused".into()))
        }
    }

    #[test]
    fn unreachable_web_source_fails_web_node() {
        let ctx = SessionContext::new("s", "best tent for camping");
        let plan = RulePlanner::default().plan(&ctx).unwrap();
        let report = executor()
            .with_web_source(Arc::new(Down))
            .execute(&plan.graph, &ctx);
        let web = &report.results["web_search"];
        assert_eq!(web.status, TaskStatus::Failed);
        assert_eq!(
            web.error.as_ref().unwrap().kind,
            TaskErrorKind::SourceUnreachable
        );
        assert_eq!(report.results["product_search"].status, TaskStatus::Ok);
    }
}
