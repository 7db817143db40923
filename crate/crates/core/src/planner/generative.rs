use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::graph::{validate_graph, TaskGraph, TaskKind, TaskSpec};
use super::rules::RulePlanner;
use super::{Plan, PlanError};
use crate::memory::{Interaction, MemoryStore, RecordKind, SessionContext};

pub const PLAN_REQUEST_SCHEMA: &str = "cogsearch.plan_request.v1";
pub const TASK_GRAPH_SCHEMA: &str = "cogsearch.task_graph.v1";

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "error", content = "detail", rename_all = "snake_case")]
pub enum BackendError {
    #[error("backend timed out")]
    Timeout,
    #[error("backend unreachable: {0}")]
    Unreachable(String),
    #[error("backend failed: {0}")]
    Failed(String),
}

/// A text-in/text-out model (or anything shaped like one).
pub trait GenerativeBackend: Send + Sync {
    fn generate(&self, prompt: &str) -> Result<String, BackendError>;
}

/// Request document sent to a generative planner. The backend must answer
/// with a task graph JSON document (`nodes`, `edges`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRequest {
    pub schema: String,
    pub response_schema: String,
    pub query: String,
    pub search_history: Vec<String>,
    pub click_history: Vec<Interaction>,
    pub user_profile: std::collections::BTreeMap<String, serde_json::Value>,
    pub turn_index: u64,
    pub task_kinds: Vec<TaskKind>,
    pub instructions: String,
}

impl PlanRequest {
    pub fn from_context(ctx: &SessionContext) -> Self {
        Self {
            schema: PLAN_REQUEST_SCHEMA.into(),
            response_schema: TASK_GRAPH_SCHEMA.into(),
            query: ctx.query.clone(),
            search_history: ctx.search_history.clone(),
            click_history: ctx.click_history.clone(),
            user_profile: ctx.user_profile.clone(),
            turn_index: ctx.turn_index,
            task_kinds: vec![
                TaskKind::ProductSearch,
                TaskKind::WebSearch,
                TaskKind::ToolInvocation,
            ],
            instructions: "Decompose the query into atomic tasks. Return a JSON object with \
                `nodes` (id, kind, params, inputs, outputs) and `edges` (from, to, slot). \
                Every edge slot must be an output of `from` and an input of `to`; the graph \
                must be acyclic and contain at least one product_search node."
                .into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FallbackEvent {
    pub agent: String,
    pub event: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerativePlan {
    pub plan: Plan,
    pub fallback: Option<FallbackEvent>,
}

/// Backend that answers with the rule planner's own graph.
pub struct EchoBackend {
    planner: RulePlanner,
}

impl EchoBackend {
    pub fn new(planner: RulePlanner) -> Self {
        Self { planner }
    }
}

impl GenerativeBackend for EchoBackend {
    fn generate(&self, prompt: &str) -> Result<String, BackendError> {
        let req: PlanRequest =
            serde_json::from_str(prompt).map_err(|e| BackendError::Failed(e.to_string()))?;
        let ctx = SessionContext {
            query: req.query,
            search_history: req.search_history,
            click_history: req.click_history,
            user_profile: req.user_profile,
            turn_index: req.turn_index,
            ..Default::default()
        };
        let plan = self
            .planner
            .plan(&ctx)
            .map_err(|e| BackendError::Failed(e.to_string()))?;
        Ok(serde_json::to_string(&plan.graph).expect("graph serializes"))
    }
}

/// Asks `backend` for a graph; anything that fails to parse or validate is
/// replaced by the rule plan and a fallback event is appended to the
/// session's agent state (when the session exists).
pub fn plan_generative(
    planner: &RulePlanner,
    ctx: &SessionContext,
    backend: &dyn GenerativeBackend,
    memory: Option<&MemoryStore>,
) -> Result<GenerativePlan, PlanError> {
    let rule_plan = planner.plan(ctx)?;
    let prompt =
        serde_json::to_string(&PlanRequest::from_context(ctx)).expect("request serializes");

    let outcome = backend
        .generate(&prompt)
        .map_err(|e| e.to_string())
        .and_then(|body| {
            serde_json::from_str::<TaskGraph>(&body)
                .map_err(|e| format!("schema-invalid response: {e}"))
        })
        .and_then(|graph| {
            validate_graph(&graph).map_err(|v| {
                let list: Vec<String> = v.iter().map(ToString::to_string).collect();
                format!("invalid graph: {}", list.join("; "))
            })?;
            if graph.nodes_of(TaskKind::ProductSearch).next().is_none() {
                return Err("invalid graph: no product_search node".to_string());
            }
            Ok(graph)
        });

    match outcome {
        Ok(graph) => {
            let mut constraints = Vec::new();
            for node in &graph.nodes {
                if let TaskSpec::ProductSearch(p) = &node.spec {
                    for c in &p.constraints {
                        if !constraints.contains(c) {
                            constraints.push(c.clone());
                        }
                    }
                }
            }
            Ok(GenerativePlan {
                plan: Plan { graph, constraints },
                fallback: None,
            })
        }
        Err(reason) => {
            let event = FallbackEvent {
                agent: "planner".into(),
                event: "fallback".into(),
                reason,
            };
            if let Some(memory) = memory {
                let payload = serde_json::to_value(&event).expect("event serializes");
                if let Err(e) = memory.append(&ctx.session_id, RecordKind::AgentState, payload) {
                    log::warn!("could not record planner fallback: {e}");
                }
            }
            Ok(GenerativePlan {
                plan: rule_plan,
                fallback: Some(event),
            })
        }
    }
}
