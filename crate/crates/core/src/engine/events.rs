use serde::{Deserialize, Serialize};

use crate::constraint::Constraint;
use crate::decider::Recommendation;
use crate::executor::TaskResult;
use crate::guider::{Facet, PurchaseStrategy, QuerySuggestion};
use crate::planner::{TaskGraph, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// The request itself is unusable (empty query and the like).
    Validation,
    /// A facet selection no longer matches the current facets.
    StaleFacet,
    /// No product search result was available to decide over.
    NothingToDecide,
    NoCandidates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    Plan {
        graph: TaskGraph,
        constraints: Vec<Constraint>,
    },
    TaskStarted {
        node_id: String,
        kind: TaskKind,
    },
    TaskFinished(TaskResult),
    Facets {
        facets: Vec<Facet>,
        candidate_count: usize,
        active_facets: Vec<(String, String)>,
    },
    Strategy(PurchaseStrategy),
    Suggestions {
        suggestions: Vec<QuerySuggestion>,
    },
    Recommendation(Recommendation),
    Error {
        code: ErrorCode,
        message: String,
    },
    Done {
        ok: bool,
    },
}

impl EventBody {
    pub fn type_name(&self) -> &'static str {
        match self {
            EventBody::Plan { .. } => "plan",
            EventBody::TaskStarted { .. } => "task_started",
            EventBody::TaskFinished(_) => "task_finished",
            EventBody::Facets { .. } => "facets",
            EventBody::Strategy(_) => "strategy",
            EventBody::Suggestions { .. } => "suggestions",
            EventBody::Recommendation(_) => "recommendation",
            EventBody::Error { .. } => "error",
            EventBody::Done { .. } => "done",
        }
    }
}

/// One streamed step of a turn. `seq` starts at 1 and has no gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnEvent {
    pub seq: u64,
    pub turn: u64,
    #[serde(flatten)]
    pub body: EventBody,
}

/// Checks the ordering contract of one turn's events: gapless seq from 1,
/// a single turn number, plan before any task event, every started task
/// finished, and exactly one done, at the end.
pub fn check_stream(events: &[TurnEvent]) -> Result<(), String> {
    let Some(first) = events.first() else {
        return Err("empty stream".into());
    };
    let mut plan_seen = false;
    let mut open: Vec<&str> = Vec::new();
    for (i, e) in events.iter().enumerate() {
        if e.seq != i as u64 + 1 {
            return Err(format!("seq {} at position {}", e.seq, i + 1));
        }
        if e.turn != first.turn {
            return Err(format!("turn changes from {} to {}", first.turn, e.turn));
        }
        let last = i + 1 == events.len();
        match &e.body {
            EventBody::Plan { .. } => {
                if plan_seen {
                    return Err("second plan event".into());
                }
                plan_seen = true;
            }
            EventBody::TaskStarted { node_id, .. } => {
                if !plan_seen {
                    return Err(format!("task {node_id} started before plan"));
                }
                open.push(node_id);
            }
            EventBody::TaskFinished(r) => {
                if !plan_seen {
                    return Err(format!("task {} finished before plan", r.node_id));
                }
                open.retain(|n| *n != r.node_id);
            }
            EventBody::Done { .. } if !last => return Err("done before the end".into()),
            _ => {}
        }
        if last && !matches!(e.body, EventBody::Done { .. }) {
            return Err("stream does not end with done".into());
        }
    }
    if let Some(n) = open.first() {
        return Err(format!("task {n} started but never finished"));
    }
    Ok(())
}
