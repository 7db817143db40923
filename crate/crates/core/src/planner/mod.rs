//! Turns a session context into a validated task graph plus the constraints
//! found in the query.
//!
//! The default backend is [`RulePlanner`], a deterministic rule table. A
//! generative backend can be plugged in through [`plan_generative`]; its
//! output is schema- and graph-validated and replaced by the rule plan when
//! it fails.

mod config;
mod generative;
mod graph;
mod rules;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraint::Constraint;

pub use config::{PlannerConfig, ToolTrigger};
pub use generative::{
    plan_generative, BackendError, EchoBackend, FallbackEvent, GenerativeBackend, GenerativePlan,
    PlanRequest, PLAN_REQUEST_SCHEMA, TASK_GRAPH_SCHEMA,
};
pub use graph::{
    validate_graph, ProductSearchParams, TaskEdge, TaskGraph, TaskKind, TaskNode, TaskSpec,
    ToolParams, Violation, WebSearchParams,
};
pub use rules::{
    tool_node_id, RulePlanner, CANDIDATES_SLOT, EVIDENCE_SLOT, PRODUCT_NODE, WEB_NODE,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("empty query")]
    EmptyQuery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub graph: TaskGraph,
    pub constraints: Vec<Constraint>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint::{ConstraintOp, ConstraintValue, Hardness};
    use crate::memory::SessionContext;

    fn plan(q: &str) -> Plan {
        RulePlanner::default()
            .plan(&SessionContext::new("s", q))
            .unwrap()
    }

    #[test]
    fn plain_query_is_single_product_search() {
        let p = plan("wireless earbuds");
        assert_eq!(p.graph.nodes.len(), 1);
        assert_eq!(p.graph.nodes[0].kind(), TaskKind::ProductSearch);
        assert!(p.graph.edges.is_empty());
        assert!(p.constraints.is_empty());
        match &p.graph.nodes[0].spec {
            TaskSpec::ProductSearch(ps) => assert_eq!(ps.query, "wireless earbuds"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn consultative_with_budget() {
        let p = plan("best noise cancelling headphones under $200");
        let kinds: Vec<TaskKind> = p.graph.nodes.iter().map(TaskNode::kind).collect();
        assert_eq!(kinds, [TaskKind::ProductSearch, TaskKind::WebSearch]);
        assert_eq!(p.constraints.len(), 1);
        let c = &p.constraints[0];
        assert_eq!(c.attribute, "price");
        assert_eq!(c.op, ConstraintOp::Le);
        assert_eq!(c.value, ConstraintValue::Number(200.0));
        assert_eq!(c.hardness, Hardness::Hard);
        assert_eq!(c.matched.as_deref(), Some("200"));
        match &p.graph.nodes[0].spec {
            TaskSpec::ProductSearch(ps) => {
                assert_eq!(ps.query, "best noise cancelling headphones")
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(validate_graph(&p.graph).is_ok());
    }

    #[test]
    fn negation_and_tool_trigger() {
        let p = plan("laptop without OLED, delivery by Friday");
        let kinds: Vec<TaskKind> = p.graph.nodes.iter().map(TaskNode::kind).collect();
        assert_eq!(kinds, [TaskKind::ProductSearch, TaskKind::ToolInvocation]);
        let tool = &p.graph.nodes[1];
        match &tool.spec {
            TaskSpec::ToolInvocation(t) => {
                assert_eq!(t.tool, "logistics_eta");
                assert_eq!(t.args["deadline"], "Friday");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(p.constraints.iter().any(|c| c.attribute == "display-type"
            && c.op == ConstraintOp::NotContains
            && c.value == ConstraintValue::Text("OLED".into())
            && c.is_hard()));
        match &p.graph.nodes[0].spec {
            TaskSpec::ProductSearch(ps) => assert_eq!(ps.query, "laptop"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn price_phrase_variants() {
        for (q, limit) in [
            ("desk lamp below 40", 40.0),
            ("desk lamp $35", 35.0),
            ("desk lamp 45 dollars", 45.0),
            ("desk lamp less than $29.99", 29.99),
        ] {
            let p = plan(q);
            assert_eq!(p.constraints.len(), 1, "{q}");
            assert_eq!(p.constraints[0].budget(), Some(limit), "{q}");
        }
        let p = plan("monitor over $300");
        assert_eq!(p.constraints[0].op, ConstraintOp::Ge);
    }

    #[test]
    fn measures_use_unit_vocabulary() {
        let mut cfg = PlannerConfig::default();
        cfg.unit_attributes
            .insert("g".into(), ["weight".to_string()].into());
        cfg.unit_attributes
            .insert("h".into(), ["battery-life".to_string()].into());
        cfg.attributes
            .extend(["color".to_string(), "weight".to_string()]);
        let planner = RulePlanner::new(cfg);

        let p = planner
            .plan(&SessionContext::new("s", "headphones under 200g"))
            .unwrap();
        assert_eq!(p.constraints.len(), 1);
        assert_eq!(p.constraints[0].attribute, "weight");
        assert_eq!(p.constraints[0].op, ConstraintOp::Le);

        let p = planner
            .plan(&SessionContext::new("s", "wireless earbuds ≥8h battery"))
            .unwrap();
        assert_eq!(p.constraints[0].attribute, "battery-life");
        assert_eq!(p.constraints[0].op, ConstraintOp::Ge);
        assert_eq!(p.constraints[0].value, ConstraintValue::Number(8.0));
        match &p.graph.nodes[0].spec {
            TaskSpec::ProductSearch(ps) => assert_eq!(ps.query, "wireless earbuds"),
            other => panic!("unexpected {other:?}"),
        }

        let p = planner
            .plan(&SessionContext::new(
                "s",
                "earbuds 6–8h battery with color red",
            ))
            .unwrap();
        assert_eq!(p.constraints.len(), 3);
        assert!(p.constraints.iter().any(|c| c.attribute == "color"
            && c.op == ConstraintOp::Eq
            && c.value == ConstraintValue::Text("red".into())));
    }

    #[test]
    fn multiple_tools_all_get_nodes() {
        let p = plan("tent weather forecast, delivery by Monday, price history");
        let tools: Vec<&str> = p
            .graph
            .nodes
            .iter()
            .filter(|n| n.kind() == TaskKind::ToolInvocation)
            .map(|n| n.id.as_str())
            .collect();
        assert_eq!(
            tools,
            ["tool:logistics_eta", "tool:price_history", "tool:weather"]
        );
        assert_eq!(
            p.graph.edges,
            vec![TaskEdge::new(
                PRODUCT_NODE,
                "tool:price_history",
                CANDIDATES_SLOT
            )]
        );
        assert!(validate_graph(&p.graph).is_ok());
    }

    #[test]
    fn profile_args_flow_into_tools() {
        let ctx = SessionContext::new("s", "stroller delivery by friday")
            .with_profile("zip", serde_json::json!("100000"));
        let p = RulePlanner::default().plan(&ctx).unwrap();
        match &p.graph.nodes[1].spec {
            TaskSpec::ToolInvocation(t) => assert_eq!(t.args["zip"], "100000"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_query_errors() {
        let err = RulePlanner::default()
            .plan(&SessionContext::new("s", "   "))
            .unwrap_err();
        assert_eq!(err, PlanError::EmptyQuery);
    }

    #[test]
    fn activity_counts_as_consultative() {
        let p = plan("shoes for hiking");
        assert!(p.graph.node(WEB_NODE).is_some());
        let p = plan("shoes for the");
        assert!(p.graph.node(WEB_NODE).is_none());
    }

    struct Fixed(Result<String, BackendError>);

    impl GenerativeBackend for Fixed {
        fn generate(&self, _prompt: &str) -> Result<String, BackendError> {
            self.0.clone()
        }
    }

    #[test]
    fn echo_backend_matches_rule_plan() {
        let planner = RulePlanner::default();
        let ctx = SessionContext::new("s", "best trail shoes under $120 for running");
        let echo = EchoBackend::new(planner.clone());
        let g = plan_generative(&planner, &ctx, &echo, None).unwrap();
        assert!(g.fallback.is_none());
        assert_eq!(g.plan, planner.plan(&ctx).unwrap());
    }

    #[test]
    fn cyclic_backend_graph_falls_back() {
        let planner = RulePlanner::default();
        let memory = MemoryStoreFixture::new();
        let ctx = SessionContext::new("s1", "tent");
        let cyclic = r#"{"nodes":[
            {"id":"A","kind":"product_search","params":{"query":"x"},"inputs":["s"],"outputs":["s"]},
            {"id":"B","kind":"web_search","params":{"need":"x"},"inputs":["s"],"outputs":["s"]}],
            "edges":[{"from":"A","to":"B","slot":"s"},{"from":"B","to":"A","slot":"s"}]}"#;
        let g =
            plan_generative(&planner, &ctx, &Fixed(Ok(cyclic.into())), Some(&memory.0)).unwrap();
        assert_eq!(g.plan, planner.plan(&ctx).unwrap());
        let event = g.fallback.unwrap();
        assert!(event.reason.contains("cycle: A,B"), "{}", event.reason);
        let rec = memory
            .0
            .latest("s1", crate::memory::RecordKind::AgentState)
            .unwrap();
        assert_eq!(rec.payload["event"], "fallback");
    }

    #[test]
    fn unreachable_and_garbage_fall_back() {
        let planner = RulePlanner::default();
        let ctx = SessionContext::new("s", "tent");
        let g = plan_generative(
            &planner,
            &ctx,
            &Fixed(Err(BackendError::Unreachable("connection refused".into()))),
            None,
        )
        .unwrap();
        assert!(g.fallback.unwrap().reason.contains("connection refused"));

        let g = plan_generative(&planner, &ctx, &Fixed(Ok("{\"nodes\": 3}".into())), None).unwrap();
        assert!(g.fallback.unwrap().reason.starts_with("schema-invalid"));
    }

    struct MemoryStoreFixture(crate::memory::MemoryStore);

    impl MemoryStoreFixture {
        fn new() -> Self {
            let m = crate::memory::MemoryStore::default();
            m.create_session("s1").unwrap();
            Self(m)
        }
    }
}
