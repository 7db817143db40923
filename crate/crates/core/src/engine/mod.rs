//! Drives one session turn through plan, execute, guide and decide, streaming
//! events as each stage lands and keeping the turn state in memory.

mod events;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::catalog::Catalog;
use crate::clock::Clock;
use crate::constraint::{Constraint, ConstraintOp, ConstraintValue, Hardness};
use crate::decider::{
    decide, fuse_context, trajectory, DecideError, DecisionContext, EvalProtocol,
    RationaleRewriter, Recommendation,
};
use crate::executor::{CandidateSet, EvidenceSet, ExecEvent, Executor, ExecutorConfig, TaskStatus};
use crate::guider::{
    apply_facet, generate_facets, generate_strategy, suggest_queries, BucketPredicate, Facet,
    GuiderConfig, PurchaseStrategy, QuerySuggestion, UserState,
};
use crate::memory::{
    Interaction, InteractionKind, MemoryError, MemoryStore, RecordKind, SessionContext,
};
use crate::planner::{
    plan_generative, validate_graph, GenerativeBackend, Plan, PlannerConfig, RulePlanner,
    TaskGraph, TaskKind,
};

pub use events::{check_stream, ErrorCode, EventBody, TurnEvent};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("unknown session '{0}'")]
    UnknownSession(String),
    #[error("turn in progress")]
    TurnInProgress,
    #[error("session has no completed turn")]
    NoActiveTurn,
    #[error("'{0}' is not a suggestion from the latest turn")]
    UnknownSuggestion(String),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

/// Pipeline stages that can be switched off for ablation runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub websearch: bool,
    pub guider: bool,
    pub decider: bool,
    pub memory: bool,
}

impl Ablation {
    /// Parses a comma list such as `websearch,guider`.
    pub fn parse(list: &str) -> Result<Self, String> {
        let mut a = Self::default();
        for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "websearch" => a.websearch = true,
                "guider" => a.guider = true,
                "decider" => a.decider = true,
                "memory" => a.memory = true,
                other => return Err(format!("unknown ablation '{other}'")),
            }
        }
        Ok(a)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub planner: PlannerConfig,
    pub executor: ExecutorConfig,
    pub guider: GuiderConfig,
    pub protocol: EvalProtocol,
    pub ablation: Ablation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnOrigin {
    Query,
    Suggestion,
    Facet,
}

/// Everything a turn produced. Stored as the payload of each turn record;
/// facet clicks store a refined copy under the same turn number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnState {
    pub turn: u64,
    pub origin: TurnOrigin,
    pub query: String,
    pub profile: BTreeMap<String, serde_json::Value>,
    pub plan: Plan,
    /// Planner constraints plus the profile budget and facet selections.
    pub constraints: Vec<Constraint>,
    pub candidates: CandidateSet,
    /// `candidates` after the active facet selections.
    pub narrowed: CandidateSet,
    pub evidence: EvidenceSet,
    pub active_facets: Vec<(String, String)>,
    pub facets: Vec<Facet>,
    pub strategy: PurchaseStrategy,
    pub suggestions: Vec<QuerySuggestion>,
    pub recommendation: Option<Recommendation>,
}

impl TurnState {
    /// Final ranking: the decider's order, or retrieval order without one.
    pub fn ranked_ids(&self) -> Vec<String> {
        match &self.recommendation {
            Some(r) => r.ranked.iter().map(|i| i.item_id.clone()).collect(),
            None => self.narrowed.ids().map(str::to_string).collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TurnRequest {
    pub query: String,
    #[serde(default)]
    pub profile: BTreeMap<String, serde_json::Value>,
}

impl TurnRequest {
    pub fn new(query: impl Into<String>) -> Self {
        Self {
            query: query.into(),
            profile: BTreeMap::new(),
        }
    }
}

struct Emitter<'a> {
    turn: u64,
    seq: u64,
    sink: &'a mut dyn FnMut(TurnEvent),
}

impl Emitter<'_> {
    fn emit(&mut self, body: EventBody) {
        self.seq += 1;
        (self.sink)(TurnEvent {
            seq: self.seq,
            turn: self.turn,
            body,
        });
    }

    fn fail(&mut self, code: ErrorCode, message: impl Into<String>) {
        self.emit(EventBody::Error {
            code,
            message: message.into(),
        });
        self.emit(EventBody::Done { ok: false });
    }
}

struct TurnGuard<'a> {
    in_flight: &'a Mutex<HashSet<String>>,
    session: String,
}

impl Drop for TurnGuard<'_> {
    fn drop(&mut self) {
        self.in_flight.lock().remove(&self.session);
    }
}

pub struct Engine {
    catalog: Arc<Catalog>,
    planner: RulePlanner,
    executor: Executor,
    memory: Arc<MemoryStore>,
    clock: Arc<dyn Clock>,
    config: EngineConfig,
    rewriter: Option<Arc<dyn RationaleRewriter>>,
    plan_backend: Option<Arc<dyn GenerativeBackend>>,
    in_flight: Mutex<HashSet<String>>,
    next_session: AtomicU64,
}

impl Engine {
    pub fn new(
        catalog: Arc<Catalog>,
        config: EngineConfig,
        clock: Arc<dyn Clock>,
        memory: Arc<MemoryStore>,
    ) -> Self {
        let planner = RulePlanner::new(config.planner.clone().with_catalog_vocabulary(&catalog));
        let executor =
            Executor::new(catalog.clone(), clock.clone()).with_config(config.executor.clone());
        Self {
            catalog,
            planner,
            executor,
            memory,
            clock,
            config,
            rewriter: None,
            plan_backend: None,
            in_flight: Mutex::new(HashSet::new()),
            next_session: AtomicU64::new(1),
        }
    }

    /// Replaces the executor, e.g. to plug in another web source. Its
    /// config is overwritten with the engine's.
    pub fn with_executor(mut self, executor: Executor) -> Self {
        self.executor = executor.with_config(self.config.executor.clone());
        self
    }

    pub fn with_rewriter(mut self, rewriter: Arc<dyn RationaleRewriter>) -> Self {
        self.rewriter = Some(rewriter);
        self
    }

    /// Plans through a generative backend. Invalid answers fall back to the
    /// rule plan and leave a fallback record in agent state.
    pub fn with_plan_backend(mut self, backend: Arc<dyn GenerativeBackend>) -> Self {
        self.plan_backend = Some(backend);
        self
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    pub fn memory(&self) -> &Arc<MemoryStore> {
        &self.memory
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn planner(&self) -> &RulePlanner {
        &self.planner
    }

    /// Ids are `s-000001`, `s-000002`, ...; ids already in memory (for
    /// example after a restore) are skipped.
    pub fn create_session(&self) -> String {
        loop {
            let n = self.next_session.fetch_add(1, Ordering::SeqCst);
            let id = format!("s-{n:06}");
            if self.memory.create_session(&id).is_ok() {
                return id;
            }
        }
    }

    pub fn has_session(&self, session: &str) -> bool {
        self.memory.contains(session)
    }

    /// The most recent turn state, including facet refinements.
    pub fn latest_state(&self, session: &str) -> Option<TurnState> {
        let record = self.memory.latest(session, RecordKind::Turn)?;
        serde_json::from_value(record.payload).ok()
    }

    fn states(&self, session: &str) -> Vec<TurnState> {
        self.memory
            .history(session, RecordKind::Turn)
            .iter()
            .filter_map(|r| serde_json::from_value(r.payload.clone()).ok())
            .collect()
    }

    fn interactions(&self, session: &str) -> Vec<Interaction> {
        self.memory
            .history(session, RecordKind::AgentState)
            .iter()
            .filter(|r| r.payload.get("agent").and_then(|a| a.as_str()) == Some("user"))
            .filter_map(|r| serde_json::from_value(r.payload.get("interaction")?.clone()).ok())
            .collect()
    }

    /// Logs a user interaction (item click, add to cart, ...) for later turns.
    pub fn record_interaction(
        &self,
        session: &str,
        interaction: Interaction,
    ) -> Result<(), EngineError> {
        if !self.memory.contains(session) {
            return Err(EngineError::UnknownSession(session.to_string()));
        }
        self.memory.append(
            session,
            RecordKind::AgentState,
            json!({"agent": "user", "interaction": interaction}),
        )?;
        Ok(())
    }

    /// Preloads history and profile into a session, as if earlier turns had
    /// happened elsewhere. Later turns see it through [`Self::session_context`].
    pub fn seed_context(&self, session: &str, seed: &SessionContext) -> Result<(), EngineError> {
        if !self.memory.contains(session) {
            return Err(EngineError::UnknownSession(session.to_string()));
        }
        self.memory.append(
            session,
            RecordKind::AgentState,
            json!({"agent": "seed", "context": seed}),
        )?;
        Ok(())
    }

    fn seed(&self, session: &str) -> Option<SessionContext> {
        self.memory
            .history(session, RecordKind::AgentState)
            .iter()
            .rev()
            .find(|r| r.payload.get("agent").and_then(|a| a.as_str()) == Some("seed"))
            .and_then(|r| serde_json::from_value(r.payload.get("context")?.clone()).ok())
    }

    /// Session context for a new turn built from memory, or a bare one when
    /// memory is ablated.
    pub fn session_context(&self, session: &str, request: &TurnRequest) -> SessionContext {
        let states = self.states(session);
        let mut ctx = SessionContext::new(session, request.query.trim());
        let fresh: Vec<&TurnState> = states
            .iter()
            .filter(|s| s.origin != TurnOrigin::Facet)
            .collect();
        ctx.turn_index = fresh.len() as u64 + 1;
        if !self.config.ablation.memory {
            if let Some(seed) = self.seed(session) {
                ctx.search_history = seed.search_history;
                ctx.click_history = seed.click_history;
                ctx.user_profile = seed.user_profile;
            }
            ctx.search_history
                .extend(fresh.iter().map(|s| s.query.clone()));
            ctx.click_history.extend(self.interactions(session));
            if let Some(last) = states.last() {
                ctx.user_profile
                    .extend(last.profile.iter().map(|(k, v)| (k.clone(), v.clone())));
            }
        }
        ctx.user_profile
            .extend(request.profile.iter().map(|(k, v)| (k.clone(), v.clone())));
        ctx
    }

    fn begin(&self, session: &str) -> Result<TurnGuard<'_>, EngineError> {
        if !self.memory.contains(session) {
            return Err(EngineError::UnknownSession(session.to_string()));
        }
        if !self.in_flight.lock().insert(session.to_string()) {
            return Err(EngineError::TurnInProgress);
        }
        Ok(TurnGuard {
            in_flight: &self.in_flight,
            session: session.to_string(),
        })
    }

    /// Runs a full turn. Request problems (unknown session, turn already
    /// running) fail before any event; pipeline problems are streamed as an
    /// error event followed by `done`. Returns the stored state, if any.
    pub fn run_turn(
        &self,
        session: &str,
        request: &TurnRequest,
        sink: &mut dyn FnMut(TurnEvent),
    ) -> Result<Option<TurnState>, EngineError> {
        let _guard = self.begin(session)?;
        self.turn_inner(session, request, TurnOrigin::Query, sink)
    }

    /// Starts the next turn from a suggestion of the latest turn.
    pub fn accept_suggestion(
        &self,
        session: &str,
        text: &str,
        sink: &mut dyn FnMut(TurnEvent),
    ) -> Result<Option<TurnState>, EngineError> {
        let _guard = self.begin(session)?;
        let state = self
            .latest_state(session)
            .ok_or(EngineError::NoActiveTurn)?;
        let wanted = text.trim();
        let Some(s) = state
            .suggestions
            .iter()
            .find(|s| s.text.trim().eq_ignore_ascii_case(wanted))
        else {
            return Err(EngineError::UnknownSuggestion(wanted.to_string()));
        };
        self.record_interaction(
            session,
            Interaction {
                item_id: s.text.clone(),
                kind: InteractionKind::SuggestionClick,
                timestamp: self.clock.now(),
            },
        )?;
        let request = TurnRequest::new(s.text.clone());
        self.turn_inner(session, &request, TurnOrigin::Suggestion, sink)
    }

    fn turn_inner(
        &self,
        session: &str,
        request: &TurnRequest,
        origin: TurnOrigin,
        sink: &mut dyn FnMut(TurnEvent),
    ) -> Result<Option<TurnState>, EngineError> {
        let ctx = self.session_context(session, request);
        let mut em = Emitter {
            turn: ctx.turn_index,
            seq: 0,
            sink,
        };
        let planned = match &self.plan_backend {
            Some(b) => {
                plan_generative(&self.planner, &ctx, b.as_ref(), Some(&self.memory)).map(|g| g.plan)
            }
            None => self.planner.plan(&ctx),
        };
        let mut plan = match planned {
            Ok(p) => p,
            Err(e) => {
                em.fail(ErrorCode::Validation, e.to_string());
                return Ok(None);
            }
        };
        if self.config.ablation.websearch {
            plan.graph = without_web(&plan.graph);
        }
        self.memory.append(
            session,
            RecordKind::TaskGraph,
            json!({"turn": ctx.turn_index, "graph": plan.graph}),
        )?;
        em.emit(EventBody::Plan {
            graph: plan.graph.clone(),
            constraints: plan.constraints.clone(),
        });

        let report = self
            .executor
            .execute_with(&plan.graph, &ctx, Some(&self.memory), &mut |ev| match ev {
                ExecEvent::Started { node } => em.emit(EventBody::TaskStarted {
                    node_id: node.id.clone(),
                    kind: node.kind(),
                }),
                ExecEvent::Finished { result } => em.emit(EventBody::TaskFinished(result.clone())),
            });
        for node in &plan.graph.nodes {
            if let Some(r) = report.results.get(&node.id) {
                if r.status == TaskStatus::Skipped {
                    em.emit(EventBody::TaskFinished(r.clone()));
                }
            }
        }

        let mut dctx = match fuse_context(
            &report.results,
            &ctx,
            &plan.constraints,
            &PurchaseStrategy::default(),
        ) {
            Ok(d) => d,
            Err(e) => {
                em.fail(ErrorCode::NothingToDecide, e.to_string());
                return Ok(None);
            }
        };
        let mut state = TurnState {
            turn: ctx.turn_index,
            origin,
            query: ctx.query.clone(),
            profile: ctx.user_profile.clone(),
            plan,
            constraints: dctx.constraints.clone(),
            candidates: dctx.candidates.clone(),
            narrowed: dctx.candidates.clone(),
            evidence: dctx.evidence.clone(),
            active_facets: vec![],
            facets: vec![],
            strategy: PurchaseStrategy::default(),
            suggestions: vec![],
            recommendation: None,
        };

        if !self.config.ablation.guider {
            let g = &self.config.guider;
            let user = UserState::derive(&ctx.click_history, &state.candidates, vec![], g);
            state.facets = generate_facets(
                &state.candidates,
                &user,
                &fixed_attributes(&state.constraints),
                g.max_facets,
                g,
            );
            em.emit(EventBody::Facets {
                facets: state.facets.clone(),
                candidate_count: state.candidates.len(),
                active_facets: vec![],
            });
            state.strategy = generate_strategy(
                &state.candidates,
                &state.evidence,
                &state.constraints,
                &user,
                g,
            );
            em.emit(EventBody::Strategy(state.strategy.clone()));
            state.suggestions = suggest_queries(
                &ctx,
                &state.candidates,
                &state.facets,
                &state.evidence,
                &self.planner,
                g,
            );
            em.emit(EventBody::Suggestions {
                suggestions: state.suggestions.clone(),
            });
        }
        dctx.strategy = state.strategy.clone();

        let ok = self.finish(session, &mut state, &dctx, &mut em)?;
        em.emit(EventBody::Done { ok });
        Ok(Some(state))
    }

    /// Decides (unless ablated), streams the recommendation and stores the
    /// state. Returns whether a recommendation was produced or skipped.
    fn finish(
        &self,
        session: &str,
        state: &mut TurnState,
        dctx: &DecisionContext,
        em: &mut Emitter<'_>,
    ) -> Result<bool, EngineError> {
        let mut ok = true;
        if !self.config.ablation.decider {
            match decide(dctx, &self.config.protocol, self.rewriter.as_deref()) {
                Ok(rec) => {
                    state.recommendation = Some(rec.clone());
                    em.emit(EventBody::Recommendation(rec));
                }
                Err(e @ DecideError::NoCandidates) => {
                    ok = false;
                    em.emit(EventBody::Error {
                        code: ErrorCode::NoCandidates,
                        message: e.to_string(),
                    });
                }
                Err(e) => {
                    ok = false;
                    em.emit(EventBody::Error {
                        code: ErrorCode::NothingToDecide,
                        message: e.to_string(),
                    });
                }
            }
        }
        self.memory.append(
            session,
            RecordKind::Turn,
            serde_json::to_value(&*state).expect("turn state serializes"),
        )?;
        Ok(ok)
    }

    /// Narrows the latest turn's candidates to one facet bucket, then
    /// regenerates facets and the recommendation. Re-clicking an active
    /// selection replays the current result.
    pub fn click_facet(
        &self,
        session: &str,
        attribute: &str,
        bucket: &str,
        sink: &mut dyn FnMut(TurnEvent),
    ) -> Result<Option<TurnState>, EngineError> {
        let _guard = self.begin(session)?;
        let mut state = self
            .latest_state(session)
            .ok_or(EngineError::NoActiveTurn)?;
        let mut em = Emitter {
            turn: state.turn,
            seq: 0,
            sink,
        };
        let selection = (attribute.to_string(), bucket.to_string());
        if state.active_facets.contains(&selection) {
            em.emit(EventBody::Facets {
                facets: state.facets.clone(),
                candidate_count: state.narrowed.len(),
                active_facets: state.active_facets.clone(),
            });
            if let Some(rec) = &state.recommendation {
                em.emit(EventBody::Recommendation(rec.clone()));
            }
            em.emit(EventBody::Done { ok: true });
            return Ok(Some(state));
        }
        let predicate = state
            .facets
            .iter()
            .find(|f| f.attribute == attribute)
            .and_then(|f| f.bucket(bucket))
            .map(|b| b.predicate.clone());
        let narrowed = match apply_facet(&state.narrowed, &state.facets, attribute, bucket) {
            Ok(n) => n,
            Err(e) => {
                em.fail(ErrorCode::StaleFacet, format!("{e}; refresh the facets"));
                return Ok(None);
            }
        };
        self.record_interaction(
            session,
            Interaction {
                item_id: Interaction::facet_key(attribute, bucket),
                kind: InteractionKind::FacetClick,
                timestamp: self.clock.now(),
            },
        )?;
        if let Some(p) = predicate {
            state.constraints.extend(facet_constraints(attribute, &p));
        }
        state.active_facets.push(selection);
        state.narrowed = narrowed;
        state.origin = TurnOrigin::Facet;
        state.recommendation = None;

        let ctx = self.session_context(session, &TurnRequest::new(state.query.clone()));
        if !self.config.ablation.guider {
            let g = &self.config.guider;
            let user = UserState::derive(
                &ctx.click_history,
                &state.narrowed,
                state.active_facets.clone(),
                g,
            );
            state.facets = generate_facets(
                &state.narrowed,
                &user,
                &fixed_attributes(&state.constraints),
                g.max_facets,
                g,
            );
        } else {
            state.facets.clear();
        }
        em.emit(EventBody::Facets {
            facets: state.facets.clone(),
            candidate_count: state.narrowed.len(),
            active_facets: state.active_facets.clone(),
        });
        let dctx = DecisionContext {
            candidates: state.narrowed.clone(),
            evidence: state.evidence.clone(),
            trajectory: trajectory(&ctx),
            profile: state.profile.clone(),
            constraints: state.constraints.clone(),
            strategy: state.strategy.clone(),
        };
        let ok = self.finish(session, &mut state, &dctx, &mut em)?;
        em.emit(EventBody::Done { ok });
        Ok(Some(state))
    }
}

/// Attributes already pinned by a hard constraint; no facet is offered for them.
fn fixed_attributes(constraints: &[Constraint]) -> BTreeSet<String> {
    constraints
        .iter()
        .filter(|c| c.is_hard())
        .map(|c| c.attribute.clone())
        .collect()
}

/// A facet selection as hard constraints every bucket member satisfies.
pub fn facet_constraints(attribute: &str, predicate: &BucketPredicate) -> Vec<Constraint> {
    let make = |op, value| Constraint::new(attribute, op, value, Hardness::Hard).ok();
    let matched = |c: Constraint| c.with_matched("facet selection");
    match predicate {
        BucketPredicate::Equals { value } => {
            make(ConstraintOp::Eq, ConstraintValue::Text(value.clone()))
                .map(matched)
                .into_iter()
                .collect()
        }
        BucketPredicate::Range { min, max, .. } => {
            let lo = min.and_then(|v| make(ConstraintOp::Ge, ConstraintValue::Number(v)));
            let hi = max.and_then(|v| make(ConstraintOp::Le, ConstraintValue::Number(v)));
            lo.into_iter().chain(hi).map(matched).collect()
        }
        BucketPredicate::Missing => vec![],
    }
}

/// Drops web-search nodes and any input slot that loses its producer.
pub fn without_web(graph: &TaskGraph) -> TaskGraph {
    let mut g = graph.without_nodes(|n| n.kind() == TaskKind::WebSearch);
    let fed: BTreeSet<(String, String)> = g
        .edges
        .iter()
        .map(|e| (e.to.clone(), e.slot.clone()))
        .collect();
    for node in &mut g.nodes {
        let id = node.id.clone();
        node.inputs
            .retain(|slot| fed.contains(&(id.clone(), slot.clone())));
    }
    debug_assert!(validate_graph(&g).is_ok());
    g
}
